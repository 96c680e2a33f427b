#include "mot/store.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mot/rng.hpp"

namespace fs = std::filesystem;

namespace mot::store {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  require(s.size() == 16, Errc::parse, "malformed 64-bit hex digest: " + s);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::parse,
          "malformed 64-bit hex digest: " + s);
  return v;
}

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'O', 'T', 'C'};
constexpr char kStateMagic[4] = {'M', 'O', 'T', 'S'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_bytes(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

// Bounds-checked little-endian reader; overruns mean the file lies about its
// own contents.
struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;
  std::size_t end = 0;

  void need(std::size_t n) const {
    require(pos + n <= end, Errc::corruption, "file is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes() {
    std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  require(!in.bad(), Errc::io, "read failed for " + path);
  return os.str();
}

// Write-then-rename so a crash mid-write never leaves a half-written file in
// place of a valid one.
void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(out.good(), Errc::io, "write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, Errc::io, "cannot move " + tmp + " into place: " + ec.message());
}

// Shared container head: magic, version, and the model-config block.
void put_header(std::string& out, const char magic[4], const lm::ModelConfig& cfg) {
  out.append(magic, 4);
  put_u32(out, kCheckpointVersion);
  put_bytes(out, cfg.canonical());
}

lm::ModelConfig read_header(Cursor& cur, const char magic[4], const std::string& kind) {
  cur.need(4);
  for (int i = 0; i < 4; ++i) {
    require(cur.buf[cur.pos + i] == magic[i], Errc::incompatible, "not a " + kind + " file");
  }
  cur.pos += 4;
  std::uint32_t version = cur.u32();
  require(version == kCheckpointVersion, Errc::incompatible,
          "unsupported " + kind + " format version " + std::to_string(version));
  std::string config_text = cur.bytes();
  lm::ModelConfig cfg = parse_model_config(config_text);
  require(cfg.canonical() == config_text, Errc::incompatible,
          "unsupported config block in " + kind + " file");
  return cfg;
}

// Validates the trailing checksum and returns the body view [0, size-8).
std::uint64_t checked_body(const std::string& raw, const std::string& path, Cursor& cur) {
  require(raw.size() >= 16, Errc::corruption, "file is truncated: " + path);
  std::size_t body = raw.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[body + i])) << (8 * i);
  }
  std::uint64_t actual = fnv1a(raw.data(), body);
  require(stored == actual, Errc::corruption, "checksum mismatch in " + path);
  cur.end = body;
  return stored;
}

void check_sizes(const lm::ParameterVector& params) {
  std::size_t total = 0;
  for (const lm::Segment& seg : params.segments) total += seg.numel();
  require(total == params.values.size(), Errc::shape,
          "parameter storage does not match its segment directory");
}

std::uint64_t parse_u64_dec(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::parse,
          "malformed integer: " + s);
  return v;
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::parse,
          "malformed number: " + s);
  return v;
}

long long parse_ll(const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size(), Errc::parse,
          "malformed integer: " + s);
  return v;
}

// Splits "name{k1=v1;k2=v2}" into its fields.
std::map<std::string, std::string> parse_braced(const std::string& text,
                                                const std::string& name) {
  const std::string prefix = name + "{";
  require(text.size() > prefix.size() + 1 && text.compare(0, prefix.size(), prefix) == 0 &&
              text.back() == '}',
          Errc::parse, "malformed " + name + " config string");
  std::map<std::string, std::string> out;
  std::string inner = text.substr(prefix.size(), text.size() - prefix.size() - 1);
  std::size_t start = 0;
  while (start <= inner.size()) {
    std::size_t stop = inner.find(';', start);
    if (stop == std::string::npos) stop = inner.size();
    std::string item = inner.substr(start, stop - start);
    std::size_t eq = item.find('=');
    require(eq != std::string::npos, Errc::parse, "malformed " + name + " field: " + item);
    out[item.substr(0, eq)] = item.substr(eq + 1);
    start = stop + 1;
  }
  return out;
}

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key,
                         const std::string& name) {
  auto it = kv.find(key);
  require(it != kv.end(), Errc::parse, name + " config string is missing " + key);
  return it->second;
}

nlohmann::json parse_json(const std::string& text, const std::string& what) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  require(!j.is_discarded(), Errc::parse, "malformed JSON in " + what);
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string checkpoint_body(const lm::ParameterVector& params) {
  check_sizes(params);
  std::string out;
  out.reserve(params.size() * 4 + 4096);
  put_header(out, kCheckpointMagic, params.config);

  put_u32(out, static_cast<std::uint32_t>(params.segments.size()));
  for (const lm::Segment& seg : params.segments) {
    put_bytes(out, seg.name);
    put_u64(out, static_cast<std::uint64_t>(seg.offset));
    put_u32(out, static_cast<std::uint32_t>(seg.shape.size()));
    for (std::size_t d : seg.shape) put_u64(out, static_cast<std::uint64_t>(d));
    put_u32(out, 0);  // dtype code 0 = f32
  }
  put_u64(out, static_cast<std::uint64_t>(params.size()));
  for (float v : params.values) put_f32(out, v);
  return out;
}

}  // namespace

std::uint64_t save_checkpoint(const lm::ParameterVector& params, const std::string& path) {
  std::string out = checkpoint_body(params);
  std::uint64_t digest = fnv1a(out.data(), out.size());
  put_u64(out, digest);
  write_file_atomic(path, out);
  return digest;
}

std::uint64_t params_digest(const lm::ParameterVector& params) {
  const std::string body = checkpoint_body(params);
  return fnv1a(body.data(), body.size());
}

lm::ParameterVector load_checkpoint(const std::string& path,
                                    std::uint64_t expected_config_hash) {
  const std::string raw = read_file(path);
  Cursor cur{raw};
  checked_body(raw, path, cur);

  lm::ModelConfig cfg = read_header(cur, kCheckpointMagic, "checkpoint");
  std::vector<lm::Segment> expected = lm::build_segments(cfg);

  std::uint32_t n_segments = cur.u32();
  require(n_segments == expected.size(), Errc::incompatible,
          "segment directory does not match the config in " + path);
  std::size_t tiled = 0;
  for (std::uint32_t i = 0; i < n_segments; ++i) {
    std::string name = cur.bytes();
    std::uint64_t offset = cur.u64();
    std::uint32_t n_dims = cur.u32();
    std::vector<int> shape(n_dims);
    for (std::uint32_t d = 0; d < n_dims; ++d) shape[d] = static_cast<int>(cur.u64());
    std::uint32_t dtype = cur.u32();
    require(dtype == 0, Errc::incompatible, "unsupported dtype for segment " + name);
    const lm::Segment& want = expected[i];
    require(name == want.name && offset == want.offset && shape == want.shape,
            Errc::incompatible, "segment directory does not match the config in " + path);
    require(offset == tiled, Errc::corruption,
            "segment directory does not tile the payload in " + path);
    tiled += want.numel();
  }

  std::uint64_t n_values = cur.u64();
  require(n_values == tiled, Errc::corruption,
          "segment directory does not tile the payload in " + path);

  lm::ParameterVector params;
  params.config = cfg;
  params.config_hash = cfg.config_hash();
  params.segments = std::move(expected);
  params.values.resize(n_values);
  cur.need(n_values * 4);
  for (std::uint64_t i = 0; i < n_values; ++i) params.values[i] = cur.f32();
  require(cur.pos == cur.end, Errc::corruption, "trailing bytes in " + path);

  if (expected_config_hash != 0) {
    require(params.config_hash == expected_config_hash, Errc::incompatible,
            "checkpoint " + path + " was written for a different model config");
  }
  return params;
}

std::uint64_t checkpoint_digest(const std::string& path) {
  const std::string raw = read_file(path);
  Cursor cur{raw};
  return checked_body(raw, path, cur);
}

// ---------------------------------------------------------------------------
// Optimizer-state sidecars

std::uint64_t save_train_state(const train::TrainState& state, const std::string& path) {
  check_sizes(state.params);
  require(state.m.size() == state.params.size() && state.v.size() == state.params.size(),
          Errc::shape, "optimizer moments do not match the parameter layout");
  std::string out;
  out.reserve(state.params.size() * 12 + 4096);
  put_header(out, kStateMagic, state.params.config);
  put_u64(out, static_cast<std::uint64_t>(state.step));
  put_u64(out, state.data_seed);
  put_u64(out, static_cast<std::uint64_t>(state.params.size()));
  for (float v : state.params.values) put_f32(out, v);
  for (float v : state.m) put_f32(out, v);
  for (float v : state.v) put_f32(out, v);

  std::uint64_t digest = fnv1a(out.data(), out.size());
  put_u64(out, digest);
  write_file_atomic(path, out);
  return digest;
}

train::TrainState load_train_state(const std::string& path,
                                   std::uint64_t expected_config_hash) {
  const std::string raw = read_file(path);
  Cursor cur{raw};
  checked_body(raw, path, cur);

  lm::ModelConfig cfg = read_header(cur, kStateMagic, "optimizer state");
  train::TrainState state;
  state.step = static_cast<long long>(cur.u64());
  state.data_seed = cur.u64();
  std::uint64_t n = cur.u64();

  state.params.config = cfg;
  state.params.config_hash = cfg.config_hash();
  state.params.segments = lm::build_segments(cfg);
  std::size_t total = 0;
  for (const lm::Segment& seg : state.params.segments) total += seg.numel();
  require(n == total, Errc::corruption, "value count does not match the config in " + path);

  cur.need(n * 12);
  state.params.values.resize(n);
  state.m.resize(n);
  state.v.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) state.params.values[i] = cur.f32();
  for (std::uint64_t i = 0; i < n; ++i) state.m[i] = cur.f32();
  for (std::uint64_t i = 0; i < n; ++i) state.v[i] = cur.f32();
  require(cur.pos == cur.end, Errc::corruption, "trailing bytes in " + path);

  if (expected_config_hash != 0) {
    require(state.params.config_hash == expected_config_hash, Errc::incompatible,
            "optimizer state " + path + " was written for a different model config");
  }
  return state;
}

// ---------------------------------------------------------------------------
// Manifests

std::string RunManifest::to_json() const {
  nlohmann::json j;
  nlohmann::json ckpts = nlohmann::json::object();
  for (const auto& [label, digest] : checkpoint_digests) ckpts[label] = hex64(digest);
  j["checkpoints"] = ckpts;

  nlohmann::json cfg = nlohmann::json::object();
  cfg["eval"] = configs.eval_config;
  cfg["model"] = configs.model_config;
  cfg["schedule"] = configs.schedule;
  cfg["task"] = configs.task_config;
  cfg["teachers"] = configs.teacher_specs;
  cfg["train"] = configs.train_config;
  j["configs"] = cfg;

  nlohmann::json digests = nlohmann::json::object();
  for (const auto& [id, digest] : configs.corpus_digests) digests[id] = hex64(digest);
  j["corpus_digests"] = digests;

  j["init_params"] = hex64(configs.init_digest);
  j["regime"] = regime;
  j["run_id"] = run_id;
  j["seed_root"] = std::to_string(configs.seed_root);
  j["tool_version"] = tool_version;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  nlohmann::json j = parse_json(text, "run manifest");
  RunManifest m;
  try {
    for (const auto& [label, digest] : j.at("checkpoints").items()) {
      m.checkpoint_digests[label] = parse_hex64(digest.get<std::string>());
    }
    const nlohmann::json& cfg = j.at("configs");
    m.configs.eval_config = cfg.at("eval").get<std::string>();
    m.configs.model_config = cfg.at("model").get<std::string>();
    m.configs.schedule = cfg.at("schedule").get<std::string>();
    m.configs.task_config = cfg.at("task").get<std::string>();
    m.configs.teacher_specs = cfg.at("teachers").get<std::vector<std::string>>();
    m.configs.train_config = cfg.at("train").get<std::string>();
    for (const auto& [id, digest] : j.at("corpus_digests").items()) {
      m.configs.corpus_digests[id] = parse_hex64(digest.get<std::string>());
    }
    m.regime = j.at("regime").get<std::string>();
    m.run_id = j.at("run_id").get<std::string>();
    m.configs.init_digest = parse_hex64(j.at("init_params").get<std::string>());
    m.configs.seed_root = parse_u64_dec(j.at("seed_root").get<std::string>());
    m.tool_version = j.at("tool_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("malformed run manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
  write_file_atomic(path, manifest.to_json());
}

RunManifest load_manifest(const std::string& path) {
  return RunManifest::from_json(read_file(path));
}

train::TrainConfig parse_train_config(const std::string& canonical) {
  auto kv = parse_braced(canonical, "train");
  train::TrainConfig cfg;
  cfg.base_lr = parse_double(field(kv, "base_lr", "train"));
  {
    const std::string& betas = field(kv, "betas", "train");
    std::size_t comma = betas.find(',');
    require(comma != std::string::npos, Errc::parse, "malformed betas: " + betas);
    cfg.beta1 = parse_double(betas.substr(0, comma));
    cfg.beta2 = parse_double(betas.substr(comma + 1));
  }
  cfg.weight_decay = parse_double(field(kv, "weight_decay", "train"));
  cfg.warmup_fraction = parse_double(field(kv, "warmup_fraction", "train"));
  cfg.grad_clip_norm = parse_double(field(kv, "grad_clip_norm", "train"));
  cfg.adam_eps = parse_double(field(kv, "adam_eps", "train"));
  cfg.batch_size = static_cast<int>(parse_ll(field(kv, "batch_size", "train")));
  cfg.total_steps = parse_ll(field(kv, "total_steps", "train"));
  cfg.seed = parse_u64_dec(field(kv, "seed", "train"));
  {
    const std::string& scope = field(kv, "schedule_scope", "train");
    if (scope == "per_branch") {
      cfg.schedule_scope = train::ScheduleScope::per_branch;
    } else if (scope == "global") {
      cfg.schedule_scope = train::ScheduleScope::global;
    } else {
      fail(Errc::parse, "unknown schedule scope: " + scope);
    }
  }
  cfg.schedule_offset = parse_ll(field(kv, "schedule_offset", "train"));
  cfg.validate();
  return cfg;
}

orch::RoundSchedule parse_round_schedule(const std::string& canonical) {
  nlohmann::json j = parse_json(canonical, "round schedule");
  orch::RoundSchedule sched;
  try {
    sched.rounds = j.at("rounds").get<int>();
    sched.steps_per_branch = j.at("steps_per_branch").get<int>();
    sched.baseline_total_steps = j.at("baseline_total_steps").get<long long>();
    sched.checkpoint_every = j.at("checkpoint_every").get<long long>();
    sched.teacher_pool = j.at("teacher_pool").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("malformed round schedule: ") + e.what());
  }
  sched.validate();
  return sched;
}

lm::ModelConfig parse_model_config(const std::string& canonical) {
  nlohmann::json j = parse_json(canonical, "model config");
  lm::ModelConfig cfg;
  try {
    cfg.context_length = j.at("context_length").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.tied_head = j.at("tied_head").get<bool>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("malformed model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

nlohmann::json metric_to_json(const MetricRecord& record) {
  nlohmann::json j;
  j["label"] = record.label;
  j["payload"] = record.payload;
  j["run_id"] = record.run_id;
  j["stream"] = record.stream;
  return j;
}

}  // namespace

void append_metric(const MetricRecord& record, const std::string& path) {
  std::ofstream out(path, std::ios::app);
  require(out.good(), Errc::io, "cannot append to " + path);
  out << metric_to_json(record).dump() << "\n";
  require(out.good(), Errc::io, "write failed for " + path);
}

void append_metrics(const std::vector<MetricRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::app);
  require(out.good(), Errc::io, "cannot append to " + path);
  for (const MetricRecord& record : records) {
    out << metric_to_json(record).dump() << "\n";
  }
  require(out.good(), Errc::io, "write failed for " + path);
}

std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io, "cannot open " + path);
  std::vector<MetricRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded(), Errc::parse,
            path + ":" + std::to_string(line_no) + ": malformed metric record");
    MetricRecord rec;
    try {
      rec.label = j.at("label").get<std::string>();
      rec.payload = j.at("payload");
      rec.run_id = j.at("run_id").get<std::string>();
      rec.stream = j.at("stream").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse,
           path + ":" + std::to_string(line_no) + ": malformed metric record: " + e.what());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run directories

std::string run_root() {
  const char* env = std::getenv("MOT_RUN_ROOT");
  if (env != nullptr && env[0] != '\0') return env;
  return "runs";
}

std::string run_dir(const std::string& run_id) {
  require(!run_id.empty(), Errc::config, "run id must not be empty");
  fs::path dir = fs::path(run_root()) / run_id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io, "cannot create " + dir.string() + ": " + ec.message());
  return dir.string();
}

std::string make_run_id(const std::string& regime, std::uint64_t seed,
                        const orch::ConfigSnapshot& snapshot) {
  std::uint64_t h = fnv1a(regime);
  h = fnv1a(snapshot.model_config, h);
  h = fnv1a(snapshot.train_config, h);
  h = fnv1a(snapshot.schedule, h);
  h = fnv1a(&snapshot.init_digest, sizeof(snapshot.init_digest), h);
  for (const auto& [id, digest] : snapshot.corpus_digests) {
    h = fnv1a(id, h);
    h = fnv1a(&digest, sizeof(digest), h);
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s-s%llu-%08x", regime.c_str(),
                static_cast<unsigned long long>(seed),
                static_cast<unsigned>(h & 0xffffffffu));
  return buf;
}

std::string make_run_id(const orch::RunArtifacts& artifacts) {
  return make_run_id(orch::regime_name(artifacts.regime), artifacts.run_seed,
                     artifacts.snapshot);
}

namespace {

std::vector<MetricRecord> eval_records(const orch::RunArtifacts& artifacts,
                                       const std::string& id) {
  std::vector<MetricRecord> records;
  for (const orch::Checkpoint& ck : artifacts.checkpoints) {
    auto by_label = artifacts.evals.find(ck.label);
    if (by_label == artifacts.evals.end()) continue;
    for (const auto& [split, result] : by_label->second) {
      MetricRecord rec;
      rec.run_id = id;
      rec.stream = "eval";
      rec.label = ck.label;
      rec.payload = {{"mean", result.mean},
                     {"n_runs", result.per_run.size()},
                     {"split", corpus::split_name(split)},
                     {"stderr", result.stderr_}};
      records.push_back(std::move(rec));
    }
  }
  return records;
}

RunManifest build_manifest(const orch::RunArtifacts& artifacts, const std::string& id) {
  RunManifest manifest;
  manifest.run_id = id;
  manifest.regime = orch::regime_name(artifacts.regime);
  manifest.configs = artifacts.snapshot;
  for (const orch::Checkpoint& ck : artifacts.checkpoints) {
    manifest.checkpoint_digests[ck.label] = params_digest(ck.params);
  }
  return manifest;
}

std::vector<train::LossEntry> read_train_loss(const std::string& metrics_path) {
  std::vector<train::LossEntry> out;
  if (!fs::exists(metrics_path)) return out;
  std::set<long long> seen;
  for (const MetricRecord& rec : read_metrics(metrics_path)) {
    if (rec.stream != "train_loss") continue;
    long long step = parse_ll(rec.label);
    double loss = 0.0;
    try {
      loss = rec.payload.at("loss").get<double>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse, metrics_path + ": malformed train_loss record: " + e.what());
    }
    if (seen.insert(step).second) out.push_back({step, loss});
  }
  std::sort(out.begin(), out.end(),
            [](const train::LossEntry& a, const train::LossEntry& b) { return a.step < b.step; });
  return out;
}

std::vector<MetricRecord> loss_records(const std::string& id,
                                       const std::vector<train::LossEntry>& entries) {
  std::vector<MetricRecord> records;
  records.reserve(entries.size());
  for (const train::LossEntry& entry : entries) {
    MetricRecord rec;
    rec.run_id = id;
    rec.stream = "train_loss";
    rec.label = std::to_string(entry.step);
    rec.payload = {{"loss", entry.loss}};
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

RunManifest save_run(const orch::RunArtifacts& artifacts, const std::string& run_id) {
  const std::string id = run_id.empty() ? make_run_id(artifacts) : run_id;
  const std::string dir = run_dir(id);
  const fs::path ckpt_dir = fs::path(dir) / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  require(!ec, Errc::io, "cannot create " + ckpt_dir.string() + ": " + ec.message());

  RunManifest manifest = build_manifest(artifacts, id);
  for (const orch::Checkpoint& ck : artifacts.checkpoints) {
    const std::string path = (ckpt_dir / (ck.label + ".motc")).string();
    save_checkpoint(ck.params, path);
  }

  std::vector<MetricRecord> records = loss_records(id, artifacts.train_loss);
  for (MetricRecord& rec : eval_records(artifacts, id)) records.push_back(std::move(rec));
  const std::string metrics_path = (fs::path(dir) / "metrics.jsonl").string();
  fs::remove(metrics_path, ec);  // a re-save replaces, never duplicates, the stream
  append_metrics(records, metrics_path);

  save_manifest(manifest, (fs::path(dir) / "manifest.json").string());
  return manifest;
}

// ---------------------------------------------------------------------------
// Crash-tolerant runners

orch::RunArtifacts run_continuous_persisted(orch::Regime regime,
                                            const lm::ParameterVector& base,
                                            const corpus::DistillCorpus& corpus,
                                            const orch::RoundSchedule& sched,
                                            const train::TrainConfig& tcfg,
                                            const std::string& run_id, bool resume,
                                            long long stop_after_steps) {
  sched.validate();
  tcfg.validate();
  require(corpus.size() > 0, Errc::precondition, "training corpus is empty");
  for (const corpus::DistillExample& ex : corpus.examples) {
    lm::TokenizedExample tok = lm::make_example(ex.prompt_text, ex.target_text);
    require(static_cast<int>(tok.tokens.size()) <= base.config.context_length, Errc::length,
            "example for problem " + ex.problem_id + " exceeds the training context");
  }
  require(stop_after_steps == 0 ||
              (stop_after_steps > 0 && stop_after_steps <= sched.baseline_total_steps &&
               stop_after_steps % sched.checkpoint_every == 0),
          Errc::config, "stop_after_steps must be a checkpoint boundary");

  train::TrainConfig run_cfg = tcfg;
  run_cfg.total_steps = sched.baseline_total_steps;
  run_cfg.schedule_offset = 0;

  const std::string dir = run_dir(run_id);
  const fs::path ckpt_dir = fs::path(dir) / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  require(!ec, Errc::io, "cannot create " + ckpt_dir.string() + ": " + ec.message());
  const std::string metrics_path = (fs::path(dir) / "metrics.jsonl").string();
  const std::string sidecar_path = (ckpt_dir / "latest.mots").string();
  const std::string base_path = (ckpt_dir / "base.motc").string();

  const std::uint64_t base_digest = params_digest(base);
  train::TrainState state = train::init_state(base, run_cfg);
  bool resumed = false;
  if (resume && fs::exists(sidecar_path)) {
    bool usable = false;
    train::TrainState loaded;
    try {
      loaded = load_train_state(sidecar_path, base.config_hash);
      usable = loaded.step > 0 && loaded.step <= sched.baseline_total_steps &&
               loaded.step % sched.checkpoint_every == 0;
      if (usable) {
        const std::string ck = (ckpt_dir / (orch::step_label(loaded.step) + ".motc")).string();
        usable = fs::exists(ck) && fs::exists(base_path);
        if (usable) checkpoint_digest(ck);  // throws on a torn checkpoint
      }
    } catch (const Error& e) {
      if (e.code() != Errc::corruption) throw;  // torn writes restart; real errors surface
      usable = false;
    }
    if (usable) {
      require(checkpoint_digest(base_path) == base_digest, Errc::config,
              "resume base differs from the original run");
      require(loaded.data_seed == state.data_seed, Errc::config,
              "resume seed differs from the original run");
      state = std::move(loaded);
      resumed = true;
    }
  }
  if (!resumed) {
    fs::remove_all(ckpt_dir, ec);
    fs::create_directories(ckpt_dir, ec);
    require(!ec, Errc::io, "cannot create " + ckpt_dir.string() + ": " + ec.message());
    fs::remove(metrics_path, ec);
    save_checkpoint(base, base_path);
  }

  orch::RunArtifacts art;
  art.regime = regime;
  art.run_seed = tcfg.seed;
  art.fairness_warning = !sched.fair_budget();
  art.branch_steps = sched.baseline_total_steps;
  art.serial_steps = sched.baseline_total_steps;
  art.checkpoints.push_back({"base", base});

  const long long done = state.step / sched.checkpoint_every;
  for (long long i = 1; i <= done; ++i) {
    const std::string label = orch::step_label(i * sched.checkpoint_every);
    art.checkpoints.push_back(
        {label, load_checkpoint((ckpt_dir / (label + ".motc")).string(), base.config_hash)});
  }
  if (resumed) {
    for (const train::LossEntry& entry : read_train_loss(metrics_path)) {
      if (entry.step <= state.step) art.train_loss.push_back(entry);
    }
  }

  const long long target =
      stop_after_steps == 0 ? sched.baseline_total_steps : stop_after_steps;
  while (state.step < target) {
    const std::size_t logged = state.loss_log.size();
    train::train_steps(state, corpus, sched.checkpoint_every, run_cfg);
    const std::string label = orch::step_label(state.step);
    std::vector<train::LossEntry> fresh(state.loss_log.begin() +
                                            static_cast<std::ptrdiff_t>(logged),
                                        state.loss_log.end());
    // Metrics land before the checkpoint and its sidecar: a crash may
    // duplicate loss records (deduplicated on read) but never orphans a
    // checkpoint from its loss prefix.
    append_metrics(loss_records(run_id, fresh), metrics_path);
    save_checkpoint(state.params, (ckpt_dir / (label + ".motc")).string());
    save_train_state(state, sidecar_path);
    for (const train::LossEntry& entry : fresh) art.train_loss.push_back(entry);
    art.checkpoints.push_back({label, state.params});
  }

  art.branch_logs.push_back({0, corpus.teacher_id, art.train_loss});
  art.snapshot.model_config = base.config.canonical();
  art.snapshot.train_config = tcfg.canonical();
  art.snapshot.schedule = sched.canonical();
  art.snapshot.seed_root = tcfg.seed;
  art.snapshot.init_digest = params_digest(base);
  art.snapshot.corpus_digests[corpus.teacher_id] = corpus.content_digest();
  return art;
}

orch::RunArtifacts run_mot_persisted(const lm::ParameterVector& base,
                                     const std::map<std::string, corpus::DistillCorpus>& corpora,
                                     const orch::RoundSchedule& sched,
                                     const train::TrainConfig& tcfg, const std::string& run_id,
                                     bool resume, int stop_after_round) {
  sched.validate();
  tcfg.validate();
  require(!sched.teacher_pool.empty(), Errc::config, "teacher pool is empty");
  {
    std::set<std::string> seen;
    for (const std::string& tid : sched.teacher_pool) {
      require(seen.insert(tid).second, Errc::config, "duplicate teacher in pool: " + tid);
      auto it = corpora.find(tid);
      require(it != corpora.end(), Errc::precondition, "no corpus for pool teacher " + tid);
      require(it->second.size() > 0, Errc::precondition, "empty corpus for pool teacher " + tid);
    }
  }
  require(stop_after_round == 0 || (stop_after_round >= 1 && stop_after_round <= sched.rounds),
          Errc::config, "stop_after_round out of range");

  const std::string dir = run_dir(run_id);
  const fs::path ckpt_dir = fs::path(dir) / "checkpoints";
  std::error_code ec;
  fs::create_directories(ckpt_dir, ec);
  require(!ec, Errc::io, "cannot create " + ckpt_dir.string() + ": " + ec.message());
  const std::string metrics_path = (fs::path(dir) / "metrics.jsonl").string();
  const std::string base_path = (ckpt_dir / "base.motc").string();

  const std::uint64_t base_digest = params_digest(base);
  lm::ParameterVector current = base;
  int start_round = 1;
  bool resumed = false;
  if (resume && fs::exists(base_path)) {
    bool base_ok = false;
    try {
      base_ok = checkpoint_digest(base_path) == base_digest;
      require(base_ok, Errc::config, "resume base differs from the original run");
    } catch (const Error& e) {
      if (e.code() != Errc::corruption) throw;
      base_ok = false;
    }
    if (base_ok) {
      for (int t = sched.rounds; t >= 1 && !resumed; --t) {
        const std::string ck = (ckpt_dir / (orch::round_label(t) + ".motc")).string();
        if (!fs::exists(ck)) continue;
        try {
          current = load_checkpoint(ck, base.config_hash);
          start_round = t + 1;
          resumed = true;
        } catch (const Error& e) {
          if (e.code() != Errc::corruption) throw;
        }
      }
      resumed = resumed || base_ok;  // a valid base alone restarts round 1 in place
    }
  }
  if (!resumed) {
    fs::remove_all(ckpt_dir, ec);
    fs::create_directories(ckpt_dir, ec);
    require(!ec, Errc::io, "cannot create " + ckpt_dir.string() + ": " + ec.message());
    fs::remove(metrics_path, ec);
    save_checkpoint(base, base_path);
    current = base;
    start_round = 1;
  }

  const int K = static_cast<int>(sched.teacher_pool.size());
  orch::RunArtifacts art;
  art.regime = orch::Regime::MOT;
  art.run_seed = tcfg.seed;
  art.fairness_warning = !sched.fair_budget();
  art.serial_steps = static_cast<long long>(sched.rounds) * sched.steps_per_branch;
  art.branch_steps = art.serial_steps * K;
  art.checkpoints.push_back({"base", base});

  for (int t = 1; t < start_round; ++t) {
    const std::string label = orch::round_label(t);
    art.checkpoints.push_back(
        {label, load_checkpoint((ckpt_dir / (label + ".motc")).string(), base.config_hash)});
  }
  if (start_round > 1) {
    const long long prefix_steps =
        static_cast<long long>(start_round - 1) * sched.steps_per_branch;
    for (const train::LossEntry& entry : read_train_loss(metrics_path)) {
      if (entry.step <= prefix_steps) art.train_loss.push_back(entry);
    }
  }

  const int target_round = stop_after_round == 0 ? sched.rounds : stop_after_round;
  for (int t = start_round; t <= target_round; ++t) {
    orch::RoundResult round = orch::run_round(current, corpora, sched, tcfg, t);
    current = std::move(round.merged);
    const std::string label = orch::round_label(t);

    std::vector<train::LossEntry> fresh;
    fresh.reserve(round.mean_losses.size());
    for (int s = 0; s < sched.steps_per_branch; ++s) {
      long long global_step = static_cast<long long>(t - 1) * sched.steps_per_branch + s + 1;
      fresh.push_back({global_step, round.mean_losses[static_cast<std::size_t>(s)]});
    }
    append_metrics(loss_records(run_id, fresh), metrics_path);
    save_checkpoint(current, (ckpt_dir / (label + ".motc")).string());
    for (const train::LossEntry& entry : fresh) art.train_loss.push_back(entry);
    for (orch::BranchLog& log : round.branch_logs) art.branch_logs.push_back(std::move(log));
    art.checkpoints.push_back({label, current});
  }

  art.snapshot.model_config = base.config.canonical();
  art.snapshot.train_config = tcfg.canonical();
  art.snapshot.schedule = sched.canonical();
  art.snapshot.seed_root = tcfg.seed;
  art.snapshot.init_digest = params_digest(base);
  for (const std::string& tid : sched.teacher_pool) {
    art.snapshot.corpus_digests[tid] = corpora.at(tid).content_digest();
  }
  return art;
}

RunManifest finalize_run(const orch::RunArtifacts& artifacts, const std::string& run_id) {
  require(!run_id.empty(), Errc::config, "run id must not be empty");
  const std::string dir = run_dir(run_id);
  RunManifest manifest = build_manifest(artifacts, run_id);
  append_metrics(eval_records(artifacts, run_id),
                 (fs::path(dir) / "metrics.jsonl").string());
  save_manifest(manifest, (fs::path(dir) / "manifest.json").string());
  return manifest;
}

}  // namespace mot::store
