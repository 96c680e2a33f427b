#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mot/error.hpp"
#include "mot/model.hpp"
#include "mot/orchestrator.hpp"
#include "mot/trainer.hpp"

namespace mot::store {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Fixed-width lowercase hex for 64-bit digests (JSON numbers cannot carry
// them losslessly).
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(const std::string& s);

// ---------------------------------------------------------------------------
// Checkpoint container: "MOTC" magic, format version, the model-config block,
// a segment directory (name, offset, shape, dtype f32), the little-endian
// payload, and a trailing 64-bit checksum over all preceding bytes. The
// checksum doubles as the artifact digest.

std::uint64_t save_checkpoint(const lm::ParameterVector& params, const std::string& path);

// The digest save_checkpoint would produce, without touching the filesystem
// (the container serialization is canonical, so equal params ⇒ equal digest).
std::uint64_t params_digest(const lm::ParameterVector& params);

// Validates magic/version, checksum, and that the directory tiles the payload
// and matches the embedded config before returning. A nonzero
// expected_config_hash additionally pins the architecture.
lm::ParameterVector load_checkpoint(const std::string& path,
                                    std::uint64_t expected_config_hash = 0);

// Checksum validation only; returns the digest without rebuilding parameters.
std::uint64_t checkpoint_digest(const std::string& path);

// ---------------------------------------------------------------------------
// Optimizer-state sidecar ("MOTS"): parameters plus both moment accumulators,
// the completed-step count, and the data-order seed — everything needed to
// continue a run bit-exactly after a crash.

std::uint64_t save_train_state(const train::TrainState& state, const std::string& path);
train::TrainState load_train_state(const std::string& path,
                                   std::uint64_t expected_config_hash = 0);

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string run_id;
  std::string regime;
  orch::ConfigSnapshot configs;
  std::map<std::string, std::uint64_t> checkpoint_digests;  // label -> digest
  std::string tool_version = kToolVersion;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Canonical-string parsers (inverses of the configs' canonical() renderings),
// used to re-execute a run from its manifest.
train::TrainConfig parse_train_config(const std::string& canonical);
orch::RoundSchedule parse_round_schedule(const std::string& canonical);
lm::ModelConfig parse_model_config(const std::string& canonical);

// ---------------------------------------------------------------------------
// Metrics: append-only JSONL, one record per line, time-ordered per stream.

struct MetricRecord {
  std::string run_id;
  std::string stream;  // "train_loss" | "eval" | "probe"
  std::string label;   // step number rendered in decimal, or checkpoint label
  nlohmann::json payload;
};

void append_metric(const MetricRecord& record, const std::string& path);
void append_metrics(const std::vector<MetricRecord>& records, const std::string& path);
std::vector<MetricRecord> read_metrics(const std::string& path);

// ---------------------------------------------------------------------------
// Run directories

// Root for all run directories: $MOT_RUN_ROOT, or ./runs when unset.
std::string run_root();

// <root>/<run_id>, created (with parents) on first use.
std::string run_dir(const std::string& run_id);

// Deterministic id: regime, seed, and a hash of the config snapshot, so a
// replay of the same run maps to the same directory name.
std::string make_run_id(const orch::RunArtifacts& artifacts);
std::string make_run_id(const std::string& regime, std::uint64_t seed,
                        const orch::ConfigSnapshot& snapshot);

// Persists a finished run: every checkpoint (as <dir>/checkpoints/<label>.motc),
// the metrics stream, and the manifest. Returns the written manifest.
RunManifest save_run(const orch::RunArtifacts& artifacts, const std::string& run_id = "");

// ---------------------------------------------------------------------------
// Crash-tolerant runners: same numerical semantics as the in-memory runners,
// but every checkpoint (plus, for continuous runs, an optimizer-state
// sidecar) is persisted as it is produced, and train-loss metrics are
// appended per segment. With resume=true a partially-written run directory is
// continued from its last valid checkpoint; the already-written prefix is
// kept (per-branch logs exist only for freshly trained rounds), and the
// continued run reproduces exactly the checkpoints the uninterrupted run
// would have written. A nonzero stop_after_steps / stop_after_round ends the
// run early at that boundary, leaving a valid resumable directory.
// Evaluations are not attached; run finalize_run after attach_evals to record
// them and the manifest.

orch::RunArtifacts run_continuous_persisted(orch::Regime regime,
                                            const lm::ParameterVector& base,
                                            const corpus::DistillCorpus& corpus,
                                            const orch::RoundSchedule& sched,
                                            const train::TrainConfig& tcfg,
                                            const std::string& run_id, bool resume,
                                            long long stop_after_steps = 0);

orch::RunArtifacts run_mot_persisted(const lm::ParameterVector& base,
                                     const std::map<std::string, corpus::DistillCorpus>& corpora,
                                     const orch::RoundSchedule& sched,
                                     const train::TrainConfig& tcfg, const std::string& run_id,
                                     bool resume, int stop_after_round = 0);

// Appends the attached evaluations to the metrics stream and writes the
// manifest for a run persisted by the runners above.
RunManifest finalize_run(const orch::RunArtifacts& artifacts, const std::string& run_id);

}  // namespace mot::store
