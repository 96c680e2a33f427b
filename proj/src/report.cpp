#include "mot/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "mot/store.hpp"

namespace mot::report {

namespace {

void fill_split_scores(RegimeRow& row, corpus::Split split, double mean, double stderr_) {
  if (split == corpus::Split::validation) {
    row.validation_mean = mean;
    row.validation_stderr = stderr_;
  } else if (split == corpus::Split::test) {
    row.test_mean = mean;
    row.test_stderr = stderr_;
  }
}

void finish_row(RegimeRow& row) {
  if (!std::isnan(row.validation_mean) && !std::isnan(row.test_mean)) {
    row.avg = 0.5 * (row.validation_mean + row.test_mean);
  }
}

std::string pct(double fraction) {
  if (std::isnan(fraction)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * fraction);
  return buf;
}

std::string pct_pm(double mean, double stderr_) {
  if (std::isnan(mean)) return "-";
  if (std::isnan(stderr_)) return pct(mean);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f ± %.1f", 100.0 * mean, 100.0 * stderr_);
  return buf;
}

}  // namespace

RegimeRow row_from_artifacts(const std::string& name, const orch::RunArtifacts& artifacts,
                             corpus::Split select_split) {
  RegimeRow row;
  row.name = name;
  row.run_id = store::make_run_id(artifacts);
  row.fairness_warning = artifacts.fairness_warning;

  auto [best_label, best_params] = orch::select_best(artifacts, select_split);
  (void)best_params;
  row.best_label = best_label;

  const auto& by_split = artifacts.evals.at(best_label);
  for (const auto& [split, result] : by_split) {
    fill_split_scores(row, split, result.mean, result.stderr_);
  }
  finish_row(row);
  return row;
}

RegimeRow row_from_run_dir(const std::string& dir, corpus::Split select_split) {
  namespace fs = std::filesystem;
  store::RunManifest manifest =
      store::load_manifest((fs::path(dir) / "manifest.json").string());
  std::vector<store::MetricRecord> metrics =
      store::read_metrics((fs::path(dir) / "metrics.jsonl").string());

  // Checkpoint order is the order of first appearance in the eval stream.
  std::vector<std::string> ordered_labels;
  std::map<std::string, std::map<corpus::Split, std::pair<double, double>>> scores;
  for (const store::MetricRecord& rec : metrics) {
    if (rec.stream != "eval") continue;
    try {
      corpus::Split split = corpus::split_from_name(rec.payload.at("split").get<std::string>());
      double mean = rec.payload.at("mean").get<double>();
      double stderr_ = rec.payload.at("stderr").get<double>();
      if (scores.count(rec.label) == 0) ordered_labels.push_back(rec.label);
      scores[rec.label][split] = {mean, stderr_};
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse, dir + ": malformed eval record: " + e.what());
    }
  }

  RegimeRow row;
  row.name = manifest.regime;
  row.run_id = manifest.run_id;

  const std::string* best = nullptr;
  double best_score = 0.0;
  for (const std::string& label : ordered_labels) {
    if (label == "base") continue;
    auto it = scores[label].find(select_split);
    require(it != scores[label].end(), Errc::precondition,
            dir + ": missing evaluation for checkpoint " + label + " on " +
                corpus::split_name(select_split));
    if (best == nullptr || it->second.first > best_score) {
      best = &label;
      best_score = it->second.first;
    }
  }
  require(best != nullptr, Errc::precondition, dir + ": no evaluated checkpoints to report");
  row.best_label = *best;
  for (const auto& [split, mean_stderr] : scores[*best]) {
    fill_split_scores(row, split, mean_stderr.first, mean_stderr.second);
  }
  finish_row(row);

  orch::RoundSchedule sched = store::parse_round_schedule(manifest.configs.schedule);
  row.fairness_warning = !sched.fair_budget();
  return row;
}

std::string comparison_table(const std::vector<RegimeRow>& rows) {
  require(!rows.empty(), Errc::precondition, "no rows to report");
  std::ostringstream os;
  os << "| regime | run | best checkpoint | validation | test | AVG |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const RegimeRow& row : rows) {
    os << "| " << row.name << (row.fairness_warning ? " (!)" : "") << " | " << row.run_id
       << " | " << row.best_label << " | " << pct_pm(row.validation_mean, row.validation_stderr)
       << " | " << pct_pm(row.test_mean, row.test_stderr) << " | " << pct(row.avg) << " |\n";
  }
  bool any_warning = false;
  for (const RegimeRow& row : rows) any_warning = any_warning || row.fairness_warning;
  if (any_warning) {
    os << "\n> (!) trained off the fair step budget: baseline steps differ from "
          "rounds x steps-per-branch.\n";
  }
  return os.str();
}

}  // namespace mot::report
