#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mot/corpus.hpp"
#include "mot/orchestrator.hpp"

namespace mot::report {

// One regime's line in the cross-regime comparison. Accuracy fields are
// fractions in [0,1]; absent measurements are NaN and render as "-".
struct RegimeRow {
  std::string name;    // display name, e.g. "MOT" or "STD (t-terse)"
  std::string run_id;
  std::string best_label;
  double validation_mean = std::nan("");
  double validation_stderr = std::nan("");
  double test_mean = std::nan("");
  double test_stderr = std::nan("");
  double avg = std::nan("");  // mean of the two held-out splits, when both exist
  bool fairness_warning = false;
};

// Best-checkpoint row for a finished run held in memory.
RegimeRow row_from_artifacts(const std::string& name, const orch::RunArtifacts& artifacts,
                             corpus::Split select_split);

// Best-checkpoint row reconstructed from a persisted run directory
// (manifest.json + metrics.jsonl).
RegimeRow row_from_run_dir(const std::string& dir, corpus::Split select_split);

// Markdown comparison table, one row per regime, scores in percent; appends a
// budget note when any row was trained off the fair step budget.
std::string comparison_table(const std::vector<RegimeRow>& rows);

}  // namespace mot::report
