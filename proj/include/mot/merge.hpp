#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mot/model.hpp"

namespace mot::merge {

struct MergeSpec {
  std::vector<std::pair<std::string, lm::ParameterVector>> members;  // (branch id, params)
  std::vector<double> weights;  // empty = uniform

  void validate() const;
};

// Coordinate-wise arithmetic mean. Per coordinate the member values are
// sorted ascending and summed in 64-bit, so the result is bit-identical
// under any member permutation.
lm::ParameterVector merge_uniform(const std::vector<lm::ParameterVector>& members);

// Convex combination; members are ordered by branch id before accumulating.
// All-equal weights delegate to merge_uniform (bit-identical results).
lm::ParameterVector merge_weighted(const MergeSpec& spec);

// theta(lambda) = lambda * base + (1 - lambda) * ckpt, coordinate-wise.
lm::ParameterVector interpolate(const lm::ParameterVector& base, const lm::ParameterVector& ckpt,
                                double lambda);

// Euclidean distance and cosine similarity of flattened vectors (64-bit
// accumulation). Cosine of two zero vectors is defined as 1.
std::pair<double, double> param_distance(const lm::ParameterVector& a,
                                         const lm::ParameterVector& b);

}  // namespace mot::merge
