#include "mot/merge.hpp"

#include <algorithm>
#include <cmath>

namespace mot::merge {

void MergeSpec::validate() const {
  require(!members.empty(), Errc::precondition, "merge needs at least one member");
  for (std::size_t i = 1; i < members.size(); ++i) {
    lm::require_same_layout(members[0].second, members[i].second);
  }
  if (!weights.empty()) {
    require(weights.size() == members.size(), Errc::config,
            "weight count must match member count");
    double sum = 0.0;
    for (double w : weights) {
      require(w >= 0.0, Errc::config, "weights must be nonnegative");
      sum += w;
    }
    require(std::abs(sum - 1.0) <= 1e-9, Errc::config, "weights must sum to 1");
  }
}

lm::ParameterVector merge_uniform(const std::vector<lm::ParameterVector>& members) {
  require(!members.empty(), Errc::precondition, "merge needs at least one member");
  for (std::size_t i = 1; i < members.size(); ++i) {
    lm::require_same_layout(members[0], members[i]);
  }
  const std::size_t n = members[0].values.size();
  const std::size_t k = members.size();
  lm::ParameterVector out = members[0];

  std::vector<double> vals(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      vals[j] = static_cast<double>(members[j].values[i]);
    }
    std::sort(vals.begin(), vals.end());
    double acc = 0.0;
    for (double v : vals) acc += v;
    out.values[i] = static_cast<float>(acc / static_cast<double>(k));
  }
  return out;
}

lm::ParameterVector merge_weighted(const MergeSpec& spec) {
  spec.validate();
  const std::size_t k = spec.members.size();

  bool uniform = spec.weights.empty();
  if (!uniform) {
    uniform = true;
    for (double w : spec.weights) uniform = uniform && w == spec.weights[0];
  }
  if (uniform) {
    std::vector<lm::ParameterVector> plain;
    plain.reserve(k);
    for (const auto& [id, pv] : spec.members) plain.push_back(pv);
    return merge_uniform(plain);
  }

  // Fixed accumulation order: members sorted by branch id.
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&spec](std::size_t a, std::size_t b) {
    return spec.members[a].first < spec.members[b].first;
  });

  lm::ParameterVector out = spec.members[0].second;
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j : order) {
      acc += spec.weights[j] * static_cast<double>(spec.members[j].second.values[i]);
    }
    out.values[i] = static_cast<float>(acc);
  }
  return out;
}

lm::ParameterVector interpolate(const lm::ParameterVector& base, const lm::ParameterVector& ckpt,
                                double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, Errc::precondition, "lambda must be in [0,1]");
  lm::require_same_layout(base, ckpt);
  lm::ParameterVector out = base;
  if (lambda == 1.0) return out;  // bit-exact endpoint
  if (lambda == 0.0) return ckpt;
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = static_cast<float>(lambda * static_cast<double>(base.values[i]) +
                                       (1.0 - lambda) * static_cast<double>(ckpt.values[i]));
  }
  return out;
}

std::pair<double, double> param_distance(const lm::ParameterVector& a,
                                         const lm::ParameterVector& b) {
  lm::require_same_layout(a, b);
  double dist_sq = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double x = static_cast<double>(a.values[i]);
    const double y = static_cast<double>(b.values[i]);
    dist_sq += (x - y) * (x - y);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  double cosine;
  if (na == 0.0 && nb == 0.0) {
    cosine = 1.0;
  } else if (na == 0.0 || nb == 0.0) {
    cosine = 0.0;
  } else {
    cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return {std::sqrt(dist_sq), cosine};
}

}  // namespace mot::merge
