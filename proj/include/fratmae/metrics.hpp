#ifndef FRATMAE_METRICS_HPP
#define FRATMAE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fratmae/rng.hpp"
#include "fratmae/volume.hpp"

namespace fratmae {

namespace detail {

struct OverlapCounts {
  int64_t inter = 0, p = 0, t = 0;
};

template <typename C>
OverlapCounts overlap(const C& pred, const C& truth) {
  if (pred.size() != truth.size()) throw ShapeError("mask metric: dimension mismatch");
  OverlapCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = truth[i] != 0;
    c.inter += a && b;
    c.p += a;
    c.t += b;
  }
  return c;
}

}  // namespace detail

// 2|P o T| / (|P| + |T|); both-empty convention: 1.0.
inline double dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth) {
  const auto c = detail::overlap(pred, truth);
  if (c.p + c.t == 0) return 1.0;
  return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.p + c.t);
}

inline double dice(const MaskVolume& pred, const MaskVolume& truth) {
  if (pred.dims != truth.dims) throw ShapeError("dice: dimension mismatch");
  return dice(pred.data, truth.data);
}

// |P o T| / |P u T|; both-empty convention: 1.0.
inline double iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth) {
  const auto c = detail::overlap(pred, truth);
  const int64_t uni = c.p + c.t - c.inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

inline double iou(const MaskVolume& pred, const MaskVolume& truth) {
  if (pred.dims != truth.dims) throw ShapeError("iou: dimension mismatch");
  return iou(pred.data, truth.data);
}

// Unweighted mean of per-class recall. Classes absent from the ground truth
// are excluded (reported through `excluded` when the caller wants them).
inline double macro_sensitivity(const std::vector<int>& preds, const std::vector<int>& labels,
                                std::vector<int>* excluded = nullptr) {
  if (preds.size() != labels.size()) throw ShapeError("macro_sensitivity: length mismatch");
  if (labels.empty()) throw ShapeError("macro_sensitivity: empty input");
  std::map<int, std::pair<int64_t, int64_t>> per_class;  // class -> (hits, total)
  for (size_t i = 0; i < labels.size(); ++i) {
    auto& [hits, total] = per_class[labels[i]];
    ++total;
    hits += preds[i] == labels[i];
  }
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, ht] : per_class) {
    if (ht.second == 0) {
      if (excluded) excluded->push_back(cls);
      continue;
    }
    sum += static_cast<double>(ht.first) / static_cast<double>(ht.second);
    ++n;
  }
  return sum / n;
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (labels.empty()) throw ShapeError("accuracy: empty input");
  int64_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * (sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - lo;
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

}  // namespace detail

// Percentile bootstrap over cases: resample with replacement, statistic =
// mean, interval = (1-level)/2 .. 1-(1-level)/2 percentiles. Deterministic
// per seed.
inline std::pair<double, double> bootstrap_ci(const std::vector<double>& per_case,
                                              int n_samples = 1000, double level = 0.95,
                                              uint64_t seed = 0) {
  if (per_case.empty()) throw ShapeError("bootstrap_ci: empty input");
  if (n_samples < 1 || level <= 0.0 || level >= 1.0)
    throw ConfigError("bootstrap_ci: bad parameters");
  Rng rng(seed);
  const int n = static_cast<int>(per_case.size());
  std::vector<double> means(static_cast<size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += per_case[rng.uniform_int(n)];
    means[s] = acc / n;
  }
  std::sort(means.begin(), means.end());
  const double alpha = (1.0 - level) / 2.0;
  return {detail::quantile_sorted(means, alpha), detail::quantile_sorted(means, 1.0 - alpha)};
}

struct MetricReport {
  std::string metric;
  std::vector<double> per_case;
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_bootstrap = 0;
  uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"metric", metric},   {"per_case", per_case},       {"point", point},
            {"ci_low", ci_low},   {"ci_high", ci_high},         {"n_bootstrap", n_bootstrap},
            {"seed", seed}};
  }
};

inline MetricReport make_report(const std::string& name, std::vector<double> per_case,
                                int n_bootstrap, double level, uint64_t seed) {
  MetricReport r;
  r.metric = name;
  r.per_case = std::move(per_case);
  double acc = 0.0;
  for (double v : r.per_case) acc += v;
  r.point = acc / static_cast<double>(r.per_case.size());
  std::tie(r.ci_low, r.ci_high) = bootstrap_ci(r.per_case, n_bootstrap, level, seed);
  r.n_bootstrap = n_bootstrap;
  r.seed = seed;
  return r;
}

}  // namespace fratmae

#endif
