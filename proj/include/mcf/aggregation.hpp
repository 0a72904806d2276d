// Aggregation of individualized-effect weights to group and average
// effects. A group or average weight vector is the entrywise mean of its
// members' weight vectors, so the point estimate is exactly the mean of the
// member effects and inference reuses the same weights machinery.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mcf/forest.hpp"
#include "mcf/inference.hpp"

namespace mcf {

struct GroupSpec {
  std::string variable;      // feature name or external column label
  double value = 0.0;        // group level (distinct value or bin code)
  std::vector<int> delta;    // conditioning treatments; empty = all
};

inline bool delta_contains(const std::vector<int>& delta, int treatment) {
  return delta.empty() ||
         std::find(delta.begin(), delta.end(), treatment) != delta.end();
}

// Entrywise running mean of weight vectors; deterministic given insertion
// order. Tree-use accounting is summed over members.
class WeightAverager {
 public:
  explicit WeightAverager(int n_b) : acc_(static_cast<std::size_t>(n_b), 0.0L) {}

  void add(const WeightVector& w) {
    for (const auto& [idx, value] : w.entries) acc_[static_cast<std::size_t>(idx)] += value;
    used_pos_ += w.used_pos;
    skipped_pos_ += w.skipped_pos;
    used_neg_ += w.used_neg;
    skipped_neg_ += w.skipped_neg;
    ++count_;
  }

  int count() const { return count_; }

  WeightVector finalize(TreatmentPair contrast, EvalTag tag) const {
    if (count_ == 0) throw EstimationError("cannot average an empty set of weight vectors");
    WeightVector out;
    out.contrast = contrast;
    out.tag = tag;
    out.used_pos = used_pos_;
    out.skipped_pos = skipped_pos_;
    out.used_neg = used_neg_;
    out.skipped_neg = skipped_neg_;
    out.entries.reserve(acc_.size());
    for (std::size_t i = 0; i < acc_.size(); ++i) {
      if (acc_[i] == 0.0L) continue;
      out.entries.emplace_back(static_cast<int>(i),
                               static_cast<double>(acc_[i] / static_cast<long double>(count_)));
    }
    return out;
  }

 private:
  std::vector<long double> acc_;
  int used_pos_ = 0, skipped_pos_ = 0, used_neg_ = 0, skipped_neg_ = 0;
  int count_ = 0;
};

// Average of the IATE weight vectors at the given estimation-sample members.
inline WeightVector aggregate_member_weights(const Forest& f,
                                             std::span<const int> b_members,
                                             TreatmentPair contrast, EvalTag tag) {
  WeightAverager avg(f.n_b());
  detail::WeightWorkspace ws;
  std::vector<double> x;
  for (int b : b_members) {
    f.gather_b_row(b, x);
    avg.add(detail::iate_weights_impl(f, x, contrast, {EffectLevel::iate, 0.0, b}, ws));
  }
  return avg.finalize(contrast, tag);
}

// Members of a group: estimation-sample positions whose group-variable value
// matches and whose treatment lies in delta.
inline std::vector<int> group_members(const Forest& f, std::span<const double> values_b,
                                      double value, const std::vector<int>& delta) {
  std::vector<int> members;
  for (int b = 0; b < f.n_b(); ++b) {
    if (values_b[static_cast<std::size_t>(b)] != value) continue;
    if (!delta_contains(delta, f.treat_b[static_cast<std::size_t>(b)])) continue;
    members.push_back(b);
  }
  return members;
}

inline WeightVector gate_weights(const Forest& f, std::span<const double> values_b,
                                 const GroupSpec& group, TreatmentPair contrast) {
  const auto members = group_members(f, values_b, group.value, group.delta);
  if (members.empty()) {
    std::string delta_txt = group.delta.empty() ? "all" : "";
    for (std::size_t i = 0; i < group.delta.size(); ++i) {
      if (i) delta_txt += ",";
      delta_txt += std::to_string(group.delta[i]);
    }
    throw EstimationError("empty group: " + group.variable + "=" +
                          std::to_string(group.value) + ", delta={" + delta_txt + "}");
  }
  return aggregate_member_weights(f, members, contrast,
                                  {EffectLevel::gate, group.value, -1});
}

// ATE weights: the group is the whole estimation sample restricted to
// delta. delta = {m} is the treated-population (ATET-style) version.
inline WeightVector ate_weights(const Forest& f, const std::vector<int>& delta,
                                TreatmentPair contrast) {
  std::vector<int> members;
  for (int b = 0; b < f.n_b(); ++b)
    if (delta_contains(delta, f.treat_b[static_cast<std::size_t>(b)])) members.push_back(b);
  if (members.empty()) {
    throw EstimationError("empty averaging population: no estimation observation in delta");
  }
  return aggregate_member_weights(f, members, contrast, {EffectLevel::ate, 0.0, -1});
}

// One code path from weights to a finished estimate for every level.
inline EffectEstimate estimate_effect(const Forest& f, const WeightVector& w) {
  return estimate_from_weights(f, w);
}

// Helpers for building group families ---------------------------------------

inline std::vector<double> feature_values_b(const Forest& f, int feature_index) {
  std::vector<double> values(static_cast<std::size_t>(f.n_b()));
  for (int b = 0; b < f.n_b(); ++b)
    values[static_cast<std::size_t>(b)] =
        f.data.feature(feature_index, f.split.b_indices[static_cast<std::size_t>(b)]);
  return values;
}

inline std::vector<double> distinct_values(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Equal-frequency bins; returns per-observation bin codes 0..k-1 and keeps
// the natural order of the variable. Duplicate boundaries collapse bins.
inline std::vector<double> quantile_bins(std::span<const double> values, int k) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (int b = 1; b < k; ++b) {
    const std::size_t pos =
        std::min(sorted.size() - 1, static_cast<std::size_t>(
            std::llround(static_cast<double>(b) * sorted.size() / k)));
    cuts.push_back(sorted[pos]);
  }
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<double> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto it = std::upper_bound(cuts.begin(), cuts.end(), values[i]);
    codes[i] = static_cast<double>(it - cuts.begin());
  }
  return codes;
}

}  // namespace mcf
