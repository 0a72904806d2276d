// Local centering: replace outcomes by y - E^(Y|X) using K-fold
// cross-fitting on the build sample. Fold k is predicted by a regression
// forest trained on the other K-1 folds, so no outcome ever predicts itself.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mcf/common.hpp"
#include "mcf/regression.hpp"

namespace mcf {

struct CenteringModel {
  int k_folds = 0;
  std::vector<int> fold_of;  // per build-sample position
  std::vector<RegressionForest> fold_forests;
};

// Folds are stratified by treatment so each fold sees every treatment's
// outcome distribution.
inline CenteringModel fit_centering(const Dataset& build_view, int k_folds,
                                    const RegressionForestConfig& forest_cfg,
                                    std::uint64_t seed) {
  if (k_folds < 2) throw ConfigError("local centering needs at least 2 folds");
  if (build_view.n() < 2 * k_folds)
    throw DataError("build sample too small for " + std::to_string(k_folds) + " folds");

  CenteringModel model;
  model.k_folds = k_folds;
  model.fold_of.assign(static_cast<std::size_t>(build_view.n()), 0);

  auto gen = rng::make_stream(seed, rng::Domain::fold, 0);
  std::vector<std::vector<int>> by_treatment(static_cast<std::size_t>(build_view.m));
  for (int r = 0; r < build_view.n(); ++r)
    by_treatment[static_cast<std::size_t>(build_view.treatment[static_cast<std::size_t>(r)])]
        .push_back(r);
  int dealt = 0;
  for (auto& rows : by_treatment) {
    std::shuffle(rows.begin(), rows.end(), gen);
    for (int r : rows) {
      model.fold_of[static_cast<std::size_t>(r)] = dealt % k_folds;
      ++dealt;
    }
  }

  model.fold_forests.reserve(static_cast<std::size_t>(k_folds));
  for (int k = 0; k < k_folds; ++k) {
    std::vector<int> complement;
    complement.reserve(static_cast<std::size_t>(build_view.n()));
    for (int r = 0; r < build_view.n(); ++r)
      if (model.fold_of[static_cast<std::size_t>(r)] != k) complement.push_back(r);
    Dataset train_view = build_view.subset(complement);
    RegressionForestConfig cfg = forest_cfg;
    cfg.seed = rng::make_stream(seed, rng::Domain::centering, static_cast<std::uint64_t>(k))();
    model.fold_forests.push_back(
        train_regression_forest(train_view, train_view.outcome, cfg));
  }
  return model;
}

// Predicted E^(Y|X) for the build sample; each observation uses the forest
// that never saw its fold.
inline std::vector<double> centering_offsets_build(const CenteringModel& model,
                                                   const Dataset& build_view) {
  std::vector<double> offsets(static_cast<std::size_t>(build_view.n()), 0.0);
  for (int r = 0; r < build_view.n(); ++r)
    offsets[static_cast<std::size_t>(r)] =
        model.fold_forests[static_cast<std::size_t>(model.fold_of[static_cast<std::size_t>(r)])]
            .predict_row(build_view, r);
  return offsets;
}

// Predicted E^(Y|X) for held-out data: the average over all fold forests.
inline std::vector<double> centering_offsets_heldout(const CenteringModel& model,
                                                     const Dataset& view) {
  std::vector<double> offsets(static_cast<std::size_t>(view.n()), 0.0);
  for (int r = 0; r < view.n(); ++r) {
    long double sum = 0.0L;
    for (const auto& forest : model.fold_forests) sum += forest.predict_row(view, r);
    offsets[static_cast<std::size_t>(r)] =
        static_cast<double>(sum / static_cast<long double>(model.k_folds));
  }
  return offsets;
}

inline std::vector<double> recenter(std::span<const double> y,
                                    std::span<const double> offsets) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] - offsets[i];
  return out;
}

}  // namespace mcf
