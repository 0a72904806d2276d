// Command-line front end: train a forest, compute effect tables, run the
// simulation harness, and produce support/balance diagnostics. Every command
// reads a flat key-value config file; --seed/--threads/--out-dir override.
#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcf/mcf.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<long long> seed_override;
  std::optional<int> threads_override;
  std::string out_dir = ".";
  bool verbose = false;
};

std::string out_path(const GlobalOptions& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / name).string();
}

std::vector<mcf::FeatureSpec> schema_from_config(const mcf::KeyValueConfig& kv) {
  std::vector<mcf::FeatureSpec> schema;
  for (const auto& name : kv.get_list("ordered_features"))
    schema.push_back({name, mcf::FeatureKind::ordered, -1});
  for (const auto& name : kv.get_list("categorical_features"))
    schema.push_back({name, mcf::FeatureKind::categorical, -1});
  if (schema.empty())
    throw mcf::ConfigError("config must declare ordered_features and/or categorical_features");
  return schema;
}

mcf::Dataset load_from_config(const mcf::KeyValueConfig& kv) {
  const std::string path = kv.require_string("data");
  mcf::RoleMap roles{kv.require_string("treatment_col"), kv.require_string("outcome_col")};
  return mcf::load_dataset(path, schema_from_config(kv), roles);
}

// Group family parsed from "name" or "name:bins".
struct GateRequest {
  std::string variable;
  int bins = 0;
};

std::vector<GateRequest> parse_gates(const std::vector<std::string>& items) {
  std::vector<GateRequest> out;
  for (const auto& item : items) {
    GateRequest g;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      g.variable = item;
    } else {
      g.variable = item.substr(0, colon);
      g.bins = std::stoi(item.substr(colon + 1));
      if (g.bins < 2) throw mcf::ConfigError("gate binning must use at least 2 bins");
    }
    out.push_back(g);
  }
  return out;
}

std::string contrast_label(const mcf::Forest& f, mcf::TreatmentPair c) {
  return std::to_string(f.data.original_treatment_levels[static_cast<std::size_t>(c.m)]) +
         "-" +
         std::to_string(f.data.original_treatment_levels[static_cast<std::size_t>(c.l)]);
}

int cmd_train(const GlobalOptions& g) {
  auto kv = mcf::KeyValueConfig::parse_file(g.config_path);
  const mcf::Dataset data = load_from_config(kv);
  mcf::ForestConfig cfg = mcf::forest_config_from(kv);
  if (g.seed_override) cfg.seed = static_cast<std::uint64_t>(*g.seed_override);
  if (g.threads_override) cfg.threads = *g.threads_override;

  const auto poisson_grid = kv.get_list("feature_poisson_grid");
  const auto min_leaf_grid = kv.get_list("min_leaf_grid");
  const std::string forest_out = kv.get_string("forest_out", "forest.bin");
  const std::string log_out = kv.get_string("log_out", "train_log.txt");
  const std::string export_matches = kv.get_string("export_matches", "");
  kv.reject_unknown_keys();

  std::ostringstream log;
  log << "estimator = "
      << mcf::estimator_name(cfg.estimator, cfg.penalty, cfg.lc_folds) << "\n";

  if (!poisson_grid.empty() || !min_leaf_grid.empty()) {
    std::vector<double> poissons;
    for (const auto& s : poisson_grid) poissons.push_back(std::stod(s));
    if (poissons.empty()) poissons.push_back(cfg.tree.feature_poisson_mean);
    std::vector<int> leaves;
    for (const auto& s : min_leaf_grid) leaves.push_back(std::stoi(s));
    if (leaves.empty()) leaves.push_back(cfg.tree.min_leaf);
    std::vector<mcf::ForestConfig> grid;
    for (int ml : leaves) {
      for (double pm : poissons) {
        mcf::ForestConfig c = cfg;
        c.tree.min_leaf = ml;
        c.tree.feature_poisson_mean = pm;
        grid.push_back(c);
      }
    }
    cfg = mcf::tune_oob(data, grid);
    log << "tuned feature_poisson_mean = " << cfg.tree.feature_poisson_mean
        << ", min_leaf = " << cfg.tree.min_leaf << " (grid of " << grid.size() << ")\n";
  }

  const mcf::Forest forest = mcf::train_forest(data, cfg);
  log << "n = " << data.n() << ", treatments = " << data.m << "\n";
  log << "sample A = " << forest.n_a() << ", sample B = " << forest.n_b() << "\n";
  log << "trees = " << forest.trees.size() << ", degenerate = " << forest.degenerate_count
      << "\n";
  if (cfg.penalty) log << "penalty lambda = " << forest.lambda_used << "\n";

  mcf::save_forest(forest, out_path(g, forest_out));
  if (!export_matches.empty() && forest.matched.n > 0)
    mcf::save_matched_csv(forest.matched, out_path(g, export_matches));
  std::ofstream(out_path(g, log_out)) << log.str();
  if (g.verbose) std::cout << log.str();
  std::cout << "forest written to " << out_path(g, forest_out) << "\n";
  return 0;
}

struct PointEffects {
  std::vector<mcf::WeightVector> weights;  // per retained member
  std::vector<double> point;
  std::vector<double> std_err;
  std::vector<int> b_positions;
};

PointEffects per_point_effects(const mcf::Forest& f, mcf::TreatmentPair contrast,
                               const std::vector<int>& members) {
  PointEffects pe;
  pe.b_positions = members;
  mcf::detail::WeightWorkspace ws;
  std::vector<double> x;
  for (int b : members) {
    f.gather_b_row(b, x);
    auto w = mcf::detail::iate_weights_impl(f, x, contrast,
                                            {mcf::EffectLevel::iate, 0.0, b}, ws);
    pe.point.push_back(mcf::weight_dot(w, f.y_b));
    const auto w_hat = mcf::dense_scaled_weights(w, f.n_b());
    const auto moments = mcf::knn_moments(w_hat, f.y_b, f.knn_k());
    pe.std_err.push_back(std::sqrt(mcf::weights_variance(w_hat, moments)));
    pe.weights.push_back(std::move(w));
  }
  return pe;
}

int cmd_effects(const GlobalOptions& g) {
  auto kv = mcf::KeyValueConfig::parse_file(g.config_path);
  const mcf::Forest forest = mcf::load_forest(kv.require_string("forest"));
  const auto gate_requests = parse_gates(kv.get_list("gates"));
  const std::string gates_csv = kv.get_string("gates_csv", "");
  const bool trim = kv.get_bool("trim", false);
  const double trim_lo = kv.get_double("trim_lo", 0.05);
  const double trim_hi = kv.get_double("trim_hi", 0.95);
  const bool iate_dump = kv.get_bool("iate_dump", false);
  const std::string weights_out = kv.get_string("export_weights", "");
  std::vector<int> delta;
  for (const auto& s : kv.get_list("delta")) delta.push_back(std::stoi(s));
  kv.reject_unknown_keys();

  // External group columns joined by original row index.
  std::map<std::string, std::vector<double>> external;
  if (!gates_csv.empty()) {
    std::ifstream in(gates_csv);
    if (!in) throw mcf::DataError("cannot open gates file '" + gates_csv + "'");
    std::string line;
    if (!std::getline(in, line)) throw mcf::DataError("empty gates file");
    const auto header = mcf::detail::split_csv_line(line);
    std::vector<std::vector<double>> cols(header.size());
    int row = 0;
    while (std::getline(in, line)) {
      if (line.empty() && in.eof()) break;
      ++row;
      const auto cells = mcf::detail::split_csv_line(line);
      if (cells.size() != header.size())
        throw mcf::DataError("gates file row " + std::to_string(row) + " is ragged");
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto v = mcf::detail::parse_double(cells[c]);
        if (!v) throw mcf::DataError("non-numeric gates value in row " + std::to_string(row));
        cols[c].push_back(*v);
      }
    }
    if (row < forest.data.n())
      throw mcf::DataError("gates file has fewer rows than the training data");
    for (std::size_t c = 0; c < header.size(); ++c) external[header[c]] = std::move(cols[c]);
  }

  // Retained evaluation population (sample B positions).
  std::vector<int> retained;
  double discarded_share = 0.0;
  if (trim) {
    const mcf::Dataset b_view = forest.data.subset(forest.split.b_indices);
    const auto report = mcf::trim_support(forest, b_view, trim_lo, trim_hi);
    for (int b = 0; b < forest.n_b(); ++b)
      if (report.retained[static_cast<std::size_t>(b)]) retained.push_back(b);
    discarded_share = report.discarded_share;
  } else {
    retained.resize(static_cast<std::size_t>(forest.n_b()));
    std::iota(retained.begin(), retained.end(), 0);
  }

  std::vector<int> eval_members;  // retained and inside delta
  for (int b : retained)
    if (mcf::delta_contains(delta, forest.treat_b[static_cast<std::size_t>(b)]))
      eval_members.push_back(b);
  if (eval_members.empty())
    throw mcf::EstimationError("no estimation observations left after trimming/delta");

  std::ofstream effects_csv(out_path(g, "effects.csv"));
  effects_csv << "level,contrast,variable,group,n,estimate,std_err,p_value,"
                 "p_adjacent,wald_stat,wald_df,wald_p\n";
  effects_csv.precision(10);
  std::ofstream iate_summary_csv(out_path(g, "iate_summary.csv"));
  iate_summary_csv << "contrast,n,mean,sd,share_neg_pct,share_pos_pct,avg_std_err,"
                      "share_sig5_pct\n";
  iate_summary_csv.precision(10);
  std::ostringstream summary;
  summary << "effects over " << eval_members.size() << " evaluation observations";
  if (trim)
    summary << " (trimmed " << std::fixed << std::setprecision(2) << 100.0 * discarded_share
            << "% outside [" << trim_lo << ", " << trim_hi << "])";
  summary << "\n";

  std::vector<mcf::WeightVector> exported;
  mcf::ContrastSet contrasts = mcf::ContrastSet::all_pairs(forest.m());
  for (const auto& contrast : contrasts.pairs) {
    const std::string clabel = contrast_label(forest, contrast);
    const PointEffects pe = per_point_effects(forest, contrast, eval_members);

    // Average effect.
    mcf::WeightAverager ate_avg(forest.n_b());
    for (const auto& w : pe.weights) ate_avg.add(w);
    const auto ate_w = ate_avg.finalize(contrast, {mcf::EffectLevel::ate, 0.0, -1});
    const auto ate = mcf::estimate_from_weights(forest, ate_w);
    effects_csv << "ate," << clabel << ",,," << eval_members.size() << ',' << ate.point << ','
                << ate.std_err << ',' << ate.p_value << ",,,,\n";
    summary << "ATE(" << clabel << ") = " << ate.point << " (se " << ate.std_err
            << ", p " << ate.p_value << ")\n";
    if (!weights_out.empty()) {
      mcf::WeightVector tagged = ate_w;
      tagged.tag.eval_id = -1;
      exported.push_back(std::move(tagged));
    }

    // Group effects per family.
    for (const auto& req : gate_requests) {
      std::vector<double> values_b;
      if (external.count(req.variable)) {
        const auto& col = external[req.variable];
        for (int b = 0; b < forest.n_b(); ++b)
          values_b.push_back(col[static_cast<std::size_t>(
              forest.split.b_indices[static_cast<std::size_t>(b)])]);
      } else {
        const int idx = forest.data.feature_index(req.variable);
        if (idx < 0)
          throw mcf::DataError("group variable '" + req.variable +
                               "' is neither a feature nor in the gates file");
        values_b = mcf::feature_values_b(forest, idx);
      }
      std::vector<double> codes = values_b;
      if (req.bins > 0) codes = mcf::quantile_bins(values_b, req.bins);

      std::vector<double> member_codes;
      for (std::size_t i = 0; i < eval_members.size(); ++i)
        member_codes.push_back(codes[static_cast<std::size_t>(eval_members[i])]);
      const auto levels = mcf::distinct_values(member_codes);
      if (levels.size() < 2) {
        summary << "gate family " << req.variable << ": fewer than 2 groups, skipped\n";
        continue;
      }

      std::vector<mcf::EffectEstimate> gate_estimates;
      std::vector<std::vector<double>> gate_whats;
      std::vector<mcf::MomentEstimates> gate_moments;
      std::vector<int> gate_n;
      for (double level : levels) {
        mcf::WeightAverager avg(forest.n_b());
        int count = 0;
        for (std::size_t i = 0; i < eval_members.size(); ++i) {
          if (member_codes[i] == level) {
            avg.add(pe.weights[i]);
            ++count;
          }
        }
        const auto w = avg.finalize(contrast, {mcf::EffectLevel::gate, level, -1});
        auto est = mcf::estimate_from_weights(forest, w);
        gate_estimates.push_back(est);
        gate_whats.push_back(mcf::dense_scaled_weights(w, forest.n_b()));
        gate_moments.push_back(mcf::knn_moments(gate_whats.back(), forest.y_b, forest.knn_k()));
        gate_n.push_back(count);
        if (!weights_out.empty()) {
          mcf::WeightVector tagged = w;
          tagged.tag.eval_id = static_cast<int>(exported.size());
          exported.push_back(std::move(tagged));
        }
      }

      const int n_groups = static_cast<int>(levels.size());
      Eigen::MatrixXd cov(n_groups, n_groups);
      for (int a = 0; a < n_groups; ++a) {
        for (int b = a; b < n_groups; ++b) {
          const double c = mcf::weights_covariance(
              gate_whats[static_cast<std::size_t>(a)], gate_whats[static_cast<std::size_t>(b)],
              gate_moments[static_cast<std::size_t>(a)],
              gate_moments[static_cast<std::size_t>(b)]);
          cov(a, b) = c;
          cov(b, a) = c;
        }
      }
      for (int a = 0; a < n_groups; ++a) {
        const auto& est = gate_estimates[static_cast<std::size_t>(a)];
        std::string adjacent;
        if (a + 1 < n_groups) {
          const double var_diff = est.variance +
                                  gate_estimates[static_cast<std::size_t>(a + 1)].variance -
                                  2.0 * cov(a, a + 1);
          const double diff = est.point - gate_estimates[static_cast<std::size_t>(a + 1)].point;
          const double p =
              mcf::t_test_p(diff, var_diff > 0.0 ? std::sqrt(var_diff) : 0.0, 0.0);
          adjacent = std::to_string(p);
        }
        effects_csv << "gate," << clabel << ',' << req.variable << ',' << levels[static_cast<std::size_t>(a)]
                    << ',' << gate_n[static_cast<std::size_t>(a)] << ',' << est.point << ','
                    << est.std_err << ',' << est.p_value << ',' << adjacent << ",,,\n";
      }
      const auto wald = mcf::wald_equality(gate_estimates, cov);
      effects_csv << "gate_joint," << clabel << ',' << req.variable << ",,"
                  << eval_members.size() << ",,,,," << wald.stat << ',' << wald.df << ','
                  << wald.p_value << "\n";
      summary << "gate family " << req.variable << " (" << clabel << "): joint Wald p = "
              << wald.p_value << " (df " << wald.df << ")\n";
    }

    // Individualized-effect summary.
    {
      const std::size_t n = pe.point.size();
      int neg = 0, pos = 0, sig = 0;
      long double se_sum = 0.0L;
      for (std::size_t i = 0; i < n; ++i) {
        if (pe.point[i] < 0.0) ++neg;
        else if (pe.point[i] > 0.0) ++pos;
        se_sum += pe.std_err[i];
        const double p = mcf::t_test_p(pe.point[i], pe.std_err[i], 0.0);
        if (p < 0.05) ++sig;
      }
      const double mean = mcf::stats::mean(pe.point);
      const double sd = std::sqrt(mcf::stats::population_variance(pe.point));
      iate_summary_csv << clabel << ',' << n << ',' << mean << ',' << sd << ','
                       << 100.0 * neg / n << ',' << 100.0 * pos / n << ','
                       << static_cast<double>(se_sum / n) << ',' << 100.0 * sig / n << "\n";
      summary << "IATE(" << clabel << "): mean " << mean << ", sd " << sd << ", "
              << 100.0 * neg / n << "% negative, " << 100.0 * sig / n
              << "% significant at 5%\n";
      if (iate_dump) {
        std::ofstream dump(out_path(g, "iates_" + clabel + ".csv"));
        dump << "b_index,estimate,std_err\n";
        dump.precision(10);
        for (std::size_t i = 0; i < n; ++i)
          dump << forest.split.b_indices[static_cast<std::size_t>(pe.b_positions[i])] << ','
               << pe.point[i] << ',' << pe.std_err[i] << "\n";
      }
    }
  }

  if (!weights_out.empty()) mcf::save_weights_csv(forest, exported, out_path(g, weights_out));
  std::ofstream(out_path(g, "summary.txt")) << summary.str();
  std::cout << summary.str();
  return 0;
}

int cmd_simulate(const GlobalOptions& g) {
  auto kv = mcf::KeyValueConfig::parse_file(g.config_path);
  mcf::DgpConfig dgp;
  dgp.p = static_cast<int>(kv.get_int("p", 10));
  const std::string selection = kv.get_string("selection", "logit");
  if (selection == "random") dgp.selection = mcf::SelectionKind::random;
  else if (selection == "logit") dgp.selection = mcf::SelectionKind::logit;
  else throw mcf::ConfigError("selection must be 'random' or 'logit'");
  dgp.selection_strength = kv.get_double("selection_strength", 1.0);
  dgp.target_share = kv.get_double("target_share", 0.5);
  const std::string effect = kv.get_string("effect", "sine");
  if (effect == "zero") dgp.effect = mcf::EffectKind::zero;
  else if (effect == "sine") dgp.effect = mcf::EffectKind::sine;
  else if (effect == "linear_feature") dgp.effect = mcf::EffectKind::linear_feature;
  else throw mcf::ConfigError("effect must be zero, sine, or linear_feature");
  dgp.alpha = kv.get_double("alpha", 2.0);
  dgp.effect_feature = static_cast<int>(kv.get_int("effect_feature", 0));
  dgp.population_size = static_cast<int>(kv.get_int("population_size", 20000));
  dgp.validation_size = static_cast<int>(kv.get_int("validation_size", 1000));
  dgp.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  if (g.seed_override) dgp.seed = static_cast<std::uint64_t>(*g.seed_override);

  mcf::EmcsOptions opt;
  opt.replications = static_cast<int>(kv.get_int("replications", 50));
  opt.train_n = static_cast<int>(kv.get_int("train_n", 1000));
  opt.threads = g.threads_override ? *g.threads_override
                                   : static_cast<int>(kv.get_int("threads", 1));
  if (kv.get_bool("dump_replications", false))
    opt.dump_path = out_path(g, "replications.csv");
  for (const auto& item : parse_gates(kv.get_list("gates"))) {
    mcf::EmcsGateFamily fam;
    std::string var = item.variable;
    if (!var.empty() && var[0] == 'x') var = var.substr(1);
    fam.feature_index = std::stoi(var);
    fam.bins = item.bins;
    fam.label = item.variable;
    if (fam.feature_index < 0 || fam.feature_index >= dgp.p)
      throw mcf::ConfigError("gate feature index out of range: " + item.variable);
    opt.gates.push_back(fam);
  }

  mcf::ForestConfig base = mcf::forest_config_from(kv);
  std::vector<mcf::EmcsEstimatorSpec> estimators;
  auto spec_list = kv.get_list("estimators");
  if (spec_list.empty())
    spec_list.push_back(kv.get_string("estimator", "onef_mce"));
  for (const auto& spec : spec_list) {
    mcf::ForestConfig cfg = base;
    mcf::apply_estimator_spec(spec, cfg);
    estimators.push_back({spec, cfg});
  }
  kv.reject_unknown_keys();

  const auto result = mcf::run_emcs(dgp, estimators, opt);
  mcf::write_metrics_csv(result.rows, out_path(g, "metrics.csv"));

  std::ostringstream summary;
  summary << "replications = " << opt.replications << ", train_n = " << opt.train_n
          << ", validation = " << dgp.validation_size << "\n";
  summary << std::left << std::setw(26) << "estimator" << std::setw(10) << "level"
          << std::right << std::setw(11) << "avg_bias" << std::setw(11) << "avg|bias|"
          << std::setw(11) << "mse" << std::setw(9) << "jb" << std::setw(9) << "cov90"
          << std::setw(9) << "fail" << "\n";
  int failures = 0;
  for (const auto& row : result.rows) {
    summary << std::left << std::setw(26) << row.estimator << std::setw(10) << row.level
            << std::right << std::fixed << std::setprecision(4) << std::setw(11)
            << row.avg_bias << std::setw(11) << row.avg_abs_bias << std::setw(11) << row.mse
            << std::setprecision(2) << std::setw(9) << row.jb << std::setw(9)
            << row.coverage90 << std::setw(9) << row.failures << "\n";
    failures = std::max(failures, row.failures);
  }
  std::ofstream(out_path(g, "summary.txt")) << summary.str();
  std::cout << summary.str();
  if (failures > 0) {
    std::cerr << "warning: " << failures << " replication failures\n";
    return 4;
  }
  return 0;
}

int cmd_support(const GlobalOptions& g) {
  auto kv = mcf::KeyValueConfig::parse_file(g.config_path);
  const mcf::Forest forest = mcf::load_forest(kv.require_string("forest"));
  const double lo = kv.get_double("trim_lo", 0.05);
  const double hi = kv.get_double("trim_hi", 0.95);
  kv.reject_unknown_keys();

  const mcf::Dataset b_view = forest.data.subset(forest.split.b_indices);
  const auto report = mcf::trim_support(forest, b_view, lo, hi);

  std::ofstream csv(out_path(g, "support.csv"));
  csv << "row,retained";
  for (int t = 0; t < forest.m(); ++t) csv << ",share_" << t;
  csv << "\n";
  csv.precision(10);
  std::vector<double> x(static_cast<std::size_t>(forest.data.p()));
  for (int b = 0; b < forest.n_b(); ++b) {
    forest.gather_b_row(b, x);
    const auto shares = mcf::propensity_from_forest(forest, x);
    csv << forest.split.b_indices[static_cast<std::size_t>(b)] << ','
        << int(report.retained[static_cast<std::size_t>(b)]);
    for (double s : shares) csv << ',' << s;
    csv << "\n";
  }
  std::cout << "retained " << (forest.n_b() - report.discarded) << " of " << forest.n_b()
            << " (" << 100.0 * report.discarded_share << "% outside [" << lo << ", " << hi
            << "])\n";
  return 0;
}

int cmd_balance(const GlobalOptions& g) {
  auto kv = mcf::KeyValueConfig::parse_file(g.config_path);
  const mcf::Forest forest = mcf::load_forest(kv.require_string("forest"));
  kv.reject_unknown_keys();

  std::ofstream csv(out_path(g, "balance.csv"));
  csv << "contrast,feature,mean_m,mean_l,difference,standardized_pct,post_estimation\n";
  csv.precision(10);
  const auto contrasts = mcf::ContrastSet::all_pairs(forest.m());
  for (const auto& contrast : contrasts.pairs) {
    const auto rows = mcf::balance_report(forest, contrast);
    for (const auto& row : rows) {
      csv << contrast_label(forest, contrast) << ',' << row.feature << ',' << row.mean_m
          << ',' << row.mean_l << ',' << row.difference << ',' << row.standardized_pct << ','
          << row.post_estimation << "\n";
    }
  }
  std::cout << "balance table written to " << out_path(g, "balance.csv") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modified causal forest estimation and simulation"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();
  app.add_flag("--verbose", g.verbose, "chatty logging");
  long long seed = 0;
  int threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  auto* threads_opt = app.add_option("--threads", threads, "override the thread count");

  std::map<std::string, int (*)(const GlobalOptions&)> commands = {
      {"train", cmd_train},
      {"effects", cmd_effects},
      {"simulate", cmd_simulate},
      {"support", cmd_support},
      {"balance", cmd_balance},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", g.config_path, "config file")->required();
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*seed_opt) g.seed_override = seed;
  if (*threads_opt) g.threads_override = threads;

  try {
    for (const auto& [name, fn] : commands)
      if (subs[name]->parsed()) return fn(g);
    return 2;
  } catch (const mcf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mcf::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const mcf::EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
