// Self-describing binary serialization of trained forests. Little-endian,
// versioned header, doubles stored as raw bits so a save/load/save cycle is
// byte-identical.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mcf/forest.hpp"

namespace mcf {

namespace detail {

constexpr char kForestMagic[8] = {'M', 'C', 'F', 'O', 'R', 'S', 'T', '\0'};
constexpr std::uint32_t kForestFormatVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void u8(std::uint8_t v) { os_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(buf, 4);
  }
  void u64(std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(buf, 8);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void vec_i32(const std::vector<int>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (int x : v) i32(x);
  }
  void vec_f64(const std::vector<double>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f64(x);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint8_t u8() {
    char c;
    if (!is_.get(c)) fail();
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    char buf[4];
    if (!is_.read(buf, 4)) fail();
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    char buf[8];
    if (!is_.read(buf, 8)) fail();
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    if (n > 0 && !is_.read(s.data(), n)) fail();
    return s;
  }
  std::vector<int> vec_i32() {
    const std::uint32_t n = u32();
    std::vector<int> v(n);
    for (auto& x : v) x = i32();
    return v;
  }
  std::vector<double> vec_f64() {
    const std::uint32_t n = u32();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

 private:
  [[noreturn]] void fail() { throw DataError("forest file truncated or corrupt"); }
  std::istream& is_;
};

inline void write_dataset(Writer& w, const Dataset& d) {
  w.u32(static_cast<std::uint32_t>(d.schema.size()));
  for (const auto& f : d.schema) {
    w.str(f.name);
    w.u8(static_cast<std::uint8_t>(f.kind));
    w.i32(f.index);
  }
  w.u32(static_cast<std::uint32_t>(d.columns.size()));
  for (const auto& col : d.columns) w.vec_f64(col);
  w.vec_i32(d.treatment);
  w.vec_f64(d.outcome);
  w.i32(d.m);
  w.u32(static_cast<std::uint32_t>(d.original_treatment_levels.size()));
  for (long long lv : d.original_treatment_levels) w.u64(static_cast<std::uint64_t>(lv));
}

inline Dataset read_dataset(Reader& r) {
  Dataset d;
  const std::uint32_t nf = r.u32();
  d.schema.resize(nf);
  for (auto& f : d.schema) {
    f.name = r.str();
    f.kind = static_cast<FeatureKind>(r.u8());
    f.index = r.i32();
  }
  const std::uint32_t nc = r.u32();
  d.columns.resize(nc);
  for (auto& col : d.columns) col = r.vec_f64();
  d.treatment = r.vec_i32();
  d.outcome = r.vec_f64();
  d.m = r.i32();
  const std::uint32_t nl = r.u32();
  d.original_treatment_levels.resize(nl);
  for (auto& lv : d.original_treatment_levels) lv = static_cast<long long>(r.u64());
  return d;
}

inline void write_tree(Writer& w, const PopulatedTree& pt, int tree_treatment) {
  w.i32(tree_treatment);
  w.u8(pt.tree.degenerate ? 1 : 0);
  w.u64(pt.tree.stream_id);
  w.vec_i32(pt.tree.subsample);
  w.u32(static_cast<std::uint32_t>(pt.tree.nodes.size()));
  for (const auto& nd : pt.tree.nodes) {
    w.u8(nd.is_leaf ? 1 : 0);
    w.i32(nd.feature);
    w.u8(static_cast<std::uint8_t>(nd.kind));
    w.f64(nd.threshold);
    w.vec_i32(nd.left_categories);
    w.i32(nd.left);
    w.i32(nd.right);
    w.i32(nd.leaf_index);
  }
  w.u32(static_cast<std::uint32_t>(pt.tree.leaf_grow.size()));
  for (const auto& lg : pt.tree.leaf_grow) {
    w.vec_i32(lg.count);
    w.vec_f64(lg.mean);
  }
  w.u32(static_cast<std::uint32_t>(pt.leaves.size()));
  for (const auto& le : pt.leaves) {
    w.u32(static_cast<std::uint32_t>(le.members.size()));
    for (const auto& ms : le.members) w.vec_i32(ms);
    w.vec_f64(le.mean);
    w.i32(le.total);
  }
}

inline void read_tree(Reader& r, PopulatedTree& pt, int& tree_treatment) {
  tree_treatment = r.i32();
  pt.tree.degenerate = r.u8() != 0;
  pt.tree.stream_id = r.u64();
  pt.tree.subsample = r.vec_i32();
  const std::uint32_t nn = r.u32();
  pt.tree.nodes.resize(nn);
  for (auto& nd : pt.tree.nodes) {
    nd.is_leaf = r.u8() != 0;
    nd.feature = r.i32();
    nd.kind = static_cast<FeatureKind>(r.u8());
    nd.threshold = r.f64();
    nd.left_categories = r.vec_i32();
    nd.left = r.i32();
    nd.right = r.i32();
    nd.leaf_index = r.i32();
  }
  const std::uint32_t ng = r.u32();
  pt.tree.leaf_grow.resize(ng);
  for (auto& lg : pt.tree.leaf_grow) {
    lg.count = r.vec_i32();
    lg.mean = r.vec_f64();
  }
  const std::uint32_t nl = r.u32();
  pt.leaves.resize(nl);
  for (auto& le : pt.leaves) {
    const std::uint32_t nt = r.u32();
    le.members.resize(nt);
    for (auto& ms : le.members) ms = r.vec_i32();
    le.mean = r.vec_f64();
    le.total = r.i32();
  }
}

}  // namespace detail

inline void save_forest(const Forest& f, std::ostream& os) {
  detail::Writer w(os);
  os.write(detail::kForestMagic, 8);
  w.u32(detail::kForestFormatVersion);

  const auto& cfg = f.config;
  w.u8(static_cast<std::uint8_t>(cfg.estimator));
  w.u8(cfg.penalty ? 1 : 0);
  w.i32(cfg.lc_folds);
  w.i32(cfg.lc_trees);
  w.i32(cfg.n_trees);
  w.f64(cfg.subsample_ratio);
  w.f64(cfg.split_fraction);
  w.i32(cfg.tree.min_leaf);
  w.i32(cfg.tree.min_leaf_per_treatment);
  w.f64(cfg.tree.feature_poisson_mean);
  w.i32(cfg.tree.max_depth ? *cfg.tree.max_depth : -1);
  w.f64(cfg.tree.min_daughter_share);
  w.u64(cfg.seed);
  w.i32(cfg.knn_k);
  w.u8(cfg.penalty_lambda_override ? 1 : 0);
  w.f64(cfg.penalty_lambda_override ? *cfg.penalty_lambda_override : 0.0);

  detail::write_dataset(w, f.data);
  w.vec_i32(f.split.a_indices);
  w.vec_i32(f.split.b_indices);
  w.u64(f.split.seed);
  w.vec_f64(f.scales.inv_var);
  w.i32(f.matched.n);
  w.i32(f.matched.m);
  w.vec_f64(f.matched.y_tilde);
  w.vec_f64(f.center_offset_a);
  w.vec_f64(f.center_offset_b);
  w.vec_f64(f.y_a);
  w.vec_f64(f.y_b);
  w.f64(f.lambda_used);
  w.i32(f.degenerate_count);

  w.u32(static_cast<std::uint32_t>(f.trees.size()));
  for (std::size_t i = 0; i < f.trees.size(); ++i)
    detail::write_tree(w, f.trees[i], f.tree_treatment[i]);
}

inline void save_forest(const Forest& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write forest file '" + path + "'");
  save_forest(f, os);
}

inline Forest load_forest(std::istream& is) {
  detail::Reader r(is);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kForestMagic, 8) != 0)
    throw DataError("not a forest file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != detail::kForestFormatVersion)
    throw DataError("unsupported forest file version " + std::to_string(version));

  Forest f;
  auto& cfg = f.config;
  cfg.estimator = static_cast<EstimatorKind>(r.u8());
  cfg.penalty = r.u8() != 0;
  cfg.lc_folds = r.i32();
  cfg.lc_trees = r.i32();
  cfg.n_trees = r.i32();
  cfg.subsample_ratio = r.f64();
  cfg.split_fraction = r.f64();
  cfg.tree.min_leaf = r.i32();
  cfg.tree.min_leaf_per_treatment = r.i32();
  cfg.tree.feature_poisson_mean = r.f64();
  const int max_depth = r.i32();
  if (max_depth >= 0) cfg.tree.max_depth = max_depth;
  cfg.tree.min_daughter_share = r.f64();
  cfg.seed = r.u64();
  cfg.knn_k = r.i32();
  const bool has_override = r.u8() != 0;
  const double override_value = r.f64();
  if (has_override) cfg.penalty_lambda_override = override_value;
  cfg.tree.criterion.rule = split_rule_for(cfg.estimator);

  f.data = detail::read_dataset(r);
  f.split.a_indices = r.vec_i32();
  f.split.b_indices = r.vec_i32();
  f.split.seed = r.u64();
  f.scales.inv_var = r.vec_f64();
  f.matched.n = r.i32();
  f.matched.m = r.i32();
  f.matched.y_tilde = r.vec_f64();
  f.center_offset_a = r.vec_f64();
  f.center_offset_b = r.vec_f64();
  f.y_a = r.vec_f64();
  f.y_b = r.vec_f64();
  f.lambda_used = r.f64();
  f.degenerate_count = r.i32();

  const bool basic = cfg.estimator == EstimatorKind::basic ||
                     cfg.estimator == EstimatorKind::basic_onesam;
  cfg.tree.criterion.contrasts =
      basic ? ContrastSet::all_pairs(1) : ContrastSet::all_pairs(f.data.m);

  const std::uint32_t nt = r.u32();
  f.trees.resize(nt);
  f.tree_treatment.resize(nt);
  for (std::uint32_t i = 0; i < nt; ++i) detail::read_tree(r, f.trees[i], f.tree_treatment[i]);

  f.treat_a.reserve(f.split.a_indices.size());
  for (int row : f.split.a_indices) f.treat_a.push_back(f.data.treatment[static_cast<std::size_t>(row)]);
  f.treat_b.reserve(f.split.b_indices.size());
  for (int row : f.split.b_indices) f.treat_b.push_back(f.data.treatment[static_cast<std::size_t>(row)]);
  return f;
}

inline Forest load_forest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open forest file '" + path + "'");
  return load_forest(is);
}

// Sparse triplet export of weight vectors: eval_id, estimation index
// (original data row), weight.
inline void save_weights_csv(const Forest& f, std::span<const WeightVector> weights,
                             const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write weights file '" + path + "'");
  os << "eval_id,b_index,weight\n";
  os.precision(17);
  for (const auto& w : weights) {
    for (const auto& [idx, value] : w.entries) {
      os << w.tag.eval_id << ',' << f.split.b_indices[static_cast<std::size_t>(idx)] << ','
         << value << '\n';
    }
  }
}

}  // namespace mcf
