// Dataset ingestion and validation: CSV loading with a declared schema,
// treatment-code remapping, and the stratified estimation-sample split.
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mcf/common.hpp"
#include "mcf/stats.hpp"

namespace mcf {

enum class FeatureKind : std::uint8_t { ordered = 0, categorical = 1 };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::ordered;
  int index = -1;  // column position in the feature matrix
};

// Columns that are not features.
struct RoleMap {
  std::string treatment_column;
  std::string outcome_column;
};

// Immutable after construction; treatments are contiguous codes 0..m-1.
struct Dataset {
  std::vector<FeatureSpec> schema;
  std::vector<std::vector<double>> columns;  // [feature][row]
  std::vector<int> treatment;
  std::vector<double> outcome;
  int m = 0;  // number of treatment levels
  std::vector<long long> original_treatment_levels;  // sorted original codes

  int n() const { return static_cast<int>(outcome.size()); }
  int p() const { return static_cast<int>(columns.size()); }

  double feature(int col, int row) const { return columns[static_cast<std::size_t>(col)][static_cast<std::size_t>(row)]; }

  // Copies the given rows into a standalone dataset (same schema and m).
  Dataset subset(std::span<const int> rows) const {
    Dataset out;
    out.schema = schema;
    out.m = m;
    out.original_treatment_levels = original_treatment_levels;
    out.columns.assign(columns.size(), {});
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out.columns[c].reserve(rows.size());
      for (int r : rows) out.columns[c].push_back(columns[c][static_cast<std::size_t>(r)]);
    }
    out.treatment.reserve(rows.size());
    out.outcome.reserve(rows.size());
    for (int r : rows) {
      out.treatment.push_back(treatment[static_cast<std::size_t>(r)]);
      out.outcome.push_back(outcome[static_cast<std::size_t>(r)]);
    }
    return out;
  }

  std::vector<int> treatment_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(m), 0);
    for (int d : treatment) ++counts[static_cast<std::size_t>(d)];
    return counts;
  }

  int feature_index(const std::string& name) const {
    for (const auto& f : schema)
      if (f.name == name) return f.index;
    return -1;
  }
};

struct SampleSplit {
  std::vector<int> a_indices;
  std::vector<int> b_indices;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::optional<double> parse_double(const std::string& cell) {
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string cell_name(int row, const std::string& column) {
  // row is 1-based data row (header excluded)
  return "row " + std::to_string(row) + ", column '" + column + "'";
}

}  // namespace detail

// Loads a comma-separated file with a header row. The schema declares the
// feature columns and their kinds; roles name the treatment and outcome
// columns. Treatment codes are remapped to contiguous 0..m-1 preserving
// their sorted original order.
inline Dataset load_dataset(const std::string& path, std::vector<FeatureSpec> schema,
                            const RoleMap& roles) {
  if (schema.empty()) throw DataError("schema declares no features");
  {
    std::set<std::string> names;
    for (const auto& f : schema) {
      if (!names.insert(f.name).second)
        throw DataError("duplicate feature name '" + f.name + "' in schema");
    }
    if (names.count(roles.treatment_column) || names.count(roles.outcome_column))
      throw DataError("treatment/outcome column may not also be a feature");
  }

  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty data file '" + path + "'");
  const std::vector<std::string> header = detail::split_csv_line(line);

  auto column_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw DataError("column '" + name + "' not found in '" + path + "'");
  };

  std::vector<int> feature_cols;
  feature_cols.reserve(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    schema[i].index = static_cast<int>(i);
    feature_cols.push_back(column_of(schema[i].name));
  }
  const int treat_col = column_of(roles.treatment_column);
  const int outcome_col = column_of(roles.outcome_column);

  Dataset d;
  d.schema = std::move(schema);
  d.columns.assign(d.schema.size(), {});
  std::vector<long long> raw_treatments;

  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    auto numeric = [&](int col, const std::string& colname) {
      const std::string& cell = cells[static_cast<std::size_t>(col)];
      if (cell.empty())
        throw DataError("missing value at " + detail::cell_name(row, colname));
      auto v = detail::parse_double(cell);
      if (!v)
        throw DataError("non-numeric value '" + cell + "' at " + detail::cell_name(row, colname));
      return *v;
    };
    for (std::size_t f = 0; f < d.schema.size(); ++f) {
      const double v = numeric(feature_cols[f], d.schema[f].name);
      if (d.schema[f].kind == FeatureKind::categorical &&
          v != std::floor(v))
        throw DataError("categorical feature '" + d.schema[f].name +
                        "' has non-integer code at " + detail::cell_name(row, d.schema[f].name));
      d.columns[f].push_back(v);
    }
    const double t = numeric(treat_col, roles.treatment_column);
    if (t != std::floor(t))
      throw DataError("treatment has non-integer code at " +
                      detail::cell_name(row, roles.treatment_column));
    raw_treatments.push_back(static_cast<long long>(t));
    d.outcome.push_back(numeric(outcome_col, roles.outcome_column));
  }
  if (row == 0) throw DataError("data file '" + path + "' has no rows");

  // Remap treatment codes to contiguous 0..m-1 in sorted original order.
  std::vector<long long> levels(raw_treatments);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  if (levels.size() < 2) throw DataError("treatment column has fewer than 2 levels");
  d.original_treatment_levels = levels;
  d.m = static_cast<int>(levels.size());
  d.treatment.reserve(raw_treatments.size());
  for (long long t : raw_treatments) {
    const auto it = std::lower_bound(levels.begin(), levels.end(), t);
    d.treatment.push_back(static_cast<int>(it - levels.begin()));
  }

  for (const auto& f : d.schema) {
    if (f.kind != FeatureKind::categorical) continue;
    std::set<double> observed(d.columns[static_cast<std::size_t>(f.index)].begin(),
                              d.columns[static_cast<std::size_t>(f.index)].end());
    if (observed.size() < 2)
      throw DataError("categorical feature '" + f.name + "' has fewer than 2 observed levels");
  }
  if (d.n() < 2 * d.m)
    throw DataError("dataset too small: n=" + std::to_string(d.n()) + " with m=" +
                    std::to_string(d.m) + " treatments");
  return d;
}

// Writes the dataset back out (remapped treatment codes); numeric content
// round-trips exactly.
inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write data file '" + path + "'");
  for (const auto& f : d.schema) out << f.name << ',';
  out << "treatment,outcome\n";
  out.precision(17);
  for (int r = 0; r < d.n(); ++r) {
    for (int c = 0; c < d.p(); ++c) out << d.feature(c, r) << ',';
    out << d.treatment[static_cast<std::size_t>(r)] << ',' << d.outcome[static_cast<std::size_t>(r)] << '\n';
  }
}

// Random A/B split stratified by treatment. |A| = ceil(fraction * n); the
// per-treatment allocation uses largest remainders so both halves keep every
// treatment. Deterministic given the seed.
inline SampleSplit split_ab(const Dataset& d, std::uint64_t seed, double fraction = 0.5) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ConfigError("split fraction must lie strictly between 0 and 1");
  const auto counts = d.treatment_counts();
  for (int t = 0; t < d.m; ++t) {
    if (counts[static_cast<std::size_t>(t)] < 2)
      throw DataError("treatment " + std::to_string(t) +
                      " has fewer than 2 observations; cannot stratify the split");
  }

  const int total_a = static_cast<int>(std::ceil(fraction * d.n()));
  std::vector<int> alloc(static_cast<std::size_t>(d.m), 0);
  std::vector<std::pair<double, int>> remainders;  // (-frac, treatment): stable tie order
  int assigned = 0;
  for (int t = 0; t < d.m; ++t) {
    const double exact = fraction * counts[static_cast<std::size_t>(t)];
    alloc[static_cast<std::size_t>(t)] = static_cast<int>(std::floor(exact));
    assigned += alloc[static_cast<std::size_t>(t)];
    remainders.emplace_back(-(exact - std::floor(exact)), t);
  }
  std::sort(remainders.begin(), remainders.end());
  for (int i = 0; assigned < total_a && i < d.m; ++i) {
    ++alloc[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)];
    ++assigned;
  }
  // Keep every treatment present in both halves.
  for (int t = 0; t < d.m; ++t) {
    auto& a = alloc[static_cast<std::size_t>(t)];
    a = std::clamp(a, 1, counts[static_cast<std::size_t>(t)] - 1);
  }

  std::vector<std::vector<int>> by_treatment(static_cast<std::size_t>(d.m));
  for (int r = 0; r < d.n(); ++r)
    by_treatment[static_cast<std::size_t>(d.treatment[static_cast<std::size_t>(r)])].push_back(r);

  auto gen = rng::make_stream(seed, rng::Domain::split, 0);
  SampleSplit split;
  split.seed = seed;
  for (int t = 0; t < d.m; ++t) {
    auto& rows = by_treatment[static_cast<std::size_t>(t)];
    std::shuffle(rows.begin(), rows.end(), gen);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<int>(i) < alloc[static_cast<std::size_t>(t)])
        split.a_indices.push_back(rows[i]);
      else
        split.b_indices.push_back(rows[i]);
    }
  }
  std::sort(split.a_indices.begin(), split.a_indices.end());
  std::sort(split.b_indices.begin(), split.b_indices.end());
  return split;
}

}  // namespace mcf
