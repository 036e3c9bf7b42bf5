#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qmetro/error.hpp"
#include "qmetro/grid.hpp"
#include "qmetro/parallel.hpp"
#include "qmetro/prob_table.hpp"
#include "qmetro/random.hpp"

namespace qmetro {

/// Single-shot calibration data stored as sufficient statistics: for every
/// grid point, how many of the r recorded events fell on each outcome.
struct GridDataset {
  ParameterGrid grid;
  int r = 0;
  int outcomes = 0;
  std::string model;
  std::uint64_t seed = 0;
  /// grid.size() x outcomes, row-major.
  std::vector<std::int64_t> counts;

  std::int64_t count(std::size_t point, int outcome) const {
    return counts[point * static_cast<std::size_t>(outcomes) + static_cast<std::size_t>(outcome)];
  }
  std::int64_t& count(std::size_t point, int outcome) {
    return counts[point * static_cast<std::size_t>(outcomes) + static_cast<std::size_t>(outcome)];
  }
  std::int64_t total_events() const {
    std::int64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  friend bool operator==(const GridDataset&, const GridDataset&) = default;
};

/// Draws r outcomes at every grid point (controls zero). Each point has its
/// own stream keyed by (seed, point index).
template <typename Model>
GridDataset sample_grid_dataset(const Model& model, const ParameterGrid& grid, int r,
                                std::uint64_t seed) {
  if (r < 1) throw ConfigError("sample_grid_dataset: r must be at least 1");
  if (grid.dims() != model.dims()) {
    throw ShapeError("sample_grid_dataset: grid dimensionality does not match the model");
  }
  GridDataset ds;
  ds.grid = grid;
  ds.r = r;
  ds.outcomes = model.outcomes();
  ds.model = model.name();
  ds.seed = seed;
  ds.counts.assign(grid.size() * static_cast<std::size_t>(ds.outcomes), 0);
  const PhaseVector zero = PhaseVector::Zero(grid.dims());
  parallel_for(grid.size(), [&](std::size_t j) {
    Rng rng = make_stream(seed, {j});
    auto p = model.probs(grid.point(j), zero);
    // Multinomial draw as a chain of conditional binomials.
    std::int64_t remaining = r;
    double mass = 1.0;
    for (int d = 0; d < ds.outcomes && remaining > 0; ++d) {
      std::int64_t k;
      if (d == ds.outcomes - 1) {
        k = remaining;
      } else {
        double q = mass > 0 ? std::clamp(p[d] / mass, 0.0, 1.0) : 0.0;
        k = std::binomial_distribution<std::int64_t>(remaining, q)(rng);
      }
      ds.count(j, d) = k;
      remaining -= k;
      mass -= p[d];
    }
  });
  return ds;
}

/// f[d][j] = counts[j][d] / (events at j).
inline ProbTable outcome_frequencies(const GridDataset& ds) {
  ProbTable t;
  t.grid = ds.grid;
  t.values.resize(ds.outcomes, static_cast<Eigen::Index>(ds.grid.size()));
  for (std::size_t j = 0; j < ds.grid.size(); ++j) {
    std::int64_t n = 0;
    for (int d = 0; d < ds.outcomes; ++d) n += ds.count(j, d);
    if (n <= 0) {
      throw InsufficientDataError("grid point " + std::to_string(j) + " has no recorded events");
    }
    for (int d = 0; d < ds.outcomes; ++d) {
      t.values(d, static_cast<Eigen::Index>(j)) =
          static_cast<double>(ds.count(j, d)) / static_cast<double>(n);
    }
  }
  return t;
}

/// Calibration baseline: the likelihood approximated by relative occurrence
/// frequencies.
inline ProbTable empirical_model_from_counts(const GridDataset& ds) {
  return outcome_frequencies(ds);
}

// ---------------------------------------------------------------------------
// File format
//
//   line 1:     one JSON object (no embedded newlines):
//               {"format":"qmetro-grid-dataset","version":1,"grid":{lo,hi,n_per_axis,dims},
//                "r":R,"outcomes":D,"points":P,"model":NAME,"seed":S}
//   lines 2..P+1: D comma-separated nonnegative decimal integers, the counts of
//               grid point (line - 2) in outcome order; each row sums to R.
//
// Lines end in '\n'. Doubles in the header round-trip exactly.

inline void save_dataset(const GridDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  nlohmann::json header = {{"format", "qmetro-grid-dataset"},
                           {"version", 1},
                           {"grid", ds.grid.to_json()},
                           {"r", ds.r},
                           {"outcomes", ds.outcomes},
                           {"points", ds.grid.size()},
                           {"model", ds.model},
                           {"seed", ds.seed}};
  out << header.dump() << '\n';
  std::string line;
  for (std::size_t j = 0; j < ds.grid.size(); ++j) {
    line.clear();
    for (int d = 0; d < ds.outcomes; ++d) {
      if (d) line += ',';
      line += std::to_string(ds.count(j, d));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw ConfigError("write failed for " + path);
}

inline GridDataset parse_dataset(const std::string& text, const std::string& source = "<memory>") {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) {
      throw ParseError(source, line_no + 1, text.size() - pos + 1, "missing line terminator");
    }
    line = std::string_view(text).substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError(source, 1, 1, "empty file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, 1, e.byte, "header is not valid JSON");
  }
  GridDataset ds;
  std::size_t points = 0;
  try {
    if (header.at("format").get<std::string>() != "qmetro-grid-dataset") {
      throw ParseError(source, 1, 1, "not a qmetro-grid-dataset file");
    }
    if (header.at("version").get<int>() != 1) {
      throw ParseError(source, 1, 1, "unsupported dataset version");
    }
    ds.grid = ParameterGrid::from_json(header.at("grid"));
    ds.r = header.at("r").get<int>();
    ds.outcomes = header.at("outcomes").get<int>();
    ds.model = header.at("model").get<std::string>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    points = header.at("points").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source, 1, 1, std::string("bad header field: ") + e.what());
  } catch (const DegenerateGridError& e) {
    throw ParseError(source, 1, 1, e.what());
  }
  if (points != ds.grid.size()) throw ParseError(source, 1, 1, "point count does not match grid");
  if (ds.outcomes < 1 || ds.r < 1) throw ParseError(source, 1, 1, "outcomes and r must be >= 1");

  ds.counts.assign(points * static_cast<std::size_t>(ds.outcomes), 0);
  for (std::size_t j = 0; j < points; ++j) {
    if (!next_line(line)) {
      throw ParseError(source, line_no + 1, 1,
                       "truncated: expected " + std::to_string(points) + " count rows, found " +
                           std::to_string(j));
    }
    const char* begin = line.data();
    const char* cur = begin;
    const char* end = begin + line.size();
    std::int64_t sum = 0;
    for (int d = 0; d < ds.outcomes; ++d) {
      if (d > 0) {
        if (cur == end || *cur != ',') {
          throw ParseError(source, line_no, static_cast<std::size_t>(cur - begin) + 1,
                           "expected ',' between counts");
        }
        ++cur;
      }
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(cur, end, v);
      if (ec != std::errc() || v < 0) {
        throw ParseError(source, line_no, static_cast<std::size_t>(cur - begin) + 1,
                         "expected a nonnegative integer count");
      }
      cur = ptr;
      ds.count(j, d) = v;
      sum += v;
    }
    if (cur != end) {
      throw ParseError(source, line_no, static_cast<std::size_t>(cur - begin) + 1,
                       "unexpected trailing characters");
    }
    if (sum != ds.r) {
      throw ParseError(source, line_no, 1,
                       "row sums to " + std::to_string(sum) + ", expected r = " +
                           std::to_string(ds.r));
    }
  }
  if (pos != text.size()) throw ParseError(source, line_no + 1, 1, "unexpected extra data");
  return ds;
}

inline GridDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), path);
}

}  // namespace qmetro
