#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qmetro/error.hpp"
#include "qmetro/grid.hpp"

namespace qmetro {

/// Probability values indexed by (outcome, grid point). Holds likelihood
/// tables, frequency tables and network posteriors alike.
struct ProbTable {
  ParameterGrid grid;
  /// outcomes x grid.size()
  Eigen::MatrixXd values;

  int outcomes() const noexcept { return static_cast<int>(values.rows()); }
  std::size_t points() const noexcept { return static_cast<std::size_t>(values.cols()); }

  double operator()(int outcome, std::size_t point) const {
    return values(outcome, static_cast<Eigen::Index>(point));
  }

  nlohmann::json to_json() const {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(values.size()));
    for (Eigen::Index d = 0; d < values.rows(); ++d) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) flat.push_back(values(d, j));
    }
    return {{"format", "qmetro-prob-table"},
            {"version", 1},
            {"grid", grid.to_json()},
            {"outcomes", outcomes()},
            {"values", flat}};
  }

  static ProbTable from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "qmetro-prob-table") {
      throw ConfigError("not a qmetro-prob-table document");
    }
    ProbTable t;
    t.grid = ParameterGrid::from_json(j.at("grid"));
    int d = j.at("outcomes").get<int>();
    auto flat = j.at("values").get<std::vector<double>>();
    auto cols = static_cast<Eigen::Index>(t.grid.size());
    if (d < 1 || flat.size() != static_cast<std::size_t>(d) * t.grid.size()) {
      throw ShapeError("prob-table value count does not match outcomes x grid points");
    }
    t.values.resize(d, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) t.values(r, c) = flat[k++];
    }
    return t;
  }
};

}  // namespace qmetro
