#pragma once

#include <algorithm>
#include <array>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "qmetro/dataset.hpp"
#include "qmetro/error.hpp"
#include "qmetro/estimator.hpp"
#include "qmetro/grid.hpp"
#include "qmetro/models.hpp"
#include "qmetro/neural.hpp"
#include "qmetro/parallel.hpp"
#include "qmetro/policy.hpp"
#include "qmetro/random.hpp"

#ifndef QMETRO_VERSION
#define QMETRO_VERSION "unknown"
#endif

namespace qmetro {

inline std::string tool_version() { return QMETRO_VERSION; }

/// 64-bit FNV-1a over the file bytes, as 16 hex digits.
inline std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016" PRIx64, h);
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

/// JSON experiment description. Relative artifact paths resolve against
/// `base_dir` (the directory holding the config file).
struct ExperimentConfig {
  std::string model = "mz";          // mz | fourarm
  std::string quarter = "coupler";   // coupler | dft
  std::array<int, 2> input_modes = {2, 3};
  std::string provider = "exact";    // exact | nn | freq
  std::string source = "exact";      // exact | offline
  std::string strategy = "none";     // none | random | policy | truth_window
  std::optional<ParameterGrid> grid;  // exact provider lattice
  std::optional<std::array<double, 2>> restrict_box;
  std::string edge_mode = "periodic";  // periodic | truncate
  double feedback_lo = -std::numbers::pi;
  double feedback_hi = std::numbers::pi;

  std::string network;       // trained posterior network (nn)
  std::string dataset;       // calibration data (nn, freq)
  std::string policy;        // trained policy (policy)
  std::string offline_data;  // outcome table (offline source)

  int n_probes = 100;
  int n_truths = 100;
  int n_reps = 30;
  std::string aggregation = "mean";  // mean | median

  std::string truth_sampling = "uniform";  // uniform | grid
  std::optional<double> truth_lo;
  std::optional<double> truth_hi;
  double truth_margin = 0.0;

  std::uint64_t truth_seed = 1;
  std::uint64_t run_seed = 2;

  std::string curve_out;
  std::string summary_out;
  std::string base_dir;

  std::string resolve(const std::string& p) const {
    if (p.empty() || base_dir.empty()) return p;
    std::filesystem::path path(p);
    if (path.is_absolute()) return p;
    return (std::filesystem::path(base_dir) / path).lexically_normal().string();
  }

  int dims() const { return model == "mz" ? 1 : 3; }

  QuarterKind quarter_kind() const {
    return quarter == "dft" ? QuarterKind::dft : QuarterKind::coupler;
  }

  /// Artifacts the configuration needs, as (role, resolved path).
  std::vector<std::pair<std::string, std::string>> artifacts() const {
    std::vector<std::pair<std::string, std::string>> a;
    if (provider == "nn") a.emplace_back("network", resolve(network));
    if (provider == "nn" || provider == "freq") a.emplace_back("dataset", resolve(dataset));
    if (strategy == "policy") a.emplace_back("policy", resolve(policy));
    if (source == "offline") a.emplace_back("offline_data", resolve(offline_data));
    return a;
  }

  void validate() const {
    auto one_of = [](const std::string& v, std::initializer_list<const char*> allowed,
                     const char* field) {
      for (const char* a : allowed) {
        if (v == a) return;
      }
      throw ConfigError(std::string("invalid ") + field + " '" + v + "'");
    };
    one_of(model, {"mz", "fourarm"}, "model");
    one_of(quarter, {"coupler", "dft"}, "quarter");
    one_of(provider, {"exact", "nn", "freq"}, "provider");
    one_of(source, {"exact", "offline"}, "source");
    one_of(strategy, {"none", "random", "policy", "truth_window"}, "strategy");
    one_of(edge_mode, {"periodic", "truncate"}, "edge_mode");
    one_of(aggregation, {"mean", "median"}, "aggregation");
    one_of(truth_sampling, {"uniform", "grid"}, "truths.sampling");
    if (n_probes < 1) throw ConfigError("n_probes must be >= 1");
    if (n_truths < 1 || n_reps < 1) throw ConfigError("n_truths and n_reps must be >= 1");
    if (!(feedback_hi > feedback_lo)) throw ConfigError("feedback range must satisfy lo < hi");
    if (truth_margin < 0) throw ConfigError("truth margin must be >= 0");
    if (provider == "exact" && !grid) throw ConfigError("exact provider needs a grid");
    if (grid && grid->dims() != dims()) throw ConfigError("grid dims do not match the model");
    if (model == "fourarm") check_input_modes({input_modes[0], input_modes[1]});
    std::vector<std::string> missing;
    for (const auto& [role, path] : artifacts()) {
      if (path.empty()) {
        missing.push_back(role + " (no path given)");
      } else if (!std::filesystem::exists(path)) {
        missing.push_back(role + ": " + path);
      }
    }
    if (!missing.empty()) {
      std::string msg = "missing artifact";
      for (const auto& m : missing) msg += "\n  " + m;
      throw ConfigError(msg);
    }
  }

  static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = "") {
    ExperimentConfig c;
    c.base_dir = base_dir;
    try {
      c.model = j.value("model", c.model);
      c.quarter = j.value("quarter", c.quarter);
      if (j.contains("input_modes")) {
        auto m = j.at("input_modes").get<std::vector<int>>();
        if (m.size() != 2) throw ConfigError("input_modes needs two entries");
        c.input_modes = {m[0], m[1]};
      }
      c.provider = j.value("provider", c.provider);
      c.source = j.value("source", c.source);
      c.strategy = j.value("strategy", c.strategy);
      if (j.contains("grid")) {
        const auto& g = j.at("grid");
        int dims = g.value("dims", c.model == "mz" ? 1 : 3);
        c.grid = ParameterGrid(g.at("lo").get<double>(), g.at("hi").get<double>(),
                               g.at("n_per_axis").get<int>(), dims);
      }
      if (j.contains("restrict")) {
        auto b = j.at("restrict").get<std::vector<double>>();
        if (b.size() != 2) throw ConfigError("restrict needs [lo, hi]");
        c.restrict_box = std::array<double, 2>{b[0], b[1]};
      }
      c.edge_mode = j.value("edge_mode", c.edge_mode);
      if (j.contains("feedback")) {
        auto f = j.at("feedback").get<std::vector<double>>();
        if (f.size() != 2) throw ConfigError("feedback needs [lo, hi]");
        c.feedback_lo = f[0];
        c.feedback_hi = f[1];
      }
      if (j.contains("artifacts")) {
        const auto& a = j.at("artifacts");
        c.network = a.value("network", "");
        c.dataset = a.value("dataset", "");
        c.policy = a.value("policy", "");
        c.offline_data = a.value("offline_data", "");
      }
      c.n_probes = j.value("n_probes", c.n_probes);
      c.n_truths = j.value("n_truths", c.n_truths);
      c.n_reps = j.value("n_reps", c.n_reps);
      c.aggregation = j.value("aggregation", c.aggregation);
      if (j.contains("truths")) {
        const auto& t = j.at("truths");
        c.truth_sampling = t.value("sampling", c.truth_sampling);
        if (t.contains("lo")) c.truth_lo = t.at("lo").get<double>();
        if (t.contains("hi")) c.truth_hi = t.at("hi").get<double>();
        c.truth_margin = t.value("margin", c.truth_margin);
      }
      if (j.contains("seeds")) {
        c.truth_seed = j.at("seeds").value("truths", c.truth_seed);
        c.run_seed = j.at("seeds").value("runs", c.run_seed);
      }
      if (j.contains("outputs")) {
        c.curve_out = j.at("outputs").value("curve", "");
        c.summary_out = j.at("outputs").value("summary", "");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model;
    if (model == "fourarm") {
      j["quarter"] = quarter;
      j["input_modes"] = input_modes;
    }
    j["provider"] = provider;
    j["source"] = source;
    j["strategy"] = strategy;
    if (grid) j["grid"] = grid->to_json();
    if (restrict_box) j["restrict"] = *restrict_box;
    j["edge_mode"] = edge_mode;
    j["feedback"] = {feedback_lo, feedback_hi};
    j["artifacts"] = {{"network", network},
                      {"dataset", dataset},
                      {"policy", policy},
                      {"offline_data", offline_data}};
    j["n_probes"] = n_probes;
    j["n_truths"] = n_truths;
    j["n_reps"] = n_reps;
    j["aggregation"] = aggregation;
    nlohmann::json t = {{"sampling", truth_sampling}, {"margin", truth_margin}};
    if (truth_lo) t["lo"] = *truth_lo;
    if (truth_hi) t["hi"] = *truth_hi;
    j["truths"] = t;
    j["seeds"] = {{"truths", truth_seed}, {"runs", run_seed}};
    j["outputs"] = {{"curve", curve_out}, {"summary", summary_out}};
    return j;
  }
};

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  auto dir = std::filesystem::path(path).parent_path().string();
  return ExperimentConfig::from_json(j, dir);
}

// ---------------------------------------------------------------------------
// Assembly

using AnySource = std::variant<ExactSource<MzModel>, ExactSource<FourArmModel>, OfflineGridSource>;
using AnyProvider = std::variant<ExactProvider<MzModel>, ExactProvider<FourArmModel>, TableProvider>;
using AnyStrategy = std::variant<ZeroFeedback, RandomFeedback, PolicyFeedback, TruthWindowFeedback>;

/// Everything a run needs, loaded from the config's artifacts.
struct Environment {
  AnySource source;
  AnyProvider provider;
  ParticleSet particles;
  std::optional<PolicyNetwork> policy;
  std::uint64_t dataset_seed = 0;
  bool has_dataset = false;
};

namespace detail {

inline GridDataset load_checked_dataset(const ExperimentConfig& cfg, const std::string& path) {
  GridDataset ds = load_dataset(path);
  if (ds.model != cfg.model) {
    throw ConfigError("dataset " + path + " was generated for model '" + ds.model + "', config says '" +
                      cfg.model + "'");
  }
  return ds;
}

inline std::optional<SubGrid> restriction_for(const ExperimentConfig& cfg, const ParameterGrid& g) {
  if (!cfg.restrict_box) return std::nullopt;
  return restrict_grid(g, (*cfg.restrict_box)[0], (*cfg.restrict_box)[1]);
}

}  // namespace detail

inline Environment build_environment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto modes = std::pair<int, int>{cfg.input_modes[0], cfg.input_modes[1]};
  Environment env{ExactSource<MzModel>{MzModel{}}, ExactProvider<MzModel>(MzModel{}, build_grid(0, 1, 2, 1)),
                  {}, std::nullopt};

  if (cfg.provider == "exact") {
    ParameterGrid g = *cfg.grid;
    if (auto sub = detail::restriction_for(cfg, g)) g = sub->grid;
    if (cfg.model == "mz") {
      env.provider = ExactProvider<MzModel>(MzModel{}, g);
    } else {
      env.provider = ExactProvider<FourArmModel>(FourArmModel(modes, cfg.quarter_kind()), g);
    }
  } else {
    GridDataset ds = detail::load_checked_dataset(cfg, cfg.resolve(cfg.dataset));
    env.dataset_seed = ds.seed;
    env.has_dataset = true;
    ProbTable freqs = outcome_frequencies(ds);
    auto sub = detail::restriction_for(cfg, ds.grid);
    TableProvider tp = [&] {
      if (cfg.provider == "freq") return TableProvider::frequency(freqs, sub);
      auto net = PosteriorNetwork::from_json(load_json(cfg.resolve(cfg.network)));
      if (net.outcomes() != ds.outcomes) {
        throw ShapeError("network outcome count differs from the dataset");
      }
      ProbTable post = posterior_table(net, ds.grid);
      PriorVector prior = solve_prior(post, freqs);
      return TableProvider::network(post, prior, sub);
    }();
    if (cfg.edge_mode == "truncate") tp.set_edge_mode(TableProvider::EdgeMode::truncate);
    env.provider = std::move(tp);
  }

  if (cfg.source == "offline") {
    GridDataset ds = detail::load_checked_dataset(cfg, cfg.resolve(cfg.offline_data));
    env.source = OfflineGridSource{outcome_frequencies(ds)};
  } else if (cfg.model == "mz") {
    env.source = ExactSource<MzModel>{MzModel{}};
  } else {
    env.source = ExactSource<FourArmModel>{FourArmModel(modes, cfg.quarter_kind())};
  }

  const ParameterGrid& pg = std::visit([](const auto& p) -> const ParameterGrid& { return p.particle_grid(); },
                                       env.provider);
  env.particles = uniform_particles(pg);

  if (cfg.strategy == "policy") {
    auto p = PolicyNetwork::from_json(load_json(cfg.resolve(cfg.policy)));
    if (p.dims() != cfg.dims()) throw ConfigError("policy dimensionality does not match the model");
    env.policy = std::move(p);
  }
  return env;
}

inline AnyStrategy make_strategy(const ExperimentConfig& cfg, const Environment& env) {
  if (cfg.strategy == "random") return RandomFeedback{cfg.feedback_lo, cfg.feedback_hi};
  if (cfg.strategy == "policy") return PolicyFeedback{*env.policy};
  if (cfg.strategy == "truth_window") {
    const ParameterGrid& g = env.particles.grid;
    return TruthWindowFeedback{g.lo(), g.hi()};
  }
  return ZeroFeedback{};
}

/// n_truths truth vectors drawn per the config: uniform over the truth box
/// (particle-grid box shrunk by the margin) or uniformly over particle points.
inline std::vector<PhaseVector> sample_truths(const ExperimentConfig& cfg, const ParticleSet& particles) {
  const ParameterGrid& g = particles.grid;
  double lo = cfg.truth_lo.value_or(g.lo()) + cfg.truth_margin;
  double hi = cfg.truth_hi.value_or(g.hi()) - cfg.truth_margin;
  if (!(hi > lo)) throw ConfigError("truth interval is empty after the margin");
  std::vector<PhaseVector> truths;
  truths.reserve(static_cast<std::size_t>(cfg.n_truths));
  for (int t = 0; t < cfg.n_truths; ++t) {
    Rng rng = make_stream(cfg.truth_seed, {static_cast<std::uint64_t>(t)});
    if (cfg.truth_sampling == "grid") {
      std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
      truths.push_back(g.point(pick(rng)));
    } else {
      PhaseVector x(g.dims());
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = lo + (hi - lo) * uniform01(rng);
      truths.push_back(x);
    }
  }
  return truths;
}

inline TruthSampler truth_sampler(const ExperimentConfig& cfg, const ParticleSet& particles) {
  TruthSampler s;
  if (cfg.truth_sampling == "grid") {
    s.kind = TruthSampler::Kind::prior_points;
    return s;
  }
  s.kind = TruthSampler::Kind::uniform_box;
  s.lo = cfg.truth_lo.value_or(particles.grid.lo()) + cfg.truth_margin;
  s.hi = cfg.truth_hi.value_or(particles.grid.hi()) - cfg.truth_margin;
  if (!(s.hi > s.lo)) throw ConfigError("truth interval is empty after the margin");
  return s;
}

// ---------------------------------------------------------------------------
// Running

struct Curve {
  std::vector<int> probes;  // 1..N
  std::vector<double> qloss;
  std::vector<double> dispersion;
};

struct ExperimentResult {
  Curve curve;
  std::vector<PhaseVector> truths;
  /// per_truth[t][m]: repetition-aggregated Qloss of truth t after m+1 probes.
  std::vector<std::vector<double>> per_truth;
  nlohmann::json summary;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// curve: N,qloss,dispersion with N = 1..n_probes. dispersion is the sample
/// standard deviation across truths of the per-truth aggregate.
inline void write_curve_csv(const Curve& c, std::ostream& out) {
  out << "N,qloss,dispersion\n";
  char buf[96];
  for (std::size_t i = 0; i < c.probes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", c.probes[i], c.qloss[i], c.dispersion[i]);
    out << buf;
  }
}

inline Curve read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read curve " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("N,qloss", 0) != 0) {
    throw ParseError(path, 1, 1, "expected header 'N,qloss,dispersion'");
  }
  Curve c;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    int n = 0;
    double q = 0;
    double d = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf", &n, &q, &d) != 3) {
      throw ParseError(path, lineno, 1, "malformed curve row");
    }
    c.probes.push_back(n);
    c.qloss.push_back(q);
    c.dispersion.push_back(d);
  }
  return c;
}

inline double qcrb_coefficient(const ExperimentConfig& cfg) {
  if (cfg.model == "mz") return 1.0;
  return qcrb_bound({cfg.input_modes[0], cfg.input_modes[1]}, 1e-6, cfg.quarter_kind());
}

/// Samples truths, runs n_reps seeded estimations per truth, aggregates
/// Qloss per probe count and writes the configured outputs.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Environment env = build_environment(cfg);
  AnyStrategy strategy = make_strategy(cfg, env);
  ExperimentResult res;
  res.truths = sample_truths(cfg, env.particles);

  const auto nt = static_cast<std::size_t>(cfg.n_truths);
  const auto nr = static_cast<std::size_t>(cfg.n_reps);
  const auto np = static_cast<std::size_t>(cfg.n_probes);
  std::vector<std::vector<double>> cells(nt * nr);
  std::visit(
      [&](const auto& source, const auto& provider, const auto& strat) {
        parallel_for(cells.size(), [&](std::size_t cell) {
          const std::size_t t = cell / nr;
          const std::size_t rep = cell % nr;
          std::uint64_t seed = make_stream(cfg.run_seed, {t, rep})();
          auto trace = run_estimation(source, provider, strat, env.particles, cfg.n_probes,
                                      res.truths[t], seed);
          std::vector<double> q(np);
          for (std::size_t m = 0; m < np; ++m) q[m] = trace.probes[m].qloss;
          cells[cell] = std::move(q);
        });
      },
      env.source, env.provider, strategy);

  res.per_truth.assign(nt, std::vector<double>(np, 0.0));
  std::vector<double> reps(nr);
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t m = 0; m < np; ++m) {
      for (std::size_t k = 0; k < nr; ++k) reps[k] = cells[t * nr + k][m];
      res.per_truth[t][m] = cfg.aggregation == "median"
                                ? median_of(reps)
                                : std::accumulate(reps.begin(), reps.end(), 0.0) / static_cast<double>(nr);
    }
  }
  Curve& c = res.curve;
  for (std::size_t m = 0; m < np; ++m) {
    double mean = 0;
    for (std::size_t t = 0; t < nt; ++t) mean += res.per_truth[t][m];
    mean /= static_cast<double>(nt);
    double var = 0;
    for (std::size_t t = 0; t < nt; ++t) var += (res.per_truth[t][m] - mean) * (res.per_truth[t][m] - mean);
    c.probes.push_back(static_cast<int>(m) + 1);
    c.qloss.push_back(mean);
    c.dispersion.push_back(nt > 1 ? std::sqrt(var / static_cast<double>(nt - 1)) : 0.0);
  }

  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& [role, path] : cfg.artifacts()) {
    artifacts.push_back({{"role", role}, {"path", path}, {"fnv1a64", fnv1a_file(path)}});
  }
  nlohmann::json seeds = {{"truths", cfg.truth_seed}, {"runs", cfg.run_seed}};
  if (env.has_dataset) seeds["dataset"] = env.dataset_seed;
  nlohmann::json truths = nlohmann::json::array();
  for (const auto& t : res.truths) truths.push_back(std::vector<double>(t.data(), t.data() + t.size()));
  res.summary = {{"format", "qmetro-run-summary"},
                 {"version", 1},
                 {"tool_version", tool_version()},
                 {"config", cfg.to_json()},
                 {"seeds", seeds},
                 {"artifacts", artifacts},
                 {"bounds", {{"snl_coefficient", 1.0}, {"qcrb_coefficient", qcrb_coefficient(cfg)}}},
                 {"particles", env.particles.size()},
                 {"final", {{"N", cfg.n_probes}, {"qloss", c.qloss.back()}, {"dispersion", c.dispersion.back()}}},
                 {"truths", truths}};

  if (!cfg.curve_out.empty()) {
    std::ofstream out(cfg.resolve(cfg.curve_out), std::ios::binary);
    if (!out) throw ConfigError("cannot write " + cfg.resolve(cfg.curve_out));
    write_curve_csv(c, out);
  }
  if (!cfg.summary_out.empty()) save_json(res.summary, cfg.resolve(cfg.summary_out));
  return res;
}

// ---------------------------------------------------------------------------
// Comparison

/// Joins curves on the probe axis. Columns: N, qloss_i per run, ratio_i =
/// qloss_i / qloss_1, bound_ratio_i = qloss_i * N / bound_coefficient.
inline std::string compare_runs(const std::vector<std::string>& paths, double bound_coefficient = 1.0) {
  if (paths.empty()) throw ConfigError("compare needs at least one curve");
  if (!(bound_coefficient > 0)) throw ConfigError("bound coefficient must be positive");
  std::vector<Curve> curves;
  for (const auto& p : paths) curves.push_back(read_curve_csv(p));
  for (std::size_t i = 1; i < curves.size(); ++i) {
    if (curves[i].probes != curves[0].probes) {
      throw AlignmentError("probe axis of " + paths[i] + " differs from " + paths[0]);
    }
  }
  const std::size_t k = curves.size();
  std::ostringstream out;
  out << "N";
  for (std::size_t i = 1; i <= k; ++i) out << ",qloss_" << i;
  for (std::size_t i = 1; i <= k; ++i) out << ",ratio_" << i;
  for (std::size_t i = 1; i <= k; ++i) out << ",bound_ratio_" << i;
  out << "\n";
  char buf[64];
  for (std::size_t m = 0; m < curves[0].probes.size(); ++m) {
    const int n = curves[0].probes[m];
    out << n;
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof buf, ",%.17g", c.qloss[m]);
      out << buf;
    }
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof buf, ",%.17g", c.qloss[m] / curves[0].qloss[m]);
      out << buf;
    }
    for (const auto& c : curves) {
      std::snprintf(buf, sizeof buf, ",%.17g", c.qloss[m] * n / bound_coefficient);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Policy training

struct PolicyTrainConfig {
  long episodes = 10000;
  int population = 100;
  double elite_fraction = 0.10;
  double sigma0 = 0.5;
  int episodes_per_candidate = 1;
  int hidden = 16;
  std::optional<int> horizon;  // probes per training episode; defaults to n_probes
  std::uint64_t seed = 0;
};

struct PolicyTrainResult {
  PolicyNetwork policy;
  CemResult cem;
  nlohmann::json document;  // policy JSON plus training metadata
};

/// CEM over the environment described by `cfg` (model, provider, truths).
inline PolicyTrainResult train_policy(const ExperimentConfig& cfg, const PolicyTrainConfig& tc) {
  ExperimentConfig env_cfg = cfg;
  env_cfg.strategy = "none";
  Environment env = build_environment(env_cfg);
  const int horizon = tc.horizon.value_or(cfg.n_probes);
  TruthSampler sampler = truth_sampler(cfg, env.particles);

  PolicyTrainResult out;
  std::visit(
      [&](const auto& source, const auto& provider) {
        EstimationEnv e(source, provider, env.particles, horizon, sampler, tc.hidden);
        CemState cem(e.parameter_count(), tc.sigma0, tc.population, tc.elite_fraction);
        cem.episodes_per_candidate = tc.episodes_per_candidate;
        out.cem = cem_train(e, cem, tc.episodes, tc.seed);
      },
      env.source, env.provider);

  out.policy = PolicyNetwork(cfg.dims(), tc.hidden);
  out.policy.set_weights(out.cem.weights);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : out.cem.history) {
    history.push_back({{"mean_reward", h.mean_reward},
                       {"elite_mean_reward", h.elite_mean_reward},
                       {"best_reward", h.best_reward},
                       {"max_sigma", h.max_sigma}});
  }
  out.document = out.policy.to_json();
  out.document["training"] = {{"episodes", tc.episodes},
                              {"population", tc.population},
                              {"elite_fraction", tc.elite_fraction},
                              {"sigma0", tc.sigma0},
                              {"episodes_per_candidate", tc.episodes_per_candidate},
                              {"horizon", horizon},
                              {"seed", tc.seed},
                              {"converged_early", out.cem.converged_early},
                              {"environment", cfg.to_json()},
                              {"history", history},
                              {"tool_version", tool_version()}};
  return out;
}

}  // namespace qmetro
