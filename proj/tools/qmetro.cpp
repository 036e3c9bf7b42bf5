// qmetro command line: data generation, training, estimation runs.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qmetro/qmetro.hpp"

namespace {

using namespace qmetro;

struct GenerateArgs {
  double lo = -std::numbers::pi;
  double hi = std::numbers::pi;
  int n = 20;
  int dims = 0;
  int r = 1000;
  std::uint64_t seed = 0;
  std::string model = "mz";
  std::string quarter = "coupler";
  std::vector<int> modes = {2, 3};
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  const int dims = a.dims ? a.dims : (a.model == "mz" ? 1 : 3);
  ParameterGrid grid(a.lo, a.hi, a.n, dims);
  if (a.r < 1) throw ConfigError("r must be >= 1");
  GridDataset ds;
  if (a.model == "mz") {
    if (dims != 1) throw ConfigError("mz model is single-phase; use --dims 1");
    ds = sample_grid_dataset(MzModel{}, grid, a.r, a.seed);
  } else if (a.model == "fourarm") {
    if (dims != 3) throw ConfigError("fourarm model has three phases; use --dims 3");
    if (a.modes.size() != 2) throw ConfigError("--modes needs two entries");
    QuarterKind kind = a.quarter == "dft" ? QuarterKind::dft : QuarterKind::coupler;
    ds = sample_grid_dataset(FourArmModel({a.modes[0], a.modes[1]}, kind), grid, a.r, a.seed);
  } else {
    throw ConfigError("unknown model '" + a.model + "'");
  }
  save_dataset(ds, a.out);
  std::printf("wrote %zu points x %d outcomes (r=%d) to %s\n", grid.size(), ds.outcomes, a.r,
              a.out.c_str());
  return 0;
}

struct TrainNnArgs {
  std::string data;
  TrainConfig cfg;
  std::string out;
  std::string report;
};

int cmd_train_nn(const TrainNnArgs& a) {
  GridDataset ds = load_dataset(a.data);
  TrainReport rep;
  PosteriorNetwork net = train_posterior_network(ds, a.cfg, &rep);
  auto doc = net.to_json();
  doc["training"] = a.cfg.to_json();
  doc["training"]["dataset_fnv1a64"] = fnv1a_file(a.data);
  doc["training"]["final_loss"] = rep.epoch_loss.empty() ? rep.initial_loss : rep.epoch_loss.back();
  doc["training"]["steps"] = rep.steps;
  doc["training"]["tool_version"] = tool_version();
  save_json(doc, a.out);
  if (!a.report.empty()) {
    std::ofstream r(a.report);
    if (!r) throw ConfigError("cannot write " + a.report);
    r << "epoch,loss\n0," << rep.initial_loss << "\n";
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e) r << e + 1 << "," << rep.epoch_loss[e] << "\n";
  }
  std::printf("loss %.6f -> %.6f over %ld steps; wrote %s\n", rep.initial_loss,
              rep.epoch_loss.empty() ? rep.initial_loss : rep.epoch_loss.back(),
              static_cast<long>(rep.steps), a.out.c_str());
  return 0;
}

struct TrainPolicyArgs {
  std::string env;
  PolicyTrainConfig tc;
  int horizon = 0;
  std::string out;
};

int cmd_train_policy(TrainPolicyArgs a) {
  ExperimentConfig cfg = load_experiment_config(a.env);
  if (a.horizon > 0) a.tc.horizon = a.horizon;
  auto res = train_policy(cfg, a.tc);
  save_json(res.document, a.out);
  const auto& h = res.cem.history;
  std::printf("%zu CEM iterations, elite reward %.6f -> %.6f; wrote %s\n", h.size(),
              h.front().elite_mean_reward, h.back().elite_mean_reward, a.out.c_str());
  return 0;
}

int cmd_run(const std::string& config, const std::string& curve, const std::string& summary) {
  ExperimentConfig cfg = load_experiment_config(config);
  if (!curve.empty()) cfg.curve_out = curve;
  if (!summary.empty()) cfg.summary_out = summary;
  auto res = run_experiment(cfg);
  std::printf("N=%d qloss %.6g (dispersion %.3g)\n", cfg.n_probes, res.curve.qloss.back(),
              res.curve.dispersion.back());
  if (cfg.curve_out.empty()) write_curve_csv(res.curve, std::cout);
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths, double bound, const std::string& out) {
  std::string table = compare_runs(paths, bound);
  if (out.empty()) {
    std::cout << table;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + out);
    f << table;
  }
  return 0;
}

int cmd_qcrb(const std::vector<int>& modes, const std::string& quarter, double step) {
  if (modes.size() != 2) throw ConfigError("--modes needs two entries");
  QuarterKind kind = quarter == "dft" ? QuarterKind::dft : QuarterKind::coupler;
  double full = qcrb_bound({modes[0], modes[1]}, step, kind);
  double half = qcrb_bound({modes[0], modes[1]}, step / 2, kind);
  std::printf("qcrb_coefficient %.10f\nstep %.3g -> %.10f, step %.3g -> %.10f\n", full, step, full,
              step / 2, half);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qmetro: model-free adaptive Bayesian phase estimation"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-grid", "sample r outcomes at every grid point");
  g->add_option("--lo", gen.lo, "lower grid edge")->capture_default_str();
  g->add_option("--hi", gen.hi, "upper grid edge")->capture_default_str();
  g->add_option("--n", gen.n, "points per axis")->capture_default_str();
  g->add_option("--dims", gen.dims, "phases (default from model)");
  g->add_option("--r", gen.r, "events per grid point")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--model", gen.model)->check(CLI::IsMember({"mz", "fourarm"}))->capture_default_str();
  g->add_option("--quarter", gen.quarter)->check(CLI::IsMember({"coupler", "dft"}))->capture_default_str();
  g->add_option("--modes", gen.modes, "input modes of the photon pair")->delimiter(',');
  g->add_option("--out", gen.out)->required();

  TrainNnArgs tn;
  auto* t = app.add_subcommand("train-nn", "train the posterior network on a grid dataset");
  t->add_option("--data", tn.data)->required()->check(CLI::ExistingFile);
  t->add_option("--epochs", tn.cfg.epochs)->capture_default_str();
  t->add_option("--batch", tn.cfg.batch)->capture_default_str();
  t->add_option("--lr", tn.cfg.adam.learning_rate)->capture_default_str();
  t->add_option("--hidden", tn.cfg.hidden, "hidden layer widths")->delimiter(',');
  t->add_option("--seed", tn.cfg.seed)->capture_default_str();
  t->add_option("--report", tn.report, "per-epoch loss CSV");
  t->add_option("--out", tn.out)->required();

  TrainPolicyArgs tp;
  auto* p = app.add_subcommand("train-policy", "cross-entropy-method training of the feedback policy");
  p->add_option("--env", tp.env, "experiment config describing the environment")->required();
  p->add_option("--episodes", tp.tc.episodes)->capture_default_str();
  p->add_option("--population", tp.tc.population)->capture_default_str();
  p->add_option("--elite-frac", tp.tc.elite_fraction)->capture_default_str();
  p->add_option("--sigma0", tp.tc.sigma0)->capture_default_str();
  p->add_option("--episodes-per-candidate", tp.tc.episodes_per_candidate)->capture_default_str();
  p->add_option("--hidden", tp.tc.hidden, "hidden layer width")->capture_default_str();
  p->add_option("--horizon", tp.horizon, "probes per training episode (default n_probes)");
  p->add_option("--seed", tp.tc.seed)->capture_default_str();
  p->add_option("--out", tp.out)->required();

  std::string run_config;
  std::string run_curve;
  std::string run_summary;
  auto* r = app.add_subcommand("run-estimation", "run an experiment config");
  r->add_option("--config", run_config)->required();
  r->add_option("--curve", run_curve, "override outputs.curve");
  r->add_option("--summary", run_summary, "override outputs.summary");

  std::vector<std::string> cmp_paths;
  double cmp_bound = 1.0;
  std::string cmp_out;
  auto* c = app.add_subcommand("compare", "join curve CSVs on the probe axis");
  c->add_option("curves", cmp_paths)->required();
  c->add_option("--bound", cmp_bound, "bound coefficient b in b/N")->capture_default_str();
  c->add_option("--out", cmp_out);

  std::vector<int> q_modes = {2, 3};
  std::string q_quarter = "coupler";
  double q_step = 1e-6;
  auto* q = app.add_subcommand("qcrb", "quantum Cramer-Rao coefficient Tr F^-1");
  q->add_option("--modes", q_modes)->delimiter(',');
  q->add_option("--quarter", q_quarter)->check(CLI::IsMember({"coupler", "dft"}))->capture_default_str();
  q->add_option("--step", q_step)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train_nn(tn);
    if (*p) return cmd_train_policy(tp);
    if (*r) return cmd_run(run_config, run_curve, run_summary);
    if (*c) return cmd_compare(cmp_paths, cmp_bound, cmp_out);
    if (*q) return cmd_qcrb(q_modes, q_quarter, q_step);
  } catch (const qmetro::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const qmetro::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  return 2;
}
