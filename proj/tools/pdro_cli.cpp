#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdro/dataset.hpp"
#include "pdro/error.hpp"
#include "pdro/evaluation.hpp"
#include "pdro/experiment.hpp"
#include "pdro/learner.hpp"
#include "pdro/membership.hpp"
#include "pdro/mlp.hpp"
#include "pdro/synthetic.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw pdro::ConfigError("cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw pdro::ConfigError("empty number list");
  return out;
}

std::vector<std::string> parse_word_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

pdro::SimplexVector parse_rho(const std::string& text) {
  const auto v = parse_real_list(text);
  try {
    return pdro::SimplexVector(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  } catch (const pdro::ParameterError& e) {
    throw pdro::ConfigError(std::string("rho: ") + e.what());
  }
}

// Writes to the named file, or stdout for "" and "-".
template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw pdro::InputError("cannot open '" + path + "' for writing");
  fn(out);
  if (!out) throw pdro::InputError("failed writing '" + path + "'");
}

pdro::Dataset read_csv(const std::string& path, pdro::csv::Requirements req) {
  if (path == "-") return pdro::csv::read(std::cin, req);
  return pdro::csv::read_file(path, req);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw pdro::InputError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw pdro::InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

struct TrainingFlags {
  int mlp_epochs = pdro::MlpConfig{}.epochs;
  double mlp_lr = pdro::MlpConfig{}.adam.learning_rate;
  int membership_epochs = pdro::SoftmaxConfig{}.epochs;
  int rho_steps = pdro::RhoConfig{}.steps;
  std::uint64_t seed = 1;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--mlp-epochs", mlp_epochs, "Adam epochs for each outcome network")->capture_default_str();
    cmd->add_option("--mlp-learning-rate", mlp_lr, "Adam step size for the outcome networks")->capture_default_str();
    cmd->add_option("--membership-epochs", membership_epochs, "Adam epochs for the membership model")
        ->capture_default_str();
    cmd->add_option("--rho-steps", rho_steps, "Adam steps for the rho fit")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for network initialization")->capture_default_str();
  }

  pdro::MlpConfig mlp() const {
    pdro::MlpConfig c;
    c.epochs = mlp_epochs;
    c.adam.learning_rate = mlp_lr;
    c.seed = seed;
    return c;
  }
  pdro::SoftmaxConfig membership() const {
    pdro::SoftmaxConfig c;
    c.epochs = membership_epochs;
    return c;
  }
  pdro::RhoConfig rho() const {
    pdro::RhoConfig c;
    c.steps = rho_steps;
    return c;
  }
};

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  int scenario = 1;
  std::string kind = "source";
  int n = 500;
  double delta_true = 0.75;
  std::string rho = "uniform";
  double alpha = 1.0;
  std::uint64_t seed = 1;
  bool unequal = false;
  std::string out;
};

void run_simulate(const SimulateArgs& args) {
  const pdro::ScenarioSpec spec = pdro::scenario(args.scenario);
  pdro::Dataset data;
  if (args.kind == "source") {
    pdro::GenOptions opt;
    opt.sampling = args.unequal ? pdro::SourceSampling::kNatural : pdro::SourceSampling::kEqualQuota;
    data = pdro::gen_source(spec, args.n, args.seed, opt);
  } else {
    pdro::SimplexVector rho = pdro::SimplexVector::uniform(pdro::ScenarioSpec::kNumSources);
    if (args.rho == "dirichlet") {
      rho = pdro::sample_dirichlet(pdro::ScenarioSpec::kNumSources, args.alpha, pdro::derive_seed(args.seed, 2));
    } else if (args.rho != "uniform") {
      rho = parse_rho(args.rho);
    }
    data = pdro::gen_target(spec, args.n, args.delta_true, rho, args.seed, args.kind == "calibration");
    if (args.kind == "target") std::cerr << "note: target covariates only (no a, y columns)\n";
  }
  with_output(args.out, [&](std::ostream& os) { pdro::csv::write(os, data); });
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string train;
  std::string target;
  std::string calibration;
  std::optional<double> delta;
  std::optional<double> h;
  std::string delta_grid;
  std::string out;
  TrainingFlags training;
};

void run_fit(const FitArgs& args) {
  const pdro::Dataset train = read_csv(args.train, {.labels = true, .sources = true});
  if (train.rows() == 0) throw pdro::InputError("training file has no rows");
  const pdro::NuisanceSet nuisance = pdro::fit_nuisance(train, args.training.mlp(), args.training.membership());

  Eigen::MatrixXd pooled = train.X;
  if (!args.target.empty()) {
    const pdro::Dataset target = read_csv(args.target, {});
    if (target.dim() != train.dim() && target.rows() > 0) {
      throw pdro::DimensionError("target covariates have " + std::to_string(target.dim()) + " columns, training has " +
                                 std::to_string(train.dim()));
    }
    pooled = pdro::stack_rows({&train.X, &target.X});
  }

  pdro::PdroPolicy policy;
  policy.nuisance = nuisance;
  if (!args.calibration.empty() && !args.delta) {
    const pdro::Dataset cal = read_csv(args.calibration, {.labels = true});
    const auto grid = args.delta_grid.empty() ? pdro::default_delta_grid() : parse_real_list(args.delta_grid);
    const pdro::DeltaTuning tuned = pdro::tune_delta(cal, nuisance, pooled, args.h, grid, args.training.rho());
    policy.delta = tuned.delta;
    policy.rho = tuned.rho;
    std::cerr << "selected delta=" << pdro::format_double(tuned.delta) << " h=" << pdro::format_double(tuned.bandwidth)
              << "\n";
  } else {
    policy.delta = args.delta.value_or(0.5);
    policy.rho = pdro::fit_rho(pooled, nuisance, policy.delta, args.h, args.training.rho()).rho;
  }
  with_output(args.out, [&](std::ostream& os) { os << pdro::to_json(policy).dump(2) << "\n"; });
}

// ---------------------------------------------------------------- score

void run_score(const std::string& policy_path, const std::string& input, const std::string& out) {
  const pdro::PdroPolicy policy = pdro::policy_from_json(read_json(policy_path));
  const pdro::Dataset data = read_csv(input, {});
  Eigen::VectorXd scores(0);
  if (data.rows() > 0) {
    if (data.dim() != policy.input_dim()) {
      throw pdro::DimensionError("policy expects " + std::to_string(policy.input_dim()) + " covariates, file has " +
                                 std::to_string(data.dim()));
    }
    scores = policy.scores(data.X);
  }
  with_output(out, [&](std::ostream& os) {
    os << "decision,score\n";
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      os << (scores[i] > 0.0 ? 1 : 0) << ',' << pdro::format_double(scores[i]) << '\n';
    }
  });
}

// ---------------------------------------------------------------- dr-eval

struct DrArgs {
  std::string policy;
  std::string data;
  std::string propensity = "constant:0.5";
  TrainingFlags training;
};

void run_dr_eval(const DrArgs& args) {
  const pdro::PdroPolicy policy = pdro::policy_from_json(read_json(args.policy));
  const pdro::Dataset data = read_csv(args.data, {.labels = true});
  if (data.rows() == 0) throw pdro::InputError("labeled file has no rows");
  if (data.dim() != policy.input_dim()) {
    throw pdro::DimensionError("policy expects " + std::to_string(policy.input_dim()) + " covariates, file has " +
                               std::to_string(data.dim()));
  }

  Eigen::VectorXd pi_treated;
  double clip_fraction = 0.0;
  if (args.propensity == "logistic") {
    const pdro::PropensityModel model = pdro::fit_propensity(data);
    pi_treated = model.treated(data.X);
    clip_fraction = model.clip_fraction(data.X);
  } else if (args.propensity.rfind("constant:", 0) == 0) {
    double p = 0.0;
    try {
      p = std::stod(args.propensity.substr(9));
    } catch (const std::exception&) {
      throw pdro::ConfigError("bad propensity '" + args.propensity + "'");
    }
    if (!(p > 0.0 && p < 1.0)) throw pdro::ConfigError("constant propensity must lie in (0, 1)");
    pi_treated = Eigen::VectorXd::Constant(data.rows(), p);
  } else {
    throw pdro::ConfigError("propensity must be constant:<p> or logistic");
  }

  const pdro::SourceCate outcome = pdro::estimate_source_cate(data, args.training.mlp());
  const Eigen::VectorXd f1 = outcome.f1.predict(data.X);
  const Eigen::VectorXd f0 = outcome.f0.predict(data.X);
  Eigen::VectorXd pi_obs(data.rows());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    pi_obs[i] = data.A[static_cast<std::size_t>(i)] == 1 ? pi_treated[i] : 1.0 - pi_treated[i];
  }
  const std::vector<int> d = policy.decisions(data.X);
  const double value = pdro::doubly_robust_value(d, data.A, data.Y, pi_obs, f1, f0);
  double treated = 0.0;
  for (int v : d) treated += v;

  std::cout << "dr_value=" << pdro::format_double(value) << "\n";
  std::cout << "n=" << data.rows() << "\n";
  std::cout << "treated_fraction=" << pdro::format_double(treated / static_cast<double>(d.size())) << "\n";
  std::cout << "propensity=" << args.propensity << "\n";
  std::cout << "clip_fraction=" << pdro::format_double(clip_fraction) << "\n";
}

// ---------------------------------------------------------------- run-experiment

struct ExperimentArgs {
  std::string config;
  int scenario = 0;
  int n_total = 0;
  double delta_true = 0.0;
  std::string rho_true;
  int reps = 0;
  int calibration_size = 0;
  std::string delta_grid;
  double h = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::string methods;
  std::string out;
  int n_test = 0;
  int n_draws = 0;
  bool unequal = false;
  int mlp_epochs = 0;
  int jobs = 1;
};

void run_experiment_cmd(const ExperimentArgs& a, const CLI::App& cmd) {
  pdro::ExperimentConfig c = a.config.empty() ? pdro::ExperimentConfig{} : pdro::config_from_json(read_json(a.config));
  auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
  if (given("--scenario")) c.scenario = a.scenario;
  if (given("--n")) c.n_total = a.n_total;
  if (given("--delta-true")) c.delta_true = a.delta_true;
  if (given("--rho-true")) {
    if (a.rho_true == "dirichlet") {
      c.rho_true.reset();
    } else {
      c.rho_true = parse_rho(a.rho_true);
    }
  }
  if (given("--reps")) c.reps = a.reps;
  if (given("--calibration-size")) c.calibration_size = a.calibration_size;
  if (given("--delta-grid")) c.delta_grid = parse_real_list(a.delta_grid);
  if (given("--bandwidth")) c.h_override = a.h;
  if (given("--alpha")) c.alpha_dirichlet = a.alpha;
  if (given("--seed")) c.base_seed = a.seed;
  if (given("--methods")) c.methods = parse_word_list(a.methods);
  if (given("--out")) c.output_path = a.out;
  if (given("--n-test")) c.n_test = a.n_test;
  if (given("--n-draws")) c.n_draws = a.n_draws;
  if (given("--unequal")) c.unequal = a.unequal;
  if (given("--mlp-epochs")) c.mlp.epochs = a.mlp_epochs;
  c.validate();

  const auto results = pdro::run_replications(c, a.jobs);
  if (c.output_path.empty()) {
    pdro::write_results_csv(std::cout, c, results);
    pdro::print_summary(std::cerr, c, pdro::summarize(c, results));
  } else {
    with_output(c.output_path, [&](std::ostream& os) { pdro::write_results_csv(os, c, results); });
    pdro::print_summary(std::cout, c, pdro::summarize(c, results));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prior-informed distributionally robust treatment rules"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset as CSV");
  simulate->add_option("--scenario", sim.scenario, "Scenario 1-4")->capture_default_str();
  simulate->add_option("--kind", sim.kind, "source, target or calibration")
      ->check(CLI::IsMember({"source", "target", "calibration"}))
      ->capture_default_str();
  simulate->add_option("--n", sim.n, "Rows per source (source) or total rows (target/calibration)")
      ->capture_default_str();
  simulate->add_option("--delta-true", sim.delta_true, "Target mixing parameter")->capture_default_str();
  simulate->add_option("--rho", sim.rho, "Target rho: uniform, dirichlet, or comma list")->capture_default_str();
  simulate->add_option("--alpha", sim.alpha, "Dirichlet concentration for --rho dirichlet")->capture_default_str();
  simulate->add_option("--seed", sim.seed)->capture_default_str();
  simulate->add_flag("--unequal", sim.unequal, "Natural categorical source sizes instead of equal quotas");
  simulate->add_option("-o,--out", sim.out, "Output CSV (default stdout)");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit nuisances and a policy; write policy JSON");
  fit_cmd->add_option("train", fit.train, "Labeled source CSV with an s column")->required();
  fit_cmd->add_option("--target", fit.target, "Unlabeled target covariates pooled into the rho fit");
  fit_cmd->add_option("--calibration", fit.calibration, "Labeled target rows used to tune delta");
  fit_cmd->add_option("--delta", fit.delta, "Fixed delta; skips tuning (default 0.5 without calibration data)");
  fit_cmd->add_option("--bandwidth", fit.h, "Surrogate bandwidth (default from the pooled scores)");
  fit_cmd->add_option("--delta-grid", fit.delta_grid, "Comma-separated delta grid");
  fit_cmd->add_option("-o,--out", fit.out, "Output JSON (default stdout)");
  fit.training.add_to(fit_cmd);

  std::string score_policy, score_input = "-", score_out;
  auto* score = app.add_subcommand("score", "Score covariates with a fitted policy");
  score->add_option("policy", score_policy, "Policy JSON")->required();
  score->add_option("input", score_input, "Covariate CSV (default stdin)");
  score->add_option("-o,--out", score_out, "Output CSV (default stdout)");

  DrArgs dr;
  auto* dr_cmd = app.add_subcommand("dr-eval", "Doubly robust value of a policy on labeled data");
  dr_cmd->add_option("policy", dr.policy, "Policy JSON")->required();
  dr_cmd->add_option("data", dr.data, "Labeled CSV with a and y columns")->required();
  dr_cmd->add_option("--propensity", dr.propensity, "constant:<p> or logistic")->capture_default_str();
  dr.training.add_to(dr_cmd);

  ExperimentArgs ex;
  auto* exp = app.add_subcommand("run-experiment", "Run the simulation study");
  exp->add_option("--config", ex.config, "JSON config; flags override its fields");
  exp->add_option("--scenario", ex.scenario);
  exp->add_option("--n", ex.n_total, "Total sample size, split equally over sources and target");
  exp->add_option("--delta-true", ex.delta_true);
  exp->add_option("--rho-true", ex.rho_true, "Comma list or dirichlet");
  exp->add_option("--reps", ex.reps);
  exp->add_option("--calibration-size", ex.calibration_size);
  exp->add_option("--delta-grid", ex.delta_grid, "Comma-separated delta grid");
  exp->add_option("--bandwidth", ex.h, "Fixed surrogate bandwidth");
  exp->add_option("--alpha", ex.alpha, "Dirichlet concentration");
  exp->add_option("--seed", ex.seed, "Base seed; replication r uses seed + r");
  exp->add_option("--methods", ex.methods, "Comma list from pdro,dro,naive");
  exp->add_option("-o,--out", ex.out, "Results CSV (default stdout)");
  exp->add_option("--n-test", ex.n_test);
  exp->add_option("--n-draws", ex.n_draws);
  exp->add_flag("--unequal", ex.unequal);
  exp->add_option("--mlp-epochs", ex.mlp_epochs);
  exp->add_option("--jobs", ex.jobs, "Worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*simulate) run_simulate(sim);
    if (*fit_cmd) run_fit(fit);
    if (*score) run_score(score_policy, score_input, score_out);
    if (*dr_cmd) run_dr_eval(dr);
    if (*exp) run_experiment_cmd(ex, *exp);
  } catch (const pdro::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const pdro::ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const pdro::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const pdro::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
