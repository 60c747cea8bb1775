#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "pdro/dataset.hpp"
#include "pdro/error.hpp"
#include "pdro/evaluation.hpp"
#include "pdro/learner.hpp"
#include "pdro/membership.hpp"
#include "pdro/mlp.hpp"
#include "pdro/synthetic.hpp"

namespace pdro {

struct ExperimentConfig {
  int scenario = 1;
  int n_total = 2000;
  double delta_true = 0.75;
  std::optional<SimplexVector> rho_true;  // empty: one Dirichlet draw per replication
  int reps = 200;
  int calibration_size = 25;
  std::vector<double> delta_grid = default_delta_grid();
  std::optional<double> h_override;
  double alpha_dirichlet = 1.0;
  std::uint64_t base_seed = 1;
  std::vector<std::string> methods = {"pdro", "dro", "naive"};
  std::string output_path;
  int n_test = 1000;
  int n_draws = 100;
  bool unequal = false;
  MlpConfig mlp;
  SoftmaxConfig membership;
  RhoConfig rho;

  static constexpr int kSources = ScenarioSpec::kNumSources;

  int per_domain() const { return n_total / (kSources + 1); }

  void validate() const {
    if (scenario < 1 || scenario > 4) throw ConfigError("scenario must be 1..4");
    if (n_total < kSources + 1 || n_total % (kSources + 1) != 0) {
      throw ConfigError("n_total=" + std::to_string(n_total) + " must be a positive multiple of " +
                        std::to_string(kSources + 1) + " (equal sizes for 3 sources and the target)");
    }
    if (!(delta_true >= 0.0 && delta_true <= 1.0)) throw ConfigError("delta_true must lie in [0, 1]");
    if (rho_true && rho_true->size() != kSources) throw ConfigError("rho_true must have 3 entries");
    if (reps < 1) throw ConfigError("reps must be at least 1");
    if (calibration_size < 2) throw ConfigError("calibration_size must be at least 2");
    if (delta_grid.empty()) throw ConfigError("delta_grid must be nonempty");
    for (double d : delta_grid) {
      if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("delta_grid entries must lie in [0, 1]");
    }
    if (h_override && !(*h_override > 0.0)) throw ConfigError("h must be positive");
    if (!(alpha_dirichlet > 0.0)) throw ConfigError("alpha must be positive");
    if (methods.empty()) throw ConfigError("at least one method is required");
    for (const auto& m : methods) {
      if (m != "pdro" && m != "dro" && m != "naive") throw ConfigError("unknown method '" + m + "'");
    }
    if (n_test < 1 || n_draws < 1) throw ConfigError("n_test and n_draws must be positive");
  }
};

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.scenario = j.value("scenario", c.scenario);
    c.n_total = j.value("n_total", c.n_total);
    c.delta_true = j.value("delta_true", c.delta_true);
    if (j.contains("rho_true")) {
      const auto& r = j.at("rho_true");
      if (r.is_string()) {
        if (r.get<std::string>() != "dirichlet") throw ConfigError("rho_true must be a 3-vector or \"dirichlet\"");
      } else {
        const auto v = r.get<std::vector<double>>();
        c.rho_true = SimplexVector(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
    }
    c.reps = j.value("reps", c.reps);
    c.calibration_size = j.value("calibration_size", c.calibration_size);
    c.delta_grid = j.value("delta_grid", c.delta_grid);
    if (j.contains("h") && !j.at("h").is_null()) c.h_override = j.at("h").get<double>();
    c.alpha_dirichlet = j.value("alpha_dirichlet", c.alpha_dirichlet);
    c.base_seed = j.value("base_seed", c.base_seed);
    c.methods = j.value("methods", c.methods);
    c.output_path = j.value("output_path", c.output_path);
    c.n_test = j.value("n_test", c.n_test);
    c.n_draws = j.value("n_draws", c.n_draws);
    c.unequal = j.value("unequal", c.unequal);
    c.mlp.epochs = j.value("mlp_epochs", c.mlp.epochs);
    c.mlp.adam.learning_rate = j.value("mlp_learning_rate", c.mlp.adam.learning_rate);
    c.mlp.hidden = j.value("mlp_hidden", c.mlp.hidden);
    c.membership.epochs = j.value("membership_epochs", c.membership.epochs);
    c.rho.steps = j.value("rho_steps", c.rho.steps);
    c.rho.adam.learning_rate = j.value("rho_learning_rate", c.rho.adam.learning_rate);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config JSON: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
  return splitmix64(splitmix64(seed) ^ (purpose * 0xd1342543de82ef95ULL));
}

/// Fits the per-source CATE networks and the membership model from labeled source rows.
inline NuisanceSet fit_nuisance(const Dataset& sources, const MlpConfig& mlp, const SoftmaxConfig& membership) {
  sources.validate();
  if (!sources.has_sources() || !sources.has_labels()) {
    throw InputError("source data needs a, y and s columns");
  }
  const int k = sources.num_sources();
  NuisanceSet out;
  for (int s = 1; s <= k; ++s) {
    const auto idx = sources.indices_with_source(s);
    if (idx.empty()) throw ClassCoverageError("source " + std::to_string(s) + " has no rows");
    MlpConfig cfg = mlp;
    cfg.seed = derive_seed(mlp.seed, static_cast<std::uint64_t>(s));
    out.cates.push_back(estimate_source_cate(sources.subset(idx), cfg));
  }
  out.membership = fit_softmax(sources.X, sources.S, k, membership);
  return out;
}

struct MethodResult {
  std::string method;
  double policy_value = 0.0;
  double worst_case_value = 0.0;
  std::optional<double> delta_hat;
  std::optional<double> bandwidth;
};

struct ReplicationResult {
  int rep = 0;
  std::uint64_t seed = 0;
  std::vector<MethodResult> methods;
};

/// One end-to-end replication: simulate, fit nuisances, fit each method, evaluate.
inline ReplicationResult run_replication(const ExperimentConfig& config, int rep) {
  const ScenarioSpec spec = scenario(config.scenario);
  const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(rep);
  const int per = config.per_domain();

  GenOptions gen;
  gen.sampling = config.unequal ? SourceSampling::kNatural : SourceSampling::kEqualQuota;
  const Dataset sources = gen_source(spec, per, derive_seed(seed, 1), gen);

  const SimplexVector rho_target =
      config.rho_true ? *config.rho_true
                      : sample_dirichlet(ExperimentConfig::kSources, config.alpha_dirichlet, derive_seed(seed, 2));
  const Dataset target = gen_target(spec, per, config.delta_true, rho_target, derive_seed(seed, 3), false);
  const Dataset calibration =
      gen_target(spec, config.calibration_size, config.delta_true, rho_target, derive_seed(seed, 4), true);

  MlpConfig mlp = config.mlp;
  mlp.seed = derive_seed(seed, 5);
  const NuisanceSet nuisance = fit_nuisance(sources, mlp, config.membership);
  const Eigen::MatrixXd pooled = stack_rows({&sources.X, &target.X});
  const ScoreInputs pooled_in = evaluate_nuisance(nuisance, pooled);

  const WorstCaseEvaluator eval = WorstCaseEvaluator::sample(spec, config.delta_true, config.n_test, config.n_draws,
                                                             config.alpha_dirichlet, derive_seed(seed, 6));
  const Eigen::VectorXd realized_cate = eval.cate(rho_target);

  ReplicationResult out{rep, seed, {}};
  auto record = [&](const std::string& name, const std::vector<int>& d, std::optional<double> delta_hat,
                    std::optional<double> h) {
    out.methods.push_back({name, policy_value_from_decisions(d, realized_cate), eval.worst(d), delta_hat, h});
  };

  for (const auto& method : config.methods) {
    if (method == "pdro") {
      const CalibrationInputs cal = evaluate_calibration(nuisance, calibration);
      DeltaTuning tuned = tune_delta(cal, pooled_in, config.h_override, config.delta_grid, config.rho);
      const PdroPolicy policy{tuned.delta, tuned.rho, nuisance};
      record(method, policy.decisions(eval.X_test()), tuned.delta, tuned.bandwidth);
    } else if (method == "dro") {
      const double h = config.h_override ? *config.h_override : default_bandwidth(pooled_in, 0.0);
      const RhoFit fit = fit_rho(pooled_in, 0.0, h, config.rho);
      const PdroPolicy policy{0.0, fit.rho, nuisance};
      record(method, policy.decisions(eval.X_test()), 0.0, h);
    } else {
      std::vector<long long> sizes;
      for (int s = 1; s <= nuisance.num_sources(); ++s) {
        sizes.push_back(static_cast<long long>(sources.indices_with_source(s).size()));
      }
      const NaivePolicy policy = naive_policy(nuisance, sizes);
      record(method, policy.decisions(eval.X_test()), std::nullopt, std::nullopt);
    }
  }
  return out;
}

/// Runs replications on `jobs` worker threads; results come back in replication order.
inline std::vector<ReplicationResult> run_replications(const ExperimentConfig& config, int jobs = 1) {
  config.validate();
  std::vector<ReplicationResult> results(static_cast<std::size_t>(config.reps));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(config.reps));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < config.reps; r = next++) {
      try {
        results[static_cast<std::size_t>(r)] = run_replication(config, r);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    }
  };
  const int n_threads = std::clamp(jobs, 1, config.reps);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

inline void write_results_csv(std::ostream& out, const ExperimentConfig& config,
                              const std::vector<ReplicationResult>& results) {
  out << "scenario,method,n,delta_true,rep,policy_value,worst_case_value,seed,"
         "delta_hat,h,alpha,n_draws,n_test,calibration_size\n";
  for (const auto& r : results) {
    for (const auto& m : r.methods) {
      out << config.scenario << ',' << m.method << ',' << config.n_total << ',' << format_double(config.delta_true)
          << ',' << r.rep << ',' << format_double(m.policy_value) << ',' << format_double(m.worst_case_value) << ','
          << r.seed << ',' << (m.delta_hat ? format_double(*m.delta_hat) : "") << ','
          << (m.bandwidth ? format_double(*m.bandwidth) : "") << ',' << format_double(config.alpha_dirichlet) << ','
          << config.n_draws << ',' << config.n_test << ',' << config.calibration_size << '\n';
    }
  }
}

struct MethodSummary {
  std::string method;
  int count = 0;
  double worst_mean = 0.0;
  double worst_sd = 0.0;
  double value_mean = 0.0;
  double value_sd = 0.0;
};

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

inline std::vector<MethodSummary> summarize(const ExperimentConfig& config,
                                            const std::vector<ReplicationResult>& results) {
  std::vector<MethodSummary> out;
  for (const auto& method : config.methods) {
    std::vector<double> worst, value;
    for (const auto& r : results) {
      for (const auto& m : r.methods) {
        if (m.method == method) {
          worst.push_back(m.worst_case_value);
          value.push_back(m.policy_value);
        }
      }
    }
    const auto [wm, ws] = mean_sd(worst);
    const auto [vm, vs] = mean_sd(value);
    out.push_back({method, static_cast<int>(worst.size()), wm, ws, vm, vs});
  }
  return out;
}

inline void print_summary(std::ostream& out, const ExperimentConfig& config,
                          const std::vector<MethodSummary>& summary) {
  out << "scenario " << config.scenario << ", n=" << config.n_total << ", delta_true="
      << format_double(config.delta_true) << ", reps=" << config.reps << "\n";
  out << "method  worst-case PV mean (sd)   realized PV mean (sd)\n";
  char line[160];
  for (const auto& s : summary) {
    std::snprintf(line, sizeof(line), "%-6s  %8.3f (%.3f)          %8.3f (%.3f)\n", s.method.c_str(), s.worst_mean,
                  s.worst_sd, s.value_mean, s.value_sd);
    out << line;
  }
}

}  // namespace pdro
