// Command-line front end: dataset generation, EM fitting, forecasting,
// spectrum export, and closed-loop MPC against the bundled plants.

#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "koopgen/em.hpp"
#include "koopgen/io.hpp"
#include "koopgen/mpc.hpp"
#include "koopgen/spectral.hpp"
#include "koopgen/systems.hpp"
#include "koopgen/version.hpp"

using nlohmann::json;
using namespace koopgen;

namespace {

bool g_quiet = false;

void info(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << '\n';
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw std::invalid_argument(where + ": unknown key '" + item.key() + "'");
  }
}

json load_config(const std::string& path) { return json::parse(read_file(path)); }

std::string stem_of(const std::string& path) {
  std::string s = path;
  if (s.size() > 3 && s.compare(s.size() - 3, 3, ".gz") == 0)
    s = s.substr(0, s.size() - 3);
  const auto dot = s.rfind('.');
  return dot == std::string::npos ? s : s.substr(0, dot);
}

Eigen::VectorXd json_vector(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw std::invalid_argument(where + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = arr[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Eigen::MatrixXd json_matrix(const json& rows, const std::string& where) {
  if (!rows.is_array() || rows.empty())
    throw std::invalid_argument(where + ": expected a nonempty array of rows");
  const Eigen::Index nr = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index nc = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(nr, nc);
  for (Eigen::Index i = 0; i < nr; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != nc)
      throw std::invalid_argument(where + ": ragged rows");
    for (Eigen::Index j = 0; j < nc; ++j)
      m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const std::string& config_path, const std::string& out,
                 std::optional<std::uint64_t> seed_override) {
  const json cfg = load_config(config_path);
  if (!cfg.contains("protocol"))
    throw std::invalid_argument("generate config: missing 'protocol'");
  const std::string protocol = cfg["protocol"].get<std::string>();
  std::uint64_t seed = cfg.value("seed", 0);
  if (seed_override) seed = *seed_override;

  Dataset dataset;
  std::string subset = cfg.value("subset", "train");
  if (protocol == "slow_manifold") {
    reject_unknown_keys(cfg, {"protocol", "seed", "subset"}, "generate config");
    const auto split = dataset_protocol_slow_manifold(seed);
    dataset = subset == "test" ? split.test : split.train;
  } else if (protocol == "duffing") {
    reject_unknown_keys(cfg, {"protocol", "seed", "subset"}, "generate config");
    const auto split = dataset_protocol_duffing(seed);
    dataset = subset == "test" ? split.test : split.train;
  } else if (protocol == "scalar_bilinear") {
    reject_unknown_keys(cfg, {"protocol", "seed", "dt", "t_final"},
                        "generate config");
    const double dt = cfg.value("dt", 1e-4);
    const double t_final = cfg.value("t_final", 1.0);
    const int steps = static_cast<int>(std::llround(t_final / dt));
    dataset.dt = dt;
    dataset.q = 1;
    dataset.p = 1;
    for (double u_level : {-1.0, -3.0, 1.0}) {
      ScalarBilinearPlant plant(dt, 1.0);
      Trajectory traj;
      traj.inputs = Eigen::MatrixXd::Constant(1, steps, u_level);
      traj.outputs.resize(1, steps + 1);
      traj.outputs(0, 0) = plant.observe()(0);
      for (int l = 0; l < steps; ++l)
        traj.outputs(0, l + 1) = plant.step(traj.inputs.col(l))(0);
      dataset.trajectories.push_back(std::move(traj));
    }
  } else if (protocol == "custom") {
    reject_unknown_keys(cfg,
                        {"protocol", "seed", "model", "M", "L", "z0_std",
                         "input_hold", "input_sigma"},
                        "generate config");
    if (!cfg.contains("model"))
      throw std::invalid_argument("generate config: custom protocol needs 'model'");
    const ModelParams params = model_from_json(cfg["model"].dump());
    params.validate();
    const int m_count = cfg.value("M", 10);
    const int len = cfg.value("L", 100);
    const double z0_std = cfg.value("z0_std", 1.0);
    const double hold = cfg.value("input_hold", 10.0 * params.dt);
    const double sigma = cfg.value("input_sigma", 1.0);
    dataset.dt = params.dt;
    dataset.q = params.q;
    dataset.p = params.p;
    for (int m = 0; m < m_count; ++m) {
      std::mt19937_64 rng(split_seed(seed, static_cast<std::uint64_t>(m)));
      std::normal_distribution<double> gauss(0.0, 1.0);
      Eigen::VectorXd z0(params.n);
      for (int i = 0; i < params.n; ++i) z0(i) = z0_std * gauss(rng);
      Eigen::MatrixXd inputs(params.q, len);
      if (params.q > 0) {
        const auto sig = input_piecewise_constant(params.q, hold, sigma, rng(),
                                                  len * params.dt);
        inputs = sig.sample(len, params.dt);
      }
      dataset.trajectories.push_back(
          simulate(params, z0, inputs, rng()).trajectory);
    }
  } else {
    throw std::invalid_argument("generate: unknown protocol '" + protocol + "'");
  }

  save_dataset(dataset, out);
  json manifest;
  manifest["protocol"] = protocol;
  manifest["seed"] = seed;
  manifest["subset"] = subset;
  manifest["library_version"] = kVersion;
  write_file(out + ".manifest.json", manifest.dump(2) + "\n");
  info("wrote " + out + " (" + std::to_string(dataset.size()) + " trajectories)");
  return 0;
}

// ---------------------------------------------------------------------------
// fit

int cmd_fit(const std::string& data_path, const std::string& config_path,
            const std::string& out, int threads,
            std::optional<std::uint64_t> seed_override) {
  const json cfg = load_config(config_path);
  reject_unknown_keys(cfg,
                      {"dims", "restarts", "seed", "max_iters", "rel_tol", "init",
                       "edmd_degree", "edmd_box_lo", "edmd_box_hi", "input_lo",
                       "input_hi"},
                      "fit config");
  const Dataset dataset = load_dataset(data_path);

  FitConfig fit_config;
  fit_config.max_iters = cfg.value("max_iters", 500);
  fit_config.rel_tol = cfg.value("rel_tol", 1e-7);
  fit_config.threads = threads;
  const std::string init = cfg.value("init", "random");

  const std::string stem = stem_of(out);
  FitResult best;
  std::vector<RunRecord> runs;

  if (init == "edmd") {
    const int degree = cfg.value("edmd_degree", 3);
    Eigen::VectorXd lo, hi;
    if (cfg.contains("edmd_box_lo")) {
      lo = json_vector(cfg["edmd_box_lo"], "edmd_box_lo");
      hi = json_vector(cfg["edmd_box_hi"], "edmd_box_hi");
    } else {
      lo = Eigen::VectorXd::Constant(dataset.p, std::numeric_limits<double>::max());
      hi = Eigen::VectorXd::Constant(dataset.p, std::numeric_limits<double>::lowest());
      for (const auto& traj : dataset.trajectories) {
        lo = lo.cwiseMin(traj.outputs.rowwise().minCoeff());
        hi = hi.cwiseMax(traj.outputs.rowwise().maxCoeff());
      }
    }
    const auto dict = legendre_dictionary(lo, hi,
                                          Eigen::VectorXi::Constant(dataset.p, degree));
    info("EDMD initialization with " + std::to_string(dict.size()) + " functions");
    const ModelParams start = init_from_edmd(dataset, dict);
    best = fit(dataset, start, fit_config);
    RunRecord rec;
    rec.n = start.n;
    rec.seed = 0;
    rec.loglik = best.loglik_trace.back();
    rec.converged = best.converged;
    rec.iterations = best.iterations;
    runs.push_back(rec);
  } else if (init == "random") {
    std::vector<int> dims;
    if (cfg.contains("dims"))
      for (const auto& d : cfg["dims"]) dims.push_back(d.get<int>());
    if (dims.empty()) throw std::invalid_argument("fit config: missing 'dims'");
    SelectConfig sel;
    sel.fit = fit_config;
    sel.seed = cfg.value("seed", 0);
    if (seed_override) sel.seed = *seed_override;
    if (cfg.contains("input_lo")) {
      sel.input_lo = json_vector(cfg["input_lo"], "input_lo");
      sel.input_hi = json_vector(cfg["input_hi"], "input_hi");
    }
    const int restarts = cfg.value("restarts", 1);
    const auto result = select_model(dataset, dims, restarts, sel);
    best = result.best;
    runs = result.runs;
    info("selected run " + std::to_string(result.best_run) + " (n=" +
         std::to_string(best.params.n) + ")");
  } else {
    throw std::invalid_argument("fit config: init must be 'random' or 'edmd'");
  }

  save_model(best.params, out);
  Eigen::MatrixXd trace(static_cast<Eigen::Index>(best.loglik_trace.size()), 2);
  for (Eigen::Index i = 0; i < trace.rows(); ++i) {
    trace(i, 0) = static_cast<double>(i);
    trace(i, 1) = best.loglik_trace[static_cast<std::size_t>(i)];
  }
  write_file(stem + "_loglik.csv", matrix_to_csv("iteration,loglik", trace));
  write_file(stem + "_runs.csv", format_run_table(runs));
  info("wrote " + out);
  return 0;
}

// ---------------------------------------------------------------------------
// predict

int cmd_predict(const std::string& model_path, const std::string& data_path,
                int warmup, const std::string& out) {
  if (warmup < 1) throw std::invalid_argument("predict: warmup must be >= 1");
  const ModelParams params = load_model(model_path);
  params.validate();
  const Dataset dataset = load_dataset(data_path);
  require(dataset.p == params.p && dataset.q == params.q,
          "predict: dataset and model dimensions do not match");

  const int p = params.p;
  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "traj,step,t,forecast";
  for (int i = 0; i < p; ++i) csv << ",y_true_" << i;
  for (int i = 0; i < p; ++i) csv << ",y_pred_" << i;
  for (int i = 0; i < p; ++i) csv << ",y_sd_" << i;
  csv << '\n';

  std::vector<Eigen::MatrixXd> forecast_preds;
  Dataset forecast_truth;
  forecast_truth.dt = dataset.dt;
  forecast_truth.q = dataset.q;
  forecast_truth.p = dataset.p;

  for (int m = 0; m < dataset.size(); ++m) {
    const auto& traj = dataset.trajectories[static_cast<std::size_t>(m)];
    const int len = traj.length();
    if (warmup > len + 1)
      throw std::invalid_argument("predict: warmup exceeds trajectory length");

    const auto steps = step_matrices_for(params, traj.inputs);
    KalmanState st = KalmanState::prior(params);
    Eigen::MatrixXd pred_y(p, len + 1), pred_sd(p, len + 1);
    for (int l = 0; l <= len; ++l) {
      if (l > 0) st.predict(params, steps[static_cast<std::size_t>(l - 1)]);
      if (l < warmup) {
        // Report the one-step-ahead prediction, then assimilate.
        pred_y.col(l) = params.c0 + st.mu.head(p);
        pred_sd.col(l) = (st.sig.topLeftCorner(p, p) + params.sigma_v)
                             .diagonal()
                             .cwiseSqrt();
        st.update(params, traj.outputs.col(l));
      } else {
        pred_y.col(l) = params.c0 + st.mu.head(p);
        pred_sd.col(l) = (st.sig.topLeftCorner(p, p) + params.sigma_v)
                             .diagonal()
                             .cwiseSqrt();
      }
    }
    for (int l = 0; l <= len; ++l) {
      csv << m << ',' << l << ',' << l * dataset.dt << ',' << (l >= warmup ? 1 : 0);
      for (int i = 0; i < p; ++i) csv << ',' << traj.outputs(i, l);
      for (int i = 0; i < p; ++i) csv << ',' << pred_y(i, l);
      for (int i = 0; i < p; ++i) csv << ',' << pred_sd(i, l);
      csv << '\n';
    }
    if (warmup <= len) {
      Trajectory tail;
      tail.inputs = traj.inputs.rightCols(len - warmup);
      tail.outputs = traj.outputs.rightCols(len + 1 - warmup);
      forecast_truth.trajectories.push_back(tail);
      forecast_preds.push_back(pred_y.rightCols(len + 1 - warmup));
    }
  }
  write_file(out, csv.str());

  const std::string stem = stem_of(out);
  std::ostringstream report;
  report << std::setprecision(17) << "traj,relative_l2\n";
  if (!forecast_preds.empty()) {
    double mean = 0.0;
    for (std::size_t m = 0; m < forecast_preds.size(); ++m) {
      Dataset single;
      single.dt = forecast_truth.dt;
      single.q = forecast_truth.q;
      single.p = forecast_truth.p;
      single.trajectories.push_back(forecast_truth.trajectories[m]);
      const double err = relative_l2_error({forecast_preds[m]}, single);
      report << m << ',' << err << '\n';
      mean += err;
    }
    report << "mean," << mean / static_cast<double>(forecast_preds.size()) << '\n';
  }
  write_file(stem + "_errors.csv", report.str());
  info("wrote " + out);
  return 0;
}

// ---------------------------------------------------------------------------
// spectrum

int cmd_spectrum(const std::string& model_path, const std::string& u_csv,
                 const std::string& out) {
  const ModelParams params = load_model(model_path);
  params.validate();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(params.q);
  if (!u_csv.empty()) {
    std::stringstream ss(u_csv);
    std::string item;
    std::vector<double> vals;
    while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
    if (static_cast<int>(vals.size()) != params.q)
      throw std::invalid_argument("spectrum: --u must have q entries");
    u = Eigen::Map<Eigen::VectorXd>(vals.data(), params.q);
  }
  const auto pairs = eigen_spectrum(params, u);
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(pairs.size()), 2);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rows(static_cast<Eigen::Index>(i), 0) = pairs[i].lam.real();
    rows(static_cast<Eigen::Index>(i), 1) = pairs[i].lam.imag();
  }
  write_file(out, matrix_to_csv("re,im", rows));
  info("wrote " + out);
  return 0;
}

// ---------------------------------------------------------------------------
// mpc

class SurrogatePlant : public Plant {
 public:
  SurrogatePlant(const ModelParams& params, const Eigen::VectorXd& z0)
      : params_(params), z_(z0) {}
  int input_dim() const override { return params_.q; }
  int output_dim() const override { return params_.p; }
  double dt() const override { return params_.dt; }
  Eigen::VectorXd observe() override { return params_.c0 + z_.head(params_.p); }
  Eigen::VectorXd step(const Eigen::VectorXd& u) override {
    const auto sm = step_matrix(params_, u);
    z_ = sm.A * z_ + sm.b;
    return observe();
  }

 private:
  ModelParams params_;
  Eigen::VectorXd z_;
};

int cmd_mpc(const std::string& model_path, const std::string& plant_name,
            const std::string& spec_path, const std::string& out,
            std::optional<std::uint64_t> seed_override) {
  const ModelParams params = load_model(model_path);
  params.validate();
  const json cfg = load_config(spec_path);
  reject_unknown_keys(cfg,
                      {"Q", "R", "n_p", "n_c", "u_min", "u_max", "y_ref",
                       "total_steps", "plant", "solver_tol", "solver_max_iters"},
                      "mpc spec");

  OcpSpec spec;
  spec.Q = json_matrix(cfg.at("Q"), "Q");
  spec.R = json_matrix(cfg.at("R"), "R");
  spec.n_p = cfg.at("n_p").get<int>();
  spec.n_c = cfg.at("n_c").get<int>();
  spec.u_min = json_vector(cfg.at("u_min"), "u_min");
  spec.u_max = json_vector(cfg.at("u_max"), "u_max");
  if (!cfg.contains("y_ref") || !cfg["y_ref"].is_array() || cfg["y_ref"].empty())
    throw std::invalid_argument("mpc spec: y_ref must be a nonempty array");
  for (const auto& r : cfg["y_ref"]) spec.y_ref.push_back(json_vector(r, "y_ref"));

  const int total_steps = cfg.value("total_steps",
                                    static_cast<int>(spec.y_ref.size()) - 1);
  SolverConfig solver;
  solver.tol = cfg.value("solver_tol", 1e-6);
  solver.max_iters = cfg.value("solver_max_iters", 200);

  const json plant_cfg = cfg.value("plant", json::object());
  std::uint64_t seed = plant_cfg.value("seed", 0);
  if (seed_override) seed = *seed_override;

  std::unique_ptr<Plant> plant;
  if (plant_name == "slow_manifold") {
    auto sys = slow_manifold_plant(plant_cfg.value("alpha", 1.0),
                                   plant_cfg.value("beta", 5.0), params.dt,
                                   plant_cfg.value("noise_var", 0.0), seed);
    auto ode = std::make_unique<OdePlant>(sys.plant);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
    if (plant_cfg.contains("x0")) x0 = json_vector(plant_cfg["x0"], "plant.x0");
    ode->reset(x0);
    plant = std::move(ode);
  } else if (plant_name == "duffing") {
    auto ode = std::make_unique<OdePlant>(duffing_plant(
        plant_cfg.value("alpha", -1.0), plant_cfg.value("beta", 1.0),
        plant_cfg.value("delta", 0.5), params.dt));
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
    if (plant_cfg.contains("x0")) x0 = json_vector(plant_cfg["x0"], "plant.x0");
    ode->reset(x0);
    plant = std::move(ode);
  } else if (plant_name == "scalar_bilinear") {
    plant = std::make_unique<ScalarBilinearPlant>(params.dt,
                                                  plant_cfg.value("x0", 1.0));
  } else if (plant_name == "surrogate") {
    Eigen::VectorXd z0 = params.mu0;
    if (plant_cfg.contains("z0")) z0 = json_vector(plant_cfg["z0"], "plant.z0");
    plant = std::make_unique<SurrogatePlant>(params, z0);
  } else {
    throw std::invalid_argument("mpc: unknown plant '" + plant_name + "'");
  }

  const auto trace = mpc_loop(*plant, params, spec, total_steps, solver);

  std::ostringstream csv;
  csv << std::setprecision(17) << "t";
  for (int i = 0; i < params.p; ++i) csv << ",y_" << i;
  for (int i = 0; i < params.p; ++i) csv << ",y_ref_" << i;
  for (int i = 0; i < params.q; ++i) csv << ",u_" << i;
  for (int i = 0; i < params.n; ++i) csv << ",z_" << i;
  csv << '\n';
  for (int l = 0; l <= total_steps; ++l) {
    csv << trace.t(l);
    for (int i = 0; i < params.p; ++i) csv << ',' << trace.y(i, l);
    for (int i = 0; i < params.p; ++i) csv << ',' << trace.y_ref(i, l);
    for (int i = 0; i < params.q; ++i)
      csv << ',' << (l < total_steps ? trace.u(i, l) : 0.0);
    for (int i = 0; i < params.n; ++i) csv << ',' << trace.z_est(i, l);
    csv << '\n';
  }
  write_file(out, csv.str());
  info("wrote " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bilinear Koopman-generator surrogate models: EM system "
               "identification, forecasting, spectra, and MPC"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, data_path, model_path, spec_path, out, u_csv, plant;
  int warmup = 1, threads = 1;
  std::uint64_t seed_value = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_flag("--quiet", g_quiet, "suppress progress output");
    cmd->add_option("--seed", seed_value, "override the config seed")
        ->each([&](const std::string&) { seed_given = true; });
  };

  auto* gen = app.add_subcommand("generate", "generate a dataset from a protocol");
  gen->add_option("--config", config_path, "protocol config JSON")->required();
  gen->add_option("--out", out, "output dataset path (.json or .json.gz)")->required();
  add_common(gen);

  auto* fit_cmd = app.add_subcommand("fit", "fit a model with EM");
  fit_cmd->add_option("--data", data_path, "dataset path")->required();
  fit_cmd->add_option("--config", config_path, "fit config JSON")->required();
  fit_cmd->add_option("--out", out, "output model path")->required();
  fit_cmd->add_option("--threads", threads, "E-step worker threads");
  add_common(fit_cmd);

  auto* pred = app.add_subcommand("predict", "state-estimate then forecast");
  pred->add_option("--model", model_path, "model path")->required();
  pred->add_option("--data", data_path, "dataset path")->required();
  pred->add_option("--warmup", warmup, "observations used for state estimation")
      ->required();
  pred->add_option("--out", out, "predictions CSV path")->required();
  add_common(pred);

  auto* spec_cmd = app.add_subcommand("spectrum", "generator eigenvalues as CSV");
  spec_cmd->add_option("--model", model_path, "model path")->required();
  spec_cmd->add_option("--u", u_csv, "input level (comma separated; default drift)");
  spec_cmd->add_option("--out", out, "eigenvalue CSV path")->required();
  add_common(spec_cmd);

  auto* mpc_cmd = app.add_subcommand("mpc", "closed-loop tracking with a plant");
  mpc_cmd->add_option("--model", model_path, "surrogate model path")->required();
  mpc_cmd->add_option("--plant", plant, "plant name")->required();
  mpc_cmd->add_option("--spec", spec_path, "MPC problem JSON")->required();
  mpc_cmd->add_option("--out", out, "closed-loop trace CSV path")->required();
  add_common(mpc_cmd);

  CLI11_PARSE(app, argc, argv);

  std::optional<std::uint64_t> seed_override;
  if (seed_given) seed_override = seed_value;

  try {
    if (gen->parsed()) return cmd_generate(config_path, out, seed_override);
    if (fit_cmd->parsed())
      return cmd_fit(data_path, config_path, out, threads, seed_override);
    if (pred->parsed()) return cmd_predict(model_path, data_path, warmup, out);
    if (spec_cmd->parsed()) return cmd_spectrum(model_path, u_csv, out);
    if (mpc_cmd->parsed())
      return cmd_mpc(model_path, plant, spec_path, out, seed_override);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
