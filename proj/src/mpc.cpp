#include "koopgen/mpc.hpp"

#include <cmath>

namespace koopgen {

void OcpSpec::validate(int q, int p) const {
  require(Q.rows() == p && Q.cols() == p, "OcpSpec: Q must be p x p");
  require(R.rows() == q && R.cols() == q, "OcpSpec: R must be q x q");
  require(n_p >= 1, "OcpSpec: prediction horizon must be >= 1");
  require(n_c >= 1 && n_c <= n_p, "OcpSpec: control horizon must satisfy 1 <= n_c <= n_p");
  require(u_min.size() == q && u_max.size() == q, "OcpSpec: bound dimension mismatch");
  require((u_min.array() <= u_max.array()).all(), "OcpSpec: u_min must be <= u_max");
  require(static_cast<int>(y_ref.size()) >= n_p + 1,
          "OcpSpec: reference must cover the prediction horizon");
  for (const auto& r : y_ref)
    require(r.size() == p, "OcpSpec: reference output dimension mismatch");
}

Eigen::MatrixXd rollout(const ModelParams& params, const Eigen::VectorXd& z0,
                        const Eigen::MatrixXd& inputs) {
  require(z0.size() == params.n, "rollout: z0 dimension mismatch");
  require(inputs.rows() == params.q, "rollout: input dimension mismatch");
  const int horizon = static_cast<int>(inputs.cols());
  Eigen::MatrixXd outputs(params.p, horizon + 1);
  Eigen::VectorXd z = z0;
  outputs.col(0) = params.c0 + z.head(params.p);
  for (int l = 0; l < horizon; ++l) {
    const StepMatrices sm = step_matrix(params, inputs.col(l));
    z = sm.A * z + sm.b;
    outputs.col(l + 1) = params.c0 + z.head(params.p);
  }
  return outputs;
}

double ocp_cost(const ModelParams& params, const Eigen::VectorXd& z0,
                const Eigen::MatrixXd& inputs, const OcpSpec& spec) {
  require(static_cast<int>(inputs.cols()) == spec.n_p,
          "ocp_cost: inputs must cover the prediction horizon");
  const Eigen::MatrixXd y = rollout(params, z0, inputs);
  double cost = 0.0;
  for (int j = 0; j <= spec.n_p; ++j) {
    const Eigen::VectorXd e = y.col(j) - spec.y_ref[static_cast<std::size_t>(j)];
    cost += e.dot(spec.Q * e);
  }
  for (int j = 0; j < spec.n_p; ++j)
    cost += inputs.col(j).dot(spec.R * inputs.col(j));
  return params.dt * cost;
}

Eigen::MatrixXd ocp_gradient(const ModelParams& params, const Eigen::VectorXd& z0,
                             const Eigen::MatrixXd& inputs, const OcpSpec& spec) {
  require(static_cast<int>(inputs.cols()) == spec.n_p,
          "ocp_gradient: inputs must cover the prediction horizon");
  const int n = params.n;
  const int p = params.p;
  const int np = spec.n_p;
  const double dt = params.dt;

  // Forward pass: latent states and transitions.
  std::vector<Eigen::VectorXd> z(static_cast<std::size_t>(np) + 1);
  const auto steps = step_matrices_for(params, inputs);
  z[0] = z0;
  for (int j = 0; j < np; ++j)
    z[static_cast<std::size_t>(j) + 1] =
        steps[static_cast<std::size_t>(j)].A * z[static_cast<std::size_t>(j)] +
        steps[static_cast<std::size_t>(j)].b;

  auto tracking_term = [&](int j) {
    const Eigen::VectorXd e = params.c0 + z[static_cast<std::size_t>(j)].head(p) -
                              spec.y_ref[static_cast<std::size_t>(j)];
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    g.head(p) = 2.0 * dt * (spec.Q * e);
    return g;
  };

  Eigen::MatrixXd grad(params.q, np);
  Eigen::VectorXd lam = tracking_term(np);  // dJ/dz_{n_p}
  for (int j = np - 1; j >= 0; --j) {
    Eigen::VectorXd xi(n + 1);
    xi(0) = 1.0;
    xi.tail(n) = z[static_cast<std::size_t>(j)];
    for (int k = 0; k < params.q; ++k)
      grad(k, j) = dt * lam.dot(params.gen[static_cast<std::size_t>(k) + 1].transpose() * xi);
    grad.col(j) += 2.0 * dt * (spec.R * inputs.col(j));
    lam = steps[static_cast<std::size_t>(j)].A.transpose() * lam + tracking_term(j);
  }
  return grad;
}

namespace {

Eigen::MatrixXd clip_box(const Eigen::MatrixXd& u, const OcpSpec& spec) {
  Eigen::MatrixXd out = u;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    out.col(j) = out.col(j).cwiseMax(spec.u_min).cwiseMin(spec.u_max);
  return out;
}

}  // namespace

OcpSolution solve_ocp(const ModelParams& params, const Eigen::VectorXd& z0,
                      const OcpSpec& spec, const SolverConfig& config,
                      const Eigen::MatrixXd& warm_start) {
  spec.validate(params.q, params.p);

  Eigen::MatrixXd u = warm_start.size() > 0
                          ? warm_start
                          : Eigen::MatrixXd::Zero(params.q, spec.n_p);
  require(u.rows() == params.q && static_cast<int>(u.cols()) == spec.n_p,
          "solve_ocp: warm start has wrong shape");
  u = clip_box(u, spec);

  OcpSolution sol;
  sol.cost = ocp_cost(params, z0, u, spec);

  Eigen::MatrixXd prev_u, prev_g;
  double trial_step = config.initial_step;
  for (int it = 1; it <= config.max_iters; ++it) {
    sol.iterations = it;
    const Eigen::MatrixXd g = ocp_gradient(params, z0, u, spec);
    const double pg_norm = (u - clip_box(u - g, spec)).norm();
    if (pg_norm < config.tol) break;

    // Spectral (Barzilai-Borwein) trial step; Armijo keeps the cost monotone.
    if (prev_u.size() > 0) {
      const Eigen::MatrixXd s = u - prev_u;
      const Eigen::MatrixXd dg = g - prev_g;
      const double sy = (s.array() * dg.array()).sum();
      if (sy > 1e-18)
        trial_step = std::clamp(s.squaredNorm() / sy, 1e-8, 1e8);
    }
    prev_u = u;
    prev_g = g;

    double step = trial_step;
    bool accepted = false;
    while (step > 1e-16) {
      Eigen::MatrixXd u_new = clip_box(u - step * g, spec);
      const double cost_new = ocp_cost(params, z0, u_new, spec);
      if (!std::isfinite(cost_new))
        throw NumericalError("solve_ocp: non-finite cost during line search");
      const double decrease = (u_new - u).squaredNorm() / step;
      if (cost_new <= sol.cost - 1e-4 * decrease) {
        u = std::move(u_new);
        sol.cost = cost_new;
        accepted = true;
        break;
      }
      step *= config.backtrack;
    }
    if (!accepted) break;  // step size underflow: numerically stationary
  }
  sol.inputs = u;
  return sol;
}

MpcTrace mpc_loop(Plant& plant, const ModelParams& params, const OcpSpec& spec,
                  int total_steps, const SolverConfig& config) {
  spec.validate(params.q, params.p);
  require(plant.input_dim() == params.q && plant.output_dim() == params.p,
          "mpc_loop: plant dimensions do not match the surrogate");
  require(std::abs(plant.dt() - params.dt) <= 1e-12 * (1.0 + params.dt),
          "mpc_loop: plant and surrogate sampling steps differ");
  require(total_steps >= 1, "mpc_loop: total_steps must be >= 1");
  require(static_cast<int>(spec.y_ref.size()) >= total_steps + 1,
          "mpc_loop: reference must cover the closed-loop run");

  const int p = params.p;
  const int q = params.q;
  MpcTrace trace;
  trace.t.resize(total_steps + 1);
  trace.y.resize(p, total_steps + 1);
  trace.y_ref.resize(p, total_steps + 1);
  trace.u.resize(q, total_steps);
  trace.z_est.resize(params.n, total_steps + 1);

  auto window = [&](int start) {
    OcpSpec w = spec;
    w.y_ref.clear();
    const int last = static_cast<int>(spec.y_ref.size()) - 1;
    for (int j = 0; j <= spec.n_p; ++j)
      w.y_ref.push_back(spec.y_ref[static_cast<std::size_t>(std::min(start + j, last))]);
    return w;
  };

  KalmanState st = KalmanState::prior(params);
  Eigen::VectorXd y = plant.observe();
  st.update(params, y);
  trace.t(0) = 0.0;
  trace.y.col(0) = y;
  trace.y_ref.col(0) = spec.y_ref[0];
  trace.z_est.col(0) = st.mu;

  Eigen::MatrixXd warm = Eigen::MatrixXd::Zero(q, spec.n_p);
  Eigen::MatrixXd plan;
  for (int l = 0; l < total_steps; ++l) {
    if (l % spec.n_c == 0) {
      const OcpSolution sol = solve_ocp(params, st.mu, window(l), config, warm);
      plan = sol.inputs;
      // Shift by n_c for the next cycle's warm start, repeating the tail.
      warm.leftCols(spec.n_p - spec.n_c) = plan.rightCols(spec.n_p - spec.n_c);
      for (int j = spec.n_p - spec.n_c; j < spec.n_p; ++j)
        warm.col(j) = plan.col(spec.n_p - 1);
    }
    const Eigen::VectorXd u = plan.col(l % spec.n_c);
    y = plant.step(u);
    st.predict(params, step_matrix(params, u));
    st.update(params, y);
    trace.u.col(l) = u;
    trace.t(l + 1) = (l + 1) * params.dt;
    trace.y.col(l + 1) = y;
    trace.y_ref.col(l + 1) = spec.y_ref[static_cast<std::size_t>(l) + 1];
    trace.z_est.col(l + 1) = st.mu;
  }
  return trace;
}

}  // namespace koopgen
