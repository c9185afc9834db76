#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "planeinit/core.hpp"

namespace planeinit {

// Trust-region settings for all nonlinear least-squares solves.
struct SolverConfig {
  int max_iterations = 300;
  double gradient_tolerance = 1e-10;   // max |J^T r|
  double parameter_tolerance = 1e-10;  // accepted tangent step norm
  double function_tolerance = 1e-8;    // relative cost decrease
  double initial_trust_radius = 1e4;
  bool use_schur = false;              // eliminate block-diagonal parameters first
  double huber_delta = 0.0;            // 0 disables the robust loss

  void validate() const {
    if (max_iterations < 1) throw DegenerateConfiguration("SolverConfig: max_iterations < 1");
    if (gradient_tolerance <= 0.0 || parameter_tolerance <= 0.0 || function_tolerance <= 0.0) {
      throw DegenerateConfiguration("SolverConfig: tolerances must be positive");
    }
  }
};

enum class Termination {
  kGradientTolerance,
  kParameterTolerance,
  kFunctionTolerance,
  kMaxIterations,
  kTrustRegionCollapse,
};

struct SolveSummary {
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  Termination termination = Termination::kMaxIterations;
  std::vector<double> accepted_costs;  // monotone by construction
};

namespace detail {

// Border/block layout used by the optional Schur path: the tangent vector is
// [border; block_0; ...; block_{k-1}] with no coupling between blocks.
template <class M>
concept HasSchurStructure = requires(const M& m) {
  { m.schur_border_dim() } -> std::convertible_to<int>;
  { m.schur_block_dim() } -> std::convertible_to<int>;
  { m.schur_block_count() } -> std::convertible_to<int>;
};

inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& jtj, const Eigen::VectorXd& rhs) {
  const int dim = static_cast<int>(jtj.rows());
  double ridge = 1e-12 * std::max(1.0, jtj.trace() / dim);
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd damped = jtj;
    damped.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
    if (ldlt.info() == Eigen::Success) {
      Eigen::VectorXd x = ldlt.solve(rhs);
      if (x.allFinite()) return x;
    }
    ridge *= 100.0;
  }
  throw SolverDiverged("solve_spd: normal equations unsolvable");
}

template <class M>
Eigen::VectorXd gauss_newton_step(const M& model, const SolverConfig& cfg,
                                  const Eigen::MatrixXd& jtj, const Eigen::VectorXd& g) {
  if constexpr (HasSchurStructure<M>) {
    if (cfg.use_schur) {
      const int nb = model.schur_border_dim();
      const int bd = model.schur_block_dim();
      const int count = model.schur_block_count();
      const int dim = static_cast<int>(jtj.rows());
      double ridge = 1e-12 * std::max(1.0, jtj.trace() / dim);

      // Reduced system on the border after eliminating the diagonal blocks.
      Eigen::MatrixXd reduced = jtj.topLeftCorner(nb, nb);
      reduced.diagonal().array() += ridge;
      Eigen::VectorXd rhs = -g.head(nb);
      std::vector<Eigen::MatrixXd> inv_blocks(count);
      for (int i = 0; i < count; ++i) {
        const int off = nb + i * bd;
        Eigen::MatrixXd d = jtj.block(off, off, bd, bd);
        d.diagonal().array() += ridge;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(d);
        if (ldlt.info() != Eigen::Success) throw SolverDiverged("schur: block factorization failed");
        inv_blocks[i] = ldlt.solve(Eigen::MatrixXd::Identity(bd, bd));
        const Eigen::MatrixXd c = jtj.block(0, off, nb, bd);  // border x block coupling
        reduced -= c * inv_blocks[i] * c.transpose();
        rhs += c * inv_blocks[i] * g.segment(off, bd);
      }
      Eigen::VectorXd step(dim);
      step.head(nb) = solve_spd(reduced, rhs);
      for (int i = 0; i < count; ++i) {
        const int off = nb + i * bd;
        const Eigen::MatrixXd c = jtj.block(0, off, nb, bd);
        step.segment(off, bd) =
            inv_blocks[i] * (-g.segment(off, bd) - c.transpose() * step.head(nb));
      }
      return step;
    }
  }
  return solve_spd(jtj, -g);
}

}  // namespace detail

// Powell dogleg over a manifold-aware least-squares model. The model supplies
// residuals, Gauss-Newton normal equations and the tangent-space retraction:
//
//   using State = ...;
//   int tangent_dim() const;
//   State plus(const State&, const Eigen::VectorXd&) const;
//   Eigen::VectorXd residuals(const State&) const;
//   void normal_equations(const State&, Eigen::MatrixXd&, Eigen::VectorXd&) const;
//
// Deterministic: identical model + config + start produce identical output.
template <class Model>
SolveSummary solve_dogleg(const Model& model, typename Model::State& state,
                          const SolverConfig& cfg) {
  cfg.validate();
  const int dim = model.tangent_dim();
  auto cost_of = [&](const typename Model::State& s) {
    const Eigen::VectorXd r = model.residuals(s);
    return 0.5 * r.squaredNorm();
  };

  SolveSummary summary;
  double cost = cost_of(state);
  if (!std::isfinite(cost)) throw SolverDiverged("solve_dogleg: non-finite initial cost");
  summary.accepted_costs.push_back(cost);

  double radius = cfg.initial_trust_radius;
  Eigen::MatrixXd jtj(dim, dim);
  Eigen::VectorXd g(dim);

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    summary.iterations = iter;
    model.normal_equations(state, jtj, g);

    if (g.cwiseAbs().maxCoeff() <= cfg.gradient_tolerance) {
      summary.converged = true;
      summary.termination = Termination::kGradientTolerance;
      break;
    }

    const Eigen::VectorXd gn = detail::gauss_newton_step(model, cfg, jtj, g);

    bool accepted = false;
    while (true) {
      // Dogleg step for the current radius.
      Eigen::VectorXd step;
      const double gn_norm = gn.norm();
      if (gn_norm <= radius) {
        step = gn;
      } else {
        const double g_sq = g.squaredNorm();
        const double g_jtj_g = g.dot(jtj * g);
        if (g_jtj_g <= 0.0) {
          step = -(radius / g.norm()) * g;
        } else {
          const Eigen::VectorXd cauchy = -(g_sq / g_jtj_g) * g;
          const double cauchy_norm = cauchy.norm();
          if (cauchy_norm >= radius) {
            step = -(radius / g.norm()) * g;
          } else {
            const Eigen::VectorXd diff = gn - cauchy;
            const double a = diff.squaredNorm();
            const double b = 2.0 * cauchy.dot(diff);
            const double c = cauchy.squaredNorm() - radius * radius;
            const double disc = std::max(0.0, b * b - 4.0 * a * c);
            const double beta = (-b + std::sqrt(disc)) / (2.0 * a);
            step = cauchy + beta * diff;
          }
        }
      }

      const double model_decrease = -(g.dot(step) + 0.5 * step.dot(jtj * step));
      const typename Model::State trial = model.plus(state, step);
      const double trial_cost = cost_of(trial);
      if (!std::isfinite(trial_cost)) throw SolverDiverged("solve_dogleg: non-finite cost");

      if (trial_cost < cost) {
        const double rho = (cost - trial_cost) / std::max(model_decrease, 1e-300);
        const double decrease = cost - trial_cost;
        const double step_norm = step.norm();
        state = trial;
        cost = trial_cost;
        summary.accepted_costs.push_back(cost);
        accepted = true;
        if (rho > 0.75 && step_norm >= 0.99 * radius) {
          radius = std::max(radius, 3.0 * step_norm);
        } else if (rho < 0.25) {
          radius = 0.5 * step_norm;
        }
        if (decrease <= cfg.function_tolerance * std::max(cost, 1e-300) ||
            (cost == 0.0 && decrease == 0.0)) {
          summary.converged = true;
          summary.termination = Termination::kFunctionTolerance;
        } else if (step_norm <= cfg.parameter_tolerance) {
          summary.converged = true;
          summary.termination = Termination::kParameterTolerance;
        }
        break;
      }
      radius = 0.5 * std::min(radius, step.norm());
      if (radius < 1e-14) break;
    }

    if (summary.converged) break;
    if (!accepted && radius < 1e-14) {
      // No decreasing step exists at machine scale; treat as converged-in-place.
      summary.converged = true;
      summary.termination = Termination::kTrustRegionCollapse;
      break;
    }
  }

  summary.final_cost = cost;
  return summary;
}

}  // namespace planeinit
