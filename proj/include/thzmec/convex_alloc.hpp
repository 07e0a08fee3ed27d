#pragma once

// CPU-cycle allocation for MUs (local) and MEC-UAVs (offloaded work).
//
// Given the task splits of a slot, the objective
//   sum_u [eta*q*c^2*beta*d + (1-eta)*beta*d/c]
// is separable per user. The local part is one independent box-constrained
// scalar problem per MU. The MEC part couples the users of one UAV through
// sum_u c_u <= C_max; its KKT system is solved by bisection on the budget
// multiplier with a safeguarded Newton solve of each user's stationary cubic.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "thzmec/config.hpp"
#include "thzmec/net_model.hpp"

namespace thzmec {

class InfeasibleBudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CpuBounds {
  double lo = 0.0;
  double hi = 0.0;
};

/// One user's share of a slot's computation.
struct AllocUser {
  double d_in_bits = 0.0;
  double d_mec_bits = 0.0;
  CpuBounds local;  // [C_min_u, C_max_u]
  double c_min_mec = 0.0;  // lower bound on c_mec (C_min_u)
  int uav = 0;
};

struct AllocProblem {
  double eta = 0.5;
  double beta_mu = 1000.0;
  double beta_uav = 1000.0;
  double q_mu = 1e-28;
  double q_uav = 1e-28;
  double c_uav_max = 1e10;  // per-UAV budget; also each c_mec's upper bound
  int num_uavs = 1;
  std::vector<AllocUser> users;

  static AllocProblem from_config(const NetworkConfig& cfg, int num_uavs);
};

struct AllocSolution {
  std::vector<double> c_in;
  std::vector<double> c_mec;  // indexed by user; the serving UAV is users[u].uav
  std::vector<double> multiplier;  // budget multiplier per UAV, objective units per cycle/s
  double objective = 0.0;
  int max_bisection_iters = 0;
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double max() const;
};

/// Minimiser of eta*q*c^2*beta*d + (1-eta)*beta*d/c over [lo, hi].
/// d == 0 returns lo.
double optimal_local_cpu(double d_bits, double eta, double q, const CpuBounds& bounds);

/// KKT allocation of one UAV's budget. Users are given by their offloaded
/// bits and lower bounds; the upper bound of every user is the budget.
/// `multiplier` receives the budget multiplier per cycle-per-bit (i.e. for
/// beta = 1).
/// Throws InfeasibleBudgetError when the lower bounds exceed the budget.
std::vector<double> optimal_mec_cpu(const std::vector<double>& d_mec_bits, const std::vector<double>& c_min,
                                    double eta, double q, double budget, double* multiplier = nullptr,
                                    int* iterations = nullptr);

/// Solves every MU's local problem and every UAV's budget problem.
AllocSolution solve_p11(const AllocProblem& problem);

/// Computation part of the slot objective for a given allocation.
double alloc_objective(const AllocProblem& problem, const std::vector<double>& c_in,
                       const std::vector<double>& c_mec);

/// Stationarity/feasibility/slackness residuals, each scaled to be relative.
KktResiduals kkt_residuals(const AllocProblem& problem, const AllocSolution& sol);

/// Exhaustive grid search used as a verification oracle. Each UAV may serve
/// at most four users. `refine_rounds` > 0 repeats the search on a zoomed
/// box around the incumbent.
AllocSolution brute_force_alloc(const AllocProblem& problem, int grid_points_per_dim, int refine_rounds = 0);

}  // namespace thzmec
