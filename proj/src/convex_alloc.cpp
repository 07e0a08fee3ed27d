#include "thzmec/convex_alloc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "thzmec/net_model.hpp"

namespace thzmec {

namespace {

constexpr double kBudgetRelTol = 1e-9;   // feasibility slack on the lower-bound sum
constexpr double kBisectionRelTol = 1e-13;
constexpr double kMultiplierHi = 1e12;
constexpr int kMaxBisection = 200;

// d/dc of eta*q*beta*d*c^2 + (1-eta)*beta*d/c, divided by beta*d.
double unit_gradient(double c, double eta, double q) { return 2.0 * eta * q * c - (1.0 - eta) / (c * c); }

// Minimiser of eta*q*c^2*beta*d + (1-eta)*beta*d/c + mu*c over [lo, hi]
// for d > 0. With m = mu/(beta*d) the stationary condition is
//   2*eta*q*c^3 + m*c^2 - (1-eta) = 0.
double solve_user(double d_beta, double eta, double q, double mu, double lo, double hi) {
  const double m = mu / d_beta;
  auto h = [&](double c) { return unit_gradient(c, eta, q) + m; };
  if (h(lo) >= 0.0) return lo;
  if (h(hi) <= 0.0) return hi;
  double a = lo;
  double b = hi;
  double c = 0.5 * (a + b);
  if (eta > 0.0) c = std::clamp(std::cbrt((1.0 - eta) / (2.0 * eta * q)), a, b);
  for (int it = 0; it < 100; ++it) {
    const double hc = h(c);
    if (hc == 0.0) return c;
    if (hc > 0.0) b = c;
    else a = c;
    const double dh = 2.0 * eta * q + 2.0 * (1.0 - eta) / (c * c * c);
    double next = c - hc / dh;
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - c) <= 1e-16 * c || b - a <= 4e-16 * b) return next;
    c = next;
  }
  return c;
}

NetworkConfig constants_of(const AllocProblem& p) {
  NetworkConfig cfg;
  cfg.eta = p.eta;
  cfg.beta_mu = p.beta_mu;
  cfg.beta_uav = p.beta_uav;
  cfg.q_mu = p.q_mu;
  cfg.q_uav = p.q_uav;
  return cfg;
}

double user_local_cost(const NetworkConfig& k, double d_in, double c) {
  return k.eta * local_energy(d_in, c, k) + (1.0 - k.eta) * local_delay(d_in, c, k);
}

double user_mec_cost(const NetworkConfig& k, double d_mec, double c) {
  return k.eta * mec_energy(d_mec, c, k) + (1.0 - k.eta) * mec_delay(d_mec, c, k);
}

std::vector<double> grid(double lo, double hi, int n) {
  std::vector<double> g(static_cast<std::size_t>(n));
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  g.back() = hi;
  return g;
}

}  // namespace

AllocProblem AllocProblem::from_config(const NetworkConfig& cfg, int num_uavs) {
  AllocProblem p;
  p.eta = cfg.eta;
  p.beta_mu = cfg.beta_mu;
  p.beta_uav = cfg.beta_uav;
  p.q_mu = cfg.q_mu;
  p.q_uav = cfg.q_uav;
  p.c_uav_max = cfg.c_uav_max;
  p.num_uavs = num_uavs;
  return p;
}

double KktResiduals::max() const { return std::max({stationarity, primal, complementarity}); }

double optimal_local_cpu(double d_bits, double eta, double q, const CpuBounds& bounds) {
  if (!(bounds.lo > 0.0 && bounds.lo <= bounds.hi)) throw DomainError("optimal_local_cpu: invalid bounds");
  if (d_bits <= 0.0) return bounds.lo;
  if (eta >= 1.0) return bounds.lo;
  if (eta <= 0.0) return bounds.hi;
  return std::clamp(std::cbrt((1.0 - eta) / (2.0 * eta * q)), bounds.lo, bounds.hi);
}

std::vector<double> optimal_mec_cpu(const std::vector<double>& d_mec_bits, const std::vector<double>& c_min,
                                    double eta, double q, double budget, double* multiplier, int* iterations) {
  const std::size_t n = d_mec_bits.size();
  if (c_min.size() != n) throw DomainError("optimal_mec_cpu: size mismatch");
  const double floor_sum = std::accumulate(c_min.begin(), c_min.end(), 0.0);
  if (floor_sum > budget * (1.0 + kBudgetRelTol))
    throw InfeasibleBudgetError("sum of per-user minimum cycle rates exceeds the UAV budget");

  // beta cancels from the per-user problem once mu is scaled by beta*d, so
  // beta = 1 is used for the multiplier's units.
  auto allocate = [&](double mu, std::vector<double>& out) {
    double sum = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      out[u] = d_mec_bits[u] > 0.0 ? solve_user(d_mec_bits[u], eta, q, mu, c_min[u], budget) : c_min[u];
      sum += out[u];
    }
    return sum;
  };

  std::vector<double> c(n);
  int iters = 0;
  double mu = 0.0;
  if (allocate(0.0, c) > budget) {
    double lo = 0.0;
    double hi = kMultiplierHi;
    std::vector<double> trial(n);
    double hi_sum = allocate(hi, c);
    while (iters < kMaxBisection && budget - hi_sum > kBisectionRelTol * budget) {
      ++iters;
      const double mid = 0.5 * (lo + hi);
      const double s = allocate(mid, trial);
      if (s > budget) {
        lo = mid;
      } else {
        hi = mid;
        hi_sum = s;
        c.swap(trial);
      }
    }
    mu = hi;
  }
  if (multiplier) *multiplier = mu;
  if (iterations) *iterations = iters;
  return c;
}

double alloc_objective(const AllocProblem& problem, const std::vector<double>& c_in,
                       const std::vector<double>& c_mec) {
  const NetworkConfig k = constants_of(problem);
  double obj = 0.0;
  for (std::size_t u = 0; u < problem.users.size(); ++u) {
    obj += user_local_cost(k, problem.users[u].d_in_bits, c_in[u]);
    obj += user_mec_cost(k, problem.users[u].d_mec_bits, c_mec[u]);
  }
  return obj;
}

AllocSolution solve_p11(const AllocProblem& problem) {
  const std::size_t n = problem.users.size();
  AllocSolution sol;
  sol.c_in.resize(n);
  sol.c_mec.resize(n);
  sol.multiplier.assign(static_cast<std::size_t>(problem.num_uavs), 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    const auto& user = problem.users[u];
    sol.c_in[u] = optimal_local_cpu(user.d_in_bits, problem.eta, problem.q_mu, user.local);
  }
  for (int v = 0; v < problem.num_uavs; ++v) {
    std::vector<std::size_t> members;
    std::vector<double> d, lo;
    for (std::size_t u = 0; u < n; ++u) {
      if (problem.users[u].uav != v) continue;
      members.push_back(u);
      d.push_back(problem.users[u].d_mec_bits);
      lo.push_back(problem.users[u].c_min_mec);
    }
    if (members.empty()) continue;
    int iters = 0;
    double mu = 0.0;
    auto c = optimal_mec_cpu(d, lo, problem.eta, problem.q_uav, problem.c_uav_max, &mu, &iters);
    sol.multiplier[static_cast<std::size_t>(v)] = mu * problem.beta_uav;
    sol.max_bisection_iters = std::max(sol.max_bisection_iters, iters);
    for (std::size_t i = 0; i < members.size(); ++i) sol.c_mec[members[i]] = c[i];
  }
  sol.objective = alloc_objective(problem, sol.c_in, sol.c_mec);
  return sol;
}

KktResiduals kkt_residuals(const AllocProblem& problem, const AllocSolution& sol) {
  KktResiduals r;
  const double eta = problem.eta;
  auto bound_residual = [](double g, double scale, double c, double lo, double hi) {
    if (scale == 0.0) return 0.0;
    if (c <= lo && c >= hi) return 0.0;
    if (c <= lo) return std::max(0.0, -g) / scale;
    if (c >= hi) return std::max(0.0, g) / scale;
    return std::abs(g) / scale;
  };
  for (std::size_t u = 0; u < problem.users.size(); ++u) {
    const auto& user = problem.users[u];
    const double c = sol.c_in[u];
    if (c < user.local.lo * (1 - 1e-12) || c > user.local.hi * (1 + 1e-12))
      r.primal = std::max(r.primal, std::max(user.local.lo - c, c - user.local.hi) / user.local.hi);
    if (user.d_in_bits > 0.0) {
      const double a = 2.0 * eta * problem.q_mu * c;
      const double b = (1.0 - eta) / (c * c);
      r.stationarity = std::max(r.stationarity, bound_residual(a - b, a + b, c, user.local.lo, user.local.hi));
    }
  }
  for (int v = 0; v < problem.num_uavs; ++v) {
    const double mu = sol.multiplier.empty() ? 0.0 : sol.multiplier[static_cast<std::size_t>(v)];
    double sum = 0.0;
    bool any = false;
    for (std::size_t u = 0; u < problem.users.size(); ++u) {
      const auto& user = problem.users[u];
      if (user.uav != v) continue;
      any = true;
      const double c = sol.c_mec[u];
      sum += c;
      if (c < user.c_min_mec * (1 - 1e-12) || c > problem.c_uav_max * (1 + 1e-12))
        r.primal = std::max(r.primal, std::max(user.c_min_mec - c, c - problem.c_uav_max) / problem.c_uav_max);
      // Stationarity in the multiplier's units (per bit and cycle-per-bit).
      const double scaled_mu = user.d_mec_bits > 0.0 ? mu / (problem.beta_uav * user.d_mec_bits) : 0.0;
      double a = 0.0, b = 0.0;
      if (user.d_mec_bits > 0.0) {
        a = 2.0 * eta * problem.q_uav * c;
        b = (1.0 - eta) / (c * c);
        r.stationarity = std::max(
            r.stationarity, bound_residual(a - b + scaled_mu, a + b + scaled_mu, c, user.c_min_mec, problem.c_uav_max));
      }
    }
    if (!any) continue;
    r.primal = std::max(r.primal, std::max(0.0, sum - problem.c_uav_max) / problem.c_uav_max);
    if (mu > 0.0) r.complementarity = std::max(r.complementarity, std::abs(problem.c_uav_max - sum) / problem.c_uav_max);
    if (mu < 0.0) r.stationarity = std::max(r.stationarity, 1.0);
  }
  return r;
}

AllocSolution brute_force_alloc(const AllocProblem& problem, int grid_points_per_dim, int refine_rounds) {
  if (grid_points_per_dim < 1) throw DomainError("brute_force_alloc: need at least one grid point");
  const NetworkConfig k = constants_of(problem);
  const std::size_t n = problem.users.size();
  AllocSolution sol;
  sol.c_in.resize(n);
  sol.c_mec.resize(n);
  sol.multiplier.assign(static_cast<std::size_t>(problem.num_uavs), 0.0);

  for (std::size_t u = 0; u < n; ++u) {
    const auto& user = problem.users[u];
    double lo = user.local.lo, hi = user.local.hi;
    double best = std::numeric_limits<double>::infinity();
    double best_c = lo;
    for (int round = 0; round <= refine_rounds; ++round) {
      const auto g = grid(lo, hi, grid_points_per_dim);
      for (double c : g) {
        const double f = user_local_cost(k, user.d_in_bits, c);
        if (f < best) {
          best = f;
          best_c = c;
        }
      }
      const double cell = grid_points_per_dim > 1 ? (hi - lo) / (grid_points_per_dim - 1) : 0.0;
      lo = std::max(user.local.lo, best_c - 2 * cell);
      hi = std::min(user.local.hi, best_c + 2 * cell);
    }
    sol.c_in[u] = best_c;
  }

  const double budget = problem.c_uav_max;
  for (int v = 0; v < problem.num_uavs; ++v) {
    std::vector<std::size_t> members;
    for (std::size_t u = 0; u < n; ++u)
      if (problem.users[u].uav == v) members.push_back(u);
    if (members.empty()) continue;
    if (members.size() > 4) throw DomainError("brute_force_alloc: at most 4 users per UAV");
    const std::size_t m = members.size();
    std::vector<double> lo(m), hi(m);
    for (std::size_t i = 0; i < m; ++i) {
      lo[i] = problem.users[members[i]].c_min_mec;
      hi[i] = budget;
    }
    std::vector<double> best_c(lo);
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> cur(m);
    for (int round = 0; round <= refine_rounds; ++round) {
      std::vector<std::vector<double>> grids(m);
      for (std::size_t i = 0; i < m; ++i) grids[i] = grid(lo[i], hi[i], grid_points_per_dim);

      auto consider = [&](const std::vector<double>& c) {
        double s = 0.0;
        for (double x : c) s += x;
        if (s > budget) return;
        double f = 0.0;
        for (std::size_t i = 0; i < m; ++i) f += user_mec_cost(k, problem.users[members[i]].d_mec_bits, c[i]);
        if (f < best) {
          best = f;
          best_c = c;
        }
      };
      // Odometer over the first m-1 coordinates; the last one takes every
      // grid value plus the exact budget remainder.
      std::vector<std::size_t> idx(m, 0);
      while (true) {
        double partial = 0.0;
        for (std::size_t i = 0; i + 1 < m; ++i) {
          cur[i] = grids[i][idx[i]];
          partial += cur[i];
        }
        if (partial <= budget) {
          for (double x : grids[m - 1]) {
            cur[m - 1] = x;
            consider(cur);
          }
          const double rem = budget - partial;
          const double last_lo = problem.users[members[m - 1]].c_min_mec;
          if (rem >= last_lo && rem <= budget) {
            cur[m - 1] = rem;
            consider(cur);
          }
        }
        std::size_t i = 0;
        for (; i + 1 < m; ++i) {
          if (++idx[i] < grids[i].size()) break;
          idx[i] = 0;
        }
        if (i + 1 >= m) break;
      }
      for (std::size_t i = 0; i < m; ++i) {
        const double cell = grid_points_per_dim > 1 ? (hi[i] - lo[i]) / (grid_points_per_dim - 1) : 0.0;
        const double base = problem.users[members[i]].c_min_mec;
        lo[i] = std::max(base, best_c[i] - 2 * cell);
        hi[i] = std::min(budget, best_c[i] + 2 * cell);
      }
    }
    if (!std::isfinite(best)) throw InfeasibleBudgetError("brute_force_alloc: no feasible grid point");
    for (std::size_t i = 0; i < m; ++i) sol.c_mec[members[i]] = best_c[i];
  }
  sol.objective = alloc_objective(problem, sol.c_in, sol.c_mec);
  return sol;
}

}  // namespace thzmec
