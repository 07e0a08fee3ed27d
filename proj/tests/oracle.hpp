#pragma once

// Independent long-double re-evaluations used as test oracles. Nothing here
// calls into the library except for reading plain config fields.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "thzmec/config.hpp"

namespace oracle {

using ld = long double;

inline ld db_to_lin(ld db) { return powl(10.0L, db / 10.0L); }

inline ld slant(ld ux, ld uy, ld mx, ld my, ld h) {
  return sqrtl(h * h + (ux - mx) * (ux - mx) + (uy - my) * (uy - my));
}

inline ld rate(ld omega, ld p, ld d, const thzmec::NetworkConfig& c) {
  if (omega == 0 || p == 0) return 0;
  const ld band = omega * (ld)c.bandwidth_hz;
  const ld noise = db_to_lin((ld)c.noise_psd_dbm_per_hz - 30.0L);
  const ld snr = p * db_to_lin((ld)c.gain_ref_db) / (band * d * d * expl((ld)c.absorption_a * d) * noise);
  return band * log1pl(snr) / logl(2.0L);
}

inline ld fly(ld v, ld t, const thzmec::NetworkConfig& c) {
  if (v == 0) return 0;
  return t * v * ((ld)c.c1 * v * v + (ld)c.c2 / (v * v));
}

/// Full per-MU chain for given decisions; mirrors the model equations.
struct MuChain {
  ld d_in, d_mec, t_loc, e_loc, r_ul, t_ul, e_ul, t_mec, e_mec, d_post, r_dl, t_dl, e_dl;
  ld delay() const { return t_loc + t_ul + t_mec + t_dl; }
  ld energy() const { return e_loc + e_ul + e_mec + e_dl; }
};

inline MuChain mu_chain(ld alpha, ld d_pre, ld c_in, ld c_mec, ld w_ul, ld w_dl, ld p_dl, ld dist,
                        const thzmec::NetworkConfig& c, ld infeasible_delay = 10.0L) {
  MuChain m{};
  m.d_mec = alpha * d_pre;
  m.d_in = d_pre - m.d_mec;
  m.t_loc = (ld)c.beta_mu * m.d_in / c_in;
  m.e_loc = (ld)c.q_mu * c_in * c_in * (ld)c.beta_mu * m.d_in;
  m.r_ul = rate(w_ul, c.p_ul_watt, dist, c);
  m.t_ul = m.d_mec == 0 ? 0 : (m.r_ul == 0 ? infeasible_delay : m.d_mec / m.r_ul);
  m.e_ul = m.t_ul * (ld)c.p_ul_watt;
  m.t_mec = m.d_mec == 0 ? 0 : (ld)c.beta_uav * m.d_mec / c_mec;
  m.e_mec = m.d_mec == 0 ? 0 : (ld)c.q_uav * c_mec * c_mec * (ld)c.beta_uav * m.d_mec;
  m.d_post = (ld)c.delta_prog * m.d_mec;
  m.r_dl = rate(w_dl, p_dl, dist, c);
  m.t_dl = m.d_post == 0 ? 0 : (m.r_dl == 0 ? infeasible_delay : m.d_post / m.r_dl);
  m.e_dl = m.t_dl * p_dl;
  return m;
}

/// Objective of one user's CPU choice: eta*q*c^2*beta*d + (1-eta)*beta*d/c.
inline ld cpu_cost(ld c, ld d, ld eta, ld q, ld beta) {
  if (d == 0) return 0;
  return eta * q * c * c * beta * d + (1 - eta) * beta * d / c;
}

/// Golden-section minimiser of a unimodal function on [a, b].
template <class F>
ld golden_min(F f, ld a, ld b, int iters = 200) {
  const ld g = (sqrtl(5.0L) - 1) / 2;
  ld x1 = b - g * (b - a), x2 = a + g * (b - a);
  ld f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < iters; ++i) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = f(x2);
    }
  }
  return (a + b) / 2;
}

/// Truncated GAE by the direct double sum.
inline std::vector<double> gae_direct(const std::vector<double>& r, const std::vector<double>& v, double gamma,
                                      double lambda) {
  const std::size_t n = r.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    ld acc = 0, w = 1;
    for (std::size_t k = t; k < n; ++k) {
      const ld delta = (ld)r[k] + (ld)gamma * (ld)v[k + 1] - (ld)v[k];
      acc += w * delta;
      w *= (ld)gamma * (ld)lambda;
    }
    out[t] = (double)acc;
  }
  return out;
}

/// Grid search with zoom refinement over {c_i >= lo_i, sum c <= budget}.
/// The first m-1 users are gridded; the last takes its one-dimensional
/// optimum on what is left of the budget (a convex scalar problem whose
/// free minimiser is cbrt((1-eta)/(2 eta q))).
inline ld mec_grid_min(const std::vector<double>& d, const std::vector<double>& lo, double budget, ld eta, ld q,
                       ld beta, int points = 80, int rounds = 12, std::vector<ld>* arg = nullptr) {
  const std::size_t m = d.size();
  const ld free_min = cbrtl((1 - eta) / (2 * eta * q));
  auto last_best = [&](ld rem) -> ld {
    const ld l = lo[m - 1];
    if (rem < l) return NAN;
    if (d[m - 1] == 0) return l;
    return std::clamp(free_min, l, rem);
  };
  std::vector<ld> a(m), b(m), best_c(m);
  for (std::size_t i = 0; i < m; ++i) {
    a[i] = lo[i];
    b[i] = budget;
  }
  ld best = INFINITY;
  std::vector<ld> c(m);
  const std::size_t g = m - 1;
  for (int r = 0; r < rounds; ++r) {
    std::vector<int> idx(g, 0);
    while (true) {
      ld sum = 0, f = 0;
      for (std::size_t i = 0; i < g; ++i) {
        c[i] = a[i] + (b[i] - a[i]) * idx[i] / (points - 1);
        sum += c[i];
      }
      c[g] = last_best((ld)budget - sum);
      if (!std::isnan((double)c[g])) {
        for (std::size_t i = 0; i < m; ++i) f += cpu_cost(c[i], d[i], eta, q, beta);
        if (f < best) {
          best = f;
          best_c = c;
        }
      }
      std::size_t k = 0;
      for (; k < g; ++k) {
        if (++idx[k] < points) break;
        idx[k] = 0;
      }
      if (k == g) break;
    }
    for (std::size_t i = 0; i < g; ++i) {
      const ld cell = (b[i] - a[i]) / (points - 1);
      a[i] = std::max<ld>(lo[i], best_c[i] - 4 * cell);
      b[i] = std::min<ld>(budget, best_c[i] + 4 * cell);
    }
  }
  if (arg) *arg = best_c;
  return best;
}

inline double rel_err(double got, long double want) {
  const long double d = fabsl((ld)got - want);
  const long double s = fabsl(want);
  return (double)(s > 0 ? d / s : d);
}

}  // namespace oracle
