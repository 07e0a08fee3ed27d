#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracle.hpp"
#include "thzmec/convex_alloc.hpp"

using namespace thzmec;
using oracle::ld;

namespace {

AllocProblem base_problem(int uavs = 1) { return AllocProblem::from_config(profile_config("table2").net, uavs); }

double unconstrained(const AllocProblem& p) { return std::cbrt((1 - p.eta) / (2 * p.eta * p.q_uav)); }

AllocProblem random_problem(std::mt19937_64& rng, int users, int uavs) {
  AllocProblem p = base_problem(uavs);
  std::uniform_real_distribution<double> bits(1e4, 1e6), a(0.0, 1.0), cmin(1e8, 1e9), tight(0.3, 1.3);
  for (int i = 0; i < users; ++i) {
    AllocUser u;
    const double d = bits(rng), al = a(rng);
    u.d_in_bits = (1 - al) * d;
    u.d_mec_bits = al * d;
    u.c_min_mec = cmin(rng);
    u.local = {u.c_min_mec, 1e9};
    u.uav = i % uavs;
    p.users.push_back(u);
  }
  // Budget between "binding for everyone" and "slack".
  const int per = (users + uavs - 1) / uavs;
  p.c_uav_max = std::max(tight(rng) * per * unconstrained(p), per * 1e9 + 1.0);
  return p;
}

}  // namespace

TEST(LocalCpu, EnergyOnlyAndDelayOnly) {
  const CpuBounds b{1e8, 1e9};
  EXPECT_EQ(optimal_local_cpu(5e5, 1.0, 1e-28, b), 1e8);
  EXPECT_EQ(optimal_local_cpu(5e5, 0.0, 1e-28, b), 1e9);
  EXPECT_EQ(optimal_local_cpu(0.0, 0.5, 1e-28, b), 1e8);
  EXPECT_THROW(optimal_local_cpu(1.0, 0.5, 1e-28, {2e9, 1e9}), DomainError);
}

TEST(LocalCpu, InteriorMatchesGoldenSection) {
  const CpuBounds b{1e8, 1e12};
  const double c = optimal_local_cpu(7e5, 0.5, 1e-28, b);
  const ld want = oracle::golden_min([](ld x) { return oracle::cpu_cost(x, 7e5L, 0.5L, 1e-28L, 1000.0L); }, 1e8L, 1e12L);
  EXPECT_LE(oracle::rel_err(c, want), 1e-9);
}

TEST(MecCpu, SingleUserLooseBudgetEqualsLocalRule) {
  const double c_star = optimal_local_cpu(4e5, 0.5, 1e-28, {1e8, 1e10});
  const auto c = optimal_mec_cpu({4e5}, {1e8}, 0.5, 1e-28, 1e10);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_DOUBLE_EQ(c[0], c_star);
}

TEST(MecCpu, IdenticalUsersSplitTightBudgetEvenly) {
  double mu = -1;
  const auto c = optimal_mec_cpu({5e5, 5e5}, {1e8, 1e8}, 0.5, 1e-28, 2e9, &mu);
  EXPECT_NEAR(c[0], 1e9, 1e9 * 1e-9);
  EXPECT_NEAR(c[1], 1e9, 1e9 * 1e-9);
  EXPECT_GT(mu, 0.0);
}

TEST(MecCpu, InfeasibleFloorThrows) {
  EXPECT_THROW(optimal_mec_cpu({1, 1}, {6e9, 6e9}, 0.5, 1e-28, 1e10), InfeasibleBudgetError);
}

TEST(MecCpu, ThreeUsersTightBudgetMatchesGridSearch) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> bits(1e4, 1e6);
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> d{bits(rng), bits(rng), bits(rng)};
    const std::vector<double> lo{1e8, 2e8, 3e8};
    const double budget = 3e9;
    const auto c = optimal_mec_cpu(d, lo, 0.5, 1e-28, budget);
    ld obj = 0;
    for (int i = 0; i < 3; ++i) obj += oracle::cpu_cost(c[i], d[i], 0.5L, 1e-28L, 1000.0L);
    const ld grid = oracle::mec_grid_min(d, lo, budget, 0.5L, 1e-28L, 1000.0L);
    EXPECT_LE(oracle::rel_err((double)obj, grid), 1e-6);
    EXPECT_LE(obj, grid * (1 + 1e-12L));
  }
}

TEST(SolveP11, ZeroOffloadGivesFloorAndClosedFormLocal) {
  AllocProblem p = base_problem(2);
  for (int i = 0; i < 4; ++i) {
    AllocUser u;
    u.d_in_bits = 1e5 * (i + 1);
    u.d_mec_bits = 0.0;
    u.c_min_mec = 1e8;
    u.local = {1e8, 1e12};
    u.uav = i % 2;
    p.users.push_back(u);
  }
  const auto s = solve_p11(p);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.c_mec[i], 1e8);
    EXPECT_DOUBLE_EQ(s.c_in[i], std::cbrt(0.5 / (2 * 0.5 * 1e-28)));
  }
}

TEST(SolveP11, BeatsRandomFeasiblePointsAndLocalPerturbations) {
  std::mt19937_64 rng(8);
  for (int inst = 0; inst < 5; ++inst) {
    const AllocProblem p = random_problem(rng, 6, 2);
    const auto s = solve_p11(p);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
      std::vector<double> ci(p.users.size()), cm(p.users.size());
      for (std::size_t u = 0; u < p.users.size(); ++u)
        ci[u] = p.users[u].local.lo + U(rng) * (p.users[u].local.hi - p.users[u].local.lo);
      for (int v = 0; v < p.num_uavs; ++v) {
        double floor = 0.0;
        std::vector<std::size_t> mem;
        for (std::size_t u = 0; u < p.users.size(); ++u)
          if (p.users[u].uav == v) {
            mem.push_back(u);
            floor += p.users[u].c_min_mec;
          }
        std::vector<double> w(mem.size());
        for (auto& x : w) x = U(rng);
        const double ws = std::accumulate(w.begin(), w.end(), 0.0);
        const double spare = (p.c_uav_max - floor) * U(rng);
        for (std::size_t i = 0; i < mem.size(); ++i) cm[mem[i]] = p.users[mem[i]].c_min_mec + spare * w[i] / ws;
      }
      ASSERT_LE(s.objective, alloc_objective(p, ci, cm) * (1 + 1e-12));
    }
    for (std::size_t u = 0; u < p.users.size(); ++u) {
      for (double f : {0.99, 1.01}) {
        auto ci = s.c_in;
        ci[u] = std::clamp(ci[u] * f, p.users[u].local.lo, p.users[u].local.hi);
        EXPECT_GE(alloc_objective(p, ci, s.c_mec), s.objective * (1 - 1e-14));
        auto cm = s.c_mec;
        cm[u] = std::max(cm[u] * f, p.users[u].c_min_mec);
        double sum = 0.0;
        for (std::size_t k = 0; k < p.users.size(); ++k)
          if (p.users[k].uav == p.users[u].uav) sum += cm[k];
        if (sum > p.c_uav_max) cm[u] -= sum - p.c_uav_max;  // project back onto the budget
        EXPECT_GE(alloc_objective(p, s.c_in, cm), s.objective * (1 - 1e-14));
      }
    }
  }
}

TEST(SolveP11, KktResidualsAndIndependentStationarity) {
  std::mt19937_64 rng(13);
  for (int inst = 0; inst < 50; ++inst) {
    const AllocProblem p = random_problem(rng, 1 + inst % 6, 1 + inst % 2);
    const auto s = solve_p11(p);
    EXPECT_LE(kkt_residuals(p, s).max(), 1e-8);
    EXPECT_LE(s.max_bisection_iters, 200);
    // Users strictly inside their bounds share one marginal cost per UAV.
    for (int v = 0; v < p.num_uavs; ++v) {
      std::vector<ld> g, scale;
      double sum = 0.0;
      for (std::size_t u = 0; u < p.users.size(); ++u) {
        if (p.users[u].uav != v) continue;
        sum += s.c_mec[u];
        const ld c = s.c_mec[u], d = p.users[u].d_mec_bits;
        if (d > 0 && c > p.users[u].c_min_mec * (1 + 1e-9)) {
          g.push_back(p.beta_uav * d * (2 * p.eta * p.q_uav * c - (1 - p.eta) / (c * c)));
          scale.push_back(p.beta_uav * d * (2 * p.eta * p.q_uav * c + (1 - p.eta) / (c * c)));
        }
      }
      EXPECT_LE(sum, p.c_uav_max * (1 + 1e-9));
      for (std::size_t i = 1; i < g.size(); ++i) EXPECT_LE(fabsl(g[i] - g[0]) / std::max(scale[i], scale[0]), 1e-8L);
    }
  }
}

TEST(SolveP11, InvariantToUserOrder) {
  std::mt19937_64 rng(4);
  for (int inst = 0; inst < 10; ++inst) {
    const AllocProblem p = random_problem(rng, 6, 2);
    const auto s = solve_p11(p);
    std::vector<std::size_t> perm(p.users.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    AllocProblem q = p;
    for (std::size_t i = 0; i < perm.size(); ++i) q.users[i] = p.users[perm[i]];
    const auto t = solve_p11(q);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      EXPECT_NEAR(t.c_in[i], s.c_in[perm[i]], 1e-12 * s.c_in[perm[i]]);
      EXPECT_NEAR(t.c_mec[i], s.c_mec[perm[i]], 1e-9 * s.c_mec[perm[i]]);
    }
    EXPECT_NEAR(t.objective, s.objective, 1e-9 * s.objective);
  }
}

TEST(BruteForce, AgreesWithSolverAndRefinesMonotonically) {
  std::mt19937_64 rng(9);
  for (int inst = 0; inst < 10; ++inst) {
    const AllocProblem p = random_problem(rng, 2, 1);
    const auto s = solve_p11(p);
    const auto coarse = brute_force_alloc(p, 9);
    const auto fine = brute_force_alloc(p, 17);
    const auto zoom = brute_force_alloc(p, 17, 4);
    EXPECT_LE(fine.objective, coarse.objective);
    EXPECT_LE(zoom.objective, fine.objective);
    EXPECT_LE(s.objective, zoom.objective * (1 + 1e-12));
    const double cell = (p.c_uav_max - 1e8) / 16;
    for (std::size_t u = 0; u < 2; ++u) EXPECT_NEAR(fine.c_mec[u], s.c_mec[u], 2 * cell);
  }
}

TEST(BruteForce, SinglePointGridAndGuard) {
  AllocProblem p = base_problem(1);
  AllocUser u;
  u.d_in_bits = 1e5;
  u.d_mec_bits = 1e5;
  u.local = {2e8, 9e8};
  u.c_min_mec = 3e8;
  p.users.push_back(u);
  const auto s = brute_force_alloc(p, 1);
  EXPECT_EQ(s.c_in[0], 2e8);
  EXPECT_EQ(s.c_mec[0], 3e8);
  for (int i = 0; i < 4; ++i) p.users.push_back(u);
  EXPECT_THROW(brute_force_alloc(p, 3), DomainError);
}
