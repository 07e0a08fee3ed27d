// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. `--skip-learning` leaves out the slow training criteria.

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "oracle.hpp"
#include "thzmec/cli.hpp"
#include "thzmec/convex_alloc.hpp"
#include "thzmec/env.hpp"
#include "thzmec/net_model.hpp"
#include "thzmec/ppo.hpp"
#include "thzmec/trainer.hpp"

using namespace thzmec;
using oracle::ld;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run(const std::string& name, double budget_s, const std::function<Verdict()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = f();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0 && secs > budget_s) {
    v.pass = false;
    v.detail += " (over time budget)";
  }
  if (!v.pass) ++g_failures;
  std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << " [" << std::fixed << std::setprecision(2)
            << secs << " s]" << std::endl;
}

std::string sci(double x) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << x;
  return s.str();
}

using nn::Matrix;
using nn::Vector;

Matrix randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

double weighted_sum(const Matrix& a, const Matrix& w) { return (a.array() * w.array()).sum(); }

// --- physics ------------------------------------------------------------------

Verdict physics_oracle() {
  std::mt19937_64 rng(2024);
  auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  double worst = 0.0;
  long checks = 0;
  auto check = [&](double got, ld want) {
    worst = std::max(worst, oracle::rel_err(got, want));
    ++checks;
  };
  for (int t = 0; t < 100; ++t) {
    NetworkConfig c = profile_config("table2").net;
    c.altitude_m = U(10, 200);
    c.bandwidth_hz = std::pow(10.0, U(10, 12.5));
    c.absorption_a = U(0.0, 0.02);
    c.noise_psd_dbm_per_hz = U(-185, -160);
    c.gain_ref_db = U(-60, -30);
    c.p_ul_watt = U(0.05, 1.0);
    c.beta_mu = U(200, 3000);
    c.beta_uav = U(200, 3000);
    c.q_mu = std::pow(10.0, U(-29, -27));
    c.q_uav = std::pow(10.0, U(-29, -27));
    c.delta_prog = U(0.01, 0.9);
    c.c1 *= U(0.5, 2);
    c.c2 *= U(0.5, 2);
    c.eta = U(0, 1);

    const int mus = 1 + t % 5;
    const double speed = U(0.1, 40), t_fly = U(0.2, 2);
    const Position uav{U(0, 500), U(0, 500)};
    std::vector<MuSlotTerms> terms;
    ld e_sum = oracle::fly(speed, t_fly, c), d_sum = 0;
    check(flight_energy(speed, t_fly, c), oracle::fly(speed, t_fly, c));
    std::vector<double> delays;
    for (int m = 0; m < mus; ++m) {
      const Position mu{U(0, 500), U(0, 500)};
      const double alpha = U(0, 1), d_pre = U(1e4, 1e7), c_in = U(1e8, 1e9), c_mec = U(1e8, 1e10);
      const double w_ul = U(0.01, 1), w_dl = U(0.01, 1), p_dl = U(0.05, c.p_max_watt);

      const double dist = link_distance(uav, mu, c);
      const ld dist_o = oracle::slant(uav.x_m, uav.y_m, mu.x_m, mu.y_m, c.altitude_m);
      check(dist, dist_o);
      const auto o = oracle::mu_chain(alpha, d_pre, c_in, c_mec, w_ul, w_dl, p_dl, dist, c);

      const auto sp = split_task(alpha, d_pre);
      check(sp.d_in_bits, o.d_in);
      check(sp.d_mec_bits, o.d_mec);
      MuSlotTerms m_t;
      m_t.t_local = local_delay(sp.d_in_bits, c_in, c);
      m_t.e_local = local_energy(sp.d_in_bits, c_in, c);
      check(m_t.t_local, o.t_loc);
      check(m_t.e_local, o.e_loc);
      const double r_ul = uplink_rate(w_ul, dist, c);
      check(r_ul, o.r_ul);
      m_t.t_ul = uplink_delay(sp.d_mec_bits, r_ul);
      m_t.e_ul = uplink_energy(m_t.t_ul, c);
      check(m_t.t_ul, o.t_ul);
      check(m_t.e_ul, o.e_ul);
      m_t.t_mec = mec_delay(sp.d_mec_bits, c_mec, c);
      m_t.e_mec = mec_energy(sp.d_mec_bits, c_mec, c);
      check(m_t.t_mec, o.t_mec);
      check(m_t.e_mec, o.e_mec);
      const double post = post_size(sp.d_mec_bits, c);
      check(post, o.d_post);
      const double r_dl = downlink_rate(w_dl, p_dl, dist, c);
      check(r_dl, o.r_dl);
      m_t.t_dl = downlink_delay(post, r_dl);
      m_t.e_dl = downlink_energy(m_t.t_dl, p_dl);
      check(m_t.t_dl, o.t_dl);
      check(m_t.e_dl, o.e_dl);
      check(total_delay(m_t), o.delay());
      terms.push_back(m_t);
      delays.push_back(total_delay(m_t));
      e_sum += o.energy();
      d_sum += o.delay();
    }
    const double e_fly = flight_energy(speed, t_fly, c);
    check(total_energy(e_fly, terms), e_sum);
    check(utility(total_energy(e_fly, terms), delays, c), (ld)c.eta * e_sum + (1 - (ld)c.eta) * d_sum);
  }
  return {worst <= 1e-12, std::to_string(checks) + " values, max relative error " + sci(worst) + " (limit 1e-12)"};
}

// --- convex allocation ----------------------------------------------------------

Verdict convex_oracle() {
  std::mt19937_64 rng(77);
  auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  double worst_gap = -INFINITY, worst_kkt = 0.0;
  int over = 0;
  for (int inst = 0; inst < 50; ++inst) {
    AllocProblem p = AllocProblem::from_config(profile_config("table2").net, 1);
    p.eta = U(0.05, 0.95);
    const int users = 1 + inst % 3;
    std::vector<double> d, lo;
    for (int u = 0; u < users; ++u) {
      AllocUser a;
      const double bits = U(1e4, 1e6), al = U(0, 1);
      a.d_in_bits = (1 - al) * bits;
      a.d_mec_bits = al * bits;
      a.local = {U(1e8, 5e8), U(6e8, 1e10)};
      a.c_min_mec = U(1e8, 1e9);
      p.users.push_back(a);
      d.push_back(a.d_mec_bits);
      lo.push_back(a.c_min_mec);
    }
    const double floor = std::accumulate(lo.begin(), lo.end(), 0.0);
    const double free_c = std::cbrt((1 - p.eta) / (2 * p.eta * p.q_uav));
    p.c_uav_max = floor + U(0.05, 1.5) * std::max(users * free_c - floor, 1e9);

    const auto s = solve_p11(p);
    worst_kkt = std::max(worst_kkt, kkt_residuals(p, s).max());
    ld want = 0;
    for (const auto& a : p.users) {
      const ld x = oracle::golden_min(
          [&](ld c) { return oracle::cpu_cost(c, a.d_in_bits, p.eta, p.q_mu, p.beta_mu); }, a.local.lo, a.local.hi);
      want += oracle::cpu_cost(x, a.d_in_bits, p.eta, p.q_mu, p.beta_mu);
    }
    want += oracle::mec_grid_min(d, lo, p.c_uav_max, p.eta, p.q_uav, p.beta_uav);
    const double gap = (double)(((ld)s.objective - want) / want);
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-12) ++over;  // the grid is refined until its own error is far below this
  }
  const bool ok = over == 0 && worst_kkt <= 1e-8;
  return {ok, "50 instances, worst (solver - grid)/grid " + sci(worst_gap) + " (bound 1e-12), max KKT residual " +
                  sci(worst_kkt) + " (limit 1e-8)"};
}

// --- gradients -------------------------------------------------------------------

Verdict gradient_checks() {
  std::mt19937_64 rng(31);
  std::ostringstream msg;
  double worst = 0.0;
  auto note = [&](const char* what, double e) {
    worst = std::max(worst, e);
    msg << what << " " << sci(e) << ", ";
  };
  {
    nn::Mlp net(6, {16, 16}, 3, "m", rng);
    Matrix x = randn(6, 5, rng);
    const Matrix w = randn(3, 5, rng);
    nn::zero_grad(net.params());
    net.forward(x);
    const Matrix dx = net.backward(w);
    auto loss = [&] { return weighted_sum(net.forward(x), w); };
    note("mlp", std::max(gradcheck::params(net.params(), loss), gradcheck::input(x, dx, loss)));
  }
  {
    nn::MhaEncoder enc({4, 3, 5}, "enc", rng);
    std::vector<Matrix> s{randn(3, 4, rng), randn(3, 4, rng), randn(3, 4, rng), randn(3, 4, rng)};
    const std::vector<const Matrix*> ptr{&s[0], &s[1], &s[2], &s[3]};
    const std::vector<int> active{0, 1, 3, 4};
    const Matrix w = randn(20, 4, rng);
    nn::zero_grad(enc.params());
    enc.forward(ptr, active);
    enc.backward(w);
    auto loss = [&] { return weighted_sum(enc.forward(ptr, active), w); };
    note("mha", gradcheck::params(enc.params(), loss, 1e-5, 200));
  }
  {
    nn::GaussianHead g(3, -0.4, "g");
    g.log_std_param().value << -0.2, 0.1, -0.7;
    std::vector<Vector> z, m;
    const std::vector<int> act{3, 2, 1};
    const std::vector<double> coef{0.7, -1.3, 0.4};
    for (int j = 0; j < 3; ++j) {
      m.push_back(randn(3, 1, rng));
      z.push_back(m.back() + randn(3, 1, rng));
    }
    auto loss = [&] {
      double l = 0;
      for (int j = 0; j < 3; ++j) l += coef[j] * g.log_prob(z[j], m[j], act[j]);
      return l + 0.3 * g.entropy(3);
    };
    nn::zero_grad(g.params());
    for (int j = 0; j < 3; ++j) g.accumulate_dlogp(z[j], m[j], act[j], coef[j]);
    g.accumulate_dentropy(3, 0.3);
    double e = gradcheck::params(g.params(), loss);
    for (int j = 0; j < 3; ++j) {
      Matrix mj = m[j];
      const Matrix ana = g.dlogp_dmean(z[j], m[j], act[j]);
      e = std::max(e, gradcheck::input(mj, ana, [&] { return g.log_prob(z[j], mj.col(0), act[j]); }));
    }
    note("gaussian", e);
  }
  {
    ppo::ActorCritic ac(5, 4, 3, {8, 8}, -0.3, "ag", rng);
    ppo::Batch b;
    const int B = 12;
    b.actor_in = randn(5, B, rng);
    b.critic_in = randn(4, B, rng);
    const Matrix mu = ac.mean(b.actor_in);
    b.z.resize(3, B);
    const double ratios[] = {0.5, 0.95, 1.05, 1.6};
    std::normal_distribution<double> n01;
    for (int j = 0; j < B; ++j) {
      const int a = 1 + j % 3;
      b.active.push_back(a);
      b.z.col(j) = ac.head().sample(mu.col(j), a, rng);
      b.log_prob_old.push_back(ac.head().log_prob(b.z.col(j), mu.col(j), a) - std::log(ratios[j % 4]));
      b.advantages.push_back(n01(rng));
      b.returns.push_back(n01(rng));
    }
    PpoHyper h;
    nn::zero_grad(ac.params());
    Matrix dx;
    ac.loss(b, h, true, &dx);
    auto loss = [&] { return ac.loss(b, h, false).loss; };
    note("ppo_loss", std::max(gradcheck::params(ac.params(), loss, 1e-6, 200), gradcheck::input(b.actor_in, dx, loss, 1e-6)));
  }
  msg << "limit 1e-4";
  return {worst <= 1e-4, msg.str()};
}

Verdict gae_and_clip() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3), g(0.5, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 60;
    std::vector<double> r(n), v(n + 1);
    for (auto& x : r) x = u(rng);
    for (auto& x : v) x = u(rng);
    const double gamma = g(rng), lambda = g(rng);
    const auto got = ppo::compute_gae(r, v, gamma, lambda);
    const auto want = oracle::gae_direct(r, v, gamma, lambda);
    for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(got.advantages[i] - want[i]));
  }
  const auto ex = ppo::compute_gae({1, 2}, {0, 0, 0}, 0.99, 0.95);
  const bool examples = ppo::clipped_surrogate(1.3, 1.0, 0.2) == 1.2 && ppo::clipped_surrogate(0.5, -1.0, 0.2) == -0.8 &&
                        ppo::clipped_surrogate(1.0, -0.37, 0.1) == -0.37 &&
                        std::abs(ex.advantages[0] - 2.8810) < 1e-12;
  bool pessimistic = true;
  std::uniform_real_distribution<double> rr(1e-3, 5), aa(-5, 5), ee(0.01, 0.99);
  for (int i = 0; i < 100000; ++i) {
    const double x = rr(rng), y = aa(rng);
    pessimistic &= ppo::clipped_surrogate(x, y, ee(rng)) <= x * y;
  }
  return {worst <= 1e-10 && examples && pessimistic,
          "GAE max abs error " + sci(worst) + " (limit 1e-10), clip examples " + (examples ? "exact" : "WRONG") +
              ", pessimistic bound " + (pessimistic ? "holds" : "VIOLATED")};
}

Verdict mha_size_invariance() {
  std::mt19937_64 rng(8);
  const nn::MhaEncoderSpec spec{8, kMuStateDim, 16};
  nn::MhaEncoder enc(spec, "enc", rng);
  const Matrix full = randn(kMuStateDim, 8, rng);
  const Vector empty = enc.encode(Matrix::Zero(kMuStateDim, 8), 0);
  int bad = 0;
  for (int active = 0; active <= spec.max_users; ++active) {
    Matrix padded = Matrix::Zero(kMuStateDim, 8);
    padded.leftCols(active) = full.leftCols(active);
    const Vector a = enc.encode(padded, active), b = enc.encode(full, active);
    if (a.size() != spec.output_dim() || a != b) ++bad;
    for (int h = active; h < spec.max_users; ++h)
      if (a.segment(h * spec.head_dim, spec.head_dim) != empty.segment(h * spec.head_dim, spec.head_dim)) ++bad;
  }
  return {bad == 0, "output dim " + std::to_string(spec.output_dim()) + " for 0.." + std::to_string(spec.max_users) +
                        " active users, " + std::to_string(bad) + " mismatches"};
}

Verdict reward_reconstruction() {
  const Config cfg = profile_config("micro");
  Environment env(cfg);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0), p(0.0, cfg.net.p_max_watt), d(-40, 40);
  long checked = 0, bad = 0;
  for (int ep = 0; ep < 20; ++ep) {
    env.reset(derive_seed(99, 0, static_cast<std::uint64_t>(ep)));
    std::vector<double> prev;
    while (!env.done()) {
      ActionSet a = empty_actions(env.state());
      for (auto& x : a) {
        for (auto& w : x.omega_ul) w = u(rng) * (ep % 2 ? 0.5 : 1.0);
        for (auto& w : x.omega_dl) w = u(rng) * (ep % 2 ? 0.5 : 1.0);
        for (auto& w : x.p_dl) w = p(rng);
        for (auto& w : x.alpha) w = u(rng);
        x.dx = d(rng);
        x.dy = d(rng);
      }
      const auto r = env.step(a);
      for (std::size_t v = 0; v < r.uavs.size(); ++v) {
        const auto& m = r.uavs[v];
        const auto& rw = r.rewards[v];
        const double u_prev = prev.empty() ? m.utility : prev[v];
        const double delta = -(m.utility - u_prev);
        const double F = m.slack.ul_sum >= 0, Fd = m.slack.dl_sum >= 0, G = m.slack.power_sum >= 0;
        const double h = m.slack.separation < 0;
        bad += rw.delta != delta;
        bad += rw.omega_ul != delta + cfg.env.zeta_ul * F * m.slack.ul_sum;
        bad += rw.omega_dl != delta + cfg.env.zeta_dl * Fd * m.slack.dl_sum;
        bad += rw.power != delta + cfg.env.nu * G * m.slack.power_sum;
        bad += rw.alpha != delta;
        bad += rw.trajectory != delta - cfg.env.xi * h;
        checked += 6;
      }
      prev.clear();
      for (const auto& m : r.uavs) prev.push_back(m.utility);
    }
  }
  return {bad == 0, std::to_string(checked) + " reward terms reconstructed, " + std::to_string(bad) + " mismatches"};
}

// --- learning ---------------------------------------------------------------------

struct SeedResult {
  double first = 0, last = 0, cost = 0, base = 0, learned = 0, worst_fixed = 0;
};

std::vector<SeedResult> g_seeds;

void train_seeds() {
  const Config cfg = profile_config("micro");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainOptions o;
    o.seed = seed;
    auto res = train(cfg, Algo::kRmappo, o);
    SeedResult s;
    const std::size_t n = res.episodes.size(), k = std::max<std::size_t>(1, n / 10);
    for (std::size_t i = 0; i < k; ++i) {
      s.first += res.episodes[i].ret / k;
      s.last += res.episodes[n - 1 - i].ret / k;
    }
    EvalOptions eo;
    eo.episodes = cfg.train.eval_episodes;
    eo.seed = seed;
    s.cost = evaluate(res.bundle.get(), cfg, eo).mean_cost;
    eo.fairness = FairnessKind::kAll;
    s.base = evaluate(nullptr, cfg, eo).mean_cost;
    const auto rows = sweep_alpha_fixed(*res.bundle, cfg, {0.3, 0.5, 0.7}, cfg.train.eval_episodes, seed);
    s.learned = rows.back().mean_cost;
    s.worst_fixed = std::max({rows[0].mean_cost, rows[1].mean_cost, rows[2].mean_cost});
    g_seeds.push_back(s);
    std::cout << "  seed " << seed << ": " << n << " episodes, return first 10% " << s.first << " last 10% " << s.last
              << ", eval cost " << s.cost << " vs fairness_all " << s.base << ", learned alpha " << s.learned
              << " vs worst fixed " << s.worst_fixed << " ["
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s]" << std::endl;
  }
}

Verdict learning_progress() {
  int ok = 0;
  for (const auto& s : g_seeds) ok += s.last > s.first;
  return {ok >= 4, std::to_string(ok) + "/5 seeds improve final-10% return over first-10% (need 4)"};
}

Verdict learning_vs_fairness() {
  int ok = 0;
  for (const auto& s : g_seeds) ok += s.cost <= s.base;
  return {ok >= 3, std::to_string(ok) + "/5 seeds evaluate at or below the fairness_all cost (need 3)"};
}

Verdict alpha_sweep() {
  int ok = 0;
  for (const auto& s : g_seeds) ok += s.learned <= s.worst_fixed;
  return {ok >= 4, std::to_string(ok) + "/5 seeds: learned ratio cost <= max fixed {0.3,0.5,0.7} cost (need 4)"};
}

// --- reproducibility ----------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict reproducibility() {
  const fs::path root = fs::temp_directory_path() / "thzmec_acceptance_repro";
  fs::remove_all(root);
  std::ostringstream sink;
  for (const char* d : {"a", "b"}) {
    const std::string out = (root / d).string();
    if (run_cli({"train", "--profile", "micro", "--episodes", "3", "--seed", "7", "--out", out}, sink, sink) != 0 ||
        run_cli({"export", "--run", out}, sink, sink) != 0)
      return {false, "CLI invocation failed: " + sink.str()};
  }
  int files = 0, diff = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (e.path().extension() != ".csv") continue;
    ++files;
    diff += slurp(e.path()) != slurp(root / "b" / fs::relative(e.path(), root / "a"));
  }
  return {files > 0 && diff == 0, std::to_string(files) + " CSV files compared, " + std::to_string(diff) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  Eigen::setNbThreads(1);
  bool learning = true;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--skip-learning") == 0) learning = false;

  run("physics oracle", 1.0, physics_oracle);
  run("convex solver oracle", 30.0, convex_oracle);
  run("gradient checks", 60.0, gradient_checks);
  run("GAE and clip suite", 0.0, gae_and_clip);
  run("MHA size invariance", 0.0, mha_size_invariance);
  run("constraint penalty reconstruction", 0.0, reward_reconstruction);
  run("CLI reproducibility", 0.0, reproducibility);
  if (learning) {
    std::cout << "training micro profile, seeds 0..4" << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    train_seeds();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "  total training and evaluation time " << secs << " s" << std::endl;
    run("learning progress", 0.0, learning_progress);
    run("learned policy vs fairness_all", 0.0, learning_vs_fairness);
    run("fixed offloading ratio sweep", 0.0, alpha_sweep);
  }
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASS" : std::to_string(g_failures) + " CRITERIA FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
