#include "thzmec/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace thzmec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct MuEval {
  MuSlotTerms terms;
  double d_in = 0.0, d_mec = 0.0, distance = 0.0, rate_ul = 0.0, rate_dl = 0.0, c_in = 0.0, c_mec = 0.0;
  bool infeasible_ul = false, infeasible_dl = false;
};

struct UavEval {
  double speed = 0.0;
  double e_fly = 0.0;
  double energy = 0.0;
  double delay_sum = 0.0;
  double utility = 0.0;
  UavViolations slack;
};

struct SlotEval {
  std::vector<Position> new_pos;
  std::vector<UavEval> uavs;
  std::vector<MuEval> mus;
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

void check_actions(const WorldState& s, const ActionSet& actions, const Config& cfg, bool strict) {
  if (actions.size() != s.members.size()) throw DomainError("action set must hold one entry per UAV");
  for (std::size_t v = 0; v < actions.size(); ++v) {
    const auto& a = actions[v];
    const std::size_t n = s.members[v].size();
    if (a.omega_ul.size() != n || a.omega_dl.size() != n || a.p_dl.size() != n || a.alpha.size() != n) {
      std::ostringstream msg;
      msg << "UAV " << v << ": per-user action vectors must have " << n << " entries";
      throw DomainError(msg.str());
    }
    if (!std::isfinite(a.dx) || !std::isfinite(a.dy)) throw DomainError("trajectory step must be finite");
    for (std::size_t i = 0; i < n; ++i) {
      const double vals[] = {a.omega_ul[i], a.omega_dl[i], a.p_dl[i], a.alpha[i]};
      for (double x : vals)
        if (!std::isfinite(x)) throw DomainError("actions must be finite");
      if (!strict) continue;
      if (a.omega_ul[i] < 0 || a.omega_ul[i] > 1 || a.omega_dl[i] < 0 || a.omega_dl[i] > 1 || a.alpha[i] < 0 ||
          a.alpha[i] > 1 || a.p_dl[i] < 0 || a.p_dl[i] > cfg.net.p_max_watt)
        throw DomainError("per-user action outside its allowed interval");
    }
  }
}

SlotEval evaluate_slot(const WorldState& s, const ActionSet& actions, const Config& cfg,
                       const std::vector<double>* c_in_fixed, const std::vector<double>* c_mec_fixed) {
  const auto& net = cfg.net;
  const int nu = static_cast<int>(s.uav_pos.size());
  const int nm = static_cast<int>(s.mu_pos.size());
  SlotEval ev;
  ev.new_pos = apply_moves(s, actions, cfg);
  ev.uavs.resize(static_cast<std::size_t>(nu));
  ev.mus.resize(static_cast<std::size_t>(nm));

  // per-MU view of the actions
  std::vector<double> alpha(static_cast<std::size_t>(nm), 0.0), w_ul(alpha), w_dl(alpha), p(alpha);
  for (int v = 0; v < nu; ++v) {
    const auto& mem = s.members[static_cast<std::size_t>(v)];
    const auto& a = actions[static_cast<std::size_t>(v)];
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const auto u = static_cast<std::size_t>(mem[i]);
      alpha[u] = clamp01(a.alpha[i]);
      w_ul[u] = std::max(0.0, a.omega_ul[i]);
      w_dl[u] = std::max(0.0, a.omega_dl[i]);
      p[u] = std::max(0.0, a.p_dl[i]);
    }
  }

  std::vector<double> c_in, c_mec;
  if (c_in_fixed && c_mec_fixed) {
    c_in = *c_in_fixed;
    c_mec = *c_mec_fixed;
  } else {
    AllocProblem prob = AllocProblem::from_config(net, nu);
    for (int u = 0; u < nm; ++u) {
      const auto split = split_task(alpha[static_cast<std::size_t>(u)], s.tasks[static_cast<std::size_t>(u)].d_pre_bits);
      AllocUser user;
      user.d_in_bits = split.d_in_bits;
      user.d_mec_bits = split.d_mec_bits;
      user.local = {s.tasks[static_cast<std::size_t>(u)].c_min_cycles_per_s, net.c_mu_max};
      user.c_min_mec = s.tasks[static_cast<std::size_t>(u)].c_min_cycles_per_s;
      user.uav = s.assoc[static_cast<std::size_t>(u)];
      prob.users.push_back(user);
    }
    auto sol = solve_p11(prob);
    c_in = std::move(sol.c_in);
    c_mec = std::move(sol.c_mec);
  }

  for (int u = 0; u < nm; ++u) {
    const auto uu = static_cast<std::size_t>(u);
    auto& m = ev.mus[uu];
    const int v = s.assoc[uu];
    const auto split = split_task(alpha[uu], s.tasks[uu].d_pre_bits);
    m.d_in = split.d_in_bits;
    m.d_mec = split.d_mec_bits;
    m.c_in = c_in[uu];
    m.c_mec = c_mec[uu];
    m.distance = link_distance(ev.new_pos[static_cast<std::size_t>(v)], s.mu_pos[uu], net);
    m.rate_ul = uplink_rate(w_ul[uu], m.distance, net);
    m.rate_dl = downlink_rate(w_dl[uu], p[uu], m.distance, net);

    m.terms.t_local = local_delay(m.d_in, m.c_in, net);
    m.terms.e_local = local_energy(m.d_in, m.c_in, net);
    try {
      m.terms.t_ul = uplink_delay(m.d_mec, m.rate_ul);
    } catch (const InfeasibleLinkError&) {
      m.terms.t_ul = cfg.env.infeasible_delay_s;
      m.infeasible_ul = true;
    }
    m.terms.e_ul = uplink_energy(m.terms.t_ul, net);
    m.terms.t_mec = mec_delay(m.d_mec, m.c_mec, net);
    m.terms.e_mec = mec_energy(m.d_mec, m.c_mec, net);
    const double d_post = post_size(m.d_mec, net);
    try {
      m.terms.t_dl = downlink_delay(d_post, m.rate_dl);
    } catch (const InfeasibleLinkError&) {
      m.terms.t_dl = cfg.env.infeasible_delay_s;
      m.infeasible_dl = true;
    }
    m.terms.e_dl = downlink_energy(m.terms.t_dl, p[uu]);
  }

  for (int v = 0; v < nu; ++v) {
    const auto vv = static_cast<std::size_t>(v);
    auto& ue = ev.uavs[vv];
    const auto& mem = s.members[vv];
    const auto& a = actions[vv];
    // apply_moves bounds the step; recomputing it from positions can overshoot by an ulp.
    ue.speed = std::min(planar_distance(s.uav_pos[vv], ev.new_pos[vv]) / net.slot_duration_s, net.v_max_mps);
    ue.e_fly = flight_energy(ue.speed, cfg.env.t_fly_s, net);
    std::vector<MuSlotTerms> terms;
    double delay_sum = 0.0;
    for (int u : mem) {
      terms.push_back(ev.mus[static_cast<std::size_t>(u)].terms);
      delay_sum += total_delay(terms.back());
    }
    ue.energy = total_energy(ue.e_fly, terms);
    ue.delay_sum = delay_sum;
    ue.utility = utility(ue.energy, delay_sum, net);

    auto& sl = ue.slack;
    double sum_ul = 0.0, sum_dl = 0.0, sum_pow = 0.0, c_sum = 0.0;
    sl.ul_box = sl.dl_box = sl.power_box = sl.alpha_box = kInf;
    sl.rate_ul = sl.rate_dl = kInf;
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const auto u = static_cast<std::size_t>(mem[i]);
      sum_ul += a.omega_ul[i];
      sum_dl += a.omega_dl[i];
      sum_pow += a.omega_dl[i] * net.bandwidth_hz * a.p_dl[i];
      c_sum += c_mec[u];
      sl.ul_box = std::min(sl.ul_box, std::min(a.omega_ul[i], 1.0 - a.omega_ul[i]));
      sl.dl_box = std::min(sl.dl_box, std::min(a.omega_dl[i], 1.0 - a.omega_dl[i]));
      sl.power_box = std::min(sl.power_box, std::min(a.p_dl[i], net.p_max_watt - a.p_dl[i]));
      sl.alpha_box = std::min(sl.alpha_box, std::min(a.alpha[i], 1.0 - a.alpha[i]));
      sl.rate_ul = std::min(sl.rate_ul, ev.mus[u].rate_ul - net.r_min_bps);
      sl.rate_dl = std::min(sl.rate_dl, ev.mus[u].rate_dl - net.r_min_bps);
    }
    sl.ul_sum = 1.0 - sum_ul;
    sl.dl_sum = 1.0 - sum_dl;
    sl.power_sum = net.p_max_watt - sum_pow;
    sl.cpu_budget = net.c_uav_max - c_sum;
    sl.speed = net.v_max_mps - ue.speed;
    sl.separation = kInf;
    for (int w = 0; w < nu; ++w) {
      if (w == v) continue;
      sl.separation = std::min(sl.separation, planar_distance(ev.new_pos[vv], ev.new_pos[static_cast<std::size_t>(w)]) -
                                                   net.l_min_m);
    }
  }
  return ev;
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kOmegaUl: return "omega_ul";
    case Role::kOmegaDl: return "omega_dl";
    case Role::kPower: return "power";
    case Role::kAlpha: return "alpha";
    case Role::kTrajectory: return "trajectory";
  }
  return "?";
}

double RewardSet::of(Role r) const {
  switch (r) {
    case Role::kOmegaUl: return omega_ul;
    case Role::kOmegaDl: return omega_dl;
    case Role::kPower: return power;
    case Role::kAlpha: return alpha;
    case Role::kTrajectory: return trajectory;
  }
  return 0.0;
}

std::array<double, UavViolations::kCount> UavViolations::slacks() const {
  return {ul_sum, ul_box, dl_sum, dl_box, power_sum, power_box, alpha_box, cpu_budget, separation, speed, rate_ul, rate_dl};
}

std::array<std::string_view, UavViolations::kCount> UavViolations::names() {
  return {"ul_sum", "ul_box", "dl_sum", "dl_box", "power_sum", "power_box",
          "alpha_box", "cpu_budget", "separation", "speed", "rate_ul", "rate_dl"};
}

int UavViolations::violated() const {
  int n = 0;
  for (double s : slacks()) n += s < 0.0;
  return n;
}

std::vector<int> associate(const std::vector<Position>& mu_positions, const std::vector<Position>& uav_positions) {
  if (uav_positions.empty()) throw DomainError("associate: need at least one UAV");
  std::vector<int> out(mu_positions.size(), 0);
  for (std::size_t u = 0; u < mu_positions.size(); ++u) {
    double best = kInf;
    for (std::size_t v = 0; v < uav_positions.size(); ++v) {
      const double d = planar_distance(mu_positions[u], uav_positions[v]);
      if (d < best) {
        best = d;
        out[u] = static_cast<int>(v);
      }
    }
  }
  return out;
}

std::vector<Position> apply_moves(const WorldState& state, const ActionSet& actions, const Config& cfg) {
  const double step_max = cfg.net.v_max_mps * cfg.net.slot_duration_s;
  std::vector<Position> out(state.uav_pos.size());
  for (std::size_t v = 0; v < state.uav_pos.size(); ++v) {
    double dx = std::clamp(actions[v].dx, -step_max, step_max);
    double dy = std::clamp(actions[v].dy, -step_max, step_max);
    const double norm = std::hypot(dx, dy);
    if (norm > step_max) {
      dx *= step_max / norm;
      dy *= step_max / norm;
    }
    out[v].x_m = std::clamp(state.uav_pos[v].x_m + dx, 0.0, cfg.env.region_m);
    out[v].y_m = std::clamp(state.uav_pos[v].y_m + dy, 0.0, cfg.env.region_m);
  }
  return out;
}

std::vector<UavViolations> violation_report(const WorldState& state, const ActionSet& actions, const Config& cfg) {
  check_actions(state, actions, cfg, false);
  const bool fixed = !cfg.env.p11_resolve_per_slot && !state.fixed_c_in.empty();
  auto ev = evaluate_slot(state, actions, cfg, fixed ? &state.fixed_c_in : nullptr,
                          fixed ? &state.fixed_c_mec : nullptr);
  std::vector<UavViolations> out;
  for (const auto& u : ev.uavs) out.push_back(u.slack);
  return out;
}

RewardSet compute_rewards(const UavViolations& slack, double u_prev, double u_now, const Config& cfg) {
  const auto& e = cfg.env;
  RewardSet r;
  r.delta = e.reward_sign_paper ? (u_now - u_prev) : -(u_now - u_prev);
  const double f_ul = slack.ul_sum;
  const double f_dl = slack.dl_sum;
  const double g = slack.power_sum;
  const double F_ul = f_ul >= 0.0 ? 1.0 : 0.0;
  const double F_dl = f_dl >= 0.0 ? 1.0 : 0.0;
  const double G = g >= 0.0 ? 1.0 : 0.0;
  const double h = slack.separation < 0.0 ? 1.0 : 0.0;
  r.omega_ul = r.delta + e.zeta_ul * F_ul * f_ul;
  r.omega_dl = r.delta + e.zeta_dl * F_dl * f_dl;
  r.power = r.delta + e.nu * G * g;
  r.alpha = r.delta;
  r.trajectory = r.delta - e.xi * h;
  return r;
}

FairnessKind parse_fairness(std::string_view name) {
  if (name == "fairness_all" || name == "all") return FairnessKind::kAll;
  if (name == "fairness_w" || name == "w") return FairnessKind::kBandwidth;
  if (name == "fairness_p" || name == "p") return FairnessKind::kPower;
  throw DomainError("unknown fairness baseline '" + std::string(name) + "'");
}

ActionSet empty_actions(const WorldState& state) {
  ActionSet a(state.members.size());
  for (std::size_t v = 0; v < a.size(); ++v) {
    const auto n = state.members[v].size();
    a[v].omega_ul.assign(n, 0.0);
    a[v].omega_dl.assign(n, 0.0);
    a[v].p_dl.assign(n, 0.0);
    a[v].alpha.assign(n, 0.0);
  }
  return a;
}

void apply_fairness(FairnessKind kind, const WorldState& state, const Config& cfg, ActionSet& actions) {
  const auto& net = cfg.net;
  for (std::size_t v = 0; v < actions.size(); ++v) {
    auto& a = actions[v];
    const auto& mem = state.members[v];
    const double n = static_cast<double>(mem.size());
    if (kind == FairnessKind::kAll || kind == FairnessKind::kBandwidth) {
      std::fill(a.omega_ul.begin(), a.omega_ul.end(), 1.0 / n);
      std::fill(a.omega_dl.begin(), a.omega_dl.end(), 1.0 / n);
    }
    if (kind == FairnessKind::kAll || kind == FairnessKind::kPower) {
      // Equal power chosen so that sum omega_dl * B * p meets P_max exactly.
      double w = 0.0;
      for (double x : a.omega_dl) w += x;
      const double p = w > 0.0 ? std::min(net.p_max_watt, net.p_max_watt / (net.bandwidth_hz * w)) : net.p_max_watt;
      std::fill(a.p_dl.begin(), a.p_dl.end(), p);
    }
    if (kind == FairnessKind::kAll) {
      std::fill(a.alpha.begin(), a.alpha.end(), 0.5);
      a.dx = a.dy = 0.0;
      if (!mem.empty()) {
        double cx = 0.0, cy = 0.0;
        for (int u : mem) {
          cx += state.mu_pos[static_cast<std::size_t>(u)].x_m;
          cy += state.mu_pos[static_cast<std::size_t>(u)].y_m;
        }
        cx /= n;
        cy /= n;
        const double ex = cx - state.uav_pos[v].x_m;
        const double ey = cy - state.uav_pos[v].y_m;
        const double dist = std::hypot(ex, ey);
        if (dist > 0.0) {
          const double step = std::min(net.v_max_mps * net.slot_duration_s, dist);
          a.dx = ex / dist * step;
          a.dy = ey / dist * step;
        }
      }
    }
  }
}

ActionSet fairness_policy(FairnessKind kind, const WorldState& state, const Config& cfg) {
  ActionSet a = empty_actions(state);
  if (kind != FairnessKind::kAll) {
    // Fields not fixed by the baseline default to the all-fair values.
    apply_fairness(FairnessKind::kAll, state, cfg, a);
  }
  apply_fairness(kind, state, cfg, a);
  return a;
}

Environment::Environment(Config cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void Environment::sample_tasks() {
  std::uniform_real_distribution<double> bits(cfg_.env.task_bits_min, cfg_.env.task_bits_max);
  state_.tasks.resize(static_cast<std::size_t>(cfg_.env.num_mus));
  for (auto& t : state_.tasks) {
    t.d_pre_bits = bits(state_.rng);
    t.c_min_cycles_per_s = cfg_.net.c_mu_min;
  }
}

const WorldState& Environment::reset(std::uint64_t seed) {
  state_ = WorldState{};
  state_.rng.seed(seed);
  std::uniform_real_distribution<double> coord(0.0, cfg_.env.region_m);
  state_.mu_pos.resize(static_cast<std::size_t>(cfg_.env.num_mus));
  for (auto& p : state_.mu_pos) {
    p.x_m = coord(state_.rng);
    p.y_m = coord(state_.rng);
  }
  for (const auto& s : cfg_.env.spawn) state_.uav_pos.push_back({s.x, s.y});
  state_.assoc = associate(state_.mu_pos, state_.uav_pos);
  state_.members.assign(state_.uav_pos.size(), {});
  for (std::size_t u = 0; u < state_.assoc.size(); ++u)
    state_.members[static_cast<std::size_t>(state_.assoc[u])].push_back(static_cast<int>(u));
  for (const auto& m : state_.members)
    if (static_cast<int>(m.size()) > cfg_.env.max_users)
      throw DomainError("association assigns more MUs to a UAV than env.max_users attention slots");
  sample_tasks();
  if (!cfg_.env.p11_resolve_per_slot) {
    // Single up-front solve with a neutral split, reused for the episode.
    auto prob = alloc_problem(std::vector<double>(state_.mu_pos.size(), 0.5));
    auto sol = solve_p11(prob);
    state_.fixed_c_in = sol.c_in;
    state_.fixed_c_mec = sol.c_mec;
  }
  return state_;
}

AllocProblem Environment::alloc_problem(const std::vector<double>& alpha_per_mu) const {
  AllocProblem prob = AllocProblem::from_config(cfg_.net, static_cast<int>(state_.uav_pos.size()));
  for (std::size_t u = 0; u < state_.mu_pos.size(); ++u) {
    const auto split = split_task(alpha_per_mu[u], state_.tasks[u].d_pre_bits);
    AllocUser user;
    user.d_in_bits = split.d_in_bits;
    user.d_mec_bits = split.d_mec_bits;
    user.local = {state_.tasks[u].c_min_cycles_per_s, cfg_.net.c_mu_max};
    user.c_min_mec = state_.tasks[u].c_min_cycles_per_s;
    user.uav = state_.assoc[u];
    prob.users.push_back(user);
  }
  return prob;
}

StepResult Environment::step(const ActionSet& actions) {
  if (done()) throw DomainError("step called on a finished episode");
  check_actions(state_, actions, cfg_, true);
  const bool fixed = !cfg_.env.p11_resolve_per_slot;
  auto ev = evaluate_slot(state_, actions, cfg_, fixed ? &state_.fixed_c_in : nullptr,
                          fixed ? &state_.fixed_c_mec : nullptr);

  StepResult out;
  const std::size_t nu = state_.uav_pos.size();
  const bool first = state_.prev_utility.empty();
  if (first) state_.prev_utility.assign(nu, 0.0);
  for (std::size_t v = 0; v < nu; ++v) {
    const auto& ue = ev.uavs[v];
    const double u_prev = first ? ue.utility : state_.prev_utility[v];
    RewardSet r = compute_rewards(ue.slack, u_prev, ue.utility, cfg_);
    out.rewards.push_back(r);

    UavSlotMetrics m;
    m.slot = state_.slot;
    m.uav = static_cast<int>(v);
    m.members = static_cast<int>(state_.members[v].size());
    m.utility = ue.utility;
    m.energy = ue.energy;
    m.e_fly = ue.e_fly;
    m.delay_sum = ue.delay_sum;
    m.x = ev.new_pos[v].x_m;
    m.y = ev.new_pos[v].y_m;
    m.speed = ue.speed;
    m.slack = ue.slack;
    m.reward = r;
    const auto& a = actions[v];
    for (std::size_t i = 0; i < state_.members[v].size(); ++i) {
      const auto u = static_cast<std::size_t>(state_.members[v][i]);
      const auto& me = ev.mus[u];
      m.e_local += me.terms.e_local;
      m.e_ul += me.terms.e_ul;
      m.e_mec += me.terms.e_mec;
      m.e_dl += me.terms.e_dl;
      m.sum_omega_ul += a.omega_ul[i];
      m.sum_omega_dl += a.omega_dl[i];
      m.sum_power += a.p_dl[i];
      m.mean_alpha += a.alpha[i];
      m.infeasible_links += me.infeasible_ul + me.infeasible_dl;

      MuSlotMetrics mm;
      mm.slot = state_.slot;
      mm.mu = static_cast<int>(u);
      mm.uav = static_cast<int>(v);
      mm.d_pre = state_.tasks[u].d_pre_bits;
      mm.alpha = a.alpha[i];
      mm.omega_ul = a.omega_ul[i];
      mm.omega_dl = a.omega_dl[i];
      mm.p_dl = a.p_dl[i];
      mm.distance = me.distance;
      mm.rate_ul = me.rate_ul;
      mm.rate_dl = me.rate_dl;
      mm.c_in = me.c_in;
      mm.c_mec = me.c_mec;
      mm.delay = total_delay(me.terms);
      out.mus.push_back(mm);
    }
    if (!state_.members[v].empty()) m.mean_alpha /= static_cast<double>(state_.members[v].size());
    out.uavs.push_back(m);
    state_.prev_utility[v] = ue.utility;
  }
  std::sort(out.mus.begin(), out.mus.end(), [](const auto& a, const auto& b) { return a.mu < b.mu; });

  state_.uav_pos = ev.new_pos;
  ++state_.slot;
  out.done = done();
  if (!out.done) sample_tasks();
  return out;
}

std::vector<UavObservation> Environment::observe() const {
  const int mx = cfg_.env.max_users;
  std::vector<UavObservation> obs(state_.uav_pos.size());
  for (std::size_t v = 0; v < obs.size(); ++v) {
    auto& o = obs[v];
    o.pos = state_.uav_pos[v];
    o.states.assign(static_cast<std::size_t>(kMuStateDim * mx), 0.0);
    const auto& mem = state_.members[v];
    o.active = static_cast<int>(mem.size());
    for (std::size_t i = 0; i < mem.size(); ++i) {
      const auto u = static_cast<std::size_t>(mem[i]);
      double* col = o.states.data() + i * kMuStateDim;
      col[0] = state_.tasks[u].d_pre_bits / cfg_.env.task_bits_max;
      col[1] = state_.tasks[u].c_min_cycles_per_s / cfg_.net.c_mu_max;
      col[2] = state_.mu_pos[u].x_m / cfg_.env.region_m;
      col[3] = state_.mu_pos[u].y_m / cfg_.env.region_m;
    }
  }
  return obs;
}

}  // namespace thzmec
