#pragma once

// Time-slotted MDP over the MEC-UAV network: MU placement and association,
// per-UAV observations, five per-resource actions, coordinator rewards with
// constraint-specific bonuses/penalties, and the equal-share baselines.

#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "thzmec/config.hpp"
#include "thzmec/convex_alloc.hpp"
#include "thzmec/net_model.hpp"

namespace thzmec {

enum class Role { kOmegaUl = 0, kOmegaDl = 1, kPower = 2, kAlpha = 3, kTrajectory = 4 };
inline constexpr int kNumRoles = 5;
inline constexpr std::array<Role, kNumRoles> kAllRoles = {Role::kOmegaUl, Role::kOmegaDl, Role::kPower, Role::kAlpha,
                                                         Role::kTrajectory};
std::string_view role_name(Role r);

/// Per-user state fed to the attention encoder: task size, CPU requirement
/// and planar position, each normalised to roughly [0,1].
inline constexpr int kMuStateDim = 4;

struct UavAction {
  std::vector<double> omega_ul;  // one entry per member MU, in member order
  std::vector<double> omega_dl;
  std::vector<double> p_dl;
  std::vector<double> alpha;
  double dx = 0.0;
  double dy = 0.0;
};
using ActionSet = std::vector<UavAction>;

struct RewardSet {
  double omega_ul = 0.0;
  double omega_dl = 0.0;
  double power = 0.0;
  double alpha = 0.0;
  double trajectory = 0.0;
  double delta = 0.0;  // shared utility-change term

  double of(Role r) const;
};

struct WorldState {
  int slot = 0;
  std::vector<Position> uav_pos;
  std::vector<Position> mu_pos;
  std::vector<int> assoc;                 // serving UAV per MU
  std::vector<std::vector<int>> members;  // MUs per UAV, ascending
  std::vector<Task> tasks;                // tasks of the current slot
  std::vector<double> prev_utility;       // per UAV; empty before the first step
  std::vector<double> fixed_c_in;         // P1.1 solution reused when not re-solving per slot
  std::vector<double> fixed_c_mec;
  std::mt19937_64 rng;
};

/// Slack of every per-UAV constraint; negative means violated.
struct UavViolations {
  double ul_sum = 0.0;     // 1 - sum omega_ul
  double ul_box = 0.0;     // min over users of min(omega_ul, 1 - omega_ul)
  double dl_sum = 0.0;     // 1 - sum omega_dl
  double dl_box = 0.0;
  double power_sum = 0.0;  // P_max - sum omega_dl * B * p
  double power_box = 0.0;  // min over users of min(p, P_max - p)
  double alpha_box = 0.0;
  double cpu_budget = 0.0;  // C_max - sum c_mec (after P1.1)
  double separation = 0.0;  // min distance to another UAV minus L_min
  double speed = 0.0;       // V_max - speed
  double rate_ul = 0.0;     // min over users of R_ul - R_min
  double rate_dl = 0.0;

  static constexpr int kCount = 12;
  std::array<double, kCount> slacks() const;
  static std::array<std::string_view, kCount> names();
  int violated() const;
};

struct UavSlotMetrics {
  int slot = 0;
  int uav = 0;
  int members = 0;
  double utility = 0.0;
  double energy = 0.0;
  double e_fly = 0.0;
  double e_local = 0.0;
  double e_ul = 0.0;
  double e_mec = 0.0;
  double e_dl = 0.0;
  double delay_sum = 0.0;
  double sum_omega_ul = 0.0;
  double sum_omega_dl = 0.0;
  double sum_power = 0.0;
  double mean_alpha = 0.0;
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  int infeasible_links = 0;
  UavViolations slack;
  RewardSet reward;
};

struct MuSlotMetrics {
  int slot = 0;
  int mu = 0;
  int uav = 0;
  double d_pre = 0.0;
  double alpha = 0.0;
  double omega_ul = 0.0;
  double omega_dl = 0.0;
  double p_dl = 0.0;
  double distance = 0.0;
  double rate_ul = 0.0;
  double rate_dl = 0.0;
  double c_in = 0.0;
  double c_mec = 0.0;
  double delay = 0.0;
};

struct StepResult {
  std::vector<RewardSet> rewards;  // per UAV
  std::vector<UavSlotMetrics> uavs;
  std::vector<MuSlotMetrics> mus;
  bool done = false;
};

struct UavObservation {
  Position pos;
  std::vector<double> states;  // kMuStateDim x max_users, column-major, zero-padded
  int active = 0;
};

/// Nearest UAV in planar distance; ties go to the lowest index.
std::vector<int> associate(const std::vector<Position>& mu_positions, const std::vector<Position>& uav_positions);

/// Post-move UAV positions: per-axis clamp to V_max*D, then speed clamp, then
/// region clamp.
std::vector<Position> apply_moves(const WorldState& state, const ActionSet& actions, const Config& cfg);

/// Constraint slacks the given actions would produce from `state`.
std::vector<UavViolations> violation_report(const WorldState& state, const ActionSet& actions, const Config& cfg);

/// Coordinator rewards for one UAV from its slacks and utilities.
RewardSet compute_rewards(const UavViolations& slack, double u_prev, double u_now, const Config& cfg);

enum class FairnessKind { kAll, kBandwidth, kPower };
FairnessKind parse_fairness(std::string_view name);

/// Equal-share actions. kAll fixes every variable (and flies toward the
/// members' centroid at V_max); kBandwidth/kPower overwrite only those
/// fields of `actions`.
void apply_fairness(FairnessKind kind, const WorldState& state, const Config& cfg, ActionSet& actions);
ActionSet fairness_policy(FairnessKind kind, const WorldState& state, const Config& cfg);

/// Zero-initialised action set shaped for the current association.
ActionSet empty_actions(const WorldState& state);

class Environment {
 public:
  explicit Environment(Config cfg);

  const WorldState& reset(std::uint64_t seed);
  StepResult step(const ActionSet& actions);

  std::vector<UavObservation> observe() const;
  const WorldState& state() const { return state_; }
  const Config& config() const { return cfg_; }
  bool done() const { return state_.slot >= cfg_.env.num_slots; }

  /// P1.1 instance for the current tasks and the given offloading ratios.
  AllocProblem alloc_problem(const std::vector<double>& alpha_per_mu) const;

 private:
  void sample_tasks();

  Config cfg_;
  WorldState state_;
};

}  // namespace thzmec
