#pragma once

// Training orchestration: the per-role multi-agent learner with a shared
// attention encoder, the single-agent concatenated-action baseline,
// deterministic evaluation, the fixed-offloading sweep and checkpoints.

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "thzmec/config.hpp"
#include "thzmec/env.hpp"
#include "thzmec/nn.hpp"
#include "thzmec/ppo.hpp"

namespace thzmec {

enum class Algo { kRmappo, kGmappo };
Algo parse_algo(std::string_view name);
std::string_view algo_name(Algo a);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The checkpoint is intact but was written under a different config.
class CheckpointConfigMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Stable 64-bit seed derived from a base seed, a stream tag and an index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

/// Running mean and variance of critic targets; critics predict targets in
/// this normalised scale.
struct ValueNorm {
  double mean = 0.0;
  double var = 1.0;
  double count = 0.0;

  void update(const std::vector<double>& x);
  double std() const;
  double normalize(double x) const { return (x - mean) / std(); }
  double denormalize(double y) const { return mean + std() * y; }
};

/// Bounds of one action dimension after squashing.
struct ActionBounds {
  double lo = 0.0;
  double hi = 1.0;
};

/// Parameters of every agent plus their optimizer state. Agents are
/// indexed by Role for kRmappo; kGmappo has a single agent. Not copyable:
/// optimizers hold pointers into the parameters.
class PolicyBundle {
 public:
  PolicyBundle(const Config& cfg, Algo algo, std::uint64_t seed);
  PolicyBundle(const PolicyBundle&) = delete;
  PolicyBundle& operator=(const PolicyBundle&) = delete;

  Algo algo() const { return algo_; }
  int num_agents() const { return static_cast<int>(agents_.size()); }
  std::string agent_name(int k) const;
  int actor_in_dim() const { return actor_in_; }
  int critic_in_dim() const { return critic_in_; }
  int act_dim(int k) const { return agents_[static_cast<std::size_t>(k)].act_dim(); }
  /// Number of action dimensions in use for a UAV serving `users` MUs.
  int active_dims(int k, int users) const;
  ActionBounds bounds(int k, int dim) const;

  nn::MhaEncoder& encoder() { return encoder_; }
  ppo::ActorCritic& agent(int k) { return agents_[static_cast<std::size_t>(k)]; }
  nn::Adam& optimizer(int k) { return opts_[static_cast<std::size_t>(k)]; }
  nn::Adam& encoder_optimizer() { return enc_opt_; }
  ValueNorm& value_norm(int k) { return norms_[static_cast<std::size_t>(k)]; }
  nn::ParamRefs all_params();
  void set_lr(double lr);

  long version() const { return version_; }
  void bump_version() { ++version_; }
  std::uint64_t config_hash() const { return config_hash_; }
  const Config& config() const { return cfg_; }

  void save(const std::string& path) const;
  /// Throws CheckpointError on a corrupt file, a version or kind mismatch,
  /// or a config hash that differs from `cfg`.
  static std::unique_ptr<PolicyBundle> load(const std::string& path, const Config& cfg);

 private:
  Config cfg_;
  Algo algo_;
  std::uint64_t config_hash_ = 0;
  int actor_in_ = 0;
  int critic_in_ = 0;
  long version_ = 0;
  nn::MhaEncoder encoder_;
  std::vector<ppo::ActorCritic> agents_;
  nn::Adam enc_opt_;
  std::vector<nn::Adam> opts_;
  std::vector<ValueNorm> norms_;
};

/// Everything the learner stores for one UAV at one slot.
struct Sample {
  nn::Matrix states;  // kMuStateDim x max_users
  int users = 0;
  nn::Vector pos;  // normalised own position
  nn::Vector critic_in;
  double baseline = 0.0;  // own previous-slot utility (0 at the first slot)
  std::vector<nn::Vector> z;  // per agent
  std::vector<double> log_prob, value, reward;
  int episode = 0, slot = 0, uav = 0;
};

/// Actor input for one UAV: normalised own position then its encoding.
nn::Vector actor_input(const nn::Vector& pos, const nn::Vector& encoding);

/// Policy decision for every UAV at the current slot. Deterministic mode
/// uses the mean action. When `samples` is set, one Sample per UAV is
/// appended (rewards left empty).
ActionSet select_actions(PolicyBundle& bundle, const Environment& env, bool deterministic, std::mt19937_64& rng,
                         std::vector<Sample>* samples = nullptr);

/// Reward each agent of the bundle receives.
std::vector<double> agent_rewards(Algo algo, const RewardSet& r);

struct UpdateRow {
  int update = 0;
  int episode = 0;
  long env_steps = 0;
  std::string agent;
  ppo::LossStats stats;
  int epochs_run = 0;
  bool early_stopped = false;
};

struct EpisodeRow {
  int episode = 0;
  long env_steps = 0;
  double ret = 0.0;  // sum of the rewards the learning agents received
  std::array<double, kNumRoles> role_return{};
  double mean_cost = 0.0;  // per-slot sum of UAV utilities, averaged over slots
  double mean_energy = 0.0;
  double mean_delay = 0.0;
  int violations = 0;
};

struct SlotRow {
  int episode = 0;
  UavSlotMetrics m;
};

struct MuRow {
  int episode = 0;
  MuSlotMetrics m;
};

struct TrainOptions {
  std::uint64_t seed = 0;
  int episodes = 0;  // 0: derive from ppo.max_steps
  /// Called after every episode; may be empty.
  std::function<void(const EpisodeRow&)> on_episode;
};

struct TrainResult {
  std::unique_ptr<PolicyBundle> bundle;
  std::vector<UpdateRow> updates;
  std::vector<EpisodeRow> episodes;
  std::vector<SlotRow> slots;
  long env_steps = 0;
};

/// Episodes implied by the step budget (one env step per slot).
int episodes_for_budget(const Config& cfg);

/// PPO update over collected samples. Advantages come from per-(episode,
/// UAV) GAE for each agent; the encoder is trained through actor losses.
std::vector<UpdateRow> update_bundle(PolicyBundle& bundle, const std::vector<Sample>& samples, std::mt19937_64& rng);

TrainResult train(const Config& cfg, Algo algo, const TrainOptions& opts);
inline TrainResult train_rmappo(const Config& cfg, const TrainOptions& opts) { return train(cfg, Algo::kRmappo, opts); }
inline TrainResult train_gmappo(const Config& cfg, const TrainOptions& opts) { return train(cfg, Algo::kGmappo, opts); }

struct EvalOptions {
  int episodes = 1;
  std::uint64_t seed = 0;
  std::optional<FairnessKind> fairness;
  std::optional<double> fixed_alpha;
};

struct EvalReport {
  std::vector<EpisodeRow> episodes;
  std::vector<SlotRow> slots;
  std::vector<MuRow> mus;
  double mean_cost = 0.0;
  int violations = 0;
};

/// Mean-action rollouts. `bundle` may be null only for the all-fair
/// baseline. Episode e always uses the same MU layout for a given seed, so
/// reports from different policies are paired.
EvalReport evaluate(PolicyBundle* bundle, const Config& cfg, const EvalOptions& opts);

struct SweepRow {
  std::string label;
  double alpha = std::numeric_limits<double>::quiet_NaN();  // NaN for the learned row
  double mean_cost = 0.0;
};

std::vector<SweepRow> sweep_alpha_fixed(PolicyBundle& bundle, const Config& cfg, const std::vector<double>& alphas,
                                        int episodes, std::uint64_t seed);

void write_updates_csv(const std::string& path, const std::vector<UpdateRow>& rows);
void write_episodes_csv(const std::string& path, const std::vector<EpisodeRow>& rows);
void write_slots_csv(const std::string& path, const std::vector<SlotRow>& rows);
void write_mus_csv(const std::string& path, const std::vector<MuRow>& rows);
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace thzmec
