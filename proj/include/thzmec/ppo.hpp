#pragma once

// PPO core: truncated GAE, the clipped surrogate, the combined
// actor-critic loss with analytic gradients, and minibatch updates.

#include <random>
#include <vector>

#include "thzmec/config.hpp"
#include "thzmec/nn.hpp"

namespace thzmec::ppo {

using nn::Matrix;
using nn::Vector;

struct Transition {
  Vector actor_in;
  Vector critic_in;
  Vector z;  // pre-squash action
  int active = 0;
  double log_prob_old = 0.0;
  double value_old = 0.0;
  double reward = 0.0;
  bool done = false;
  int slot = 0;
};

struct Gae {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Backward recursion over one trajectory. `values` carries one bootstrap
/// entry past the last reward; `dones[n]` cuts the sum after step n.
Gae compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma, double lambda,
                const std::vector<bool>& dones = {});

/// min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double eps);

/// Zero mean, unit standard deviation; left unchanged for fewer than two
/// entries.
void normalize(std::vector<double>& x);

struct Batch {
  Matrix actor_in;   // (in x B)
  Matrix critic_in;  // (cin x B)
  Matrix z;          // (act x B)
  std::vector<int> active;
  std::vector<double> log_prob_old;
  std::vector<double> advantages;
  std::vector<double> returns;

  int size() const { return static_cast<int>(active.size()); }
};

Batch make_batch(const std::vector<Transition>& buf, const std::vector<int>& idx, const std::vector<double>& adv,
                 const std::vector<double>& ret);

struct LossStats {
  double loss = 0.0;
  double policy_loss = 0.0;  // -mean clipped surrogate
  double value_loss = 0.0;   // mean squared error
  double entropy = 0.0;      // mean per-sample entropy
  double approx_kl = 0.0;    // mean of (r - 1) - log r
  double clip_frac = 0.0;
};

/// One role's policy and value networks over precomputed features.
class ActorCritic {
 public:
  ActorCritic() = default;
  ActorCritic(int actor_in, int critic_in, int act_dim, const std::vector<int>& hidden, double log_std_init,
              const std::string& name, std::mt19937_64& rng);

  /// Mean pre-squash action for each column of `x`.
  Matrix mean(const Matrix& x);
  Vector value(const Matrix& c);

  /// Combined loss; when `grad` is set, parameter gradients accumulate and
  /// `d_actor_in` (if non-null) receives d loss / d actor input.
  LossStats loss(const Batch& b, const PpoHyper& h, bool grad, Matrix* d_actor_in = nullptr);

  nn::Mlp& actor() { return actor_; }
  nn::Mlp& critic() { return critic_; }
  nn::GaussianHead& head() { return head_; }
  nn::ParamRefs params();
  int act_dim() const { return head_.dim(); }

 private:
  nn::Mlp actor_;
  nn::GaussianHead head_;
  nn::Mlp critic_;
};

struct UpdateStats {
  LossStats last;
  double mean_kl = 0.0;
  int minibatches = 0;
  int epochs_run = 0;
  bool early_stopped = false;
};

/// Accumulates KL diagnostics and decides on early stopping.
class KlGuard {
 public:
  explicit KlGuard(double target) : target_(target) {}
  /// Returns true when the update should stop.
  bool observe(double kl);
  double mean() const { return n_ ? sum_ / n_ : 0.0; }

 private:
  double target_;
  double sum_ = 0.0;
  int n_ = 0;
};

/// Epochs of shuffled minibatch steps on fixed features. Advantages are
/// taken as given (normalised per minibatch inside the loss if enabled).
UpdateStats update(ActorCritic& ac, nn::Adam& opt, const std::vector<Transition>& buf,
                   const std::vector<double>& advantages, const std::vector<double>& returns, const PpoHyper& h,
                   std::mt19937_64& rng);

}  // namespace thzmec::ppo
