#include "thzmec/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace thzmec::ppo {

Gae compute_gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma, double lambda,
                const std::vector<bool>& dones) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1) throw nn::ShapeError("compute_gae: values needs one bootstrap entry past the rewards");
  if (!dones.empty() && dones.size() != n) throw nn::ShapeError("compute_gae: dones length mismatch");
  Gae g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double keep = (!dones.empty() && dones[i]) ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * keep * values[i + 1] - values[i];
    acc = delta + gamma * lambda * keep * acc;
    g.advantages[i] = acc;
    g.returns[i] = acc + values[i];
  }
  return g;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

void normalize(std::vector<double>& x) {
  if (x.size() < 2) return;
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : x) v = (v - mean) / (sd + 1e-8);
}

Batch make_batch(const std::vector<Transition>& buf, const std::vector<int>& idx, const std::vector<double>& adv,
                 const std::vector<double>& ret) {
  Batch b;
  const auto B = static_cast<Eigen::Index>(idx.size());
  if (B == 0) throw nn::ShapeError("make_batch: empty batch");
  const auto& first = buf[static_cast<std::size_t>(idx[0])];
  b.actor_in.resize(first.actor_in.size(), B);
  b.critic_in.resize(first.critic_in.size(), B);
  b.z.resize(first.z.size(), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto k = static_cast<std::size_t>(idx[static_cast<std::size_t>(j)]);
    const auto& t = buf[k];
    b.actor_in.col(j) = t.actor_in;
    b.critic_in.col(j) = t.critic_in;
    b.z.col(j) = t.z;
    b.active.push_back(t.active);
    b.log_prob_old.push_back(t.log_prob_old);
    b.advantages.push_back(adv[k]);
    b.returns.push_back(ret[k]);
  }
  return b;
}

ActorCritic::ActorCritic(int actor_in, int critic_in, int act_dim, const std::vector<int>& hidden,
                         double log_std_init, const std::string& name, std::mt19937_64& rng)
    : actor_(actor_in, hidden, act_dim, name + ".actor", rng, 1.0),
      head_(act_dim, log_std_init, name),
      critic_(critic_in, hidden, 1, name + ".critic", rng, 1.0) {}

Matrix ActorCritic::mean(const Matrix& x) { return actor_.forward(x); }

Vector ActorCritic::value(const Matrix& c) { return critic_.forward(c).row(0).transpose(); }

nn::ParamRefs ActorCritic::params() {
  nn::ParamRefs p = actor_.params();
  for (auto* q : head_.params()) p.push_back(q);
  for (auto* q : critic_.params()) p.push_back(q);
  return p;
}

LossStats ActorCritic::loss(const Batch& b, const PpoHyper& h, bool grad, Matrix* d_actor_in) {
  const int B = b.size();
  if (B == 0) throw nn::ShapeError("ppo loss: empty batch");
  const double inv_b = 1.0 / B;
  std::vector<double> adv = b.advantages;
  if (h.normalize_advantages) normalize(adv);

  const Matrix mu = actor_.forward(b.actor_in);
  const Matrix v = critic_.forward(b.critic_in);

  LossStats s;
  Matrix dmu = Matrix::Zero(mu.rows(), mu.cols());
  for (int j = 0; j < B; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const Vector z = b.z.col(j);
    const Vector m = mu.col(j);
    const int act = b.active[ju];
    const double log_ratio = head_.log_prob(z, m, act) - b.log_prob_old[ju];
    const double r = std::exp(log_ratio);
    const double a = adv[ju];
    s.policy_loss -= clipped_surrogate(r, a, h.clip_eps) * inv_b;
    s.approx_kl += ((r - 1.0) - log_ratio) * inv_b;
    if (std::abs(r - 1.0) > h.clip_eps) s.clip_frac += inv_b;
    s.entropy += head_.entropy(act) * inv_b;
    const double diff = v(0, j) - b.returns[ju];
    s.value_loss += diff * diff * inv_b;

    if (grad) {
      const double clipped = std::clamp(r, 1.0 - h.clip_eps, 1.0 + h.clip_eps);
      const double ds_dr = (r * a <= clipped * a) ? a : 0.0;
      const double coef = -ds_dr * r * inv_b;  // d loss / d log_prob
      if (coef != 0.0) {
        dmu.col(j) = coef * head_.dlogp_dmean(z, m, act);
        head_.accumulate_dlogp(z, m, act, coef);
      }
      head_.accumulate_dentropy(act, -h.entropy_coef * inv_b);
    }
  }
  s.loss = s.policy_loss + h.value_coef * s.value_loss - h.entropy_coef * s.entropy;

  if (grad) {
    Matrix dv(1, B);
    for (int j = 0; j < B; ++j) dv(0, j) = h.value_coef * 2.0 * (v(0, j) - b.returns[static_cast<std::size_t>(j)]) * inv_b;
    critic_.backward(dv);
    Matrix dx = actor_.backward(dmu);
    if (d_actor_in) *d_actor_in = std::move(dx);
  }
  return s;
}

bool KlGuard::observe(double kl) {
  sum_ += kl;
  ++n_;
  return target_ > 0.0 && kl > target_;
}

UpdateStats update(ActorCritic& ac, nn::Adam& opt, const std::vector<Transition>& buf,
                   const std::vector<double>& advantages, const std::vector<double>& returns, const PpoHyper& h,
                   std::mt19937_64& rng) {
  UpdateStats st;
  const int n = static_cast<int>(buf.size());
  if (n == 0) return st;
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  const int mb = std::min(h.minibatch, n);
  const auto params = ac.params();
  KlGuard guard(h.target_kl);
  for (int e = 0; e < h.epochs && !st.early_stopped; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int start = 0; start < n; start += mb) {
      const int end = std::min(n, start + mb);
      std::vector<int> sel(idx.begin() + start, idx.begin() + end);
      const Batch b = make_batch(buf, sel, advantages, returns);
      nn::zero_grad(params);
      st.last = ac.loss(b, h, true);
      ++st.minibatches;
      if (guard.observe(st.last.approx_kl)) {
        // Divergence is measured before the step so no update lands past the target.
        st.early_stopped = true;
        break;
      }
      if (h.max_grad_norm > 0.0) nn::clip_grad_norm(params, h.max_grad_norm);
      opt.step();
    }
    ++st.epochs_run;
  }
  st.mean_kl = guard.mean();
  return st;
}

}  // namespace thzmec::ppo
