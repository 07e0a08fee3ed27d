#include "thzmec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "thzmec/text_io.hpp"

namespace thzmec {

namespace {

constexpr char kMagic[8] = {'T', 'H', 'Z', 'M', 'E', 'C', 'C', 'K'};
constexpr std::uint64_t kCheckpointVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<int> hidden_sizes(const Config& cfg, Algo algo) {
  const int layers = algo == Algo::kGmappo ? cfg.model.gmappo_hidden_layers : cfg.model.hidden_layers;
  return std::vector<int>(static_cast<std::size_t>(layers), cfg.model.hidden_units);
}

nn::AdamHyper adam_hyper(const PpoHyper& p) { return {p.lr, p.adam_beta1, p.adam_beta2, p.adam_eps}; }

// GMAPPO action layout: [dx, dy, then (omega_ul, omega_dl, p, alpha) per member].
constexpr int kGmPerUser = 4;

void accumulate(EpisodeRow& row, const StepResult& res, Algo algo) {
  for (const auto& r : res.rewards) {
    for (double x : agent_rewards(algo, r)) row.ret += x;
    for (int k = 0; k < kNumRoles; ++k) row.role_return[static_cast<std::size_t>(k)] += r.of(kAllRoles[static_cast<std::size_t>(k)]);
  }
  for (const auto& m : res.uavs) {
    row.mean_cost += m.utility;
    row.mean_energy += m.energy;
    row.mean_delay += m.delay_sum;
    row.violations += m.slack.violated();
  }
}

void finish(EpisodeRow& row, int slots) {
  row.mean_cost /= slots;
  row.mean_energy /= slots;
  row.mean_delay /= slots;
}

}  // namespace

Algo parse_algo(std::string_view name) {
  if (name == "rmappo") return Algo::kRmappo;
  if (name == "gmappo") return Algo::kGmappo;
  throw DomainError("unknown algorithm '" + std::string(name) + "' (expected rmappo or gmappo)");
}

std::string_view algo_name(Algo a) { return a == Algo::kRmappo ? "rmappo" : "gmappo"; }

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream * 0x100000001b3ULL + 0x632be59bd9b4e019ULL) ^
                    splitmix64(~index));
}

void ValueNorm::update(const std::vector<double>& x) {
  if (x.empty()) return;
  const double n = static_cast<double>(x.size());
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double v = 0.0;
  for (double a : x) v += (a - m) * (a - m);
  v /= n;
  const double total = count + n;
  const double d = m - mean;
  mean += d * n / total;
  var = (var * count + v * n + d * d * count * n / total) / total;
  count = total;
}

double ValueNorm::std() const { return std::max(std::sqrt(var), 1e-6); }

// --- PolicyBundle -------------------------------------------------------------

PolicyBundle::PolicyBundle(const Config& cfg, Algo algo, std::uint64_t seed)
    : cfg_(cfg), algo_(algo), config_hash_(cfg.hash()) {
  cfg_.validate();
  std::mt19937_64 rng(derive_seed(seed, 1, 0));
  const int m = cfg.env.max_users;
  const int a = cfg.model.attn_dim;
  encoder_ = nn::MhaEncoder({m, kMuStateDim, a}, "encoder", rng);
  const int enc = encoder_.spec().output_dim();
  const int nu = cfg.env.num_uavs;
  actor_in_ = 2 + enc;
  critic_in_ = nu * enc + 4 * nu + 1;
  const auto hidden = hidden_sizes(cfg, algo);
  if (algo == Algo::kRmappo) {
    agents_.reserve(kNumRoles);
    for (Role r : kAllRoles) {
      const int act = r == Role::kTrajectory ? 2 : m;
      agents_.emplace_back(actor_in_, critic_in_, act, hidden, cfg.model.log_std_init, std::string(role_name(r)), rng);
    }
  } else {
    agents_.emplace_back(actor_in_, critic_in_, 2 + kGmPerUser * m, hidden, cfg.model.log_std_init, "gmappo", rng);
  }
  const auto h = adam_hyper(cfg.ppo);
  enc_opt_ = nn::Adam(encoder_.params(), h);
  opts_.reserve(agents_.size());
  for (auto& ag : agents_) opts_.emplace_back(ag.params(), h);
  norms_.assign(agents_.size(), ValueNorm{});
}

std::string PolicyBundle::agent_name(int k) const {
  return algo_ == Algo::kRmappo ? std::string(role_name(kAllRoles[static_cast<std::size_t>(k)])) : "gmappo";
}

int PolicyBundle::active_dims(int k, int users) const {
  if (algo_ == Algo::kGmappo) return 2 + kGmPerUser * users;
  return kAllRoles[static_cast<std::size_t>(k)] == Role::kTrajectory ? 2 : users;
}

ActionBounds PolicyBundle::bounds(int k, int dim) const {
  const double step = cfg_.net.v_max_mps * cfg_.net.slot_duration_s;
  Role r;
  if (algo_ == Algo::kGmappo) {
    if (dim < 2) return {-step, step};
    constexpr Role order[kGmPerUser] = {Role::kOmegaUl, Role::kOmegaDl, Role::kPower, Role::kAlpha};
    r = order[(dim - 2) % kGmPerUser];
  } else {
    r = kAllRoles[static_cast<std::size_t>(k)];
  }
  switch (r) {
    case Role::kPower: return {0.0, cfg_.net.p_max_watt};
    case Role::kTrajectory: return {-step, step};
    default: return {0.0, 1.0};
  }
}

nn::ParamRefs PolicyBundle::all_params() {
  nn::ParamRefs p = encoder_.params();
  for (auto& ag : agents_)
    for (auto* q : ag.params()) p.push_back(q);
  return p;
}

void PolicyBundle::set_lr(double lr) {
  enc_opt_.set_lr(lr);
  for (auto& o : opts_) o.set_lr(lr);
}

void PolicyBundle::save(const std::string& path) const {
  auto& self = const_cast<PolicyBundle&>(*this);
  std::ostringstream body(std::ios::binary);
  body.write(kMagic, sizeof(kMagic));
  nn::write_u64(body, kCheckpointVersion);
  nn::write_u64(body, config_hash_);
  nn::write_u64(body, static_cast<std::uint64_t>(algo_));
  nn::write_u64(body, static_cast<std::uint64_t>(version_));
  const auto params = self.all_params();
  nn::write_u64(body, params.size());
  for (const auto* p : params) nn::write_tensor(body, p->name, p->value);
  for (std::size_t k = 0; k < norms_.size(); ++k) {
    nn::Matrix nm(3, 1);
    nm << norms_[k].mean, norms_[k].var, norms_[k].count;
    nn::write_tensor(body, "value_norm." + agent_name(static_cast<int>(k)), nm);
  }
  enc_opt_.save(body, "adam.encoder");
  for (std::size_t k = 0; k < opts_.size(); ++k) opts_[k].save(body, "adam." + agent_name(static_cast<int>(k)));
  const std::string bytes = body.str();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    nn::write_u64(out, fnv1a(bytes));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<PolicyBundle> PolicyBundle::load(const std::string& path, const Config& cfg) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception&) {
    throw CheckpointError("cannot read checkpoint " + path);
  }
  if (bytes.size() < sizeof(kMagic) + 8 * 6) throw CheckpointError("checkpoint is truncated");
  const std::string body = bytes.substr(0, bytes.size() - 8);
  {
    std::istringstream tail(bytes.substr(bytes.size() - 8), std::ios::binary);
    if (nn::read_u64(tail) != fnv1a(body)) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");
  }
  std::istringstream in(body, std::ios::binary);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!std::equal(magic, magic + sizeof(magic), kMagic)) throw CheckpointError("not a checkpoint file");
  if (nn::read_u64(in) != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
  const std::uint64_t hash = nn::read_u64(in);
  if (hash != cfg.hash()) throw CheckpointConfigMismatch("checkpoint config hash does not match the loaded config");
  const auto algo_raw = nn::read_u64(in);
  if (algo_raw > 1) throw CheckpointError("unknown policy kind in checkpoint");
  auto b = std::make_unique<PolicyBundle>(cfg, static_cast<Algo>(algo_raw), 0);
  b->version_ = static_cast<long>(nn::read_u64(in));
  try {
    const auto params = b->all_params();
    if (nn::read_u64(in) != params.size()) throw CheckpointError("checkpoint parameter count mismatch");
    for (auto* p : params) p->value = nn::read_tensor(in, p->name, p->value.rows(), p->value.cols());
    for (std::size_t k = 0; k < b->norms_.size(); ++k) {
      const nn::Matrix nm = nn::read_tensor(in, "value_norm." + b->agent_name(static_cast<int>(k)), 3, 1);
      b->norms_[k] = {nm(0, 0), nm(1, 0), nm(2, 0)};
    }
    b->enc_opt_.load(in, "adam.encoder");
    for (std::size_t k = 0; k < b->opts_.size(); ++k) b->opts_[k].load(in, "adam." + b->agent_name(static_cast<int>(k)));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in checkpoint");
  return b;
}

// --- acting -------------------------------------------------------------------

nn::Vector actor_input(const nn::Vector& pos, const nn::Vector& encoding) {
  nn::Vector x(pos.size() + encoding.size());
  x << pos, encoding;
  return x;
}

ActionSet select_actions(PolicyBundle& bundle, const Environment& env, bool deterministic, std::mt19937_64& rng,
                         std::vector<Sample>* samples) {
  const auto& cfg = env.config();
  const auto& st = env.state();
  const auto obs = env.observe();
  const int nu = static_cast<int>(obs.size());
  if (nu != cfg.env.num_uavs || cfg.env.max_users != bundle.encoder().spec().max_users)
    throw DomainError("policy bundle shape does not match the environment");
  const int m = cfg.env.max_users;
  const int enc_dim = bundle.encoder().spec().output_dim();

  std::vector<nn::Matrix> states(static_cast<std::size_t>(nu));
  nn::Matrix x(bundle.actor_in_dim(), nu);
  std::vector<nn::Vector> pos(static_cast<std::size_t>(nu));
  std::vector<nn::Vector> enc(static_cast<std::size_t>(nu));
  for (int v = 0; v < nu; ++v) {
    const auto& o = obs[static_cast<std::size_t>(v)];
    states[static_cast<std::size_t>(v)] = Eigen::Map<const nn::Matrix>(o.states.data(), kMuStateDim, m);
    enc[static_cast<std::size_t>(v)] = bundle.encoder().encode(states[static_cast<std::size_t>(v)], o.active);
    pos[static_cast<std::size_t>(v)] = nn::Vector(2);
    pos[static_cast<std::size_t>(v)] << o.pos.x_m / cfg.env.region_m, o.pos.y_m / cfg.env.region_m;
    x.col(v) = actor_input(pos[static_cast<std::size_t>(v)], enc[static_cast<std::size_t>(v)]);
  }

  nn::Matrix c;
  if (samples) {
    c = nn::Matrix::Zero(bundle.critic_in_dim(), nu);
    for (int v = 0; v < nu; ++v) {
      auto col = c.col(v);
      for (int w = 0; w < nu; ++w) col.segment(w * enc_dim, enc_dim) = enc[static_cast<std::size_t>(w)];
      int off = nu * enc_dim;
      for (int w = 0; w < nu; ++w) col.segment(off + 2 * w, 2) = pos[static_cast<std::size_t>(w)];
      off += 2 * nu;
      col(off + v) = 1.0;
      off += nu;
      for (int w = 0; w < nu; ++w)
        col(off + w) = st.prev_utility.empty() ? 0.0 : std::log1p(std::max(0.0, st.prev_utility[static_cast<std::size_t>(w)]));
      col(off + nu) = static_cast<double>(st.slot) / cfg.env.num_slots;
    }
  }

  ActionSet actions = empty_actions(st);
  const int na = bundle.num_agents();
  std::vector<nn::Matrix> means(static_cast<std::size_t>(na));
  std::vector<nn::Vector> values(static_cast<std::size_t>(na));
  for (int k = 0; k < na; ++k) {
    means[static_cast<std::size_t>(k)] = bundle.agent(k).mean(x);
    if (samples) values[static_cast<std::size_t>(k)] = bundle.agent(k).value(c);
  }

  for (int v = 0; v < nu; ++v) {
    const int users = obs[static_cast<std::size_t>(v)].active;
    Sample smp;
    if (samples) {
      smp.states = states[static_cast<std::size_t>(v)];
      smp.users = users;
      smp.pos = pos[static_cast<std::size_t>(v)];
      smp.critic_in = c.col(v);
      smp.baseline = st.prev_utility.empty() ? 0.0 : st.prev_utility[static_cast<std::size_t>(v)];
      smp.slot = st.slot;
      smp.uav = v;
    }
    auto& act = actions[static_cast<std::size_t>(v)];
    for (int k = 0; k < na; ++k) {
      auto& ag = bundle.agent(k);
      const nn::Vector mean = means[static_cast<std::size_t>(k)].col(v);
      const int dims = bundle.active_dims(k, users);
      const nn::Vector z = deterministic ? mean : ag.head().sample(mean, dims, rng);
      std::vector<double> a(static_cast<std::size_t>(dims));
      for (int i = 0; i < dims; ++i) {
        const auto bd = bundle.bounds(k, i);
        a[static_cast<std::size_t>(i)] = nn::squash(z(i), bd.lo, bd.hi);
      }
      if (bundle.algo() == Algo::kGmappo) {
        act.dx = a[0];
        act.dy = a[1];
        for (int u = 0; u < users; ++u) {
          const auto base = static_cast<std::size_t>(2 + kGmPerUser * u);
          act.omega_ul[static_cast<std::size_t>(u)] = a[base];
          act.omega_dl[static_cast<std::size_t>(u)] = a[base + 1];
          act.p_dl[static_cast<std::size_t>(u)] = a[base + 2];
          act.alpha[static_cast<std::size_t>(u)] = a[base + 3];
        }
      } else {
        switch (kAllRoles[static_cast<std::size_t>(k)]) {
          case Role::kOmegaUl: act.omega_ul = a; break;
          case Role::kOmegaDl: act.omega_dl = a; break;
          case Role::kPower: act.p_dl = a; break;
          case Role::kAlpha: act.alpha = a; break;
          case Role::kTrajectory:
            act.dx = a[0];
            act.dy = a[1];
            break;
        }
      }
      if (samples) {
        smp.z.push_back(z);
        smp.log_prob.push_back(ag.head().log_prob(z, mean, dims));
        // Every reward carries u_prev - u_now, so the value function includes
        // the own previous utility exactly and the critic learns the rest.
        smp.value.push_back(smp.baseline + bundle.value_norm(k).denormalize(values[static_cast<std::size_t>(k)](v)));
      }
    }
    if (samples) samples->push_back(std::move(smp));
  }
  return actions;
}

std::vector<double> agent_rewards(Algo algo, const RewardSet& r) {
  if (algo == Algo::kRmappo) return {r.omega_ul, r.omega_dl, r.power, r.alpha, r.trajectory};
  // One agent: shared utility term plus every bonus and penalty.
  return {r.delta + (r.omega_ul - r.delta) + (r.omega_dl - r.delta) + (r.power - r.delta) +
          (r.trajectory - r.delta)};
}

// --- learning -----------------------------------------------------------------

int episodes_for_budget(const Config& cfg) {
  return static_cast<int>(std::max<long>(1, cfg.ppo.max_steps / cfg.env.num_slots));
}

std::vector<UpdateRow> update_bundle(PolicyBundle& bundle, const std::vector<Sample>& samples, std::mt19937_64& rng) {
  const auto& h = bundle.config().ppo;
  const int n = static_cast<int>(samples.size());
  const int na = bundle.num_agents();
  std::vector<UpdateRow> rows(static_cast<std::size_t>(na));
  for (int k = 0; k < na; ++k) rows[static_cast<std::size_t>(k)].agent = bundle.agent_name(k);
  if (n == 0) return rows;

  // GAE along each (episode, UAV) trajectory.
  std::map<std::pair<int, int>, std::vector<int>> traj;
  for (int i = 0; i < n; ++i) traj[{samples[static_cast<std::size_t>(i)].episode, samples[static_cast<std::size_t>(i)].uav}].push_back(i);
  std::vector<std::vector<double>> adv(static_cast<std::size_t>(na), std::vector<double>(static_cast<std::size_t>(n)));
  auto ret = adv;
  for (auto& [key, idx] : traj) {
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return samples[static_cast<std::size_t>(a)].slot < samples[static_cast<std::size_t>(b)].slot; });
    for (int k = 0; k < na; ++k) {
      std::vector<double> r, v;
      for (int i : idx) {
        r.push_back(samples[static_cast<std::size_t>(i)].reward[static_cast<std::size_t>(k)]);
        v.push_back(samples[static_cast<std::size_t>(i)].value[static_cast<std::size_t>(k)]);
      }
      v.push_back(0.0);  // episodes end at the horizon
      const auto g = ppo::compute_gae(r, v, h.gamma, h.lambda);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        adv[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx[j])] = g.advantages[j];
        ret[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx[j])] = g.returns[j];
      }
    }
  }

  for (int k = 0; k < na; ++k) {
    auto& r = ret[static_cast<std::size_t>(k)];
    for (int i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] -= samples[static_cast<std::size_t>(i)].baseline;
    auto& norm = bundle.value_norm(k);
    norm.update(r);
    for (double& x : r) x = norm.normalize(x);
  }

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int mb = std::min(h.minibatch, n);
  const int enc_dim = bundle.encoder().spec().output_dim();
  auto enc_params = bundle.encoder().params();
  std::vector<ppo::LossStats> sums(static_cast<std::size_t>(na));
  int count = 0;
  bool stop = false;
  int epochs_run = 0;
  for (int e = 0; e < h.epochs && !stop; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n && !stop; start += mb) {
      const int end = std::min(n, start + mb);
      const int B = end - start;
      std::vector<const nn::Matrix*> sp;
      std::vector<int> users;
      for (int j = start; j < end; ++j) {
        const auto& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
        sp.push_back(&s.states);
        users.push_back(s.users);
      }
      nn::zero_grad(enc_params);
      const nn::Matrix enc = bundle.encoder().forward(sp, users);
      nn::Matrix x(bundle.actor_in_dim(), B);
      nn::Matrix c(bundle.critic_in_dim(), B);
      for (int j = 0; j < B; ++j) {
        const auto& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(start + j)])];
        x.col(j) = actor_input(s.pos, enc.col(j));
        c.col(j) = s.critic_in;
      }
      nn::Matrix d_enc = nn::Matrix::Zero(enc_dim, B);
      std::vector<ppo::LossStats> st(static_cast<std::size_t>(na));
      for (int k = 0; k < na; ++k) {
        ppo::Batch b;
        b.actor_in = x;
        b.critic_in = c;
        b.z.resize(bundle.act_dim(k), B);
        for (int j = 0; j < B; ++j) {
          const int i = order[static_cast<std::size_t>(start + j)];
          const auto& s = samples[static_cast<std::size_t>(i)];
          b.z.col(j) = s.z[static_cast<std::size_t>(k)];
          b.active.push_back(bundle.active_dims(k, s.users));
          b.log_prob_old.push_back(s.log_prob[static_cast<std::size_t>(k)]);
          b.advantages.push_back(adv[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]);
          b.returns.push_back(ret[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]);
        }
        auto params = bundle.agent(k).params();
        nn::zero_grad(params);
        nn::Matrix dx;
        st[static_cast<std::size_t>(k)] = bundle.agent(k).loss(b, h, true, &dx);
        d_enc += dx.bottomRows(enc_dim);
      }
      for (int k = 0; k < na; ++k)
        if (h.target_kl > 0.0 && st[static_cast<std::size_t>(k)].approx_kl > h.target_kl) stop = true;
      if (stop) {
        for (int k = 0; k < na; ++k) rows[static_cast<std::size_t>(k)].early_stopped = true;
        break;
      }
      bundle.encoder().backward(d_enc);
      for (int k = 0; k < na; ++k) {
        auto params = bundle.agent(k).params();
        if (h.max_grad_norm > 0.0) nn::clip_grad_norm(params, h.max_grad_norm);
        bundle.optimizer(k).step();
        auto& s = sums[static_cast<std::size_t>(k)];
        const auto& t = st[static_cast<std::size_t>(k)];
        s.loss += t.loss;
        s.policy_loss += t.policy_loss;
        s.value_loss += t.value_loss;
        s.entropy += t.entropy;
        s.approx_kl += t.approx_kl;
        s.clip_frac += t.clip_frac;
      }
      if (h.max_grad_norm > 0.0) nn::clip_grad_norm(enc_params, h.max_grad_norm);
      bundle.encoder_optimizer().step();
      ++count;
    }
    if (!stop) ++epochs_run;
  }
  bundle.bump_version();
  for (int k = 0; k < na; ++k) {
    auto& r = rows[static_cast<std::size_t>(k)];
    r.epochs_run = epochs_run;
    if (count > 0) {
      const auto& s = sums[static_cast<std::size_t>(k)];
      r.stats = {s.loss / count, s.policy_loss / count, s.value_loss / count,
                 s.entropy / count, s.approx_kl / count, s.clip_frac / count};
    }
  }
  return rows;
}

TrainResult train(const Config& cfg, Algo algo, const TrainOptions& opts) {
  TrainResult out;
  Environment env(cfg);
  out.bundle = std::make_unique<PolicyBundle>(cfg, algo, opts.seed);
  auto& bundle = *out.bundle;
  const int episodes = opts.episodes > 0 ? opts.episodes : episodes_for_budget(cfg);
  std::mt19937_64 act_rng(derive_seed(opts.seed, 2, 0));
  std::mt19937_64 upd_rng(derive_seed(opts.seed, 3, 0));
  std::vector<Sample> samples;
  int updates = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    env.reset(derive_seed(opts.seed, 4, static_cast<std::uint64_t>(ep)));
    EpisodeRow row;
    row.episode = ep;
    const bool log_slots = ep % cfg.train.slot_log_every == 0;
    while (!env.done()) {
      const std::size_t first = samples.size();
      const ActionSet a = select_actions(bundle, env, false, act_rng, &samples);
      const StepResult res = env.step(a);
      ++out.env_steps;
      for (std::size_t v = 0; v < res.rewards.size(); ++v) {
        auto& s = samples[first + v];
        s.episode = ep;
        s.reward = agent_rewards(algo, res.rewards[v]);
      }
      accumulate(row, res, algo);
      if (log_slots)
        for (const auto& m : res.uavs) out.slots.push_back({ep, m});
    }
    finish(row, cfg.env.num_slots);
    row.env_steps = out.env_steps;
    out.episodes.push_back(row);
    if (opts.on_episode) opts.on_episode(row);

    if ((ep + 1) % cfg.train.episodes_per_update == 0 || ep + 1 == episodes) {
      auto rows = update_bundle(bundle, samples, upd_rng);
      samples.clear();
      for (auto& r : rows) {
        r.update = updates;
        r.episode = ep;
        r.env_steps = out.env_steps;
        out.updates.push_back(std::move(r));
      }
      ++updates;
    }
  }
  return out;
}

// --- evaluation ---------------------------------------------------------------

EvalReport evaluate(PolicyBundle* bundle, const Config& cfg, const EvalOptions& opts) {
  if (!bundle && !(opts.fairness && *opts.fairness == FairnessKind::kAll))
    throw DomainError("evaluation without a policy requires the fairness_all baseline");
  EvalReport rep;
  Environment env(cfg);
  std::mt19937_64 rng(0);  // unused in deterministic mode
  const Algo algo = bundle ? bundle->algo() : Algo::kRmappo;
  for (int e = 0; e < opts.episodes; ++e) {
    env.reset(derive_seed(opts.seed, 5, static_cast<std::uint64_t>(e)));
    EpisodeRow row;
    row.episode = e;
    while (!env.done()) {
      ActionSet a;
      if (opts.fairness && *opts.fairness == FairnessKind::kAll) {
        a = fairness_policy(FairnessKind::kAll, env.state(), cfg);
      } else {
        a = select_actions(*bundle, env, true, rng);
        if (opts.fairness) apply_fairness(*opts.fairness, env.state(), cfg, a);
      }
      if (opts.fixed_alpha)
        for (auto& ua : a) std::fill(ua.alpha.begin(), ua.alpha.end(), *opts.fixed_alpha);
      const StepResult res = env.step(a);
      accumulate(row, res, algo);
      for (const auto& m : res.uavs) rep.slots.push_back({e, m});
      for (const auto& m : res.mus) rep.mus.push_back({e, m});
    }
    finish(row, cfg.env.num_slots);
    row.env_steps = static_cast<long>(e + 1) * cfg.env.num_slots;
    rep.mean_cost += row.mean_cost;
    rep.violations += row.violations;
    rep.episodes.push_back(row);
  }
  if (opts.episodes > 0) rep.mean_cost /= opts.episodes;
  return rep;
}

std::vector<SweepRow> sweep_alpha_fixed(PolicyBundle& bundle, const Config& cfg, const std::vector<double>& alphas,
                                        int episodes, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("fixed offloading ratio must lie in [0, 1]");
    EvalOptions o;
    o.episodes = episodes;
    o.seed = seed;
    o.fixed_alpha = a;
    rows.push_back({"alpha=" + fmt_double(a), a, evaluate(&bundle, cfg, o).mean_cost});
  }
  EvalOptions o;
  o.episodes = episodes;
  o.seed = seed;
  rows.push_back({"learned", std::numeric_limits<double>::quiet_NaN(), evaluate(&bundle, cfg, o).mean_cost});
  return rows;
}

// --- CSV ----------------------------------------------------------------------

void write_updates_csv(const std::string& path, const std::vector<UpdateRow>& rows) {
  CsvWriter w(path, {"update", "episode", "env_steps", "role", "loss", "policy_loss", "value_loss", "entropy",
                     "approx_kl", "clip_frac", "epochs_run", "early_stopped"});
  for (const auto& r : rows)
    w.row({std::to_string(r.update), std::to_string(r.episode), std::to_string(r.env_steps), r.agent,
           fmt_double(r.stats.loss), fmt_double(r.stats.policy_loss), fmt_double(r.stats.value_loss),
           fmt_double(r.stats.entropy), fmt_double(r.stats.approx_kl), fmt_double(r.stats.clip_frac),
           std::to_string(r.epochs_run), r.early_stopped ? "1" : "0"});
}

void write_episodes_csv(const std::string& path, const std::vector<EpisodeRow>& rows) {
  std::vector<std::string> header = {"episode", "env_steps", "return"};
  for (Role r : kAllRoles) header.push_back("return_" + std::string(role_name(r)));
  for (const char* c : {"mean_cost", "mean_energy", "mean_delay", "violations"}) header.emplace_back(c);
  CsvWriter w(path, header);
  for (const auto& r : rows) {
    std::vector<std::string> cells = {std::to_string(r.episode), std::to_string(r.env_steps), fmt_double(r.ret)};
    for (double x : r.role_return) cells.push_back(fmt_double(x));
    cells.push_back(fmt_double(r.mean_cost));
    cells.push_back(fmt_double(r.mean_energy));
    cells.push_back(fmt_double(r.mean_delay));
    cells.push_back(std::to_string(r.violations));
    w.row(cells);
  }
}

void write_slots_csv(const std::string& path, const std::vector<SlotRow>& rows) {
  std::vector<std::string> header = {"episode", "slot", "uav", "members", "utility", "energy", "e_fly", "e_local",
                                     "e_ul", "e_mec", "e_dl", "delay_sum", "sum_omega_ul", "sum_omega_dl",
                                     "sum_power", "mean_alpha", "x", "y", "speed", "infeasible_links", "violations"};
  for (auto n : UavViolations::names()) header.push_back("slack_" + std::string(n));
  for (Role r : kAllRoles) header.push_back("r_" + std::string(role_name(r)));
  header.emplace_back("delta");
  CsvWriter w(path, header);
  for (const auto& row : rows) {
    const auto& m = row.m;
    std::vector<std::string> c = {std::to_string(row.episode), std::to_string(m.slot), std::to_string(m.uav),
                                  std::to_string(m.members)};
    for (double x : {m.utility, m.energy, m.e_fly, m.e_local, m.e_ul, m.e_mec, m.e_dl, m.delay_sum, m.sum_omega_ul,
                     m.sum_omega_dl, m.sum_power, m.mean_alpha, m.x, m.y, m.speed})
      c.push_back(fmt_double(x));
    c.push_back(std::to_string(m.infeasible_links));
    c.push_back(std::to_string(m.slack.violated()));
    for (double s : m.slack.slacks()) c.push_back(fmt_double(s));
    for (Role r : kAllRoles) c.push_back(fmt_double(m.reward.of(r)));
    c.push_back(fmt_double(m.reward.delta));
    w.row(c);
  }
}

void write_mus_csv(const std::string& path, const std::vector<MuRow>& rows) {
  CsvWriter w(path, {"episode", "slot", "mu", "uav", "d_pre", "alpha", "omega_ul", "omega_dl", "p_dl", "distance",
                     "rate_ul", "rate_dl", "c_in", "c_mec", "delay"});
  for (const auto& row : rows) {
    const auto& m = row.m;
    std::vector<std::string> c = {std::to_string(row.episode), std::to_string(m.slot), std::to_string(m.mu),
                                  std::to_string(m.uav)};
    for (double x : {m.d_pre, m.alpha, m.omega_ul, m.omega_dl, m.p_dl, m.distance, m.rate_ul, m.rate_dl, m.c_in,
                     m.c_mec, m.delay})
      c.push_back(fmt_double(x));
    w.row(c);
  }
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  CsvWriter w(path, {"label", "alpha", "mean_cost"});
  for (const auto& r : rows) w.row({r.label, std::isnan(r.alpha) ? "" : fmt_double(r.alpha), fmt_double(r.mean_cost)});
}

}  // namespace thzmec
