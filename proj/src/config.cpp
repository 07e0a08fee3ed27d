#include "thzmec/config.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

#include "thzmec/text_io.hpp"

extern char** environ;

namespace thzmec {

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, std::string_view, int)> set;
};

[[noreturn]] void bad_value(std::string_view section, std::string_view key, std::string_view value,
                            int line, const char* expected) {
  std::ostringstream msg;
  if (line > 0) msg << "line " << line << ": ";
  msg << "invalid value '" << value << "' for " << section << "." << key << " (expected " << expected << ")";
  throw ConfigError(msg.str(), line, std::string(section) + "." + std::string(key));
}

template <typename T>
Field real_field(const char* section, const char* key, T Config::* group, double T::* member) {
  return Field{section, key,
               [=](const Config& c) { return fmt_double((c.*group).*member); },
               [=](Config& c, std::string_view v, int line) {
                 auto d = parse_double(v);
                 if (!d || !std::isfinite(*d)) bad_value(section, key, v, line, "a finite number");
                 (c.*group).*member = *d;
               }};
}

template <typename T, typename I>
Field int_field(const char* section, const char* key, T Config::* group, I T::* member) {
  return Field{section, key,
               [=](const Config& c) { return std::to_string((c.*group).*member); },
               [=](Config& c, std::string_view v, int line) {
                 auto d = parse_double(v);
                 if (!d || *d != std::floor(*d) || std::abs(*d) > 9e15) bad_value(section, key, v, line, "an integer");
                 (c.*group).*member = static_cast<I>(*d);
               }};
}

template <typename T>
Field bool_field(const char* section, const char* key, T Config::* group, bool T::* member) {
  return Field{section, key,
               [=](const Config& c) { return std::string((c.*group).*member ? "true" : "false"); },
               [=](Config& c, std::string_view v, int line) {
                 v = trim(v);
                 if (v == "true" || v == "1") (c.*group).*member = true;
                 else if (v == "false" || v == "0") (c.*group).*member = false;
                 else bad_value(section, key, v, line, "true or false");
               }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    auto N = &Config::net;
    f.push_back(real_field("network", "noise_psd_dbm_per_hz", N, &NetworkConfig::noise_psd_dbm_per_hz));
    f.push_back(real_field("network", "p_ul_watt", N, &NetworkConfig::p_ul_watt));
    f.push_back(real_field("network", "p_max_watt", N, &NetworkConfig::p_max_watt));
    f.push_back(real_field("network", "absorption_a", N, &NetworkConfig::absorption_a));
    f.push_back(real_field("network", "bandwidth_hz", N, &NetworkConfig::bandwidth_hz));
    f.push_back(real_field("network", "r_min_bps", N, &NetworkConfig::r_min_bps));
    f.push_back(real_field("network", "gain_ref_db", N, &NetworkConfig::gain_ref_db));
    f.push_back(real_field("network", "altitude_m", N, &NetworkConfig::altitude_m));
    f.push_back(real_field("network", "eta", N, &NetworkConfig::eta));
    f.push_back(real_field("network", "beta_mu", N, &NetworkConfig::beta_mu));
    f.push_back(real_field("network", "beta_uav", N, &NetworkConfig::beta_uav));
    f.push_back(real_field("network", "q_mu", N, &NetworkConfig::q_mu));
    f.push_back(real_field("network", "q_uav", N, &NetworkConfig::q_uav));
    f.push_back(real_field("network", "delta_prog", N, &NetworkConfig::delta_prog));
    f.push_back(real_field("network", "c1", N, &NetworkConfig::c1));
    f.push_back(real_field("network", "c2", N, &NetworkConfig::c2));
    f.push_back(real_field("network", "slot_duration_s", N, &NetworkConfig::slot_duration_s));
    f.push_back(real_field("network", "v_max_mps", N, &NetworkConfig::v_max_mps));
    f.push_back(real_field("network", "l_min_m", N, &NetworkConfig::l_min_m));
    f.push_back(real_field("network", "c_mu_min", N, &NetworkConfig::c_mu_min));
    f.push_back(real_field("network", "c_mu_max", N, &NetworkConfig::c_mu_max));
    f.push_back(real_field("network", "c_uav_max", N, &NetworkConfig::c_uav_max));

    auto E = &Config::env;
    f.push_back(int_field("env", "num_uavs", E, &EnvConfig::num_uavs));
    f.push_back(int_field("env", "num_mus", E, &EnvConfig::num_mus));
    f.push_back(int_field("env", "num_slots", E, &EnvConfig::num_slots));
    f.push_back(int_field("env", "max_users", E, &EnvConfig::max_users));
    f.push_back(real_field("env", "region_m", E, &EnvConfig::region_m));
    f.push_back(real_field("env", "task_bits_min", E, &EnvConfig::task_bits_min));
    f.push_back(real_field("env", "task_bits_max", E, &EnvConfig::task_bits_max));
    f.push_back(real_field("env", "zeta_ul", E, &EnvConfig::zeta_ul));
    f.push_back(real_field("env", "zeta_dl", E, &EnvConfig::zeta_dl));
    f.push_back(real_field("env", "nu", E, &EnvConfig::nu));
    f.push_back(real_field("env", "xi", E, &EnvConfig::xi));
    f.push_back(real_field("env", "infeasible_delay_s", E, &EnvConfig::infeasible_delay_s));
    f.push_back(real_field("env", "t_fly_s", E, &EnvConfig::t_fly_s));
    f.push_back(bool_field("env", "reward_sign_paper", E, &EnvConfig::reward_sign_paper));
    f.push_back(bool_field("env", "p11_resolve_per_slot", E, &EnvConfig::p11_resolve_per_slot));
    f.push_back(Field{"env", "spawn",
                      [](const Config& c) {
                        std::string s;
                        for (std::size_t i = 0; i < c.env.spawn.size(); ++i) {
                          if (i) s += "; ";
                          s += fmt_double(c.env.spawn[i].x) + "," + fmt_double(c.env.spawn[i].y);
                        }
                        return s;
                      },
                      [](Config& c, std::string_view v, int line) {
                        std::vector<Point2> pts;
                        for (const auto& item : split(v, ';')) {
                          if (item.empty()) continue;
                          auto xy = split(item, ',');
                          if (xy.size() != 2) bad_value("env", "spawn", v, line, "'x,y; x,y; ...'");
                          auto x = parse_double(xy[0]);
                          auto y = parse_double(xy[1]);
                          if (!x || !y) bad_value("env", "spawn", v, line, "'x,y; x,y; ...'");
                          pts.push_back({*x, *y});
                        }
                        c.env.spawn = std::move(pts);
                      }});

    auto P = &Config::ppo;
    f.push_back(real_field("ppo", "clip_eps", P, &PpoHyper::clip_eps));
    f.push_back(real_field("ppo", "gamma", P, &PpoHyper::gamma));
    f.push_back(real_field("ppo", "lambda", P, &PpoHyper::lambda));
    f.push_back(real_field("ppo", "value_coef", P, &PpoHyper::value_coef));
    f.push_back(real_field("ppo", "entropy_coef", P, &PpoHyper::entropy_coef));
    f.push_back(int_field("ppo", "epochs", P, &PpoHyper::epochs));
    f.push_back(int_field("ppo", "minibatch", P, &PpoHyper::minibatch));
    f.push_back(int_field("ppo", "max_steps", P, &PpoHyper::max_steps));
    f.push_back(real_field("ppo", "lr", P, &PpoHyper::lr));
    f.push_back(real_field("ppo", "adam_beta1", P, &PpoHyper::adam_beta1));
    f.push_back(real_field("ppo", "adam_beta2", P, &PpoHyper::adam_beta2));
    f.push_back(real_field("ppo", "adam_eps", P, &PpoHyper::adam_eps));
    f.push_back(bool_field("ppo", "normalize_advantages", P, &PpoHyper::normalize_advantages));
    f.push_back(real_field("ppo", "target_kl", P, &PpoHyper::target_kl));
    f.push_back(real_field("ppo", "max_grad_norm", P, &PpoHyper::max_grad_norm));

    auto M = &Config::model;
    f.push_back(int_field("model", "hidden_units", M, &ModelConfig::hidden_units));
    f.push_back(int_field("model", "hidden_layers", M, &ModelConfig::hidden_layers));
    f.push_back(int_field("model", "gmappo_hidden_layers", M, &ModelConfig::gmappo_hidden_layers));
    f.push_back(int_field("model", "attn_dim", M, &ModelConfig::attn_dim));
    f.push_back(real_field("model", "log_std_init", M, &ModelConfig::log_std_init));

    auto T = &Config::train;
    f.push_back(int_field("train", "episodes_per_update", T, &TrainConfig::episodes_per_update));
    f.push_back(int_field("train", "eval_episodes", T, &TrainConfig::eval_episodes));
    f.push_back(int_field("train", "slot_log_every", T, &TrainConfig::slot_log_every));
    return f;
  }();
  return all;
}

const Field* find_field(std::string_view section, std::string_view key) {
  for (const auto& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what, 0, key);
}

std::string upper(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

double NetworkConfig::noise_psd_w_per_hz() const { return std::pow(10.0, noise_psd_dbm_per_hz / 10.0) * 1e-3; }

double NetworkConfig::gain_ref_linear() const { return std::pow(10.0, gain_ref_db / 10.0); }

void NetworkConfig::validate() const {
  require(p_ul_watt > 0, "network.p_ul_watt", "must be positive");
  require(p_max_watt > 0, "network.p_max_watt", "must be positive");
  require(bandwidth_hz > 0, "network.bandwidth_hz", "must be positive");
  require(r_min_bps > 0, "network.r_min_bps", "must be positive");
  require(absorption_a >= 0, "network.absorption_a", "must be non-negative");
  require(altitude_m >= 0, "network.altitude_m", "must be non-negative");
  require(eta >= 0 && eta <= 1, "network.eta", "must lie in [0,1]");
  require(beta_mu > 0 && beta_uav > 0, "network.beta_mu", "cycles per bit must be positive");
  require(q_mu > 0 && q_uav > 0, "network.q_mu", "chip constants must be positive");
  require(delta_prog > 0 && delta_prog < 1, "network.delta_prog", "must lie in (0,1)");
  require(c1 > 0 && c2 > 0, "network.c1", "airframe constants must be positive");
  require(slot_duration_s > 0, "network.slot_duration_s", "must be positive");
  require(v_max_mps > 0, "network.v_max_mps", "must be positive");
  require(l_min_m > 0, "network.l_min_m", "must be positive");
  require(c_mu_min > 0 && c_mu_min <= c_mu_max, "network.c_mu_min", "need 0 < c_mu_min <= c_mu_max");
  require(c_uav_max >= c_mu_min, "network.c_uav_max", "must be at least c_mu_min");
}

void EnvConfig::validate() const {
  require(num_uavs >= 1, "env.num_uavs", "need at least one UAV");
  require(num_mus >= 1, "env.num_mus", "need at least one MU");
  require(num_slots >= 1, "env.num_slots", "need at least one slot");
  require(max_users >= 1, "env.max_users", "must be positive");
  require(region_m > 0, "env.region_m", "must be positive");
  require(task_bits_min > 0 && task_bits_min <= task_bits_max, "env.task_bits_min",
          "need 0 < task_bits_min <= task_bits_max");
  require(infeasible_delay_s > 0, "env.infeasible_delay_s", "must be positive");
  require(t_fly_s >= 0, "env.t_fly_s", "must be non-negative");
  require(static_cast<int>(spawn.size()) == num_uavs, "env.spawn", "needs exactly one point per UAV");
  for (const auto& p : spawn)
    require(p.x >= 0 && p.x <= region_m && p.y >= 0 && p.y <= region_m, "env.spawn", "points must lie in the region");
}

void PpoHyper::validate() const {
  require(clip_eps > 0 && clip_eps < 1, "ppo.clip_eps", "must lie in (0,1)");
  require(gamma > 0 && gamma <= 1, "ppo.gamma", "must lie in (0,1]");
  require(lambda > 0 && lambda <= 1, "ppo.lambda", "must lie in (0,1]");
  require(value_coef >= 0, "ppo.value_coef", "must be non-negative");
  require(entropy_coef >= 0, "ppo.entropy_coef", "must be non-negative");
  require(epochs >= 1, "ppo.epochs", "must be positive");
  require(minibatch >= 1, "ppo.minibatch", "must be positive");
  require(max_steps >= 1, "ppo.max_steps", "must be positive");
  require(lr >= 0, "ppo.lr", "must be non-negative");
  require(adam_beta1 >= 0 && adam_beta1 < 1, "ppo.adam_beta1", "must lie in [0,1)");
  require(adam_beta2 >= 0 && adam_beta2 < 1, "ppo.adam_beta2", "must lie in [0,1)");
  require(adam_eps > 0, "ppo.adam_eps", "must be positive");
  require(target_kl >= 0, "ppo.target_kl", "must be non-negative");
  require(max_grad_norm >= 0, "ppo.max_grad_norm", "must be non-negative");
}

void ModelConfig::validate() const {
  require(hidden_units >= 1, "model.hidden_units", "must be positive");
  require(hidden_layers >= 1, "model.hidden_layers", "must be positive");
  require(gmappo_hidden_layers >= 1, "model.gmappo_hidden_layers", "must be positive");
  require(attn_dim >= 1, "model.attn_dim", "must be positive");
}

void TrainConfig::validate() const {
  require(episodes_per_update >= 1, "train.episodes_per_update", "must be positive");
  require(eval_episodes >= 1, "train.eval_episodes", "must be positive");
  require(slot_log_every >= 1, "train.slot_log_every", "must be positive");
}

void Config::validate() const {
  net.validate();
  env.validate();
  ppo.validate();
  model.validate();
  train.validate();
  require(env.max_users >= 1, "env.max_users", "must be positive");
}

std::string Config::dump() const {
  std::ostringstream out;
  out << "profile = " << profile << "\n";
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out << "\n[" << section << "]\n";
    }
    out << f.key << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

std::uint64_t Config::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> profile_names() { return {"micro", "table2", "table2-full"}; }

Config profile_config(std::string_view name) {
  Config c;
  if (name == "micro") {
    c.profile = "micro";
    c.env.num_uavs = 2;
    c.env.num_mus = 8;
    c.env.num_slots = 50;
    c.env.max_users = 8;
    c.env.spawn = {{100.0, 250.0}, {400.0, 250.0}};
    c.ppo.minibatch = 100;
    c.ppo.epochs = 4;
    c.ppo.max_steps = 10000;
    c.ppo.lr = 3e-4;
    c.train.episodes_per_update = 1;
    c.train.eval_episodes = 5;
  } else if (name == "table2" || name == "table2-full") {
    c.profile = std::string(name);
    c.env.num_uavs = 3;
    c.env.num_mus = 50;
    c.env.num_slots = 100;
    c.env.max_users = 50;
    c.env.spawn = {{100.0, 100.0}, {250.0, 400.0}, {400.0, 100.0}};
    c.ppo.minibatch = 256;
    c.ppo.epochs = 10;
    c.ppo.max_steps = 200000;
    c.train.episodes_per_update = 1;
    c.train.eval_episodes = 10;
  } else {
    throw ConfigError("unknown profile '" + std::string(name) + "'", 0, "profile");
  }
  return c;
}

void set_config_value(Config& cfg, std::string_view section, std::string_view key, std::string_view value,
                      int line) {
  const Field* f = find_field(section, key);
  if (!f) {
    std::ostringstream msg;
    if (line > 0) msg << "line " << line << ": ";
    msg << "unknown key " << section << "." << key;
    throw ConfigError(msg.str(), line, std::string(section) + "." + std::string(key));
  }
  f->set(cfg, trim(value), line);
}

Config parse_config(std::string_view text) {
  struct Entry {
    std::string section, key, value;
    int line;
  };
  std::vector<Entry> entries;
  std::string profile;
  int profile_line = 0;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    // ';' separates spawn points, so it only starts a comment at line start
    if (line.empty() || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError("line " + std::to_string(line_no) + ": malformed section header", line_no);
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'", line_no);
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (section.empty() && key == "profile") {
      profile = value;
      profile_line = line_no;
      continue;
    }
    if (section.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' outside of a section", line_no, key);
    if (!find_field(section, key))
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key " + section + "." + key, line_no,
                        section + "." + key);
    entries.push_back({section, key, value, line_no});
  }

  Config cfg;
  if (!profile.empty()) {
    try {
      cfg = profile_config(profile);
    } catch (const ConfigError&) {
      throw ConfigError("line " + std::to_string(profile_line) + ": unknown profile '" + profile + "'", profile_line,
                        "profile");
    }
  } else {
    std::set<std::string> seen;
    for (const auto& e : entries) seen.insert(e.section + "." + e.key);
    for (const auto& f : fields()) {
      std::string full = std::string(f.section) + "." + f.key;
      if (!seen.count(full)) throw ConfigError("missing config key " + full, 0, full);
    }
    cfg.profile = "custom";
  }
  for (const auto& e : entries) set_config_value(cfg, e.section, e.key, e.value, e.line);
  cfg.validate();
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception&) {
    throw ConfigError("cannot read config file " + path);
  }
  return parse_config(text);
}

void apply_env_overrides(Config& cfg, const std::map<std::string, std::string>& env) {
  for (const auto& f : fields()) {
    std::string name = "THZMEC_" + upper(f.section) + "_" + upper(f.key);
    if (auto it = env.find(name); it != env.end()) f.set(cfg, it->second, 0);
  }
}

void apply_env_overrides(Config& cfg) {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    if (kv.rfind("THZMEC_", 0) != 0) continue;
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  apply_env_overrides(cfg, env);
}

}  // namespace thzmec
