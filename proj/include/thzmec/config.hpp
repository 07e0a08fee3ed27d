#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace thzmec {

/// Raised for malformed or incomplete configuration. `line()` is 0 when the
/// problem is not tied to a particular line (e.g. a missing key).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0, std::string key = {})
      : std::runtime_error(what), line_(line), key_(std::move(key)) {}
  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

/// Physical constants of the THz MEC-UAV network.
///
/// Defaults form the "table2" baseline. Values the reference setup leaves
/// open (cycles per bit, chip constants, airframe constants, slot length,
/// speed and separation limits, CPU bounds) are documented defaults and can
/// be overridden like any other key.
struct NetworkConfig {
  double noise_psd_dbm_per_hz = -175.0;
  double p_ul_watt = 0.5;
  double p_max_watt = 5.0;
  double absorption_a = 0.005;  // per metre
  double bandwidth_hz = 0.2e12;
  double r_min_bps = 0.05e12;
  double gain_ref_db = -40.0;  // gain at the 1 m reference distance
  double altitude_m = 50.0;
  double eta = 0.5;
  double beta_mu = 1000.0;  // cycles per bit
  double beta_uav = 1000.0;
  double q_mu = 1e-28;
  double q_uav = 1e-28;
  double delta_prog = 0.1;
  double c1 = 9.26e-4;
  double c2 = 2250.0;
  double slot_duration_s = 1.0;
  double v_max_mps = 25.0;
  double l_min_m = 20.0;
  double c_mu_min = 1e8;  // cycles/s
  double c_mu_max = 1e9;
  double c_uav_max = 1e10;

  /// Linear noise power spectral density in W/Hz.
  double noise_psd_w_per_hz() const;
  /// Linear reference channel gain.
  double gain_ref_linear() const;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct EnvConfig {
  int num_uavs = 2;
  int num_mus = 8;
  int num_slots = 50;
  int max_users = 8;  // attention slots per UAV
  double region_m = 500.0;
  double task_bits_min = 1e5;
  double task_bits_max = 1e6;
  double zeta_ul = 1.0;
  double zeta_dl = 1.0;
  double nu = 0.1;
  double xi = 10.0;
  double infeasible_delay_s = 10.0;
  double t_fly_s = 1.0;
  bool reward_sign_paper = false;
  bool p11_resolve_per_slot = true;
  std::vector<Point2> spawn;  // one per UAV

  void validate() const;
};

struct PpoHyper {
  double clip_eps = 0.2;
  double gamma = 0.99;
  double lambda = 0.95;
  double value_coef = 0.5;    // c1 in the combined loss
  double entropy_coef = 0.01; // c2 in the combined loss
  int epochs = 10;
  int minibatch = 256;
  long max_steps = 200000;
  double lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool normalize_advantages = true;
  double target_kl = 0.0;  // 0 disables early stopping
  double max_grad_norm = 0.5;  // 0 disables clipping

  void validate() const;
};

struct ModelConfig {
  int hidden_units = 256;
  int hidden_layers = 2;
  int gmappo_hidden_layers = 3;
  int attn_dim = 16;
  double log_std_init = -0.5;

  void validate() const;
};

struct TrainConfig {
  int episodes_per_update = 1;
  int eval_episodes = 5;
  int slot_log_every = 1;  // write per-slot rows for every k-th training episode

  void validate() const;
};

struct Config {
  std::string profile = "micro";
  NetworkConfig net;
  EnvConfig env;
  PpoHyper ppo;
  ModelConfig model;
  TrainConfig train;

  void validate() const;

  /// Canonical `key = value` text with one `[section]` per block. Parsing
  /// this text yields an identical Config.
  std::string dump() const;
  /// FNV-1a hash of dump().
  std::uint64_t hash() const;
};

/// Built-in profiles: "table2" (default network constants), "micro" (2 UAVs,
/// 8 MUs, 50 slots) and "table2-full" (3 UAVs, 50 MUs, 100 slots).
Config profile_config(std::string_view name);
std::vector<std::string> profile_names();

/// Parses INI-style text. A top-level `profile = <name>` line seeds the
/// result from that profile and the remaining keys override it; without it
/// every key must be present. Errors carry 1-based line numbers.
Config parse_config(std::string_view text);
Config load_config_file(const std::string& path);

/// Applies overrides of the form THZMEC_<SECTION>_<KEY>=value taken from the
/// process environment (e.g. THZMEC_PPO_CLIP_EPS=0.1).
void apply_env_overrides(Config& cfg);
void apply_env_overrides(Config& cfg, const std::map<std::string, std::string>& env);

/// Sets one key; section and key as they appear in dump().
void set_config_value(Config& cfg, std::string_view section, std::string_view key,
                      std::string_view value, int line = 0);

}  // namespace thzmec
