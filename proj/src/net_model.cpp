#include "thzmec/net_model.hpp"

#include <cmath>
#include <numeric>

namespace thzmec {

namespace {

void require_domain(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

double planar_distance(const Position& a, const Position& b) { return std::hypot(a.x_m - b.x_m, a.y_m - b.y_m); }

double link_distance(const Position& uav, const Position& mu, const NetworkConfig& cfg) {
  require_domain(std::isfinite(uav.x_m) && std::isfinite(uav.y_m) && std::isfinite(mu.x_m) && std::isfinite(mu.y_m),
                 "link_distance: positions must be finite");
  const double dx = uav.x_m - mu.x_m;
  const double dy = uav.y_m - mu.y_m;
  return std::sqrt(cfg.altitude_m * cfg.altitude_m + dx * dx + dy * dy);
}

TaskSplit split_task(double alpha, double d_pre_bits) {
  require_domain(alpha >= 0.0 && alpha <= 1.0, "split_task: alpha must lie in [0,1]");
  require_domain(d_pre_bits >= 0.0, "split_task: data size must be non-negative");
  // d_in is rounded once; d_mec is then recovered exactly from it so that
  // d_in + d_mec == d_pre holds bit-for-bit.
  const double d_in = d_pre_bits - alpha * d_pre_bits;
  return {d_in, d_pre_bits - d_in};
}

double local_delay(double d_in_bits, double c_in, const NetworkConfig& cfg) {
  require_domain(c_in > 0.0, "local_delay: cycle rate must be positive");
  require_domain(d_in_bits >= 0.0, "local_delay: data size must be non-negative");
  return cfg.beta_mu * d_in_bits / c_in;
}

double local_energy(double d_in_bits, double c_in, const NetworkConfig& cfg) {
  require_domain(c_in > 0.0, "local_energy: cycle rate must be positive");
  require_domain(d_in_bits >= 0.0, "local_energy: data size must be non-negative");
  return cfg.q_mu * c_in * c_in * cfg.beta_mu * d_in_bits;
}

double thz_rate(double omega, double p_watt, double dist_m, const NetworkConfig& cfg) {
  require_domain(omega >= 0.0 && p_watt >= 0.0 && dist_m >= 0.0, "thz rate: negative input");
  if (omega == 0.0 || p_watt == 0.0) return 0.0;
  const double band = omega * cfg.bandwidth_hz;
  const double path = dist_m * dist_m * std::exp(cfg.absorption_a * dist_m);
  const double snr = p_watt * cfg.gain_ref_linear() / (band * path * cfg.noise_psd_w_per_hz());
  return band * std::log1p(snr) / std::log(2.0);
}

double uplink_rate(double omega_ul, double dist_m, const NetworkConfig& cfg) {
  return thz_rate(omega_ul, cfg.p_ul_watt, dist_m, cfg);
}

double downlink_rate(double omega_dl, double p_dl_watt, double dist_m, const NetworkConfig& cfg) {
  return thz_rate(omega_dl, p_dl_watt, dist_m, cfg);
}

double transfer_delay(double bits, double rate_bps) {
  require_domain(bits >= 0.0 && rate_bps >= 0.0, "transfer delay: negative input");
  if (bits == 0.0) return 0.0;
  if (rate_bps == 0.0) throw InfeasibleLinkError("positive data on a zero-rate link");
  return bits / rate_bps;
}

double uplink_delay(double d_mec_bits, double rate_bps) { return transfer_delay(d_mec_bits, rate_bps); }

double uplink_energy(double delay_s, const NetworkConfig& cfg) { return delay_s * cfg.p_ul_watt; }

double mec_delay(double d_mec_bits, double c_mec, const NetworkConfig& cfg) {
  require_domain(d_mec_bits >= 0.0, "mec_delay: data size must be non-negative");
  if (d_mec_bits == 0.0) return 0.0;
  require_domain(c_mec > 0.0, "mec_delay: cycle rate must be positive");
  return cfg.beta_uav * d_mec_bits / c_mec;
}

double mec_energy(double d_mec_bits, double c_mec, const NetworkConfig& cfg) {
  require_domain(d_mec_bits >= 0.0, "mec_energy: data size must be non-negative");
  if (d_mec_bits == 0.0) return 0.0;
  require_domain(c_mec > 0.0, "mec_energy: cycle rate must be positive");
  return cfg.q_uav * c_mec * c_mec * cfg.beta_uav * d_mec_bits;
}

double post_size(double d_mec_bits, const NetworkConfig& cfg) {
  require_domain(d_mec_bits >= 0.0, "post_size: data size must be non-negative");
  return cfg.delta_prog * d_mec_bits;
}

double downlink_delay(double d_post_bits, double rate_bps) { return transfer_delay(d_post_bits, rate_bps); }

double downlink_energy(double delay_s, double p_dl_watt) { return delay_s * p_dl_watt; }

double flight_energy(double speed_mps, double t_fly_s, const NetworkConfig& cfg) {
  require_domain(speed_mps >= 0.0, "flight_energy: speed must be non-negative");
  require_domain(t_fly_s >= 0.0, "flight_energy: flight time must be non-negative");
  if (speed_mps == 0.0) return 0.0;
  return t_fly_s * (cfg.c1 * speed_mps * speed_mps * speed_mps + cfg.c2 / speed_mps);
}

double total_delay(const MuSlotTerms& mu) { return mu.t_local + mu.t_ul + mu.t_mec + mu.t_dl; }

double total_energy(double e_fly, std::span<const MuSlotTerms> mus) {
  double e = e_fly;
  for (const auto& m : mus) e += m.e_local + m.e_ul + m.e_dl + m.e_mec;
  return e;
}

double utility(double energy_j, double delay_sum_s, const NetworkConfig& cfg) {
  require_domain(cfg.eta >= 0.0 && cfg.eta <= 1.0, "utility: eta must lie in [0,1]");
  return cfg.eta * energy_j + (1.0 - cfg.eta) * delay_sum_s;
}

double utility(double energy_j, std::span<const double> delays_s, const NetworkConfig& cfg) {
  return utility(energy_j, std::accumulate(delays_s.begin(), delays_s.end(), 0.0), cfg);
}

}  // namespace thzmec
