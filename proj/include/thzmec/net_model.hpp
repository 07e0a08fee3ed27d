#pragma once

// Physical model of the THz MEC-UAV network: task splitting, link rates,
// communication and computation delays/energies, flight energy and the
// per-UAV utility. Everything here is a pure function.

#include <span>
#include <stdexcept>
#include <string>

#include "thzmec/config.hpp"

namespace thzmec {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A positive amount of data was scheduled on a link whose rate is zero.
class InfeasibleLinkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar position in metres. UAV altitude comes from NetworkConfig.
struct Position {
  double x_m = 0.0;
  double y_m = 0.0;
};

/// Per-slot computation task of one mobile user.
struct Task {
  double d_pre_bits = 0.0;
  double c_min_cycles_per_s = 0.0;
};

/// Communication/offloading decision for one MU on its serving UAV.
struct LinkAlloc {
  double omega_ul = 0.0;
  double omega_dl = 0.0;
  double p_dl_watt = 0.0;
  double alpha = 0.0;
};

struct TaskSplit {
  double d_in_bits;
  double d_mec_bits;
};

double planar_distance(const Position& a, const Position& b);

/// Slant range between a UAV at the configured altitude and a ground MU.
double link_distance(const Position& uav, const Position& mu, const NetworkConfig& cfg);

TaskSplit split_task(double alpha, double d_pre_bits);

double local_delay(double d_in_bits, double c_in, const NetworkConfig& cfg);
double local_energy(double d_in_bits, double c_in, const NetworkConfig& cfg);

/// omega*B*log2(1 + p*g0 / (omega*B*d^2*e^{a d}*N0)); zero bandwidth or zero
/// power gives rate 0.
double thz_rate(double omega, double p_watt, double dist_m, const NetworkConfig& cfg);
double uplink_rate(double omega_ul, double dist_m, const NetworkConfig& cfg);
double downlink_rate(double omega_dl, double p_dl_watt, double dist_m, const NetworkConfig& cfg);

/// Throws InfeasibleLinkError when bits > 0 and rate == 0.
double transfer_delay(double bits, double rate_bps);
double uplink_delay(double d_mec_bits, double rate_bps);
double uplink_energy(double delay_s, const NetworkConfig& cfg);

double mec_delay(double d_mec_bits, double c_mec, const NetworkConfig& cfg);
double mec_energy(double d_mec_bits, double c_mec, const NetworkConfig& cfg);

double post_size(double d_mec_bits, const NetworkConfig& cfg);
double downlink_delay(double d_post_bits, double rate_bps);
double downlink_energy(double delay_s, double p_dl_watt);

/// Rotary-wing propulsion energy; 0 while hovering (speed == 0).
double flight_energy(double speed_mps, double t_fly_s, const NetworkConfig& cfg);

/// Energy and delay terms of one MU in one slot.
struct MuSlotTerms {
  double e_local = 0.0;
  double e_ul = 0.0;
  double e_mec = 0.0;
  double e_dl = 0.0;
  double t_local = 0.0;
  double t_ul = 0.0;
  double t_mec = 0.0;
  double t_dl = 0.0;
};

double total_energy(double e_fly, std::span<const MuSlotTerms> mus);
double total_delay(const MuSlotTerms& mu);

/// Per-UAV cost eta*E + (1-eta)*sum(T). Smaller is better.
double utility(double energy_j, std::span<const double> delays_s, const NetworkConfig& cfg);
double utility(double energy_j, double delay_sum_s, const NetworkConfig& cfg);

}  // namespace thzmec
