#pragma once

// Small differentiable core: dense layers, tanh MLPs, scaled dot-product
// attention, the per-user multi-head attention encoder, diagonal Gaussian
// heads and Adam. Every module caches what its backward pass needs from the
// most recent forward call; gradients accumulate into Param::grad until
// zero_grad().

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace thzmec::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

using ParamRefs = std::vector<Param*>;

void zero_grad(const ParamRefs& params);
double grad_norm(const ParamRefs& params);
/// Scales all gradients so their joint L2 norm is at most `max_norm`.
void clip_grad_norm(const ParamRefs& params, double max_norm);

enum class Activation { kIdentity, kTanh };

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, const std::string& name, std::mt19937_64& rng, double gain = 1.0);

  /// X is (in x batch); returns (out x batch).
  Matrix forward(const Matrix& x);
  /// Accumulates parameter gradients; returns d loss / d X.
  Matrix backward(const Matrix& dy);

  int in_dim() const { return static_cast<int>(w_.value.cols()); }
  int out_dim() const { return static_cast<int>(w_.value.rows()); }
  Param& weight() { return w_; }
  Param& bias() { return b_; }
  ParamRefs params() { return {&w_, &b_}; }

 private:
  Param w_;
  Param b_;
  Matrix x_;
};

/// Dense network with tanh hidden layers and an identity output layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in, const std::vector<int>& hidden, int out, const std::string& name, std::mt19937_64& rng,
      double out_gain = 1.0, Activation hidden_act = Activation::kTanh);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

  ParamRefs params();
  int in_dim() const { return layers_.front().in_dim(); }
  int out_dim() const { return layers_.back().out_dim(); }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_params() const;

 private:
  std::vector<Linear> layers_;
  std::vector<Matrix> acts_;  // post-activation outputs of hidden layers
  Activation act_ = Activation::kTanh;
};

struct AttentionCache {
  Matrix weights;  // softmax rows
};

/// softmax(Q K^T / sqrt(d_scale)) V with Q (nq x d), K (nk x d), V (nk x dv).
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v, double d_scale,
                            AttentionCache* cache = nullptr);

struct AttentionGrads {
  Matrix dq, dk, dv;
};
AttentionGrads scaled_dot_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, double d_scale,
                                             const AttentionCache& cache, const Matrix& dout);

struct MhaEncoderSpec {
  int max_users = 8;
  int d_u = 4;
  int head_dim = 16;

  int output_dim() const { return max_users * head_dim; }
};

/// One attention head per user slot. Head h takes user h's state as query
/// and attends over the active users' states; an inactive head sees the
/// all-zero input and therefore emits its value bias. Outputs are
/// concatenated in slot order, so the encoding has a fixed size for any
/// number of active users up to max_users.
class MhaEncoder {
 public:
  MhaEncoder() = default;
  MhaEncoder(const MhaEncoderSpec& spec, const std::string& name, std::mt19937_64& rng);

  /// `states` is (d_u x max_users) with the active users in the first
  /// `active` columns. Returns a vector of length output_dim().
  Vector encode(const Matrix& states, int active) const;

  /// Batched encode with caching for backward. `states[i]` as in encode().
  Matrix forward(const std::vector<const Matrix*>& states, const std::vector<int>& active);
  /// `dout` is (output_dim x batch) for the last forward call.
  void backward(const Matrix& dout);

  const MhaEncoderSpec& spec() const { return spec_; }
  ParamRefs params();

 private:
  struct SampleCache {
    Matrix q, k, v;  // (M*a x active) projections; empty when no user is active
    std::vector<AttentionCache> att;
  };

  void project(const Matrix& states, int active, Matrix& q, Matrix& k, Matrix& v) const;

  MhaEncoderSpec spec_;
  Param wq_, bq_, wk_, bk_, wv_, bv_;  // stacked over heads: (M*a x d_u), (M*a x 1)
  std::vector<const Matrix*> in_;
  std::vector<int> active_;
  std::vector<SampleCache> cache_;
};

/// Diagonal Gaussian over pre-squash actions with a state-independent,
/// learnable log standard deviation clamped to [-5, 2].
class GaussianHead {
 public:
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  GaussianHead() = default;
  GaussianHead(int dim, double log_std_init, const std::string& name);

  int dim() const { return static_cast<int>(log_std_.value.rows()); }
  double log_std(int i) const;
  Param& log_std_param() { return log_std_; }
  ParamRefs params() { return {&log_std_}; }

  /// Reparameterised draw z = mean + std * eps for the first `active` dims;
  /// the rest are set to the mean.
  Vector sample(const Vector& mean, int active, std::mt19937_64& rng) const;
  double log_prob(const Vector& z, const Vector& mean, int active) const;
  double entropy(int active) const;

  /// d log_prob / d mean for one sample (zero beyond `active`).
  Vector dlogp_dmean(const Vector& z, const Vector& mean, int active) const;
  /// Accumulates `scale * d log_prob / d log_std` into the log_std gradient.
  void accumulate_dlogp(const Vector& z, const Vector& mean, int active, double scale);
  /// Accumulates `scale * d entropy / d log_std`.
  void accumulate_dentropy(int active, double scale);

 private:
  Param log_std_;
};

/// Maps z to lo + (hi - lo) * sigmoid(z).
double squash(double z, double lo, double hi);
/// log |d squash / d z|.
double squash_log_jacobian(double z, double lo, double hi);
/// Inverse of squash for a in (lo, hi).
double unsquash(double a, double lo, double hi);

struct AdamHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `value` in place. `t` is the 1-based
/// step count after this update.
void adam_step(Matrix& value, const Matrix& grad, Matrix& m, Matrix& v, long t, const AdamHyper& hyper);

class Adam {
 public:
  Adam() = default;
  Adam(ParamRefs params, AdamHyper hyper);

  void step();
  void set_lr(double lr) { hyper_.lr = lr; }
  const AdamHyper& hyper() const { return hyper_; }
  long steps() const { return t_; }

  void save(std::ostream& out, const std::string& prefix) const;
  void load(std::istream& in, const std::string& prefix);
  /// Rebinds to a new parameter list of identical shapes (after a copy).
  void rebind(ParamRefs params);

 private:
  ParamRefs params_;
  std::vector<Matrix> m_, v_;
  AdamHyper hyper_;
  long t_ = 0;
};

/// Binary tensor records: name, rows, cols, raw little-endian doubles.
void write_tensor(std::ostream& out, const std::string& name, const Matrix& m);
Matrix read_tensor(std::istream& in, const std::string& expected_name, Eigen::Index rows, Eigen::Index cols);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64(std::istream& in);

}  // namespace thzmec::nn
