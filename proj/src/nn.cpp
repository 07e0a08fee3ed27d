#include "thzmec/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

namespace thzmec::nn {

namespace {

Matrix uniform_init(int rows, int cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return m;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

void zero_grad(const ParamRefs& params) {
  for (auto* p : params) p->zero_grad();
}

double grad_norm(const ParamRefs& params) {
  double s = 0.0;
  for (auto* p : params) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

void clip_grad_norm(const ParamRefs& params, double max_norm) {
  const double n = grad_norm(params);
  if (max_norm <= 0.0 || n <= max_norm || n == 0.0) return;
  const double scale = max_norm / n;
  for (auto* p : params) p->grad *= scale;
}

// --- Linear -----------------------------------------------------------------

Linear::Linear(int in, int out, const std::string& name, std::mt19937_64& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  w_ = Param(name + ".weight", uniform_init(out, in, bound, rng));
  b_ = Param(name + ".bias", Matrix::Zero(out, 1));
}

Matrix Linear::forward(const Matrix& x) {
  if (x.rows() != w_.value.cols())
    throw ShapeError(w_.name + ": expected input dim " + std::to_string(w_.value.cols()) + ", got " +
                     std::to_string(x.rows()));
  x_ = x;
  Matrix y = w_.value * x;
  y.colwise() += b_.value.col(0);
  return y;
}

Matrix Linear::backward(const Matrix& dy) {
  if (dy.rows() != w_.value.rows() || dy.cols() != x_.cols()) throw ShapeError(w_.name + ": gradient shape mismatch");
  w_.grad.noalias() += dy * x_.transpose();
  b_.grad.col(0) += dy.rowwise().sum();
  return w_.value.transpose() * dy;
}

// --- Mlp --------------------------------------------------------------------

Mlp::Mlp(int in, const std::vector<int>& hidden, int out, const std::string& name, std::mt19937_64& rng,
         double out_gain, Activation hidden_act)
    : act_(hidden_act) {
  int prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(prev, hidden[i], name + ".l" + std::to_string(i), rng, 1.0);
    prev = hidden[i];
  }
  layers_.emplace_back(prev, out, name + ".out", rng, out_gain);
}

Matrix Mlp::forward(const Matrix& x) {
  acts_.resize(layers_.size() - 1);
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) {
      if (act_ == Activation::kTanh) h = h.array().tanh().matrix();
      acts_[i] = h;
    }
  }
  return h;
}

Matrix Mlp::backward(const Matrix& dy) {
  Matrix g = layers_.back().backward(dy);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) {
    if (act_ == Activation::kTanh) g = (g.array() * (1.0 - acts_[i].array().square())).matrix();
    g = layers_[i].backward(g);
  }
  return g;
}

ParamRefs Mlp::params() {
  ParamRefs out;
  for (auto& l : layers_) {
    out.push_back(&l.weight());
    out.push_back(&l.bias());
  }
  return out;
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.in_dim() + 1) * static_cast<std::size_t>(l.out_dim());
  return n;
}

// --- attention --------------------------------------------------------------

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v, double d_scale,
                            AttentionCache* cache) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0)
    throw ShapeError("scaled_dot_attention: non-conformable Q/K/V");
  if (!(d_scale > 0)) throw ShapeError("scaled_dot_attention: scale dimension must be positive");
  Matrix s = (q * k.transpose()) / std::sqrt(d_scale);
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  Matrix out = s * v;
  if (cache) cache->weights = std::move(s);
  return out;
}

AttentionGrads scaled_dot_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, double d_scale,
                                             const AttentionCache& cache, const Matrix& dout) {
  const Matrix& w = cache.weights;
  AttentionGrads g;
  g.dv = w.transpose() * dout;
  Matrix dw = dout * v.transpose();
  Matrix ds(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double dot = w.row(i).dot(dw.row(i));
    ds.row(i) = (w.row(i).array() * (dw.row(i).array() - dot)).matrix();
  }
  const double inv = 1.0 / std::sqrt(d_scale);
  g.dq = ds * k * inv;
  g.dk = ds.transpose() * q * inv;
  return g;
}

// --- MhaEncoder -------------------------------------------------------------

MhaEncoder::MhaEncoder(const MhaEncoderSpec& spec, const std::string& name, std::mt19937_64& rng) : spec_(spec) {
  if (spec.max_users < 1 || spec.d_u < 1 || spec.head_dim < 1) throw ShapeError("MhaEncoder: invalid spec");
  const int rows = spec.max_users * spec.head_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.d_u));
  wq_ = Param(name + ".wq", uniform_init(rows, spec.d_u, bound, rng));
  bq_ = Param(name + ".bq", uniform_init(rows, 1, bound, rng));
  wk_ = Param(name + ".wk", uniform_init(rows, spec.d_u, bound, rng));
  bk_ = Param(name + ".bk", uniform_init(rows, 1, bound, rng));
  wv_ = Param(name + ".wv", uniform_init(rows, spec.d_u, bound, rng));
  bv_ = Param(name + ".bv", uniform_init(rows, 1, bound, rng));
}

ParamRefs MhaEncoder::params() { return {&wq_, &bq_, &wk_, &bk_, &wv_, &bv_}; }

void MhaEncoder::project(const Matrix& states, int active, Matrix& q, Matrix& k, Matrix& v) const {
  const auto s = states.leftCols(active);
  q = wq_.value * s;
  q.colwise() += bq_.value.col(0);
  k = wk_.value * s;
  k.colwise() += bk_.value.col(0);
  v = wv_.value * s;
  v.colwise() += bv_.value.col(0);
}

Vector MhaEncoder::encode(const Matrix& states, int active) const {
  if (states.rows() != spec_.d_u || states.cols() != spec_.max_users)
    throw ShapeError("MhaEncoder: states must be d_u x max_users");
  if (active < 0 || active > spec_.max_users) throw ShapeError("MhaEncoder: more active users than attention slots");
  const int a = spec_.head_dim;
  Vector out(spec_.output_dim());
  Matrix q, k, v;
  if (active > 0) project(states, active, q, k, v);
  for (int h = 0; h < spec_.max_users; ++h) {
    if (h < active) {
      Matrix qh = q.block(h * a, h, a, 1).transpose();
      Matrix kh = k.middleRows(h * a, a).transpose();
      Matrix vh = v.middleRows(h * a, a).transpose();
      out.segment(h * a, a) = scaled_dot_attention(qh, kh, vh, spec_.d_u).transpose();
    } else {
      out.segment(h * a, a) = bv_.value.col(0).segment(h * a, a);
    }
  }
  return out;
}

Matrix MhaEncoder::forward(const std::vector<const Matrix*>& states, const std::vector<int>& active) {
  if (states.size() != active.size()) throw ShapeError("MhaEncoder: batch size mismatch");
  const int a = spec_.head_dim;
  const std::size_t batch = states.size();
  in_ = states;
  active_ = active;
  cache_.assign(batch, {});
  Matrix out(spec_.output_dim(), static_cast<Eigen::Index>(batch));
  for (std::size_t i = 0; i < batch; ++i) {
    const Matrix& s = *states[i];
    const int act = active[i];
    if (s.rows() != spec_.d_u || s.cols() != spec_.max_users)
      throw ShapeError("MhaEncoder: states must be d_u x max_users");
    if (act < 0 || act > spec_.max_users) throw ShapeError("MhaEncoder: more active users than attention slots");
    auto& c = cache_[i];
    if (act > 0) project(s, act, c.q, c.k, c.v);
    c.att.resize(static_cast<std::size_t>(act));
    for (int h = 0; h < spec_.max_users; ++h) {
      if (h < act) {
        Matrix qh = c.q.block(h * a, h, a, 1).transpose();
        Matrix kh = c.k.middleRows(h * a, a).transpose();
        Matrix vh = c.v.middleRows(h * a, a).transpose();
        out.col(static_cast<Eigen::Index>(i)).segment(h * a, a) =
            scaled_dot_attention(qh, kh, vh, spec_.d_u, &c.att[static_cast<std::size_t>(h)]).transpose();
      } else {
        out.col(static_cast<Eigen::Index>(i)).segment(h * a, a) = bv_.value.col(0).segment(h * a, a);
      }
    }
  }
  return out;
}

void MhaEncoder::backward(const Matrix& dout) {
  if (dout.rows() != spec_.output_dim() || dout.cols() != static_cast<Eigen::Index>(cache_.size()))
    throw ShapeError("MhaEncoder: gradient shape mismatch");
  const int a = spec_.head_dim;
  for (std::size_t i = 0; i < cache_.size(); ++i) {
    const int act = active_[i];
    const auto& c = cache_[i];
    const auto col = dout.col(static_cast<Eigen::Index>(i));
    Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
    Matrix dk = Matrix::Zero(c.k.rows(), c.k.cols());
    Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
    for (int h = 0; h < spec_.max_users; ++h) {
      if (h < act) {
        Matrix qh = c.q.block(h * a, h, a, 1).transpose();
        Matrix kh = c.k.middleRows(h * a, a).transpose();
        Matrix vh = c.v.middleRows(h * a, a).transpose();
        Matrix d = col.segment(h * a, a).transpose();
        auto g = scaled_dot_attention_backward(qh, kh, vh, spec_.d_u, c.att[static_cast<std::size_t>(h)], d);
        dq.block(h * a, h, a, 1) += g.dq.transpose();
        dk.middleRows(h * a, a) += g.dk.transpose();
        dv.middleRows(h * a, a) += g.dv.transpose();
      } else {
        bv_.grad.col(0).segment(h * a, a) += col.segment(h * a, a);
      }
    }
    if (act == 0) continue;
    const auto s = in_[i]->leftCols(act);
    wq_.grad.noalias() += dq * s.transpose();
    bq_.grad.col(0) += dq.rowwise().sum();
    wk_.grad.noalias() += dk * s.transpose();
    bk_.grad.col(0) += dk.rowwise().sum();
    wv_.grad.noalias() += dv * s.transpose();
    bv_.grad.col(0) += dv.rowwise().sum();
  }
}

// --- GaussianHead -----------------------------------------------------------

GaussianHead::GaussianHead(int dim, double log_std_init, const std::string& name)
    : log_std_(name + ".log_std", Matrix::Constant(dim, 1, log_std_init)) {}

double GaussianHead::log_std(int i) const { return std::clamp(log_std_.value(i, 0), kLogStdMin, kLogStdMax); }

Vector GaussianHead::sample(const Vector& mean, int active, std::mt19937_64& rng) const {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector z = mean;
  for (int i = 0; i < active; ++i) z(i) = mean(i) + std::exp(log_std(i)) * n01(rng);
  return z;
}

double GaussianHead::log_prob(const Vector& z, const Vector& mean, int active) const {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (int i = 0; i < active; ++i) {
    const double ls = log_std(i);
    const double u = (z(i) - mean(i)) * std::exp(-ls);
    lp += -0.5 * u * u - ls - half_log_2pi;
  }
  return lp;
}

double GaussianHead::entropy(int active) const {
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  double h = 0.0;
  for (int i = 0; i < active; ++i) h += log_std(i) + c;
  return h;
}

Vector GaussianHead::dlogp_dmean(const Vector& z, const Vector& mean, int active) const {
  Vector g = Vector::Zero(mean.size());
  for (int i = 0; i < active; ++i) g(i) = (z(i) - mean(i)) * std::exp(-2.0 * log_std(i));
  return g;
}

void GaussianHead::accumulate_dlogp(const Vector& z, const Vector& mean, int active, double scale) {
  for (int i = 0; i < active; ++i) {
    const double raw = log_std_.value(i, 0);
    if (raw < kLogStdMin || raw > kLogStdMax) continue;
    const double u2 = (z(i) - mean(i)) * (z(i) - mean(i)) * std::exp(-2.0 * raw);
    log_std_.grad(i, 0) += scale * (u2 - 1.0);
  }
}

void GaussianHead::accumulate_dentropy(int active, double scale) {
  for (int i = 0; i < active; ++i) {
    const double raw = log_std_.value(i, 0);
    if (raw < kLogStdMin || raw > kLogStdMax) continue;
    log_std_.grad(i, 0) += scale;
  }
}

double squash(double z, double lo, double hi) { return lo + (hi - lo) / (1.0 + std::exp(-z)); }

double squash_log_jacobian(double z, double lo, double hi) {
  // log((hi-lo) * s * (1-s)) with log s = -softplus(-z), log(1-s) = -softplus(z)
  return std::log(hi - lo) - softplus(-z) - softplus(z);
}

double unsquash(double a, double lo, double hi) {
  const double s = (a - lo) / (hi - lo);
  return std::log(s) - std::log1p(-s);
}

// --- Adam -------------------------------------------------------------------

void adam_step(Matrix& value, const Matrix& grad, Matrix& m, Matrix& v, long t, const AdamHyper& hyper) {
  if (grad.rows() != value.rows() || grad.cols() != value.cols() || m.rows() != value.rows() ||
      m.cols() != value.cols() || v.rows() != value.rows() || v.cols() != value.cols())
    throw ShapeError("adam_step: shape mismatch");
  m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad;
  v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  value.array() -= hyper.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + hyper.eps);
}

Adam::Adam(ParamRefs params, AdamHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  for (auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::rebind(ParamRefs params) {
  if (params.size() != params_.size()) throw ShapeError("Adam::rebind: parameter count mismatch");
  params_ = std::move(params);
}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i]->value, params_[i]->grad, m_[i], v_[i], t_, hyper_);
}

void Adam::save(std::ostream& out, const std::string& prefix) const {
  write_u64(out, static_cast<std::uint64_t>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    write_tensor(out, prefix + ".m." + params_[i]->name, m_[i]);
    write_tensor(out, prefix + ".v." + params_[i]->name, v_[i]);
  }
}

void Adam::load(std::istream& in, const std::string& prefix) {
  t_ = static_cast<long>(read_u64(in));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i] = read_tensor(in, prefix + ".m." + params_[i]->name, m_[i].rows(), m_[i].cols());
    v_[i] = read_tensor(in, prefix + ".v." + params_[i]->name, v_[i].rows(), v_[i].cols());
  }
}

// --- serialisation ------------------------------------------------------------

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  write_u64(out, name.size());
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) write_u64(out, std::bit_cast<std::uint64_t>(m(i, j)));
}

Matrix read_tensor(std::istream& in, const std::string& expected_name, Eigen::Index rows, Eigen::Index cols) {
  const auto len = read_u64(in);
  if (len > 4096) throw std::runtime_error("corrupt checkpoint: implausible tensor name length");
  std::string name(len, '\0');
  if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("truncated checkpoint");
  if (name != expected_name)
    throw std::runtime_error("checkpoint tensor mismatch: expected '" + expected_name + "', found '" + name + "'");
  const auto r = static_cast<Eigen::Index>(read_u64(in));
  const auto c = static_cast<Eigen::Index>(read_u64(in));
  if (r != rows || c != cols) throw std::runtime_error("checkpoint tensor '" + name + "' has the wrong shape");
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = std::bit_cast<double>(read_u64(in));
  return m;
}

}  // namespace thzmec::nn
