#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pacbayes/errors.hpp"
#include "pacbayes/numeric.hpp"

namespace pacbayes {

// Diagonal Gaussian over one affine layer. sigma = softplus(rho), so every
// representable rho gives a positive scale.
template <typename Scalar>
struct GaussianLayer {
  MatrixX<Scalar> mu_w;   // out x in
  MatrixX<Scalar> rho_w;  // out x in
  VectorX<Scalar> mu_b;   // out
  VectorX<Scalar> rho_b;  // out

  Index inputs() const { return mu_w.cols(); }
  Index outputs() const { return mu_w.rows(); }
  Index parameter_count() const { return mu_w.size() + mu_b.size(); }

  MatrixX<Scalar> sigma_w() const { return softplus(rho_w.array()).matrix(); }
  VectorX<Scalar> sigma_b() const { return softplus(rho_b.array()).matrix(); }
};

template <typename Scalar>
struct LayerNoise {
  MatrixX<Scalar> w;
  VectorX<Scalar> b;
};

template <typename Scalar>
using WeightNoise = std::vector<LayerNoise<Scalar>>;

template <typename Scalar>
struct LayerGradient {
  MatrixX<Scalar> dmu_w;
  MatrixX<Scalar> drho_w;
  VectorX<Scalar> dmu_b;
  VectorX<Scalar> drho_b;
};

template <typename Scalar>
struct Gradients {
  std::vector<LayerGradient<Scalar>> layers;

  Gradients& operator+=(const Gradients& other) {
    axpy(Scalar(1), other);
    return *this;
  }

  // this += alpha * other
  void axpy(Scalar alpha, const Gradients& other) {
    if (other.layers.size() != layers.size()) throw DimensionError("Gradients: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].dmu_w += alpha * other.layers[l].dmu_w;
      layers[l].drho_w += alpha * other.layers[l].drho_w;
      layers[l].dmu_b += alpha * other.layers[l].dmu_b;
      layers[l].drho_b += alpha * other.layers[l].drho_b;
    }
  }

  Scalar max_abs() const {
    Scalar m(0);
    for (const auto& g : layers) {
      m = std::max({m, g.dmu_w.cwiseAbs().maxCoeff(), g.drho_w.cwiseAbs().maxCoeff(),
                    g.dmu_b.cwiseAbs().maxCoeff(), g.drho_b.cwiseAbs().maxCoeff()});
    }
    return m;
  }
};

struct NetworkMeta {
  double sigma0 = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {
inline std::uint64_t next_revision() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

// Stack of Gaussian affine layers: ReLU on hidden layers, softmax on output.
// Each mutation through mutable_layers() stamps a fresh revision, which is
// how forward caches detect that they were produced by an older state.
template <typename Scalar>
class BasicProbNetwork {
 public:
  using Layer = GaussianLayer<Scalar>;

  BasicProbNetwork() = default;

  explicit BasicProbNetwork(std::vector<Layer> layers, NetworkMeta meta = {})
      : layers_(std::move(layers)), meta_(meta), revision_(detail::next_revision()) {
    validate();
  }

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }

  std::vector<Layer>& mutable_layers() {
    revision_ = detail::next_revision();
    return layers_;
  }

  std::uint64_t revision() const { return revision_; }
  const NetworkMeta& meta() const { return meta_; }
  void set_meta(NetworkMeta meta) { meta_ = meta; }

  std::size_t num_layers() const { return layers_.size(); }
  Index input_width() const { return layers_.empty() ? 0 : layers_.front().inputs(); }
  Index num_classes() const { return layers_.empty() ? 0 : layers_.back().outputs(); }
  Index depth() const { return layers_.empty() ? 0 : static_cast<Index>(layers_.size()) - 1; }
  Index hidden_units() const { return layers_.size() < 2 ? 0 : layers_.front().outputs(); }

  std::vector<Index> dims() const {
    std::vector<Index> d;
    if (layers_.empty()) return d;
    d.push_back(layers_.front().inputs());
    for (const auto& l : layers_) d.push_back(l.outputs());
    return d;
  }

  // Weights plus biases.
  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers_) n += l.parameter_count();
    return n;
  }
  // Each weight carries a mean and a scale parameter.
  Index distribution_parameter_count() const { return 2 * parameter_count(); }

  void validate() const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (L.rho_w.rows() != L.mu_w.rows() || L.rho_w.cols() != L.mu_w.cols() ||
          L.mu_b.size() != L.mu_w.rows() || L.rho_b.size() != L.mu_b.size()) {
        throw DimensionError("layer " + std::to_string(l) + ": mu/rho shapes disagree");
      }
      if (l > 0 && layers_[l - 1].outputs() != L.inputs()) {
        throw DimensionError("layer " + std::to_string(l) + ": input width does not chain");
      }
    }
  }

 private:
  std::vector<Layer> layers_;
  NetworkMeta meta_;
  std::uint64_t revision_ = 0;
};

using ProbNetwork = BasicProbNetwork<double>;

// Frozen snapshot of a network used as the reference distribution in KL
// terms. Scales are cached since they never change.
template <typename Scalar>
class BasicPriorRef {
 public:
  using Layer = GaussianLayer<Scalar>;

  BasicPriorRef() = default;
  BasicPriorRef(const BasicProbNetwork<Scalar>& net, double sigma0)
      : layers_(net.layers()), sigma0_(sigma0), meta_(net.meta()) {
    for (const auto& l : layers_) {
      sigma_w_.push_back(l.sigma_w());
      sigma_b_.push_back(l.sigma_b());
    }
  }

  const std::vector<Layer>& layers() const { return layers_; }
  const MatrixX<Scalar>& sigma_w(std::size_t l) const { return sigma_w_[l]; }
  const VectorX<Scalar>& sigma_b(std::size_t l) const { return sigma_b_[l]; }
  double sigma0() const { return sigma0_; }

  BasicProbNetwork<Scalar> to_network() const { return BasicProbNetwork<Scalar>(layers_, meta_); }

 private:
  std::vector<Layer> layers_;
  std::vector<MatrixX<Scalar>> sigma_w_;
  std::vector<VectorX<Scalar>> sigma_b_;
  double sigma0_ = 0.0;
  NetworkMeta meta_;
};

using PriorRef = BasicPriorRef<double>;

enum class Center { random, zero };

// Fresh network with every scale equal to sigma0. Random centers follow a
// truncated normal with std 1/sqrt(fan_in); biases start at zero.
template <typename Scalar = double>
BasicProbNetwork<Scalar> init_network(const std::vector<Index>& dims, double sigma0, SeededRng& rng,
                                      Center center) {
  if (!(sigma0 > 0.0) || sigma0 > 1.0) throw ParameterError("init_network: sigma0 must lie in (0, 1]");
  if (dims.size() < 2) throw DimensionError("init_network: need at least input and output widths");
  for (Index d : dims) {
    if (d < 1) throw DimensionError("init_network: every width must be positive");
  }
  const Scalar rho0 = softplus_inverse(static_cast<Scalar>(sigma0));
  std::vector<GaussianLayer<Scalar>> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index in = dims[l], out = dims[l + 1];
    GaussianLayer<Scalar> L;
    if (center == Center::random) {
      const VectorX<Scalar> draws = trunc_normal<Scalar>(rng, out * in, Scalar(1) / std::sqrt(Scalar(in)));
      L.mu_w = Eigen::Map<const MatrixX<Scalar>>(draws.data(), out, in);
    } else {
      L.mu_w = MatrixX<Scalar>::Zero(out, in);
    }
    L.rho_w = MatrixX<Scalar>::Constant(out, in, rho0);
    L.mu_b = VectorX<Scalar>::Zero(out);
    L.rho_b = VectorX<Scalar>::Constant(out, rho0);
    layers.push_back(std::move(L));
  }
  return BasicProbNetwork<Scalar>(std::move(layers), NetworkMeta{sigma0, rng.seed()});
}

// Network centered at the means of `weights` with every scale reset to sigma0.
template <typename Scalar>
BasicProbNetwork<Scalar> init_network(const BasicProbNetwork<Scalar>& weights, double sigma0) {
  if (!(sigma0 > 0.0) || sigma0 > 1.0) throw ParameterError("init_network: sigma0 must lie in (0, 1]");
  const Scalar rho0 = softplus_inverse(static_cast<Scalar>(sigma0));
  std::vector<GaussianLayer<Scalar>> layers = weights.layers();
  for (auto& L : layers) {
    L.rho_w.setConstant(rho0);
    L.rho_b.setConstant(rho0);
  }
  return BasicProbNetwork<Scalar>(std::move(layers), NetworkMeta{sigma0, weights.meta().seed});
}

template <typename Scalar>
WeightNoise<Scalar> draw_noise(const BasicProbNetwork<Scalar>& net, SeededRng& rng) {
  WeightNoise<Scalar> noise;
  noise.reserve(net.num_layers());
  for (const auto& L : net.layers()) {
    LayerNoise<Scalar> n{MatrixX<Scalar>(L.outputs(), L.inputs()), VectorX<Scalar>(L.outputs())};
    for (Index i = 0; i < n.w.size(); ++i) n.w.data()[i] = static_cast<Scalar>(rng.normal());
    for (Index i = 0; i < n.b.size(); ++i) n.b[i] = static_cast<Scalar>(rng.normal());
    noise.push_back(std::move(n));
  }
  return noise;
}

template <typename Scalar>
WeightNoise<Scalar> zero_noise(const BasicProbNetwork<Scalar>& net) {
  WeightNoise<Scalar> noise;
  for (const auto& L : net.layers()) {
    noise.push_back({MatrixX<Scalar>::Zero(L.outputs(), L.inputs()), VectorX<Scalar>::Zero(L.outputs())});
  }
  return noise;
}

template <typename Scalar>
struct ForwardCache {
  std::uint64_t revision = 0;
  WeightNoise<Scalar> noise;                     // empty when evaluated at the mean
  std::vector<MatrixX<Scalar>> weights;          // realized W = mu + sigma * V
  std::vector<VectorX<Scalar>> biases;
  std::vector<MatrixX<Scalar>> inputs;           // activation entering each layer
  std::vector<MatrixX<Scalar>> pre_activations;  // per layer, batch x out
  std::vector<MatrixX<Scalar>> dropout_masks;    // per hidden layer; empty if unused
  MatrixX<Scalar> logits;
};

template <typename Scalar>
struct ForwardResult {
  MatrixX<Scalar> probs;  // batch x classes
  ForwardCache<Scalar> cache;
};

struct DropoutSpec {
  double rate = 0.0;
  SeededRng* rng = nullptr;
};

// Core forward pass over a batch (one example per row). `noise` null means
// W = mu. Dropout, when given a positive rate, masks hidden activations with
// inverted scaling.
template <typename Scalar>
ForwardResult<Scalar> forward(const BasicProbNetwork<Scalar>& net, const MatrixX<Scalar>& x,
                              const WeightNoise<Scalar>* noise, const DropoutSpec& dropout = {}) {
  if (x.cols() != net.input_width()) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) + " features, network expects " +
                         std::to_string(net.input_width()));
  }
  if (noise && noise->size() != net.num_layers()) throw DimensionError("forward: noise layer count mismatch");
  const bool use_dropout = dropout.rate > 0.0;
  if (use_dropout && !dropout.rng) throw ParameterError("forward: dropout needs a generator");

  ForwardResult<Scalar> res;
  auto& c = res.cache;
  c.revision = net.revision();
  if (noise) c.noise = *noise;
  const std::size_t n_layers = net.num_layers();
  MatrixX<Scalar> a = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& L = net.layer(l);
    MatrixX<Scalar> w = L.mu_w;
    VectorX<Scalar> b = L.mu_b;
    if (noise) {
      const auto& V = (*noise)[l];
      if (V.w.rows() != w.rows() || V.w.cols() != w.cols() || V.b.size() != b.size()) {
        throw DimensionError("forward: noise shape mismatch at layer " + std::to_string(l));
      }
      w.array() += L.sigma_w().array() * V.w.array();
      b.array() += L.sigma_b().array() * V.b.array();
    }
    MatrixX<Scalar> z = a * w.transpose();
    z.rowwise() += b.transpose();
    c.inputs.push_back(std::move(a));
    c.weights.push_back(std::move(w));
    c.biases.push_back(std::move(b));
    if (l + 1 < n_layers) {
      a = relu(z);
      if (use_dropout) {
        const Scalar keep = Scalar(1.0 - dropout.rate);
        MatrixX<Scalar> mask(a.rows(), a.cols());
        for (Index i = 0; i < mask.size(); ++i) {
          mask.data()[i] = dropout.rng->uniform() < dropout.rate ? Scalar(0) : Scalar(1) / keep;
        }
        a.array() *= mask.array();
        c.dropout_masks.push_back(std::move(mask));
      }
      c.pre_activations.push_back(std::move(z));
    } else {
      c.logits = z;
      c.pre_activations.push_back(std::move(z));
    }
  }
  res.probs = softmax_rows(c.logits);
  return res;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const BasicProbNetwork<Scalar>& net, const MatrixX<Scalar>& x, std::nullptr_t,
                              const DropoutSpec& dropout = {}) {
  return forward(net, x, static_cast<const WeightNoise<Scalar>*>(nullptr), dropout);
}

template <typename Scalar>
ForwardResult<Scalar> sample_forward(const BasicProbNetwork<Scalar>& net, const MatrixX<Scalar>& x,
                                     SeededRng& rng) {
  const WeightNoise<Scalar> noise = draw_noise(net, rng);
  return forward(net, x, &noise);
}

template <typename Scalar>
ForwardResult<Scalar> sample_forward(const BasicProbNetwork<Scalar>& net, const VectorX<Scalar>& x,
                                     SeededRng& rng) {
  return sample_forward(net, MatrixX<Scalar>(x.transpose()), rng);
}

// Predictor at the distribution mean; no cache is kept.
template <typename Scalar>
MatrixX<Scalar> mean_forward(const BasicProbNetwork<Scalar>& net, const MatrixX<Scalar>& x) {
  if (x.cols() != net.input_width()) throw DimensionError("mean_forward: input width mismatch");
  MatrixX<Scalar> a = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& L = net.layer(l);
    MatrixX<Scalar> z = a * L.mu_w.transpose();
    z.rowwise() += L.mu_b.transpose();
    a = (l + 1 < net.num_layers()) ? MatrixX<Scalar>(relu(z)) : z;
  }
  return softmax_rows(a);
}

template <typename Scalar>
VectorX<Scalar> mean_forward(const BasicProbNetwork<Scalar>& net, const VectorX<Scalar>& x) {
  return mean_forward(net, MatrixX<Scalar>(x.transpose())).row(0).transpose();
}

// Pathwise gradient of a loss whose gradient with respect to the output
// logits is `dlogits` (batch x classes, already carrying any 1/batch factor).
// d/dmu equals d/dW; d/drho = d/dW * V * sigmoid(rho).
template <typename Scalar>
Gradients<Scalar> pathwise_backward(const BasicProbNetwork<Scalar>& net, const ForwardCache<Scalar>& cache,
                                    const MatrixX<Scalar>& dlogits) {
  if (cache.revision != net.revision()) {
    throw ContractError("pathwise_backward: forward cache is stale for this network");
  }
  const std::size_t n_layers = net.num_layers();
  if (cache.weights.size() != n_layers) throw ContractError("pathwise_backward: cache layer count mismatch");
  if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != cache.logits.cols()) {
    throw DimensionError("pathwise_backward: upstream gradient shape mismatch");
  }
  const bool stochastic = !cache.noise.empty();
  const bool dropout = !cache.dropout_masks.empty();

  Gradients<Scalar> g;
  g.layers.resize(n_layers);
  MatrixX<Scalar> delta = dlogits;
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& L = net.layer(li);
    auto& G = g.layers[li];
    G.dmu_w = delta.transpose() * cache.inputs[li];
    G.dmu_b = delta.colwise().sum().transpose();
    if (stochastic) {
      G.drho_w = (G.dmu_w.array() * cache.noise[li].w.array() * sigmoid(L.rho_w.array())).matrix();
      G.drho_b = (G.dmu_b.array() * cache.noise[li].b.array() * sigmoid(L.rho_b.array())).matrix();
    } else {
      G.drho_w = MatrixX<Scalar>::Zero(L.outputs(), L.inputs());
      G.drho_b = VectorX<Scalar>::Zero(L.outputs());
    }
    if (li > 0) {
      MatrixX<Scalar> da = delta * cache.weights[li];
      if (dropout) da.array() *= cache.dropout_masks[li - 1].array();
      delta = (cache.pre_activations[li - 1].array() > Scalar(0)).select(da.array(), Scalar(0)).matrix();
    }
  }
  return g;
}

template <typename Scalar>
Gradients<Scalar> zero_gradients(const BasicProbNetwork<Scalar>& net) {
  Gradients<Scalar> g;
  for (const auto& L : net.layers()) {
    g.layers.push_back({MatrixX<Scalar>::Zero(L.outputs(), L.inputs()), MatrixX<Scalar>::Zero(L.outputs(), L.inputs()),
                        VectorX<Scalar>::Zero(L.outputs()), VectorX<Scalar>::Zero(L.outputs())});
  }
  return g;
}

namespace detail {
template <typename Scalar>
void check_prior_shapes(const BasicProbNetwork<Scalar>& net, const BasicPriorRef<Scalar>& prior) {
  if (prior.layers().size() != net.num_layers()) throw DimensionError("prior and network depth differ");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& a = net.layer(l);
    const auto& b = prior.layers()[l];
    if (a.mu_w.rows() != b.mu_w.rows() || a.mu_w.cols() != b.mu_w.cols() || a.mu_b.size() != b.mu_b.size()) {
      throw DimensionError("prior and network shapes differ at layer " + std::to_string(l));
    }
  }
}

// Sum over coordinates of KL(N(mu1, s1^2) || N(mu0, s0^2)), written as
// 0.5 (r^2 - 1) - log r + dmu^2 / (2 s0^2) with r = s1 / s0 so that near-equal
// scales do not cancel catastrophically.
template <typename D1, typename D2, typename D3, typename D4>
double gaussian_kl_sum(const Eigen::ArrayBase<D1>& mu1, const Eigen::ArrayBase<D2>& s1,
                       const Eigen::ArrayBase<D3>& mu0, const Eigen::ArrayBase<D4>& s0) {
  const auto r = (s1 / s0).eval();
  const auto rm1 = (r - 1.0).eval();
  const auto term = (0.5 * rm1 * (r + 1.0) - rm1.unaryExpr([](auto v) { return std::log1p(v); }) +
                     (mu1 - mu0).square() / (2.0 * s0.square()))
                        .eval();
  return static_cast<double>(term.sum());
}
}  // namespace detail

template <typename Scalar>
double kl_to_prior(const BasicProbNetwork<Scalar>& net, const BasicPriorRef<Scalar>& prior) {
  detail::check_prior_shapes(net, prior);
  double kl = 0.0;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& Q = net.layer(l);
    const auto& P = prior.layers()[l];
    kl += detail::gaussian_kl_sum(Q.mu_w.array(), Q.sigma_w().array(), P.mu_w.array(), prior.sigma_w(l).array());
    kl += detail::gaussian_kl_sum(Q.mu_b.array(), Q.sigma_b().array(), P.mu_b.array(), prior.sigma_b(l).array());
  }
  return std::max(kl, 0.0);
}

template <typename Scalar>
Gradients<Scalar> kl_gradient(const BasicProbNetwork<Scalar>& net, const BasicPriorRef<Scalar>& prior) {
  detail::check_prior_shapes(net, prior);
  Gradients<Scalar> g;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& Q = net.layer(l);
    const auto& P = prior.layers()[l];
    const auto s0w = prior.sigma_w(l).array();
    const auto s0b = prior.sigma_b(l).array();
    const auto s1w = Q.sigma_w().array().eval();
    const auto s1b = Q.sigma_b().array().eval();
    LayerGradient<Scalar> G;
    G.dmu_w = ((Q.mu_w.array() - P.mu_w.array()) / s0w.square()).matrix();
    G.dmu_b = ((Q.mu_b.array() - P.mu_b.array()) / s0b.square()).matrix();
    G.drho_w = ((s1w / s0w.square() - s1w.inverse()) * sigmoid(Q.rho_w.array())).matrix();
    G.drho_b = ((s1b / s0b.square() - s1b.inverse()) * sigmoid(Q.rho_b.array())).matrix();
    g.layers.push_back(std::move(G));
  }
  return g;
}

// One realized weight vector, without the bookkeeping needed for gradients.
template <typename Scalar>
struct RealizedNetwork {
  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;
};

// Means and scales of a network, computed once and reused across draws.
template <typename Scalar>
struct NetworkMoments {
  std::vector<MatrixX<Scalar>> mu_w, sigma_w;
  std::vector<VectorX<Scalar>> mu_b, sigma_b;

  explicit NetworkMoments(const BasicProbNetwork<Scalar>& net) {
    for (const auto& L : net.layers()) {
      mu_w.push_back(L.mu_w);
      sigma_w.push_back(L.sigma_w());
      mu_b.push_back(L.mu_b);
      sigma_b.push_back(L.sigma_b());
    }
  }

  // Overwrites `r` in place, reusing its storage across draws.
  void sample_into(SeededRng& rng, RealizedNetwork<Scalar>& r) const {
    r.weights.resize(mu_w.size());
    r.biases.resize(mu_b.size());
    for (std::size_t l = 0; l < mu_w.size(); ++l) {
      MatrixX<Scalar>& w = r.weights[l];
      VectorX<Scalar>& b = r.biases[l];
      w = mu_w[l];
      b = mu_b[l];
      for (Index i = 0; i < w.size(); ++i) w.data()[i] += sigma_w[l].data()[i] * static_cast<Scalar>(rng.normal());
      for (Index i = 0; i < b.size(); ++i) b[i] += sigma_b[l][i] * static_cast<Scalar>(rng.normal());
    }
  }

  RealizedNetwork<Scalar> sample(SeededRng& rng) const {
    RealizedNetwork<Scalar> r;
    sample_into(rng, r);
    return r;
  }

  RealizedNetwork<Scalar> mean() const { return {mu_w, mu_b}; }
};

template <typename Scalar>
MatrixX<Scalar> predict_logits(const RealizedNetwork<Scalar>& net, const MatrixX<Scalar>& x) {
  MatrixX<Scalar> a = x;
  const std::size_t n = net.weights.size();
  for (std::size_t l = 0; l < n; ++l) {
    MatrixX<Scalar> z = a * net.weights[l].transpose();
    z.rowwise() += net.biases[l].transpose();
    a = (l + 1 < n) ? MatrixX<Scalar>(relu(z)) : z;
  }
  return a;
}

// Activation buffers kept between calls so repeated evaluation on blocks of
// the same size does not allocate.
template <typename Scalar>
struct LogitWorkspace {
  std::vector<MatrixX<Scalar>> acts;
};

template <typename Scalar, typename Derived>
const MatrixX<Scalar>& predict_logits(const RealizedNetwork<Scalar>& net, const Eigen::MatrixBase<Derived>& x,
                                      LogitWorkspace<Scalar>& ws) {
  const std::size_t n = net.weights.size();
  ws.acts.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    MatrixX<Scalar>& z = ws.acts[l];
    z.resize(x.rows(), net.weights[l].rows());
    if (l == 0) {
      z.noalias() = x * net.weights[l].transpose();
    } else {
      z.noalias() = ws.acts[l - 1] * net.weights[l].transpose();
    }
    z.rowwise() += net.biases[l].transpose();
    if (l + 1 < n) z = z.cwiseMax(Scalar(0));
  }
  return ws.acts.back();
}

// Checkpoint I/O (double precision only). Binary, bit-exact round trip.
void save_checkpoint(const ProbNetwork& net, const std::string& path);
ProbNetwork load_checkpoint(const std::string& path);

}  // namespace pacbayes
