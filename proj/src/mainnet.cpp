#include "hypercl/mainnet.hpp"

#include "hypercl/nn.hpp"

#include <cmath>
#include <limits>

namespace hypercl::mainnet {

Index param_count(const MainArch& arch) {
  if (arch.dims.size() < 2)
    throw DimensionError("param_count: arch needs at least 2 layers");
  Index p = 0;
  for (std::size_t l = 0; l + 1 < arch.dims.size(); ++l) {
    if (arch.dims[l] <= 0 || arch.dims[l + 1] <= 0)
      throw DimensionError("param_count: non-positive layer dim");
    p += static_cast<Index>(arch.dims[l]) * arch.dims[l + 1] + arch.dims[l + 1];
  }
  return p;
}

LayeredParams assemble(const Vector& flat, const MainArch& arch) {
  if (flat.size() != param_count(arch))
    throw DimensionError("assemble: flat length does not match arch");
  LayeredParams out;
  Index off = 0;
  for (std::size_t l = 0; l + 1 < arch.dims.size(); ++l) {
    const Index din = arch.dims[l];
    const Index dout = arch.dims[l + 1];
    Matrix W(din, dout);
    for (Index i = 0; i < din; ++i)
      for (Index j = 0; j < dout; ++j) W(i, j) = flat(off + i * dout + j);
    off += din * dout;
    out.W.push_back(std::move(W));
    out.b.push_back(flat.segment(off, dout));
    off += dout;
  }
  return out;
}

Vector flatten(const LayeredParams& params) {
  Index total = 0;
  for (std::size_t l = 0; l < params.W.size(); ++l)
    total += params.W[l].size() + params.b[l].size();
  Vector flat(total);
  Index off = 0;
  for (std::size_t l = 0; l < params.W.size(); ++l) {
    const Matrix& W = params.W[l];
    for (Index i = 0; i < W.rows(); ++i)
      for (Index j = 0; j < W.cols(); ++j) flat(off + i * W.cols() + j) = W(i, j);
    off += W.size();
    flat.segment(off, params.b[l].size()) = params.b[l];
    off += params.b[l].size();
  }
  return flat;
}

namespace {

struct ForwardCache {
  std::vector<Matrix> preacts;  // z_l = a_l W_l + b_l per layer
  std::vector<Matrix> acts;     // a_0 = x, then relu(z_l) for hidden layers
};

Matrix run_forward(const LayeredParams& params, const Matrix& x,
                   ForwardCache* cache) {
  const std::size_t layers = params.W.size();
  Matrix a = x;
  if (cache) cache->acts.push_back(a);
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = nn::affine_forward<Real>(a, params.W[l], params.b[l]);
    if (cache) cache->preacts.push_back(z);
    if (l + 1 < layers) {
      a = nn::relu(z);
      if (cache) cache->acts.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

}  // namespace

Matrix forward(const LayeredParams& params, const Matrix& x) {
  if (params.W.empty()) throw DimensionError("forward: empty parameter set");
  return run_forward(params, x, nullptr);
}

std::pair<Real, Vector> loss_and_param_grad(const Vector& flat,
                                            const MainArch& arch,
                                            const Matrix& x,
                                            const std::vector<int>& labels) {
  LayeredParams params = assemble(flat, arch);
  ForwardCache cache;
  Matrix logits = run_forward(params, x, &cache);
  auto [loss, dlogits] = nn::softmax_cross_entropy<Real>(logits, labels);

  const std::size_t layers = params.W.size();
  LayeredParams grads;
  grads.W.resize(layers);
  grads.b.resize(layers);
  Matrix dz = std::move(dlogits);
  for (std::size_t l = layers; l-- > 0;) {
    grads.W[l] = cache.acts[l].transpose() * dz;
    grads.b[l] = dz.colwise().sum().transpose();
    if (l > 0) {
      Matrix da = dz * params.W[l].transpose();
      dz = da.cwiseProduct(
          (cache.preacts[l - 1].array() > 0).cast<Real>().matrix());
    }
  }
  return {loss, flatten(grads)};
}

Real evaluate(const LayeredParams& params, const Matrix& x,
              const std::vector<int>& labels) {
  if (x.rows() == 0) throw ValidationError("evaluate: empty dataset");
  if (static_cast<Index>(labels.size()) != x.rows())
    throw DimensionError("evaluate: label count mismatch");
  const Matrix logits = forward(params, x);
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return 100.0 * static_cast<Real>(correct) / static_cast<Real>(x.rows());
}

Vector per_sample_losses(const LayeredParams& params, const Matrix& x,
                         const std::vector<int>& labels) {
  if (x.rows() == 0) throw ValidationError("per_sample_losses: empty dataset");
  const Matrix logits = forward(params, x);
  if (static_cast<Index>(labels.size()) != logits.rows())
    throw DimensionError("per_sample_losses: label count mismatch");
  Vector losses(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols())
      throw ValidationError("per_sample_losses: label out of range");
    const Real mx = logits.row(i).maxCoeff();
    const Real z = (logits.row(i).array() - mx).exp().sum();
    losses(i) = std::log(z) - (logits(i, y) - mx);
  }
  return losses;
}

Real min_preactivation_margin(const LayeredParams& params, const Matrix& x) {
  ForwardCache cache;
  run_forward(params, x, &cache);
  Real margin = std::numeric_limits<Real>::infinity();
  // Only hidden layers pass through ReLU; the final preactivation is smooth.
  for (std::size_t l = 0; l + 1 < cache.preacts.size(); ++l)
    margin = std::min(margin, cache.preacts[l].cwiseAbs().minCoeff());
  return margin;
}

}  // namespace hypercl::mainnet
