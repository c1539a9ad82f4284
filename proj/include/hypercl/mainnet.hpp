#ifndef HYPERCL_MAINNET_HPP_
#define HYPERCL_MAINNET_HPP_

#include "hypercl/types.hpp"

#include <utility>
#include <vector>

namespace hypercl::mainnet {

enum class Activation { kRelu };

/// Layer dimension list for the generated classifier,
/// e.g. {784, 100, 10} = one hidden layer of 100 units.
struct MainArch {
  std::vector<int> dims;
  Activation activation = Activation::kRelu;
};

/// Total parameter count: sum over layers of d_in*d_out + d_out.
Index param_count(const MainArch& arch);

/// Per-layer weights and biases matching a MainArch.
struct LayeredParams {
  std::vector<Matrix> W;
  std::vector<Vector> b;
};

/// Reshape a flat vector into layers. Layout: layers in order,
/// W row-major then b, concatenated. Bijective with flatten().
LayeredParams assemble(const Vector& flat, const MainArch& arch);
Vector flatten(const LayeredParams& params);

/// Affine -> ReLU repeated; final affine produces logits.
Matrix forward(const LayeredParams& params, const Matrix& x);

/// Mean cross-entropy on a batch plus its gradient w.r.t. the flat
/// parameter vector (same layout as assemble).
std::pair<Real, Vector> loss_and_param_grad(const Vector& flat,
                                            const MainArch& arch,
                                            const Matrix& x,
                                            const std::vector<int>& labels);

/// 100 * fraction of argmax-correct predictions; ties break to the
/// lowest class index.
Real evaluate(const LayeredParams& params, const Matrix& x,
              const std::vector<int>& labels);

/// Per-sample -log softmax probability of the true class.
Vector per_sample_losses(const LayeredParams& params, const Matrix& x,
                         const std::vector<int>& labels);

/// Smallest |preactivation| seen in a forward pass; test harnesses use
/// this to reject finite-difference probes that sit on a ReLU kink.
Real min_preactivation_margin(const LayeredParams& params, const Matrix& x);

}  // namespace hypercl::mainnet

#endif  // HYPERCL_MAINNET_HPP_
