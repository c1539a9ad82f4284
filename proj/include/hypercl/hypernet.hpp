#ifndef HYPERCL_HYPERNET_HPP_
#define HYPERCL_HYPERNET_HPP_

#include "hypercl/mainnet.hpp"
#include "hypercl/nn.hpp"
#include "hypercl/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace hypercl::hypernet {

/// Learnable vector identifying a task to the hypernetwork.
struct TaskEmbedding {
  int id = 0;
  Vector vec;
  bool trainable = false;
};

enum class TaskStatus { kActive, kUnlearned };

struct HyperConfig {
  mainnet::MainArch main_arch;
  std::vector<int> hidden = {64, 64};  // trunk widths
  int embed_dim = 32;                  // task embedding size
  int chunk_dim = 32;                  // chunk embedding size
  int chunks = 50;                     // number of parameter chunks
};

/// Everything the consistency snapshot has to capture: trunk + head
/// weights plus the chunk embeddings they are conditioned on.
struct HyperWeights {
  std::vector<Matrix> W;  // trunk layers, head last
  std::vector<Vector> b;
  Matrix chunk_embeddings;  // chunks x chunk_dim
};

struct HypernetState {
  HyperConfig cfg;
  HyperWeights phi;
  bool chunks_frozen = false;
  // Fixed per-coordinate output scaling chosen at init so generated
  // main-network weights start out Kaiming-distributed per layer.
  Vector output_gain;
  std::map<int, TaskEmbedding> task_embeddings;
  std::map<int, TaskStatus> status;
  std::set<int> reg_set;  // task ids anchored by the consistency term
  std::optional<HyperWeights> snapshot;
  nn::AdamState optimizer;
  std::uint64_t seed = 0;
  Index param_count = 0;  // flat main-network parameter count
  Index chunk_width = 0;  // head output width = ceil(param_count / chunks)
};

/// Forward-pass intermediates kept for the backward pass.
struct GenCache {
  std::vector<Matrix> acts;     // acts[0] = stacked [e | c_k] inputs
  std::vector<Matrix> preacts;  // affine outputs per layer
  Matrix raw;                   // head output before gain, chunks x width
  Real min_preact_margin = 0;   // smallest |preactivation| over trunk ReLUs
};

/// Gradient accumulator shaped like the trainable pieces of a state.
struct HyperGrads {
  std::vector<Matrix> dW;
  std::vector<Vector> db;
  Matrix dchunk;
  Vector dembed;

  static HyperGrads zeros_like(const HypernetState& s);
  void set_zero();
};

/// Deterministic for a fixed seed. Trunk and head start Kaiming-uniform;
/// the head output is then rescaled per flat coordinate so that generated
/// main-network weights match Var = 2/fan_in empirically.
HypernetState init_hypernet(const HyperConfig& cfg, std::uint64_t seed);

/// i.i.d. N(0, 1/dim) — unit-scale inputs for the trunk.
Vector random_init_embedding(int dim, std::mt19937_64& rng);

/// H([e | c_k]; phi) per chunk, concatenated in chunk order and truncated
/// to the main-network parameter count.
Vector generate(const HypernetState& s, const Vector& e);
Vector generate(const HypernetState& s, const Vector& e, GenCache& cache);

/// Same pass evaluated under the frozen snapshot weights.
Vector generate_from_snapshot(const HypernetState& s, const Vector& e);

/// Accumulate d(loss)/d(phi, chunk embeddings, task embedding) into `acc`
/// given d(loss)/d(generated params).
void backward(const HypernetState& s, const GenCache& cache,
              const Vector& dtheta, HyperGrads& acc);

/// Deep-copy phi and chunk embeddings; overwrites any previous snapshot.
void snapshot(HypernetState& s);

/// Mean over anchor tasks of || H(e; phi*) - H(e; phi) ||^2.
/// Empty anchor set returns 0; missing snapshot is an error.
Real reg_loss(const HypernetState& s, const std::set<int>& anchor_ids);

/// Checkpoint I/O (JSON). Field order: arch, dims, phi layers in order,
/// chunk embeddings, task embeddings, reg_set. The snapshot and optimizer
/// are transient and not persisted.
void save_checkpoint(const HypernetState& s, const std::string& path);
HypernetState load_checkpoint(const std::string& path);

}  // namespace hypercl::hypernet

#endif  // HYPERCL_HYPERNET_HPP_
