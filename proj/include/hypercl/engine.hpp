#ifndef HYPERCL_ENGINE_HPP_
#define HYPERCL_ENGINE_HPP_

#include "hypercl/data.hpp"
#include "hypercl/hypernet.hpp"
#include "hypercl/types.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>

namespace hypercl::engine {

struct LearnConfig {
  Real beta = 0.1;     // consistency regularization weight
  int epochs = 5;
  int batch_size = 64;
  Real lr = 1e-3;
  std::uint64_t seed = 0;
};

enum class NoiseStrategy { kGaussianAvg, kFixedNoise, kNormReduce, kDiscardEmbedding };

NoiseStrategy parse_strategy(const std::string& name);
std::string strategy_name(NoiseStrategy s);

struct UnlearnConfig {
  Real gamma = 0.01;            // forget-loss weight
  int burn_in = 100;            // optimization iterations per request
  int noise_samples = 10;       // n
  NoiseStrategy strategy = NoiseStrategy::kGaussianAvg;
  bool anneal = true;
  Real anneal_rate = 0.10;
  int anneal_floor = 20;
  Real lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Seeded stream of N(0, I_d) vectors. `fixed()` draws once and then
/// returns the same sample for the rest of the run.
class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, Index dim) : rng_(seed), dim_(dim) {}

  Vector fresh();
  const Vector& fixed();
  Index dim() const { return dim_; }

 private:
  std::mt19937_64 rng_;
  Index dim_;
  std::optional<Vector> fixed_;
};

/// One learning request: fresh task embedding, snapshot before the first
/// update, then per batch minimize CE + beta * reg over {phi, e_t}
/// (chunk embeddings join until they freeze after the first task).
/// Relearning a currently active task is an error; relearning an
/// unlearned task resets its embedding and proceeds as a fresh learn.
void learn_task(hypernet::HypernetState& state, int task_id,
                const data::TaskDataset& dataset, const LearnConfig& cfg);

/// One unlearning request, data-free: snapshot, then burn_in iterations
/// of gamma * forget-term + reg (anchors exclude the forget task),
/// optimizing phi only. The task stays in reg_set afterwards so future
/// learning keeps anchoring its noise mapping.
void unlearn_task(hypernet::HypernetState& state, int task_id,
                  const UnlearnConfig& cfg, NoiseSource& noise);

/// (1/n) sum over fresh noise draws of || H(e_f; phi) - z ||^2.
Real forget_loss(const hypernet::HypernetState& state, const Vector& e_f,
                 NoiseSource& noise, int n);

/// Forget-term value under each noising strategy; kDiscardEmbedding has
/// no loss (returns 0, the request is a plain embedding replacement).
Real strategy_loss(NoiseStrategy strategy, const hypernet::HypernetState& state,
                   const Vector& e_f, NoiseSource& noise, int n);

/// max(floor, round(current * (1 - rate))).
int anneal_burn_in(int current, Real rate, int floor);

}  // namespace hypercl::engine

#endif  // HYPERCL_ENGINE_HPP_
