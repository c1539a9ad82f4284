#include "hypercl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace hypercl::engine {

using hypernet::GenCache;
using hypernet::HyperGrads;
using hypernet::HypernetState;
using hypernet::TaskStatus;

NoiseStrategy parse_strategy(const std::string& name) {
  if (name == "gaussian_avg") return NoiseStrategy::kGaussianAvg;
  if (name == "fixed_noise") return NoiseStrategy::kFixedNoise;
  if (name == "norm_reduce") return NoiseStrategy::kNormReduce;
  if (name == "discard_embedding") return NoiseStrategy::kDiscardEmbedding;
  throw ValidationError("unknown noising strategy: " + name);
}

std::string strategy_name(NoiseStrategy s) {
  switch (s) {
    case NoiseStrategy::kGaussianAvg: return "gaussian_avg";
    case NoiseStrategy::kFixedNoise: return "fixed_noise";
    case NoiseStrategy::kNormReduce: return "norm_reduce";
    case NoiseStrategy::kDiscardEmbedding: return "discard_embedding";
  }
  throw ValidationError("unknown noising strategy");
}

Vector NoiseSource::fresh() {
  std::normal_distribution<Real> nd;
  Vector z(dim_);
  for (Index i = 0; i < dim_; ++i) z(i) = nd(rng_);
  return z;
}

const Vector& NoiseSource::fixed() {
  if (!fixed_) fixed_ = fresh();
  return *fixed_;
}

namespace {

// Flat read/write view over the blocks Adam updates in one operation.
struct ParamPack {
  std::vector<Real*> ptrs;
  std::vector<Index> sizes;
  Index total = 0;

  void add(Real* p, Index n) {
    ptrs.push_back(p);
    sizes.push_back(n);
    total += n;
  }
  Vector gather() const {
    Vector out(total);
    Index off = 0;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      out.segment(off, sizes[i]) = Eigen::Map<const Vector>(ptrs[i], sizes[i]);
      off += sizes[i];
    }
    return out;
  }
  void scatter(const Vector& v) {
    Index off = 0;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      Eigen::Map<Vector>(ptrs[i], sizes[i]) = v.segment(off, sizes[i]);
      off += sizes[i];
    }
  }
};

ParamPack make_pack(HypernetState& s, bool with_chunks, Vector* embed) {
  ParamPack p;
  for (std::size_t l = 0; l < s.phi.W.size(); ++l) {
    p.add(s.phi.W[l].data(), s.phi.W[l].size());
    p.add(s.phi.b[l].data(), s.phi.b[l].size());
  }
  if (with_chunks) p.add(s.phi.chunk_embeddings.data(), s.phi.chunk_embeddings.size());
  if (embed) p.add(embed->data(), embed->size());
  return p;
}

Vector gather_grads(const HyperGrads& g, bool with_chunks, bool with_embed) {
  Index total = 0;
  for (std::size_t l = 0; l < g.dW.size(); ++l) total += g.dW[l].size() + g.db[l].size();
  if (with_chunks) total += g.dchunk.size();
  if (with_embed) total += g.dembed.size();
  Vector out(total);
  Index off = 0;
  for (std::size_t l = 0; l < g.dW.size(); ++l) {
    out.segment(off, g.dW[l].size()) =
        Eigen::Map<const Vector>(g.dW[l].data(), g.dW[l].size());
    off += g.dW[l].size();
    out.segment(off, g.db[l].size()) = g.db[l];
    off += g.db[l].size();
  }
  if (with_chunks) {
    out.segment(off, g.dchunk.size()) =
        Eigen::Map<const Vector>(g.dchunk.data(), g.dchunk.size());
    off += g.dchunk.size();
  }
  if (with_embed) out.segment(off, g.dembed.size()) = g.dembed;
  return out;
}

struct AnchorTarget {
  const Vector* embedding;
  Vector generated;  // snapshot output, constant through the operation
};

std::vector<AnchorTarget> snapshot_targets(const HypernetState& s,
                                           const std::set<int>& anchors) {
  std::vector<AnchorTarget> targets;
  targets.reserve(anchors.size());
  for (int id : anchors) {
    const Vector& e = s.task_embeddings.at(id).vec;
    targets.push_back({&e, hypernet::generate_from_snapshot(s, e)});
  }
  return targets;
}

// Adds the consistency term's phi gradient; returns its loss value.
Real accumulate_reg(const HypernetState& s, const std::vector<AnchorTarget>& targets,
                    Real weight, HyperGrads& grads) {
  if (targets.empty()) return 0.0;
  Real loss = 0;
  const Real scale = 2.0 * weight / static_cast<Real>(targets.size());
  for (const AnchorTarget& t : targets) {
    GenCache cache;
    Vector theta = hypernet::generate(s, *t.embedding, cache);
    Vector diff = theta - t.generated;
    loss += diff.squaredNorm();
    hypernet::backward(s, cache, (scale * diff).eval(), grads);
  }
  return loss / static_cast<Real>(targets.size());
}

}  // namespace

void learn_task(HypernetState& state, int task_id,
                const data::TaskDataset& dataset, const LearnConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.beta < 0)
    throw ValidationError("learn_task: bad config");
  auto st = state.status.find(task_id);
  if (st != state.status.end() && st->second == TaskStatus::kActive)
    throw ValidationError("learn_task: task " + std::to_string(task_id) +
                          " is already learned");
  if (dataset.train_x.rows() == 0)
    throw ValidationError("learn_task: empty training split");
  if (dataset.train_x.cols() != state.cfg.main_arch.dims.front())
    throw DimensionError("learn_task: feature dim does not match main arch");
  if (dataset.classes != state.cfg.main_arch.dims.back())
    throw DimensionError("learn_task: class count does not match main arch");

  hypernet::snapshot(state);
  std::set<int> anchors = state.reg_set;
  anchors.erase(task_id);
  const std::vector<AnchorTarget> targets = snapshot_targets(state, anchors);

  std::mt19937_64 embed_rng(mix_seed(cfg.seed, 1));
  state.task_embeddings[task_id] = hypernet::TaskEmbedding{
      task_id, hypernet::random_init_embedding(state.cfg.embed_dim, embed_rng), true};
  Vector& embedding = state.task_embeddings[task_id].vec;

  const bool train_chunks = !state.chunks_frozen;
  ParamPack pack = make_pack(state, train_chunks, &embedding);
  state.optimizer = nn::AdamState(pack.total, cfg.lr);

  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 2));
  const Index n = dataset.train_x.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index(0));

  HyperGrads grads = HyperGrads::zeros_like(state);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index bs = std::min<Index>(cfg.batch_size, n - start);
      Matrix xb(bs, dataset.train_x.cols());
      std::vector<int> yb(static_cast<std::size_t>(bs));
      for (Index i = 0; i < bs; ++i) {
        xb.row(i) = dataset.train_x.row(order[static_cast<std::size_t>(start + i)]);
        yb[static_cast<std::size_t>(i)] =
            dataset.train_y[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
      }

      GenCache cache;
      Vector theta = hypernet::generate(state, embedding, cache);
      auto [ce, dtheta] =
          mainnet::loss_and_param_grad(theta, state.cfg.main_arch, xb, yb);

      grads.set_zero();
      hypernet::backward(state, cache, dtheta, grads);
      const Vector task_dembed = grads.dembed;
      accumulate_reg(state, targets, cfg.beta, grads);
      grads.dembed = task_dembed;  // anchors do not train the new embedding

      Vector params = pack.gather();
      nn::adam_step(state.optimizer, params,
                    gather_grads(grads, train_chunks, true));
      pack.scatter(params);
    }
  }

  state.task_embeddings[task_id].trainable = false;
  state.status[task_id] = TaskStatus::kActive;
  state.reg_set.insert(task_id);
  state.chunks_frozen = true;
}

void unlearn_task(HypernetState& state, int task_id, const UnlearnConfig& cfg,
                  NoiseSource& noise) {
  if (cfg.burn_in < 1 || cfg.gamma < 0)
    throw ValidationError("unlearn_task: bad config");
  auto st = state.status.find(task_id);
  if (st == state.status.end())
    throw ValidationError("unlearn_task: task " + std::to_string(task_id) +
                          " was never learned");
  if (st->second != TaskStatus::kActive)
    throw ValidationError("unlearn_task: task " + std::to_string(task_id) +
                          " is not currently learned");

  if (cfg.strategy == NoiseStrategy::kDiscardEmbedding) {
    // Replace the key, keep the lock: phi stays bitwise unchanged.
    std::mt19937_64 rng(mix_seed(cfg.seed, 3));
    state.task_embeddings[task_id].vec =
        hypernet::random_init_embedding(state.cfg.embed_dim, rng);
    state.status[task_id] = TaskStatus::kUnlearned;
    return;
  }

  if (noise.dim() != state.param_count)
    throw DimensionError("unlearn_task: noise dimension != parameter count");
  if (cfg.noise_samples < 1 && cfg.strategy == NoiseStrategy::kGaussianAvg)
    throw ValidationError("unlearn_task: need noise_samples >= 1");

  hypernet::snapshot(state);
  std::set<int> anchors = state.reg_set;
  anchors.erase(task_id);
  const std::vector<AnchorTarget> targets = snapshot_targets(state, anchors);

  const Vector& e_f = state.task_embeddings.at(task_id).vec;
  ParamPack pack = make_pack(state, false, nullptr);
  state.optimizer = nn::AdamState(pack.total, cfg.lr);

  // The appendix formulation puts gamma on the consistency term for the
  // fixed-noise variant, and on the forget term otherwise.
  const bool fixed = cfg.strategy == NoiseStrategy::kFixedNoise;
  const Real forget_weight = fixed ? 1.0 : cfg.gamma;
  const Real reg_weight = fixed ? cfg.gamma : 1.0;

  HyperGrads grads = HyperGrads::zeros_like(state);
  for (int iter = 0; iter < cfg.burn_in; ++iter) {
    GenCache cache;
    Vector theta = hypernet::generate(state, e_f, cache);

    Vector dtheta;
    switch (cfg.strategy) {
      case NoiseStrategy::kGaussianAvg: {
        dtheta = Vector::Zero(theta.size());
        for (int i = 0; i < cfg.noise_samples; ++i) dtheta += theta - noise.fresh();
        dtheta *= 2.0 / cfg.noise_samples;
        break;
      }
      case NoiseStrategy::kFixedNoise:
        dtheta = 2.0 * (theta - noise.fixed());
        break;
      case NoiseStrategy::kNormReduce:
        dtheta = 2.0 * theta;
        break;
      case NoiseStrategy::kDiscardEmbedding:
        throw ValidationError("unreachable");
    }

    grads.set_zero();
    hypernet::backward(state, cache, (forget_weight * dtheta).eval(), grads);
    accumulate_reg(state, targets, reg_weight, grads);

    Vector params = pack.gather();
    nn::adam_step(state.optimizer, params, gather_grads(grads, false, false));
    pack.scatter(params);
  }

  state.status[task_id] = TaskStatus::kUnlearned;
  // Intentionally kept in reg_set: future snapshots anchor the noise
  // mapping, which is what blocks relapse.
}

Real forget_loss(const HypernetState& state, const Vector& e_f,
                 NoiseSource& noise, int n) {
  if (n < 1) throw ValidationError("forget_loss: n must be >= 1");
  const Vector theta = hypernet::generate(state, e_f);
  Real acc = 0;
  for (int i = 0; i < n; ++i) acc += (theta - noise.fresh()).squaredNorm();
  return acc / static_cast<Real>(n);
}

Real strategy_loss(NoiseStrategy strategy, const HypernetState& state,
                   const Vector& e_f, NoiseSource& noise, int n) {
  switch (strategy) {
    case NoiseStrategy::kGaussianAvg:
      return forget_loss(state, e_f, noise, n);
    case NoiseStrategy::kFixedNoise:
      return (hypernet::generate(state, e_f) - noise.fixed()).squaredNorm();
    case NoiseStrategy::kNormReduce:
      return hypernet::generate(state, e_f).squaredNorm();
    case NoiseStrategy::kDiscardEmbedding:
      return 0.0;
  }
  throw ValidationError("strategy_loss: unknown strategy");
}

int anneal_burn_in(int current, Real rate, int floor) {
  const int next = static_cast<int>(std::lround(current * (1.0 - rate)));
  return std::max(floor, next);
}

}  // namespace hypercl::engine
