#include "hypercl/hypernet.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

namespace hypercl::hypernet {

namespace {

using ordered_json = nlohmann::ordered_json;

std::vector<int> layer_dims(const HyperConfig& cfg, Index chunk_width) {
  std::vector<int> dims;
  dims.push_back(cfg.embed_dim + cfg.chunk_dim);
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(static_cast<int>(chunk_width));
  return dims;
}

// Forward through trunk + head for one embedding against every chunk row.
// Returns the truncated, gain-scaled parameter vector.
Vector forward_impl(const HyperWeights& w, const Vector& gain, Index p_total,
                    const Vector& e, GenCache* cache) {
  const Index k = w.chunk_embeddings.rows();
  Matrix input(k, e.size() + w.chunk_embeddings.cols());
  input.leftCols(e.size()).rowwise() = e.transpose();
  input.rightCols(w.chunk_embeddings.cols()) = w.chunk_embeddings;

  Real margin = std::numeric_limits<Real>::infinity();
  Matrix a = std::move(input);
  if (cache) cache->acts.push_back(a);
  const std::size_t layers = w.W.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = nn::affine_forward<Real>(a, w.W[l], w.b[l]);
    if (cache) cache->preacts.push_back(z);
    if (l + 1 < layers) {
      margin = std::min(margin, z.cwiseAbs().minCoeff());
      a = nn::relu(z);
      if (cache) cache->acts.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  if (cache) {
    cache->raw = a;
    cache->min_preact_margin = margin;
  }
  // Row-major storage makes this the chunk-order concatenation.
  Eigen::Map<const Vector> flat(a.data(), a.size());
  return gain.cwiseProduct(flat.head(p_total));
}

const TaskEmbedding& embedding_or_throw(const HypernetState& s, int id) {
  auto it = s.task_embeddings.find(id);
  if (it == s.task_embeddings.end())
    throw ValidationError("unknown task id " + std::to_string(id));
  return it->second;
}

}  // namespace

HyperGrads HyperGrads::zeros_like(const HypernetState& s) {
  HyperGrads g;
  for (std::size_t l = 0; l < s.phi.W.size(); ++l) {
    g.dW.emplace_back(Matrix::Zero(s.phi.W[l].rows(), s.phi.W[l].cols()));
    g.db.emplace_back(Vector::Zero(s.phi.b[l].size()));
  }
  g.dchunk = Matrix::Zero(s.phi.chunk_embeddings.rows(),
                          s.phi.chunk_embeddings.cols());
  g.dembed = Vector::Zero(s.cfg.embed_dim);
  return g;
}

void HyperGrads::set_zero() {
  for (auto& m : dW) m.setZero();
  for (auto& v : db) v.setZero();
  dchunk.setZero();
  dembed.setZero();
}

Vector random_init_embedding(int dim, std::mt19937_64& rng) {
  std::normal_distribution<Real> nd;
  Vector v(dim);
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dim));
  for (Index i = 0; i < dim; ++i) v(i) = nd(rng) * scale;
  return v;
}

HypernetState init_hypernet(const HyperConfig& cfg, std::uint64_t seed) {
  if (cfg.chunks < 1) throw DimensionError("init_hypernet: chunks must be >= 1");
  if (cfg.embed_dim < 1 || cfg.chunk_dim < 1)
    throw DimensionError("init_hypernet: embedding dims must be >= 1");

  HypernetState s;
  s.cfg = cfg;
  s.seed = seed;
  s.param_count = mainnet::param_count(cfg.main_arch);
  s.chunk_width = (s.param_count + cfg.chunks - 1) / cfg.chunks;

  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> nd;

  const std::vector<int> dims = layer_dims(cfg, s.chunk_width);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Real limit = std::sqrt(6.0 / dims[l]);
    std::uniform_real_distribution<Real> ud(-limit, limit);
    Matrix W(dims[l], dims[l + 1]);
    for (Index i = 0; i < W.rows(); ++i)
      for (Index j = 0; j < W.cols(); ++j) W(i, j) = ud(rng);
    s.phi.W.push_back(std::move(W));
    s.phi.b.emplace_back(Vector::Zero(dims[l + 1]));
  }

  s.phi.chunk_embeddings = Matrix(cfg.chunks, cfg.chunk_dim);
  const Real cscale = 1.0 / std::sqrt(static_cast<Real>(cfg.chunk_dim));
  for (Index i = 0; i < cfg.chunks; ++i)
    for (Index j = 0; j < cfg.chunk_dim; ++j)
      s.phi.chunk_embeddings(i, j) = nd(rng) * cscale;

  // Calibrate the pooled scale of the raw head output over probe
  // embeddings drawn from the same distribution tasks start from.
  const int probes = 16;
  const Vector unit_gain = Vector::Ones(s.param_count);
  Real sum = 0, sum_sq = 0;
  Real count = 0;
  for (int i = 0; i < probes; ++i) {
    GenCache cache;
    Vector e = random_init_embedding(cfg.embed_dim, rng);
    forward_impl(s.phi, unit_gain, s.param_count, e, &cache);
    sum += cache.raw.sum();
    sum_sq += cache.raw.squaredNorm();
    count += static_cast<Real>(cache.raw.size());
  }
  const Real mean = sum / count;
  const Real raw_std = std::sqrt(std::max(sum_sq / count - mean * mean, 1e-24));

  // Per-coordinate target: Kaiming std sqrt(2/fan_in) of the layer the
  // coordinate lands in; biases share their layer's gain.
  s.output_gain = Vector(s.param_count);
  Index off = 0;
  const auto& adims = cfg.main_arch.dims;
  for (std::size_t l = 0; l + 1 < adims.size(); ++l) {
    const Real target = std::sqrt(2.0 / adims[l]);
    const Index block = static_cast<Index>(adims[l]) * adims[l + 1] + adims[l + 1];
    s.output_gain.segment(off, block).setConstant(target / raw_std);
    off += block;
  }

  return s;
}

Vector generate(const HypernetState& s, const Vector& e) {
  if (e.size() != s.cfg.embed_dim)
    throw DimensionError("generate: embedding dim mismatch");
  return forward_impl(s.phi, s.output_gain, s.param_count, e, nullptr);
}

Vector generate(const HypernetState& s, const Vector& e, GenCache& cache) {
  if (e.size() != s.cfg.embed_dim)
    throw DimensionError("generate: embedding dim mismatch");
  cache = GenCache{};
  return forward_impl(s.phi, s.output_gain, s.param_count, e, &cache);
}

Vector generate_from_snapshot(const HypernetState& s, const Vector& e) {
  if (!s.snapshot) throw ValidationError("generate_from_snapshot: no snapshot");
  return forward_impl(*s.snapshot, s.output_gain, s.param_count, e, nullptr);
}

void backward(const HypernetState& s, const GenCache& cache,
              const Vector& dtheta, HyperGrads& acc) {
  if (dtheta.size() != s.param_count)
    throw DimensionError("backward: gradient length mismatch");
  const Index k = s.cfg.chunks;
  const Index w = s.chunk_width;

  Vector draw_flat = Vector::Zero(k * w);
  draw_flat.head(s.param_count) = s.output_gain.cwiseProduct(dtheta);
  Eigen::Map<const Matrix> draw(draw_flat.data(), k, w);

  const std::size_t layers = s.phi.W.size();
  Matrix dz = draw;
  for (std::size_t l = layers; l-- > 0;) {
    acc.dW[l] += cache.acts[l].transpose() * dz;
    acc.db[l] += dz.colwise().sum().transpose();
    if (l > 0) {
      Matrix da = dz * s.phi.W[l].transpose();
      dz = da.cwiseProduct(
          (cache.preacts[l - 1].array() > 0).cast<Real>().matrix());
    } else {
      Matrix dinput = dz * s.phi.W[0].transpose();
      acc.dembed += dinput.leftCols(s.cfg.embed_dim).colwise().sum().transpose();
      acc.dchunk += dinput.rightCols(s.cfg.chunk_dim);
    }
  }
}

void snapshot(HypernetState& s) { s.snapshot = s.phi; }

Real reg_loss(const HypernetState& s, const std::set<int>& anchor_ids) {
  if (anchor_ids.empty()) return 0.0;
  if (!s.snapshot) throw ValidationError("reg_loss: no snapshot");
  Real total = 0;
  for (int id : anchor_ids) {
    const Vector& e = embedding_or_throw(s, id).vec;
    total += (generate_from_snapshot(s, e) - generate(s, e)).squaredNorm();
  }
  return total / static_cast<Real>(anchor_ids.size());
}

namespace {

ordered_json matrix_to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const ordered_json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index jx = 0; jx < cols; ++jx) m(i, jx) = j[i][jx].get<Real>();
  return m;
}

ordered_json vector_to_json(const Vector& v) {
  ordered_json arr = ordered_json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vector vector_from_json(const ordered_json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j[i].get<Real>();
  return v;
}

}  // namespace

void save_checkpoint(const HypernetState& s, const std::string& path) {
  ordered_json j;
  j["arch"] = {{"dims", s.cfg.main_arch.dims}};
  j["dims"] = {{"hidden", s.cfg.hidden},
               {"embed_dim", s.cfg.embed_dim},
               {"chunk_dim", s.cfg.chunk_dim},
               {"chunks", s.cfg.chunks},
               {"param_count", s.param_count},
               {"chunk_width", s.chunk_width},
               {"seed", s.seed}};
  j["output_gain"] = vector_to_json(s.output_gain);
  ordered_json layers = ordered_json::array();
  for (std::size_t l = 0; l < s.phi.W.size(); ++l) {
    layers.push_back({{"W", matrix_to_json(s.phi.W[l])},
                      {"b", vector_to_json(s.phi.b[l])}});
  }
  j["phi"] = std::move(layers);
  j["chunk_embeddings"] = matrix_to_json(s.phi.chunk_embeddings);
  j["chunks_frozen"] = s.chunks_frozen;
  ordered_json tasks = ordered_json::array();
  for (const auto& [id, emb] : s.task_embeddings) {
    tasks.push_back(
        {{"id", id},
         {"vec", vector_to_json(emb.vec)},
         {"trainable", emb.trainable},
         {"status",
          s.status.at(id) == TaskStatus::kActive ? "active" : "unlearned"}});
  }
  j["task_embeddings"] = std::move(tasks);
  j["reg_set"] = s.reg_set;

  std::ofstream out(path);
  if (!out) throw FormatError("save_checkpoint: cannot open " + path);
  out << j.dump(1, '\t') << '\n';
}

HypernetState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("load_checkpoint: cannot open " + path);
  ordered_json j;
  in >> j;

  HypernetState s;
  s.cfg.main_arch.dims = j.at("arch").at("dims").get<std::vector<int>>();
  const auto& d = j.at("dims");
  s.cfg.hidden = d.at("hidden").get<std::vector<int>>();
  s.cfg.embed_dim = d.at("embed_dim").get<int>();
  s.cfg.chunk_dim = d.at("chunk_dim").get<int>();
  s.cfg.chunks = d.at("chunks").get<int>();
  s.param_count = d.at("param_count").get<Index>();
  s.chunk_width = d.at("chunk_width").get<Index>();
  s.seed = d.at("seed").get<std::uint64_t>();
  s.output_gain = vector_from_json(j.at("output_gain"));
  for (const auto& layer : j.at("phi")) {
    s.phi.W.push_back(matrix_from_json(layer.at("W")));
    s.phi.b.push_back(vector_from_json(layer.at("b")));
  }
  s.phi.chunk_embeddings = matrix_from_json(j.at("chunk_embeddings"));
  s.chunks_frozen = j.at("chunks_frozen").get<bool>();
  for (const auto& t : j.at("task_embeddings")) {
    TaskEmbedding emb;
    emb.id = t.at("id").get<int>();
    emb.vec = vector_from_json(t.at("vec"));
    emb.trainable = t.at("trainable").get<bool>();
    s.task_embeddings[emb.id] = emb;
    s.status[emb.id] = t.at("status").get<std::string>() == "active"
                           ? TaskStatus::kActive
                           : TaskStatus::kUnlearned;
  }
  s.reg_set = j.at("reg_set").get<std::set<int>>();
  return s;
}

}  // namespace hypercl::hypernet
