#include "hypercl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace hypercl::data {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t off) {
  return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
         (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
}

void write_be32(std::vector<std::uint8_t>& bytes, std::uint32_t v) {
  bytes.push_back(static_cast<std::uint8_t>(v >> 24));
  bytes.push_back(static_cast<std::uint8_t>(v >> 16));
  bytes.push_back(static_cast<std::uint8_t>(v >> 8));
  bytes.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxFile parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw FormatError("parse_idx: truncated header");
  IdxFile idx;
  idx.magic = read_be32(bytes, 0);
  std::size_t ndims = 0;
  if (idx.magic == 0x00000803u)
    ndims = 3;
  else if (idx.magic == 0x00000801u)
    ndims = 1;
  else
    throw FormatError("parse_idx: bad magic");
  if (bytes.size() < 4 + 4 * ndims) throw FormatError("parse_idx: truncated dims");

  std::uint64_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = read_be32(bytes, 4 + 4 * i);
    idx.dims.push_back(d);
    total *= d;
    if (total > (1ull << 32)) throw FormatError("parse_idx: dimension overflow");
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() != header + total)
    throw FormatError("parse_idx: payload size mismatch");
  idx.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return idx;
}

std::vector<std::uint8_t> serialize_idx(const IdxFile& idx) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 + 4 * idx.dims.size() + idx.payload.size());
  write_be32(bytes, idx.magic);
  for (std::uint32_t d : idx.dims) write_be32(bytes, d);
  bytes.insert(bytes.end(), idx.payload.begin(), idx.payload.end());
  return bytes;
}

Matrix idx_images(const IdxFile& idx) {
  if (!idx.is_images()) throw FormatError("idx_images: not an image file");
  const Index n = idx.dims[0];
  const Index d = static_cast<Index>(idx.dims[1]) * idx.dims[2];
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      x(i, j) = idx.payload[static_cast<std::size_t>(i * d + j)] / 255.0;
  return x;
}

std::vector<int> idx_labels(const IdxFile& idx) {
  if (!idx.is_labels()) throw FormatError("idx_labels: not a label file");
  return std::vector<int>(idx.payload.begin(), idx.payload.end());
}

IdxFile images_to_idx(const Matrix& x, std::uint32_t rows, std::uint32_t cols) {
  if (x.cols() != static_cast<Index>(rows) * cols)
    throw DimensionError("images_to_idx: rows*cols does not match features");
  IdxFile idx;
  idx.magic = 0x00000803u;
  idx.dims = {static_cast<std::uint32_t>(x.rows()), rows, cols};
  idx.payload.resize(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) {
      const Real v = std::clamp(x(i, j), 0.0, 1.0);
      idx.payload[static_cast<std::size_t>(i * x.cols() + j)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return idx;
}

IdxFile labels_to_idx(const std::vector<int>& labels) {
  IdxFile idx;
  idx.magic = 0x00000801u;
  idx.dims = {static_cast<std::uint32_t>(labels.size())};
  idx.payload.reserve(labels.size());
  for (int y : labels) {
    if (y < 0 || y > 255) throw ValidationError("labels_to_idx: label out of u8 range");
    idx.payload.push_back(static_cast<std::uint8_t>(y));
  }
  return idx;
}

PermutationSpec PermutationSpec::identity(int dim) {
  PermutationSpec spec;
  spec.perm.resize(static_cast<std::size_t>(dim));
  std::iota(spec.perm.begin(), spec.perm.end(), 0);
  return spec;
}

PermutationSpec PermutationSpec::random(std::uint64_t seed, int dim) {
  PermutationSpec spec = identity(dim);
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  std::shuffle(spec.perm.begin(), spec.perm.end(), rng);
  return spec;
}

namespace {

Matrix permute_columns(const Matrix& x, const std::vector<int>& perm) {
  Matrix out(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    out.col(j) = x.col(perm[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace

TaskDataset apply_permutation(const TaskDataset& base, const PermutationSpec& spec) {
  if (static_cast<Index>(spec.perm.size()) != base.train_x.cols())
    throw DimensionError("apply_permutation: permutation size mismatch");
  TaskDataset out = base;
  out.train_x = permute_columns(base.train_x, spec.perm);
  out.test_x = permute_columns(base.test_x, spec.perm);
  return out;
}

TaskDataset make_permuted(const TaskDataset& base, std::uint64_t seed) {
  return apply_permutation(
      base, PermutationSpec::random(seed, static_cast<int>(base.train_x.cols())));
}

TaskDataset make_synthetic(int classes, int dim, int n_per_class,
                           Real separation, std::uint64_t seed) {
  if (classes < 2) throw ValidationError("make_synthetic: classes must be >= 2");
  if (dim < 1) throw ValidationError("make_synthetic: dim must be >= 1");
  if (n_per_class < 2) throw ValidationError("make_synthetic: n_per_class must be >= 2");

  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> nd;

  // E||mu_i - mu_j||^2 = 2 * dim * sigma^2 = separation^2.
  const Real sigma = separation / std::sqrt(2.0 * dim);
  Matrix means(classes, dim);
  for (Index c = 0; c < classes; ++c)
    for (Index j = 0; j < dim; ++j) means(c, j) = nd(rng) * sigma;

  const int n_train = static_cast<int>(std::lround(0.8 * n_per_class));
  const int n_test = n_per_class - n_train;

  TaskDataset ds;
  ds.classes = classes;
  ds.train_x = Matrix(static_cast<Index>(n_train) * classes, dim);
  ds.test_x = Matrix(static_cast<Index>(n_test) * classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < n_per_class; ++i) {
      const bool train = i < n_train;
      const Index row = train ? static_cast<Index>(c) * n_train + i
                              : static_cast<Index>(c) * n_test + (i - n_train);
      Matrix& dst = train ? ds.train_x : ds.test_x;
      for (Index j = 0; j < dim; ++j) dst(row, j) = means(c, j) + nd(rng);
      (train ? ds.train_y : ds.test_y).push_back(c);
    }
  }
  return ds;
}

std::vector<TaskDataset> split_classes(const TaskDataset& dataset, int n_tasks) {
  if (n_tasks < 1) throw ValidationError("split_classes: n_tasks must be >= 1");
  if (dataset.classes % n_tasks != 0)
    throw ValidationError("split_classes: class count not divisible by n_tasks");
  const int per_task = dataset.classes / n_tasks;

  std::vector<TaskDataset> tasks(static_cast<std::size_t>(n_tasks));
  for (int t = 0; t < n_tasks; ++t) {
    tasks[static_cast<std::size_t>(t)].task_id = t;
    tasks[static_cast<std::size_t>(t)].classes = per_task;
  }

  auto split_part = [&](const Matrix& x, const std::vector<int>& y, bool train) {
    std::vector<std::vector<Index>> rows(static_cast<std::size_t>(n_tasks));
    for (Index i = 0; i < x.rows(); ++i)
      rows[static_cast<std::size_t>(y[static_cast<std::size_t>(i)] / per_task)]
          .push_back(i);
    for (int t = 0; t < n_tasks; ++t) {
      const auto& idx = rows[static_cast<std::size_t>(t)];
      Matrix xt(static_cast<Index>(idx.size()), x.cols());
      std::vector<int> yt;
      yt.reserve(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        xt.row(static_cast<Index>(i)) = x.row(idx[i]);
        yt.push_back(y[static_cast<std::size_t>(idx[i])] - t * per_task);
      }
      TaskDataset& ds = tasks[static_cast<std::size_t>(t)];
      if (train) {
        ds.train_x = std::move(xt);
        ds.train_y = std::move(yt);
      } else {
        ds.test_x = std::move(xt);
        ds.test_y = std::move(yt);
      }
    }
  };
  split_part(dataset.train_x, dataset.train_y, true);
  split_part(dataset.test_x, dataset.test_y, false);
  return tasks;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

TaskDataset load_mnist_dir(const std::string& dir) {
  TaskDataset ds;
  ds.classes = 10;
  ds.train_x = idx_images(parse_idx(read_file(dir + "/train-images-idx3-ubyte")));
  ds.train_y = idx_labels(parse_idx(read_file(dir + "/train-labels-idx1-ubyte")));
  ds.test_x = idx_images(parse_idx(read_file(dir + "/t10k-images-idx3-ubyte")));
  ds.test_y = idx_labels(parse_idx(read_file(dir + "/t10k-labels-idx1-ubyte")));
  if (ds.train_x.rows() != static_cast<Index>(ds.train_y.size()) ||
      ds.test_x.rows() != static_cast<Index>(ds.test_y.size()))
    throw FormatError("load_mnist_dir: image/label count mismatch");
  return ds;
}

namespace {

void subsample_part(const Matrix& x, const std::vector<int>& y, int n,
                    std::mt19937_64& rng, Matrix& out_x, std::vector<int>& out_y) {
  if (n > x.rows()) throw ValidationError("subsample: not enough samples");
  std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Index(0));
  std::shuffle(idx.begin(), idx.end(), rng);
  out_x = Matrix(n, x.cols());
  out_y.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out_x.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
    out_y[static_cast<std::size_t>(i)] =
        y[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  }
}

}  // namespace

TaskDataset subsample(const TaskDataset& base, int n_train, int n_test,
                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskDataset out;
  out.task_id = base.task_id;
  out.classes = base.classes;
  subsample_part(base.train_x, base.train_y, n_train, rng, out.train_x, out.train_y);
  subsample_part(base.test_x, base.test_y, n_test, rng, out.test_x, out.test_y);
  return out;
}

}  // namespace hypercl::data
