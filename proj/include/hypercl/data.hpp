#ifndef HYPERCL_DATA_HPP_
#define HYPERCL_DATA_HPP_

#include "hypercl/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hypercl::data {

/// Supervised task data. Features are row vectors in [0,1] or
/// standardized; labels are class indices in [0, classes).
struct TaskDataset {
  int task_id = 0;
  int classes = 0;
  Matrix train_x;
  std::vector<int> train_y;
  Matrix test_x;
  std::vector<int> test_y;
};

/// IDX container: u8 payload with big-endian header. Images carry magic
/// 0x00000803 and 3 dims, labels 0x00000801 and 1 dim.
struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  bool is_images() const { return magic == 0x00000803u; }
  bool is_labels() const { return magic == 0x00000801u; }
};

IdxFile parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_idx(const IdxFile& idx);

/// Images as one row per sample, pixels scaled to [0,1].
Matrix idx_images(const IdxFile& idx);
std::vector<int> idx_labels(const IdxFile& idx);

/// Quantize back to u8 (round(v*255), clamped). Exact inverse of
/// idx_images for values of the form k/255.
IdxFile images_to_idx(const Matrix& x, std::uint32_t rows, std::uint32_t cols);
IdxFile labels_to_idx(const std::vector<int>& labels);

struct PermutationSpec {
  std::uint64_t seed = 0;
  std::vector<int> perm;  // bijection on feature indices

  static PermutationSpec identity(int dim);
  static PermutationSpec random(std::uint64_t seed, int dim);
};

/// x'[:, j] = x[:, perm[j]]; labels unchanged.
TaskDataset apply_permutation(const TaskDataset& base, const PermutationSpec& spec);
TaskDataset make_permuted(const TaskDataset& base, std::uint64_t seed);

/// C Gaussian clusters with unit covariance whose means are drawn so the
/// expected pairwise mean distance equals `separation`; 80/20 train/test.
TaskDataset make_synthetic(int classes, int dim, int n_per_class,
                           Real separation, std::uint64_t seed);

/// Contiguous class ranges remapped to [0, classes/n_tasks).
std::vector<TaskDataset> split_classes(const TaskDataset& dataset, int n_tasks);

/// Load the standard four-file MNIST layout from a directory.
TaskDataset load_mnist_dir(const std::string& dir);

/// Deterministic subsample without replacement of both splits.
TaskDataset subsample(const TaskDataset& base, int n_train, int n_test,
                      std::uint64_t seed);

}  // namespace hypercl::data

#endif  // HYPERCL_DATA_HPP_
