#ifndef HYPERCL_HARNESS_HPP_
#define HYPERCL_HARNESS_HPP_

#include "hypercl/data.hpp"
#include "hypercl/engine.hpp"
#include "hypercl/hypernet.hpp"
#include "hypercl/metrics.hpp"
#include "hypercl/types.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hypercl::harness {

struct Request {
  char instruction = 'L';  // 'L' or 'U'
  int task_id = 0;
};

/// Tokens are L<int> or U<int> (an optional '#' after the letter is
/// accepted), separated by whitespace, commas or arrows ("->", unicode
/// arrow). Statically validated: every U must target a currently learned
/// task and no task may be learned twice without an unlearn in between.
std::vector<Request> parse_sequence(const std::string& text);

/// The same sequence with all unlearn requests removed.
std::string strip_unlearns(const std::string& text);

struct DatasetSpec {
  // permuted_synthetic | permuted_mnist | split_synthetic | split_mnist | blobs
  std::string kind = "permuted_synthetic";
  std::string mnist_dir;
  int classes = 10;  // per-task classes (total classes for split kinds)
  int dim = 784;
  int train_per_task = 2000;
  int test_per_task = 1000;
  Real separation = 6.0;
  std::uint64_t seed = 9000;
};

struct RunConfig {
  DatasetSpec dataset;
  std::vector<int> main_hidden = {100};
  hypernet::HyperConfig hyper;  // main_arch is filled in from the dataset
  std::string sequence = "L0 L1 U0 L2";
  std::map<int, int> id_remap;  // sequence id -> dataset task id
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "results";
  int threads = 0;  // 0 = one per seed up to hardware concurrency
  engine::LearnConfig learn;
  engine::UnlearnConfig unlearn;
};

RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  metrics::AccuracyTrace trace;
  metrics::MetricsReport report;
  std::vector<std::pair<int, Real>> unlearn_seconds;  // op index -> wall clock
};

struct Aggregate {
  std::optional<Real> ra_mean, ra_std;
  std::optional<Real> fa_mean, fa_std;
  std::optional<Real> spill_mean, spill_std;
  std::optional<Real> relapse_mean, relapse_std;
  std::optional<Real> mia_mean, mia_std;
};

struct RunResult {
  std::vector<Request> requests;
  std::vector<SeedResult> per_seed;
  Aggregate aggregate;
};

/// Execute the request sequence once per seed (seeds run in parallel),
/// evaluating every task in the run's universe after every operation.
RunResult run_sequence(const RunConfig& cfg);

struct CompareResult {
  RunResult with_unlearning;
  RunResult only_learning;
  // Mean final accuracy over the tasks the unlearning run retains,
  // evaluated in both runs, per seed and averaged.
  std::vector<Real> ra_with_per_seed;
  std::vector<Real> ra_only_per_seed;
  Real ra_with_mean = 0;
  Real ra_only_mean = 0;
};

/// Run the sequence as-is and with all U ops stripped, same seeds.
CompareResult compare_only_learning(const RunConfig& cfg);

/// Write per-seed trace/report/plot files, the aggregate report and a
/// config echo sufficient to rerun the experiment.
void emit_results(const RunResult& result, const RunConfig& cfg,
                  const std::string& dir);

void emit_compare(const CompareResult& result, const RunConfig& cfg,
                  const std::string& dir);

}  // namespace hypercl::harness

#endif  // HYPERCL_HARNESS_HPP_
