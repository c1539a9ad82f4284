#ifndef HYPERCL_METRICS_HPP_
#define HYPERCL_METRICS_HPP_

#include "hypercl/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hypercl::metrics {

struct TraceOp {
  int index = 0;
  char instruction = 'L';  // 'L' or 'U'
  int task_id = 0;
};

/// Every task's test accuracy (percent) after every operation.
/// acc(row, col): row indexes `tasks`, col indexes `ops`.
struct AccuracyTrace {
  std::vector<TraceOp> ops;
  std::vector<int> tasks;  // sorted task universe
  Matrix acc;

  Index task_row(int task) const;
  Real at(int task, int op_index) const { return acc(task_row(task), op_index); }
};

enum class FinalStatus { kRetained, kForgotten };

/// Last instruction wins: L -> retained, U -> forgotten.
std::map<int, FinalStatus> final_statuses(const AccuracyTrace& trace);

/// Mean final-column accuracy by status. A side with no tasks is absent.
std::pair<std::optional<Real>, std::optional<Real>> retain_forget_accuracy(
    const AccuracyTrace& trace, const std::map<int, FinalStatus>& status);

/// S_u = sum over tasks t != f, learned before op u, of |a^t_{u-1} - a^t_u|.
Real spill(const AccuracyTrace& trace, int u, int forget_task);

/// P_t = |a^t_u - a^t_e| for a task unlearned at op u, with e the last op.
Real relapse(const AccuracyTrace& trace, int task, int u, int e);

/// Balanced accuracy of the best single loss threshold separating members
/// from non-members, swept over midpoints of the pooled sorted losses and
/// both orientations. 50 means indistinguishable.
Real mia_score(const Vector& forget_losses, const Vector& heldout_losses);

/// Monte-Carlo mean of (1/n) sum ||theta - z_i||^2 with z_i ~ N(0, I).
/// Deterministic per seed.
Real mse_limit_check(const Vector& theta, long n, std::uint64_t seed);

struct MetricsReport {
  std::optional<Real> ra;
  std::optional<Real> fa;
  std::vector<std::pair<int, Real>> spill_per_op;     // unlearn op index -> S_u
  std::optional<Real> spill_mean;
  std::vector<std::pair<int, Real>> relapse_per_task; // forgotten task -> P_t
  std::optional<Real> relapse_mean;
  std::optional<Real> mia;
};

/// RA/FA/spill/relapse from a trace. MIA needs model access and is left
/// unset here; the harness fills it in.
MetricsReport report_from_trace(const AccuracyTrace& trace);

/// CSV schema: op_index,instruction,task_id,measured_task,accuracy
void write_trace_csv(const AccuracyTrace& trace, const std::string& path);
AccuracyTrace read_trace_csv(const std::string& path);

std::string report_to_json(const MetricsReport& report);

}  // namespace hypercl::metrics

#endif  // HYPERCL_METRICS_HPP_
