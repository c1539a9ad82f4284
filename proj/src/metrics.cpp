#include "hypercl/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace hypercl::metrics {

Index AccuracyTrace::task_row(int task) const {
  auto it = std::lower_bound(tasks.begin(), tasks.end(), task);
  if (it == tasks.end() || *it != task)
    throw ValidationError("trace: unknown task " + std::to_string(task));
  return static_cast<Index>(it - tasks.begin());
}

std::map<int, FinalStatus> final_statuses(const AccuracyTrace& trace) {
  std::map<int, FinalStatus> status;
  for (const TraceOp& op : trace.ops)
    status[op.task_id] =
        op.instruction == 'L' ? FinalStatus::kRetained : FinalStatus::kForgotten;
  return status;
}

std::pair<std::optional<Real>, std::optional<Real>> retain_forget_accuracy(
    const AccuracyTrace& trace, const std::map<int, FinalStatus>& status) {
  if (trace.ops.empty()) throw ValidationError("retain_forget_accuracy: empty trace");
  const int last = static_cast<int>(trace.ops.size()) - 1;
  Real ra = 0, fa = 0;
  int nr = 0, nf = 0;
  for (const auto& [task, st] : status) {
    const Real a = trace.at(task, last);
    if (st == FinalStatus::kRetained) {
      ra += a;
      ++nr;
    } else {
      fa += a;
      ++nf;
    }
  }
  std::pair<std::optional<Real>, std::optional<Real>> out;
  if (nr > 0) out.first = ra / nr;
  if (nf > 0) out.second = fa / nf;
  return out;
}

Real spill(const AccuracyTrace& trace, int u, int forget_task) {
  if (u <= 0 || u >= static_cast<int>(trace.ops.size()))
    throw ValidationError("spill: op index out of range");
  if (trace.ops[static_cast<std::size_t>(u)].instruction != 'U')
    throw ValidationError("spill: op " + std::to_string(u) + " is not an unlearn op");

  // Only tasks that have been learned by column u-1 carry signal; tasks
  // never yet learned would just add chance-level noise.
  std::set<int> learned;
  for (int i = 0; i < u; ++i)
    if (trace.ops[static_cast<std::size_t>(i)].instruction == 'L')
      learned.insert(trace.ops[static_cast<std::size_t>(i)].task_id);

  Real total = 0;
  for (int t : learned) {
    if (t == forget_task) continue;
    total += std::abs(trace.at(t, u - 1) - trace.at(t, u));
  }
  return total;
}

Real relapse(const AccuracyTrace& trace, int task, int u, int e) {
  if (u < 0 || e < u || e >= static_cast<int>(trace.ops.size()))
    throw ValidationError("relapse: op indices out of range");
  const TraceOp& op = trace.ops[static_cast<std::size_t>(u)];
  if (op.instruction != 'U' || op.task_id != task)
    throw ValidationError("relapse: task " + std::to_string(task) +
                          " is not unlearned at op " + std::to_string(u));
  return std::abs(trace.at(task, u) - trace.at(task, e));
}

Real mia_score(const Vector& forget_losses, const Vector& heldout_losses) {
  if (forget_losses.size() == 0 || heldout_losses.size() == 0)
    throw ValidationError("mia_score: empty inputs");

  std::vector<Real> pooled(forget_losses.data(),
                           forget_losses.data() + forget_losses.size());
  pooled.insert(pooled.end(), heldout_losses.data(),
                heldout_losses.data() + heldout_losses.size());
  std::sort(pooled.begin(), pooled.end());

  std::vector<Real> members(forget_losses.data(),
                            forget_losses.data() + forget_losses.size());
  std::vector<Real> others(heldout_losses.data(),
                           heldout_losses.data() + heldout_losses.size());
  std::sort(members.begin(), members.end());
  std::sort(others.begin(), others.end());

  auto frac_leq = [](const std::vector<Real>& v, Real t) {
    return static_cast<Real>(std::upper_bound(v.begin(), v.end(), t) - v.begin()) /
           static_cast<Real>(v.size());
  };

  Real best = 0.5;
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
    const Real t = 0.5 * (pooled[i] + pooled[i + 1]);
    const Real fm = frac_leq(members, t);
    const Real fh = frac_leq(others, t);
    // Orientation "member if loss <= t" and its mirror.
    const Real low = 0.5 * (fm + 1.0 - fh);
    best = std::max({best, low, 1.0 - low});
  }
  return 100.0 * best;
}

Real mse_limit_check(const Vector& theta, long n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("mse_limit_check: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> nd;
  const Index d = theta.size();
  Real total = 0;
  for (long i = 0; i < n; ++i) {
    Real sq = 0;
    for (Index j = 0; j < d; ++j) {
      const Real diff = theta(j) - nd(rng);
      sq += diff * diff;
    }
    total += sq;
  }
  return total / static_cast<Real>(n);
}

MetricsReport report_from_trace(const AccuracyTrace& trace) {
  MetricsReport rep;
  const auto status = final_statuses(trace);
  auto [ra, fa] = retain_forget_accuracy(trace, status);
  rep.ra = ra;
  rep.fa = fa;

  Real spill_sum = 0;
  for (const TraceOp& op : trace.ops) {
    if (op.instruction != 'U' || op.index == 0) continue;
    const Real s = spill(trace, op.index, op.task_id);
    rep.spill_per_op.emplace_back(op.index, s);
    spill_sum += s;
  }
  if (!rep.spill_per_op.empty())
    rep.spill_mean = spill_sum / static_cast<Real>(rep.spill_per_op.size());

  // Relapse uses each finally-forgotten task's last unlearning op.
  const int last = static_cast<int>(trace.ops.size()) - 1;
  std::map<int, int> last_unlearn;
  for (const TraceOp& op : trace.ops)
    if (op.instruction == 'U') last_unlearn[op.task_id] = op.index;
  Real relapse_sum = 0;
  for (const auto& [task, st] : status) {
    if (st != FinalStatus::kForgotten) continue;
    const Real p = relapse(trace, task, last_unlearn.at(task), last);
    rep.relapse_per_task.emplace_back(task, p);
    relapse_sum += p;
  }
  if (!rep.relapse_per_task.empty())
    rep.relapse_mean = relapse_sum / static_cast<Real>(rep.relapse_per_task.size());
  return rep;
}

void write_trace_csv(const AccuracyTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("write_trace_csv: cannot open " + path);
  out << "op_index,instruction,task_id,measured_task,accuracy\n";
  char buf[64];
  for (std::size_t u = 0; u < trace.ops.size(); ++u) {
    const TraceOp& op = trace.ops[u];
    for (std::size_t r = 0; r < trace.tasks.size(); ++r) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    trace.acc(static_cast<Index>(r), static_cast<Index>(u)));
      out << op.index << ',' << op.instruction << ',' << op.task_id << ','
          << trace.tasks[r] << ',' << buf << '\n';
    }
  }
}

AccuracyTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("read_trace_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "op_index,instruction,task_id,measured_task,accuracy")
    throw FormatError("read_trace_csv: bad header");

  struct Row {
    int op;
    char ins;
    int task;
    int measured;
    Real acc;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Row r;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    r.op = std::stoi(field);
    std::getline(ss, field, ',');
    if (field != "L" && field != "U") throw FormatError("read_trace_csv: bad instruction");
    r.ins = field[0];
    std::getline(ss, field, ',');
    r.task = std::stoi(field);
    std::getline(ss, field, ',');
    r.measured = std::stoi(field);
    std::getline(ss, field, ',');
    r.acc = std::stod(field);
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("read_trace_csv: no rows");

  AccuracyTrace trace;
  std::set<int> tasks;
  int max_op = 0;
  for (const Row& r : rows) {
    tasks.insert(r.measured);
    max_op = std::max(max_op, r.op);
  }
  trace.tasks.assign(tasks.begin(), tasks.end());
  trace.ops.resize(static_cast<std::size_t>(max_op) + 1);
  trace.acc = Matrix::Zero(static_cast<Index>(trace.tasks.size()), max_op + 1);
  for (const Row& r : rows) {
    trace.ops[static_cast<std::size_t>(r.op)] = TraceOp{r.op, r.ins, r.task};
    trace.acc(trace.task_row(r.measured), r.op) = r.acc;
  }
  return trace;
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  auto put = [&](const char* key, const std::optional<Real>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  put("ra", report.ra);
  put("fa", report.fa);
  j["spill_per_op"] = nlohmann::ordered_json::array();
  for (const auto& [op, s] : report.spill_per_op)
    j["spill_per_op"].push_back({{"op_index", op}, {"spill", s}});
  put("spill_mean", report.spill_mean);
  j["relapse_per_task"] = nlohmann::ordered_json::array();
  for (const auto& [task, p] : report.relapse_per_task)
    j["relapse_per_task"].push_back({{"task", task}, {"relapse", p}});
  put("relapse_mean", report.relapse_mean);
  put("mia", report.mia);
  return j.dump(2);
}

}  // namespace hypercl::metrics
