#include "hypercl/harness.hpp"

#include "hypercl/mainnet.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace hypercl::harness {

namespace {

using ordered_json = nlohmann::ordered_json;

// Seed-derivation tags; one namespace per purpose keeps streams disjoint.
constexpr std::uint64_t kInitTag = 11;
constexpr std::uint64_t kNoiseTag = 12;
constexpr std::uint64_t kOpTagBase = 100;
constexpr std::uint64_t kProbeTagBase = 5000;
constexpr std::uint64_t kDataTagBase = 7000;

}  // namespace

std::vector<Request> parse_sequence(const std::string& text) {
  std::string cleaned = text;
  auto replace_all = [&](const std::string& from) {
    std::size_t pos = 0;
    while ((pos = cleaned.find(from, pos)) != std::string::npos) {
      cleaned.replace(pos, from.size(), " ");
      pos += 1;
    }
  };
  replace_all("\xE2\x86\x92");  // unicode right arrow
  replace_all("->");
  replace_all(",");

  std::vector<Request> requests;
  std::istringstream ss(cleaned);
  std::string token;
  while (ss >> token) {
    if (token.size() < 2 || (token[0] != 'L' && token[0] != 'U'))
      throw ValidationError("parse_sequence: malformed token '" + token + "'");
    std::size_t digits = 1;
    if (token[1] == '#') digits = 2;
    if (digits >= token.size())
      throw ValidationError("parse_sequence: malformed token '" + token + "'");
    int id = 0;
    for (std::size_t i = digits; i < token.size(); ++i) {
      if (token[i] < '0' || token[i] > '9')
        throw ValidationError("parse_sequence: malformed token '" + token + "'");
      id = id * 10 + (token[i] - '0');
    }
    requests.push_back(Request{token[0], id});
  }
  if (requests.empty()) throw ValidationError("parse_sequence: empty sequence");

  std::set<int> active;
  for (const Request& r : requests) {
    if (r.instruction == 'L') {
      if (active.count(r.task_id))
        throw ValidationError("parse_sequence: task " + std::to_string(r.task_id) +
                              " learned twice without unlearning");
      active.insert(r.task_id);
    } else {
      if (!active.count(r.task_id))
        throw ValidationError("parse_sequence: unlearn of task " +
                              std::to_string(r.task_id) + " before learning it");
      active.erase(r.task_id);
    }
  }
  return requests;
}

std::string strip_unlearns(const std::string& text) {
  const std::vector<Request> requests = parse_sequence(text);
  std::string out;
  for (const Request& r : requests) {
    if (r.instruction == 'U') continue;
    if (!out.empty()) out += ' ';
    out += 'L' + std::to_string(r.task_id);
  }
  return out;
}

namespace {

std::vector<Request> remapped_requests(const RunConfig& cfg) {
  std::vector<Request> requests = parse_sequence(cfg.sequence);
  if (!cfg.id_remap.empty()) {
    for (Request& r : requests) {
      auto it = cfg.id_remap.find(r.task_id);
      if (it == cfg.id_remap.end())
        throw ValidationError("id_remap: no mapping for task " +
                              std::to_string(r.task_id));
      r.task_id = it->second;
    }
  }
  return requests;
}

std::vector<int> task_universe(const std::vector<Request>& requests) {
  std::set<int> ids;
  for (const Request& r : requests) ids.insert(r.task_id);
  return {ids.begin(), ids.end()};
}

std::map<int, data::TaskDataset> build_task_datasets(const DatasetSpec& spec,
                                                     const std::vector<int>& tasks) {
  std::map<int, data::TaskDataset> out;
  const int n_tasks = tasks.empty() ? 0 : *std::max_element(tasks.begin(), tasks.end()) + 1;

  auto sized_synthetic = [&](std::uint64_t seed) {
    // make_synthetic splits 80/20; draw enough per class, then cut to size.
    const int per_class =
        std::max((spec.train_per_task + 4 * spec.classes) / (spec.classes * 4) * 5,
                 (spec.test_per_task + spec.classes) / spec.classes * 5) +
        5;
    data::TaskDataset ds =
        data::make_synthetic(spec.classes, spec.dim, per_class, spec.separation, seed);
    return data::subsample(ds, spec.train_per_task, spec.test_per_task,
                           mix_seed(seed, 1));
  };

  if (spec.kind == "permuted_synthetic" || spec.kind == "permuted_mnist") {
    data::TaskDataset base;
    if (spec.kind == "permuted_mnist") {
      base = data::load_mnist_dir(spec.mnist_dir);
      base = data::subsample(base, spec.train_per_task, spec.test_per_task,
                             mix_seed(spec.seed, 2));
    } else {
      base = sized_synthetic(spec.seed);
    }
    for (int t : tasks) {
      data::TaskDataset ds = data::make_permuted(base, mix_seed(spec.seed, kDataTagBase + t));
      ds.task_id = t;
      out[t] = std::move(ds);
    }
  } else if (spec.kind == "split_synthetic" || spec.kind == "split_mnist") {
    data::TaskDataset base;
    if (spec.kind == "split_mnist") {
      base = data::load_mnist_dir(spec.mnist_dir);
    } else {
      DatasetSpec big = spec;
      big.train_per_task = spec.train_per_task * n_tasks;
      big.test_per_task = spec.test_per_task * n_tasks;
      base = data::make_synthetic(spec.classes, spec.dim,
                                  (big.train_per_task + big.test_per_task) / spec.classes + 5,
                                  spec.separation, spec.seed);
    }
    std::vector<data::TaskDataset> parts = data::split_classes(base, n_tasks);
    for (int t : tasks) out[t] = parts.at(static_cast<std::size_t>(t));
  } else if (spec.kind == "blobs") {
    for (int t : tasks) {
      data::TaskDataset ds = sized_synthetic(mix_seed(spec.seed, kDataTagBase + t));
      ds.task_id = t;
      out[t] = std::move(ds);
    }
  } else {
    throw ValidationError("unknown dataset kind: " + spec.kind);
  }
  return out;
}

mainnet::MainArch resolve_arch(const RunConfig& cfg,
                               const std::map<int, data::TaskDataset>& datasets) {
  mainnet::MainArch arch;
  const data::TaskDataset& first = datasets.begin()->second;
  arch.dims.push_back(static_cast<int>(first.train_x.cols()));
  for (int h : cfg.main_hidden) arch.dims.push_back(h);
  arch.dims.push_back(first.classes);
  return arch;
}

Real evaluate_task(const hypernet::HypernetState& state, int task,
                   const data::TaskDataset& ds, std::uint64_t run_seed) {
  Vector embedding;
  auto it = state.task_embeddings.find(task);
  if (it != state.task_embeddings.end()) {
    embedding = it->second.vec;
  } else {
    // Not yet introduced: measure with a fixed probe embedding so the
    // trace column is complete; expected to sit near chance.
    std::mt19937_64 rng(mix_seed(run_seed, kProbeTagBase + static_cast<std::uint64_t>(task)));
    embedding = hypernet::random_init_embedding(state.cfg.embed_dim, rng);
  }
  const Vector theta = hypernet::generate(state, embedding);
  const mainnet::LayeredParams params = mainnet::assemble(theta, state.cfg.main_arch);
  return mainnet::evaluate(params, ds.test_x, ds.test_y);
}

SeedResult run_single_seed(const RunConfig& cfg, const std::vector<Request>& requests,
                           const std::vector<int>& tasks,
                           const std::map<int, data::TaskDataset>& datasets,
                           std::uint64_t seed) {
  hypernet::HyperConfig hcfg = cfg.hyper;
  hcfg.main_arch = resolve_arch(cfg, datasets);
  hypernet::HypernetState state = hypernet::init_hypernet(hcfg, mix_seed(seed, kInitTag));
  engine::NoiseSource noise(mix_seed(seed, kNoiseTag), state.param_count);

  SeedResult result;
  result.seed = seed;
  result.trace.tasks = tasks;
  result.trace.acc = Matrix::Zero(static_cast<Index>(tasks.size()),
                                  static_cast<Index>(requests.size()));

  int burn = cfg.unlearn.burn_in;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const Request& req = requests[i];
    result.trace.ops.push_back(
        metrics::TraceOp{static_cast<int>(i), req.instruction, req.task_id});
    if (req.instruction == 'L') {
      engine::LearnConfig lcfg = cfg.learn;
      lcfg.seed = mix_seed(seed, kOpTagBase + i);
      engine::learn_task(state, req.task_id, datasets.at(req.task_id), lcfg);
    } else {
      engine::UnlearnConfig ucfg = cfg.unlearn;
      ucfg.burn_in = burn;
      ucfg.seed = mix_seed(seed, kOpTagBase + i);
      const auto t0 = std::chrono::steady_clock::now();
      engine::unlearn_task(state, req.task_id, ucfg, noise);
      const auto t1 = std::chrono::steady_clock::now();
      result.unlearn_seconds.emplace_back(
          static_cast<int>(i), std::chrono::duration<Real>(t1 - t0).count());
      if (cfg.unlearn.anneal)
        burn = engine::anneal_burn_in(burn, cfg.unlearn.anneal_rate,
                                      cfg.unlearn.anneal_floor);
    }
    for (std::size_t r = 0; r < tasks.size(); ++r)
      result.trace.acc(static_cast<Index>(r), static_cast<Index>(i)) =
          evaluate_task(state, tasks[r], datasets.at(tasks[r]), seed);
  }

  result.report = metrics::report_from_trace(result.trace);

  // Threshold MIA on each finally-forgotten task: members are its train
  // split, non-members its held-out test split.
  const auto statuses = metrics::final_statuses(result.trace);
  Real mia_sum = 0;
  int mia_count = 0;
  for (const auto& [task, st] : statuses) {
    if (st != metrics::FinalStatus::kForgotten) continue;
    const data::TaskDataset& ds = datasets.at(task);
    const Vector theta = hypernet::generate(state, state.task_embeddings.at(task).vec);
    const mainnet::LayeredParams params = mainnet::assemble(theta, state.cfg.main_arch);
    const Vector member_losses = mainnet::per_sample_losses(params, ds.train_x, ds.train_y);
    const Vector heldout_losses = mainnet::per_sample_losses(params, ds.test_x, ds.test_y);
    mia_sum += metrics::mia_score(member_losses, heldout_losses);
    ++mia_count;
  }
  if (mia_count > 0) result.report.mia = mia_sum / mia_count;
  return result;
}

void mean_std(const std::vector<Real>& xs, std::optional<Real>& mean,
              std::optional<Real>& stdev) {
  if (xs.empty()) return;
  Real m = 0;
  for (Real x : xs) m += x;
  m /= static_cast<Real>(xs.size());
  Real var = 0;
  for (Real x : xs) var += (x - m) * (x - m);
  var /= static_cast<Real>(xs.size());
  mean = m;
  stdev = std::sqrt(var);
}

Aggregate aggregate_results(const std::vector<SeedResult>& per_seed) {
  Aggregate agg;
  auto collect = [&](auto getter) {
    std::vector<Real> xs;
    for (const SeedResult& r : per_seed) {
      const std::optional<Real> v = getter(r.report);
      if (v) xs.push_back(*v);
    }
    return xs;
  };
  mean_std(collect([](const metrics::MetricsReport& r) { return r.ra; }),
           agg.ra_mean, agg.ra_std);
  mean_std(collect([](const metrics::MetricsReport& r) { return r.fa; }),
           agg.fa_mean, agg.fa_std);
  mean_std(collect([](const metrics::MetricsReport& r) { return r.spill_mean; }),
           agg.spill_mean, agg.spill_std);
  mean_std(collect([](const metrics::MetricsReport& r) { return r.relapse_mean; }),
           agg.relapse_mean, agg.relapse_std);
  mean_std(collect([](const metrics::MetricsReport& r) { return r.mia; }),
           agg.mia_mean, agg.mia_std);
  return agg;
}

}  // namespace

RunResult run_sequence(const RunConfig& cfg) {
  const std::vector<Request> requests = remapped_requests(cfg);
  const std::vector<int> tasks = task_universe(requests);
  const std::map<int, data::TaskDataset> datasets =
      build_task_datasets(cfg.dataset, tasks);

  RunResult result;
  result.requests = requests;
  result.per_seed.resize(cfg.seeds.size());

  int threads = cfg.threads > 0 ? cfg.threads
                                : static_cast<int>(std::min<std::size_t>(
                                      cfg.seeds.size(),
                                      std::max(1u, std::thread::hardware_concurrency())));
  threads = std::max(1, threads);

  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t wave = 0; wave < cfg.seeds.size();
       wave += static_cast<std::size_t>(threads)) {
    std::vector<std::thread> pool;
    const std::size_t end =
        std::min(cfg.seeds.size(), wave + static_cast<std::size_t>(threads));
    for (std::size_t i = wave; i < end; ++i) {
      pool.emplace_back([&, i] {
        try {
          result.per_seed[i] =
              run_single_seed(cfg, requests, tasks, datasets, cfg.seeds[i]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  result.aggregate = aggregate_results(result.per_seed);
  return result;
}

CompareResult compare_only_learning(const RunConfig& cfg) {
  const std::vector<Request> requests = remapped_requests(cfg);
  if (std::none_of(requests.begin(), requests.end(),
                   [](const Request& r) { return r.instruction == 'U'; }))
    throw ValidationError("compare_only_learning: sequence has no unlearn ops");

  CompareResult out;
  out.with_unlearning = run_sequence(cfg);

  RunConfig stripped = cfg;
  stripped.sequence = strip_unlearns(cfg.sequence);
  out.only_learning = run_sequence(stripped);

  // Retained set comes from the unlearning run's sequence.
  std::set<int> retained;
  for (const auto& [task, st] :
       metrics::final_statuses(out.with_unlearning.per_seed.front().trace))
    if (st == metrics::FinalStatus::kRetained) retained.insert(task);

  auto mean_final = [&](const SeedResult& r) {
    Real sum = 0;
    const int last = static_cast<int>(r.trace.ops.size()) - 1;
    for (int t : retained) sum += r.trace.at(t, last);
    return sum / static_cast<Real>(retained.size());
  };
  for (const SeedResult& r : out.with_unlearning.per_seed)
    out.ra_with_per_seed.push_back(mean_final(r));
  for (const SeedResult& r : out.only_learning.per_seed)
    out.ra_only_per_seed.push_back(mean_final(r));
  for (Real v : out.ra_with_per_seed) out.ra_with_mean += v;
  out.ra_with_mean /= static_cast<Real>(out.ra_with_per_seed.size());
  for (Real v : out.ra_only_per_seed) out.ra_only_mean += v;
  out.ra_only_mean /= static_cast<Real>(out.ra_only_per_seed.size());
  return out;
}

namespace {

ordered_json aggregate_to_json(const Aggregate& a) {
  ordered_json j;
  auto put = [&](const char* key, const std::optional<Real>& v) {
    j[key] = v ? ordered_json(*v) : ordered_json(nullptr);
  };
  put("ra_mean", a.ra_mean);
  put("ra_std", a.ra_std);
  put("fa_mean", a.fa_mean);
  put("fa_std", a.fa_std);
  put("spill_mean", a.spill_mean);
  put("spill_std", a.spill_std);
  put("relapse_mean", a.relapse_mean);
  put("relapse_std", a.relapse_std);
  put("mia_mean", a.mia_mean);
  put("mia_std", a.mia_std);
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path);
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

void emit_seed_files(const SeedResult& r, const std::vector<Request>& requests,
                     const std::string& dir) {
  const std::string tag = std::to_string(r.seed);
  metrics::write_trace_csv(r.trace, dir + "/trace_seed" + tag + ".csv");
  write_text(dir + "/report_seed" + tag + ".json",
             metrics::report_to_json(r.report));

  std::ofstream plot(dir + "/plot_seed" + tag + ".csv");
  if (!plot) throw FormatError("cannot open plot csv");
  plot << "op_index,op_label,task,accuracy\n";
  char buf[64];
  for (std::size_t u = 0; u < requests.size(); ++u) {
    const std::string label =
        std::string(1, requests[u].instruction) + std::to_string(requests[u].task_id);
    for (std::size_t t = 0; t < r.trace.tasks.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    r.trace.acc(static_cast<Index>(t), static_cast<Index>(u)));
      plot << u << ',' << label << ',' << r.trace.tasks[t] << ',' << buf << '\n';
    }
  }
}

}  // namespace

void emit_results(const RunResult& result, const RunConfig& cfg,
                  const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const SeedResult& r : result.per_seed) emit_seed_files(r, result.requests, dir);

  ordered_json j;
  j["aggregate"] = aggregate_to_json(result.aggregate);
  ordered_json seeds = ordered_json::array();
  for (const SeedResult& r : result.per_seed) {
    ordered_json sj;
    sj["seed"] = r.seed;
    sj["report"] = ordered_json::parse(metrics::report_to_json(r.report));
    ordered_json ut = ordered_json::array();
    for (const auto& [op, sec] : r.unlearn_seconds)
      ut.push_back({{"op_index", op}, {"seconds", sec}});
    sj["unlearn_seconds"] = std::move(ut);
    seeds.push_back(std::move(sj));
  }
  j["per_seed"] = std::move(seeds);
  write_text(dir + "/report.json", j.dump(2));
  write_text(dir + "/config_echo.json", run_config_to_json(cfg));
}

void emit_compare(const CompareResult& result, const RunConfig& cfg,
                  const std::string& dir) {
  std::filesystem::create_directories(dir);
  emit_results(result.with_unlearning, cfg, dir + "/with_unlearning");
  RunConfig stripped = cfg;
  stripped.sequence = strip_unlearns(cfg.sequence);
  emit_results(result.only_learning, stripped, dir + "/only_learning");

  ordered_json j;
  j["ra_with_unlearning_mean"] = result.ra_with_mean;
  j["ra_only_learning_mean"] = result.ra_only_mean;
  j["ra_with_unlearning_per_seed"] = result.ra_with_per_seed;
  j["ra_only_learning_per_seed"] = result.ra_only_per_seed;
  write_text(dir + "/compare.json", j.dump(2));
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError(std::string("config parse error: ") + e.what());
  }

  RunConfig cfg;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
    cfg.dataset.mnist_dir = d.value("mnist_dir", cfg.dataset.mnist_dir);
    cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
    cfg.dataset.dim = d.value("dim", cfg.dataset.dim);
    cfg.dataset.train_per_task = d.value("train_per_task", cfg.dataset.train_per_task);
    cfg.dataset.test_per_task = d.value("test_per_task", cfg.dataset.test_per_task);
    cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
    cfg.dataset.seed = d.value("seed", cfg.dataset.seed);
  }
  cfg.main_hidden = j.value("main_hidden", cfg.main_hidden);
  if (j.contains("hypernet")) {
    const auto& h = j["hypernet"];
    cfg.hyper.hidden = h.value("hidden", cfg.hyper.hidden);
    cfg.hyper.embed_dim = h.value("embed_dim", cfg.hyper.embed_dim);
    cfg.hyper.chunk_dim = h.value("chunk_dim", cfg.hyper.chunk_dim);
    cfg.hyper.chunks = h.value("chunks", cfg.hyper.chunks);
  }
  cfg.sequence = j.value("sequence", cfg.sequence);
  if (j.contains("id_remap"))
    for (const auto& [key, value] : j["id_remap"].items())
      cfg.id_remap[std::stoi(key)] = value.get<int>();
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.threads = j.value("threads", cfg.threads);
  if (j.contains("learn")) {
    const auto& l = j["learn"];
    cfg.learn.beta = l.value("beta", cfg.learn.beta);
    cfg.learn.epochs = l.value("epochs", cfg.learn.epochs);
    cfg.learn.batch_size = l.value("batch_size", cfg.learn.batch_size);
    cfg.learn.lr = l.value("lr", cfg.learn.lr);
  }
  if (j.contains("unlearn")) {
    const auto& u = j["unlearn"];
    cfg.unlearn.gamma = u.value("gamma", cfg.unlearn.gamma);
    cfg.unlearn.burn_in = u.value("burn_in", cfg.unlearn.burn_in);
    cfg.unlearn.noise_samples = u.value("noise_samples", cfg.unlearn.noise_samples);
    cfg.unlearn.strategy =
        engine::parse_strategy(u.value("strategy", std::string("gaussian_avg")));
    cfg.unlearn.anneal = u.value("anneal", cfg.unlearn.anneal);
    cfg.unlearn.anneal_rate = u.value("anneal_rate", cfg.unlearn.anneal_rate);
    cfg.unlearn.anneal_floor = u.value("anneal_floor", cfg.unlearn.anneal_floor);
    cfg.unlearn.lr = u.value("lr", cfg.unlearn.lr);
  }
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"mnist_dir", cfg.dataset.mnist_dir},
                  {"classes", cfg.dataset.classes},
                  {"dim", cfg.dataset.dim},
                  {"train_per_task", cfg.dataset.train_per_task},
                  {"test_per_task", cfg.dataset.test_per_task},
                  {"separation", cfg.dataset.separation},
                  {"seed", cfg.dataset.seed}};
  j["main_hidden"] = cfg.main_hidden;
  j["hypernet"] = {{"hidden", cfg.hyper.hidden},
                   {"embed_dim", cfg.hyper.embed_dim},
                   {"chunk_dim", cfg.hyper.chunk_dim},
                   {"chunks", cfg.hyper.chunks}};
  j["sequence"] = cfg.sequence;
  ordered_json remap = ordered_json::object();
  for (const auto& [from, to] : cfg.id_remap) remap[std::to_string(from)] = to;
  j["id_remap"] = std::move(remap);
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  j["learn"] = {{"beta", cfg.learn.beta},
                {"epochs", cfg.learn.epochs},
                {"batch_size", cfg.learn.batch_size},
                {"lr", cfg.learn.lr}};
  j["unlearn"] = {{"gamma", cfg.unlearn.gamma},
                  {"burn_in", cfg.unlearn.burn_in},
                  {"noise_samples", cfg.unlearn.noise_samples},
                  {"strategy", engine::strategy_name(cfg.unlearn.strategy)},
                  {"anneal", cfg.unlearn.anneal},
                  {"anneal_rate", cfg.unlearn.anneal_rate},
                  {"anneal_floor", cfg.unlearn.anneal_floor},
                  {"lr", cfg.unlearn.lr}};
  return j.dump(2);
}

}  // namespace hypercl::harness
