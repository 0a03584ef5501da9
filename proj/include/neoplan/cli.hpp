// Copyright 2026 The NeoPlan Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// The `neoplan` command line: gen, tune, plan, run, ablate.

#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "neoplan/executor.hpp"
#include "neoplan/model_io.hpp"
#include "neoplan/model_zoo.hpp"
#include "neoplan/planner.hpp"

namespace neoplan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitMissingSchedule = 4;

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIoError:
    case ErrorCode::kCorruptDb:
    case ErrorCode::kCorruptModel: return kExitIo;
    case ErrorCode::kMissingSchedule: return kExitMissingSchedule;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kCycleDetected:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kIndivisibleChannel:
    case ErrorCode::kWrongLayout:
    case ErrorCode::kScheduleInvalid:
    case ErrorCode::kNonConstantStatistics:
    case ErrorCode::kAssignmentIncomplete:
    case ErrorCode::kInputMismatch:
    case ErrorCode::kValidation: return kExitValidation;
    default: return kExitOther;
  }
}

struct CliOptions {
  std::string model;
  std::string weights;
  std::string schedule_db;
  std::string plan;
  std::string out;
  std::string input;
  std::string kind = "chain";
  std::string solver = "auto";
  int threads = 0;
  int samples = 1000;
  int repeats = 5;
  int depth = 3;
  int channels = 16;
  int spatial = 0;
  int max_candidates = 0;
  int64_t budget_ms = 10'000;
  std::size_t state_cap = 1'000'000;
  uint64_t seed = 1;
  bool scaling = false;
};

namespace detail {

inline std::filesystem::path weights_for(const std::string& model, const std::string& weights) {
  return weights.empty() ? default_weights_path(model) : std::filesystem::path(weights);
}

inline Graph load_cli_model(const CliOptions& o) {
  NEOPLAN_CHECK(!o.model.empty(), ErrorCode::kInvalidArgument, "--model is required");
  return load_model(o.model, weights_for(o.model, o.weights));
}

inline ThreadPool make_pool(int threads) {
  // An explicit --threads is honoured even past the physical core count.
  return ThreadPool(ThreadPool::Options{threads, true, threads > 0});
}

inline std::map<std::string, Tensor> read_inputs(const Executor& ex, const std::string& path,
                                                 uint64_t seed) {
  if (path.empty()) return random_inputs(ex, seed);
  const auto bytes = detail::read_file(path);
  std::map<std::string, Tensor> feeds;
  std::size_t offset = 0;
  for (const auto& name : ex.input_names()) {
    const TensorSpec spec = ex.input_spec(name);
    const std::size_t n = static_cast<std::size_t>(numel(spec.shape)) * sizeof(float);
    NEOPLAN_CHECK(offset + n <= bytes.size(), ErrorCode::kInputMismatch,
                  "input file holds " + std::to_string(bytes.size()) + " bytes, inputs need more");
    std::vector<float> values(n / sizeof(float));
    std::memcpy(values.data(), bytes.data() + offset, n);
    feeds.emplace(name, Tensor::from_data(spec.shape, spec.layout, values));
    offset += n;
  }
  NEOPLAN_CHECK(offset == bytes.size(), ErrorCode::kInputMismatch,
                "input file holds " + std::to_string(bytes.size()) + " bytes, inputs need " +
                    std::to_string(offset));
  return feeds;
}

inline std::vector<unsigned char> dump_outputs(const std::vector<Tensor>& outs) {
  std::vector<unsigned char> bytes;
  for (const auto& t : outs) {
    const auto* p = reinterpret_cast<const unsigned char*>(t.data().data());
    bytes.insert(bytes.end(), p, p + t.data().size() * sizeof(float));
  }
  return bytes;
}

inline SearchOptions search_options(const CliOptions& o) {
  SearchOptions s;
  s.measure.repeats = o.repeats;
  s.measure.warmups = 1;
  s.measure.seed = o.seed;
  s.budget = static_cast<std::size_t>(o.max_candidates);
  s.seed = o.seed;
  return s;
}

inline PlanOptions plan_options(const CliOptions& o) {
  PlanOptions p;
  if (o.solver == "dp") {
    p.solver = Solver::kDp;
  } else if (o.solver == "pbqp") {
    p.solver = Solver::kPbqp;
  } else {
    NEOPLAN_CHECK(o.solver == "auto", ErrorCode::kInvalidArgument, "unknown solver " + o.solver);
  }
  p.state_cap = o.state_cap;
  p.time_budget = std::chrono::milliseconds(o.budget_ms);
  return p;
}

/// Uniform blocking with each conv's fastest measured schedule for that
/// (ic_bn, oc_bn) pair, when the database has one.
inline LayoutAssignment uniform_tuned_assignment(const Graph& g, const ScheduleDb& db) {
  LayoutAssignment a = uniform_assignment(g);
  const std::string cpu = cpu_identifier();
  for (auto& [id, sch] : a.convs) {
    auto measured = db.get({cpu, conv_workload(g, g.node(id))});
    if (!measured) continue;
    for (const auto& m : *measured) {  // sorted fastest first
      if (m.schedule.ic_bn == sch.ic_bn && m.schedule.oc_bn == sch.oc_bn) {
        sch = m.schedule;
        break;
      }
    }
  }
  return a;
}

}  // namespace detail

inline int cmd_gen(const CliOptions& o, std::ostream& out) {
  NEOPLAN_CHECK(!o.out.empty(), ErrorCode::kInvalidArgument, "--out is required");
  Graph g = gen_model(ModelParams{o.kind, o.depth, o.channels, o.spatial, o.seed});
  const auto weights = detail::weights_for(o.out, o.weights);
  save_model(g, o.out, weights);
  out << "wrote " << o.out << " and " << weights.string() << " (" << conv_ids(g).size()
      << " convs)\n";
  return kExitOk;
}

inline int cmd_tune(const CliOptions& o, std::ostream& out) {
  NEOPLAN_CHECK(!o.schedule_db.empty(), ErrorCode::kInvalidArgument, "--schedule-db is required");
  const Graph g = simplify(detail::load_cli_model(o));
  ScheduleDb db = ScheduleDb::open(o.schedule_db);
  ThreadPool pool = detail::make_pool(o.threads);
  const SearchOptions sopt = detail::search_options(o);
  std::set<ConvWorkload> seen;
  int tuned = 0;
  int cached = 0;
  for (int id : conv_ids(g)) {
    const ConvWorkload wl = conv_workload(g, g.node(id));
    if (!seen.insert(wl).second) continue;
    bool hit = false;
    const auto results = local_search(wl, db, pool, sopt, &hit);
    (hit ? cached : tuned)++;
    out << (hit ? "cached " : "tuned  ") << wl.str() << " best " << results.front().schedule.str()
        << " " << std::fixed << std::setprecision(0) << results.front().mean_ns << " ns\n";
  }
  db.save();
  out << "workloads: " << seen.size() << " (tuned " << tuned << ", cached " << cached
      << "), db entries: " << db.size() << "\n";
  return kExitOk;
}

inline int cmd_plan(const CliOptions& o, std::ostream& out) {
  NEOPLAN_CHECK(!o.schedule_db.empty(), ErrorCode::kInvalidArgument, "--schedule-db is required");
  const Graph g = simplify(detail::load_cli_model(o));
  const ScheduleDb db = ScheduleDb::open(o.schedule_db);
  ThreadPool pool = detail::make_pool(o.threads);
  TransformCostModel cost(&pool, 5);
  const SchemePlan p = plan(g, db, cost.fn(), detail::plan_options(o));
  out << "solver: " << p.solver << "\npredicted_total_ns: " << p.predicted_total.ns
      << "\nexec_total_ns: " << p.exec_total.ns << "\n";
  for (const auto& [id, c] : p.convs) out << "  conv " << id << ": " << c.schedule.str() << "\n";
  if (!o.plan.empty()) {
    const std::string text = p.to_json().dump(1);
    detail::write_file(o.plan, std::vector<unsigned char>(text.begin(), text.end()));
    out << "plan: " << o.plan << "\n";
  }
  if (!o.out.empty()) {
    const Graph optimized = lower(g, p.assignment());
    save_model(optimized, o.out, default_weights_path(o.out));
    out << "optimized model: " << o.out << " (" << count_transforms(optimized)
        << " layout transforms)\n";
  }
  return kExitOk;
}

inline int cmd_run(const CliOptions& o, std::ostream& out) {
  Graph g = detail::load_cli_model(o);
  if (!o.plan.empty()) {
    // Plan given: apply it to the plain model here instead of loading an
    // optimized file.
    const auto text = detail::read_file(o.plan);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kValidation, std::string("plan is not valid JSON: ") + e.what());
    }
    g = lower(simplify(g), SchemePlan::from_json(j).assignment());
  }
  Executor ex(g);
  const auto feeds = detail::read_inputs(ex, o.input, o.seed);
  std::vector<int> counts{0};
  if (o.scaling) {
    const int max_threads = o.threads > 0 ? o.threads : default_worker_count();
    counts = scaling_thread_counts(max_threads);
  } else if (o.threads > 0) {
    counts = {o.threads};
  }
  out << kBenchCsvHeader << "\n";
  std::optional<std::vector<unsigned char>> first;
  for (int t : counts) {
    ThreadPool pool = detail::make_pool(t);
    const auto bytes = detail::dump_outputs(ex.run(feeds, pool));
    if (!first) {
      first = bytes;
    } else {
      NEOPLAN_CHECK(*first == bytes, ErrorCode::kValidation,
                    "outputs differ at " + std::to_string(t) + " threads");
    }
    out << benchmark(ex, pool, feeds, o.samples).csv() << "\n";
  }
  if (!o.out.empty()) detail::write_file(o.out, *first);
  return kExitOk;
}

struct AblationRow {
  std::string name;
  BenchResult result;
  double speedup = 1.0;
};

/// Four fixed configurations: plain NCHW, uniform blocking with a transform
/// around every conv, uniform blocking with transforms eliminated and weights
/// pre-packed, and the searched plan.
inline std::vector<AblationRow> ablate(const Graph& model, const ScheduleDb& db, ThreadPool& pool,
                                       int samples, uint64_t seed, const PlanOptions& popt = {}) {
  const Graph g = simplify(model);
  const LayoutAssignment uniform = detail::uniform_tuned_assignment(g, db);
  TransformCostModel cost(&pool, 5);
  const SchemePlan p = plan(g, db, cost.fn(), popt);
  const std::vector<std::pair<std::string, Graph>> configs = {
      {"baseline", g},
      {"+layout", lower(g, uniform, TransformPolicy::kPerConv, false)},
      {"+transform-elim", lower(g, uniform, TransformPolicy::kEliminate, true)},
      {"+global", lower(g, p.assignment(), TransformPolicy::kEliminate, true)},
  };
  std::vector<AblationRow> rows;
  for (const auto& [name, graph] : configs) {
    Executor ex(graph);
    const auto feeds = random_inputs(ex, seed);
    AblationRow row{name, benchmark(ex, pool, feeds, samples)};
    row.speedup = rows.empty() ? 1.0 : rows.front().result.mean_ns / row.result.mean_ns;
    rows.push_back(row);
  }
  return rows;
}

inline int cmd_ablate(const CliOptions& o, std::ostream& out) {
  NEOPLAN_CHECK(!o.schedule_db.empty(), ErrorCode::kInvalidArgument, "--schedule-db is required");
  const Graph g = detail::load_cli_model(o);
  const ScheduleDb db = ScheduleDb::open(o.schedule_db);
  ThreadPool pool = detail::make_pool(o.threads);
  const auto rows = ablate(g, db, pool, o.samples, o.seed, detail::plan_options(o));
  std::ostringstream csv;
  csv << "config,threads,samples,mean_ns,stderr_ns,speedup\n";
  for (const auto& r : rows) {
    csv << r.name << "," << r.result.csv() << "," << std::fixed << std::setprecision(3)
        << r.speedup << "\n";
  }
  out << csv.str();
  if (!o.out.empty()) {
    const std::string s = csv.str();
    detail::write_file(o.out, std::vector<unsigned char>(s.begin(), s.end()));
  }
  return kExitOk;
}

/// Parses and dispatches. Errors go to `err`; the return value is the exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CliOptions o;
  CLI::App app{"neoplan: CNN layout planner and runtime"};
  app.require_subcommand(1);

  auto model_flags = [&](CLI::App* c) {
    c->add_option("--model", o.model, "graph JSON");
    c->add_option("--weights", o.weights, "weights container (default: model path with .npwt)");
    c->add_option("--threads", o.threads, "worker threads (0: one per core)");
    c->add_option("--seed", o.seed, "seed for inputs and tuning");
  };

  auto* gen = app.add_subcommand("gen", "write a synthetic model");
  gen->add_option("--kind", o.kind, "chain | vgg-ish | resnet-block | diamond-concat");
  gen->add_option("--depth", o.depth);
  gen->add_option("--channels", o.channels);
  gen->add_option("--spatial", o.spatial, "input height/width (0: per-kind default)");
  gen->add_option("--seed", o.seed);
  gen->add_option("--out", o.out, "graph JSON path")->required();
  gen->add_option("--weights", o.weights, "weights path (default: out with .npwt)");

  auto* tune = app.add_subcommand("tune", "measure schedules for every conv workload");
  model_flags(tune);
  tune->add_option("--schedule-db", o.schedule_db)->required();
  tune->add_option("--repeats", o.repeats, "timed runs per candidate");
  tune->add_option("--max-candidates", o.max_candidates, "per-workload budget (0: all)");

  auto* planc = app.add_subcommand("plan", "choose a layout scheme for every conv");
  model_flags(planc);
  planc->add_option("--schedule-db", o.schedule_db)->required();
  planc->add_option("--budget-ms", o.budget_ms, "exact search time budget");
  planc->add_option("--state-cap", o.state_cap, "exact search state limit");
  planc->add_option("--solver", o.solver, "auto | dp | pbqp");
  planc->add_option("--plan", o.plan, "write the plan JSON here");
  planc->add_option("--out", o.out, "write the optimized model here");

  auto* run = app.add_subcommand("run", "benchmark a model");
  model_flags(run);
  run->add_option("--plan", o.plan, "apply this plan before running");
  run->add_option("--input", o.input, "raw f32 input (default: seeded random)");
  run->add_option("--samples", o.samples);
  run->add_option("--out", o.out, "raw f32 output dump");
  run->add_flag("--scaling", o.scaling, "sweep thread counts 1, 2, 4, ... up to --threads");

  auto* abl = app.add_subcommand("ablate", "compare optimization levels");
  model_flags(abl);
  abl->add_option("--schedule-db", o.schedule_db)->required();
  abl->add_option("--samples", o.samples);
  abl->add_option("--budget-ms", o.budget_ms);
  abl->add_option("--state-cap", o.state_cap);
  abl->add_option("--solver", o.solver);
  abl->add_option("--out", o.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (*gen) return cmd_gen(o, out);
    if (*tune) return cmd_tune(o, out);
    if (*planc) return cmd_plan(o, out);
    if (*run) return cmd_run(o, out);
    if (*abl) return cmd_ablate(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}

}  // namespace neoplan
