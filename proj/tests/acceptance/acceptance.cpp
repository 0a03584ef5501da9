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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "support/fixtures.hpp"

namespace neoplan {
namespace {

using Clock = std::chrono::steady_clock;
namespace t = neoplan::testing;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool warn_only = false;  // machine-gated check that did not apply
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Shared tuning state so each workload is measured once per run.
struct Tuning {
  ScheduleDb db;
  ThreadPool pool{ThreadPool::Options{0, true, false}};
  SearchOptions search;
  Tuning() {
    search.measure = {3, 1, 7};
    search.budget = 24;
  }

  SchemePlan plan_for(const Graph& simplified) {
    for (int id : conv_ids(simplified)) {
      local_search(conv_workload(simplified, simplified.node(id)), db, pool, search);
    }
    TransformCostModel cost(&pool, 5);
    return plan(simplified, db, cost.fn());
  }
};

Tuning& tuning() {
  static Tuning t;
  return t;
}

// ---------------------------------------------------------------------------

Outcome conv_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20261);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int kernels[] = {1, 3, 5, 7};
  const int tiles[] = {1, 2, 3, 4, 8, 16, 32};
  ThreadPool pool(1);
  double worst = 0.0;
  int pairs = 0;
  std::string worst_case;
  while (pairs < 200) {
    ConvWorkload wl;
    wl.in_channel = uni(1, 64);
    wl.out_channel = uni(1, 64);
    wl.in_h = uni(4, 56);
    wl.in_w = uni(4, 56);
    wl.kernel_h = kernels[uni(0, 3)];
    wl.kernel_w = kernels[uni(0, 3)];
    wl.stride = uni(1, 2);
    wl.pad = uni(0, std::max(wl.kernel_h, wl.kernel_w) / 2);
    if (wl.in_h + 2 * wl.pad < wl.kernel_h || wl.in_w + 2 * wl.pad < wl.kernel_w) continue;
    const auto ics = factors_descending(wl.in_channel);
    const auto ocs = factors_descending(wl.out_channel);
    ConvSchedule s;
    s.ic_bn = ics[static_cast<std::size_t>(uni(0, static_cast<int>(ics.size()) - 1))];
    s.oc_bn = ocs[static_cast<std::size_t>(uni(0, static_cast<int>(ocs.size()) - 1))];
    s.reg_n = tiles[uni(0, 6)];
    s.unroll_ker = uni(0, 1) == 1;

    const float bound = std::sqrt(3.0f / static_cast<float>(wl.in_channel * wl.kernel_h * wl.kernel_w));
    Tensor x = random_tensor({1, wl.in_channel, wl.in_h, wl.in_w}, Layout::nchw(), rng());
    Tensor w = random_tensor({wl.out_channel, wl.in_channel, wl.kernel_h, wl.kernel_w},
                             Layout::kcrs(), rng(), -bound, bound);
    Tensor bias = random_tensor({wl.out_channel}, Layout::plain(), rng());
    Epilogue epi;
    epi.bias = bias.data();
    epi.relu = uni(0, 1) == 1;
    Tensor want = pack_data(conv_reference(x, w, wl, epi), s.oc_bn);
    Tensor got = conv_blocked(pack_data(x, s.ic_bn), pack_weights(w, s.ic_bn, s.oc_bn), wl, s, epi, pool);
    const double err = max_rel_error(got, want);
    if (err > worst || worst_case.empty()) {
      worst = std::max(worst, err);
      worst_case = wl.str() + " " + s.str();
    }
    ++pairs;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && secs < 120,
          std::to_string(pairs) + " pairs, max rel err " + fmt("%.2e", worst) + " (tol 1e-5), worst " +
              worst_case + ", " + fmt("%.1f", secs) + " s (limit 120)"};
}

Outcome layout_round_trips() {
  const auto t0 = Clock::now();
  long checks = 0, failures = 0;
  auto check = [&](bool ok) {
    ++checks;
    failures += ok ? 0 : 1;
  };
  const std::vector<std::array<int64_t, 3>> spatial = {{1, 1, 1}, {1, 3, 5}, {2, 4, 4}, {1, 7, 2}};
  for (int64_t c = 1; c <= 32; ++c) {
    const auto fs = factors_descending(static_cast<int>(c));
    for (const auto& [n, h, w] : spatial) {
      Tensor x = random_tensor({n, c, h, w}, Layout::nchw(), static_cast<uint64_t>(c * 100 + h));
      for (int a : fs) {
        Tensor pa = pack_data(x, a);
        check(pa.bit_equal(t::oracle_pack(x, a)));
        check(unpack_data(pa).bit_equal(x));
        for (int b : fs) {
          Tensor r = retile_data(pa, b);
          check(r.bit_equal(pack_data(x, b)));
          check(unpack_data(r).bit_equal(x));
          check(retile_data(r, a).bit_equal(pa));
        }
      }
    }
  }
  // Weights: every (K, C) up to 32 and every factor pair.
  for (int k = 1; k <= 32; ++k)
    for (int c = 1; c <= 32; ++c) {
      Tensor w = random_tensor({k, c, 3, 1}, Layout::kcrs(), static_cast<uint64_t>(k * 64 + c));
      for (int x : factors_descending(c))
        for (int y : factors_descending(k)) {
          Tensor p = pack_weights(w, x, y);
          check(unpack_weights(p).bit_equal(w));
          if ((k + c) % 8 == 0) check(p.bit_equal(t::oracle_pack_weights(w, x, y)));
        }
    }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 30,
          std::to_string(checks) + " bitwise identities, " + std::to_string(failures) + " failures, " +
              fmt("%.1f", secs) + " s (limit 30)"};
}

Outcome semantic_preservation() {
  const auto t0 = Clock::now();
  ThreadPool pool(1);
  double worst = 0.0;
  std::string detail;
  for (const auto& kind : kModelKinds) {
    const Graph g = gen_model(ModelParams{std::string(kind), 3, 16, 0, 11});
    const Graph s = simplify(g);
    const SchemePlan p = tuning().plan_for(s);
    const Graph opt = lower(s, p.assignment());
    Executor plain(g), fast(opt);
    double kind_worst = 0.0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      const auto feeds = random_inputs(plain, seed * 31);
      kind_worst = std::max(kind_worst, t::max_error(fast.run(feeds, pool), plain.run(feeds, pool)));
    }
    worst = std::max(worst, kind_worst);
    detail += std::string(kind) + "=" + fmt("%.1e", kind_worst) + "(" + p.solver + ", " +
              std::to_string(count_transforms(opt)) + " transforms) ";
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 120,
          detail + "max " + fmt("%.2e", worst) + " (tol 1e-4), " + fmt("%.1f", secs) + " s (limit 120)"};
}

Outcome dp_exactness() {
  const auto t0 = Clock::now();
  int matched = 0;
  std::size_t max_convs = 0;
  for (uint64_t seed = 1; seed <= 50; ++seed) {
    const auto pc = t::random_planning_case(5000 + seed);
    const LayoutProblem p = build_problem(pc.graph, pc.cands, pc.cost);
    max_convs = std::max(max_convs, p.size());
    matched += dp_plan(p).total == t::brute_force_min(pc) ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {matched == 50 && secs < 60,
          std::to_string(matched) + "/50 graphs equal the brute-force minimum (up to " +
              std::to_string(max_convs) + " convs), " + fmt("%.1f", secs) + " s (limit 60)"};
}

Outcome pbqp_quality() {
  const auto t0 = Clock::now();
  int good = 0, chains = 0, chain_exact = 0, rn_used = 0;
  double worst = 1.0;
  for (int i = 0; i < 100; ++i) {
    const bool chain = i % 5 == 0;
    const auto pc = t::random_planning_case(9000 + static_cast<uint64_t>(i), 12, 8, chain);
    const LayoutProblem p = build_problem(pc.graph, pc.cands, pc.cost);
    const Cost dp = dp_plan(p).total;
    const PbqpInstance inst = pbqp_reduce(p);
    const PbqpSolution s = pbqp_solve(inst);
    const Cost pb = p.evaluate({s.selection.begin(), s.selection.begin() + inst.num_vars});
    const double ratio = static_cast<double>(dp.ns) / static_cast<double>(pb.ns);
    worst = std::min(worst, ratio);
    good += ratio >= 0.88 ? 1 : 0;
    rn_used += s.rn > 0 ? 1 : 0;
    if (chain) {
      ++chains;
      chain_exact += pb == dp ? 1 : 0;
    }
  }
  const double secs = seconds_since(t0);
  return {good >= 95 && chain_exact == chains && secs < 60,
          std::to_string(good) + "/100 with dp/pbqp >= 0.88 (worst " + fmt("%.3f", worst) + "), " +
              std::to_string(chain_exact) + "/" + std::to_string(chains) + " chains exact, " +
              std::to_string(rn_used) + " needed RN, " + fmt("%.1f", secs) + " s (limit 60)"};
}

Outcome transform_minimality() {
  const auto t0 = Clock::now();
  const Graph chain = simplify(gen_model(ModelParams{"chain", 10, 16, 14, 3}));
  const int uniform = count_transforms(lower(chain, uniform_assignment(chain)));
  int mixed_ok = 0, mixed_total = 0, violations = 0;
  std::mt19937 rng(77);
  std::vector<Graph> graphs = {chain};
  for (const auto& kind : kModelKinds) graphs.push_back(simplify(gen_model(std::string(kind), 3, 16, 1)));
  for (const Graph& g : graphs) {
    for (int trial = 0; trial < 10; ++trial) {
      LayoutAssignment a;
      for (int id : conv_ids(g)) {
        const auto wl = conv_workload(g, g.node(id));
        const auto ics = factors_descending(wl.in_channel);
        const auto ocs = factors_descending(wl.out_channel);
        a.convs[id] = {ics[rng() % ics.size()], ocs[rng() % ocs.size()], 4, true};
      }
      const Graph lowered = lower(g, a);
      ++mixed_total;
      mixed_ok += count_transforms(lowered) == t::mismatched_edges(g, a) ? 1 : 0;
      violations += t::layout_violations(lowered);
    }
  }
  const double secs = seconds_since(t0);
  return {uniform == 2 && mixed_ok == mixed_total && violations == 0 && secs < 5,
          "uniform 10-conv chain: " + std::to_string(uniform) + " transforms (want 2); mixed plans: " +
              std::to_string(mixed_ok) + "/" + std::to_string(mixed_total) +
              " match the mismatched-edge count, " + std::to_string(violations) +
              " layout violations, " + fmt("%.2f", secs) + " s (limit 5)"};
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const int max_threads = physical_core_count();
  // Oversubscribed lanes still split the work, so small hosts also try 4.
  std::vector<int> counts = {1, 2, std::max(max_threads, 4)};
  int identical = 0, total = 0;
  for (const auto& kind : kModelKinds) {
    const Graph g = gen_model(std::string(kind), 3, 16, 21);
    const Graph s = simplify(g);
    for (const Graph& variant : {g, lower(s, tuning().plan_for(s).assignment())}) {
      Executor ex(variant);
      const auto feeds = random_inputs(ex, 5);
      std::vector<Tensor> first;
      for (int n : counts) {
        ThreadPool pool(t::lanes(n));
        auto out = ex.run(feeds, pool);
        if (first.empty()) {
          first = std::move(out);
          continue;
        }
        ++total;
        identical += t::bitwise_equal(first, out) ? 1 : 0;
      }
    }
  }
  std::string list;
  for (int n : counts) list += (list.empty() ? "" : ",") + std::to_string(n);
  const double secs = seconds_since(t0);
  return {identical == total && secs < 60,
          std::to_string(identical) + "/" + std::to_string(total) +
              " comparisons bitwise identical across {" + list + "} threads, " + fmt("%.1f", secs) +
              " s (limit 60)"};
}

Outcome directional_performance() {
  const auto t0 = Clock::now();
  const int lanes = vector_lane_width();
  ThreadPool& pool = tuning().pool;

  // (a) best tuned blocked schedule vs the plain NCHW loop nest.
  const ConvWorkload wl{64, 64, 56, 56, 3, 3, 1, 1};
  Tensor x = random_tensor({1, 64, 56, 56}, Layout::nchw(), 1);
  Tensor w = random_tensor({64, 64, 3, 3}, Layout::kcrs(), 2, -0.07f, 0.07f);
  Tensor ref_out(conv_output_shape(1, wl, Layout::nchw()), Layout::nchw());
  std::vector<double> ref_times;
  conv_nchw_into(x.view(), w.view(), wl, {}, ref_out.mutable_view(), pool);
  for (int i = 0; i < 5; ++i) {
    const auto a = Clock::now();
    conv_nchw_into(x.view(), w.view(), wl, {}, ref_out.mutable_view(), pool);
    ref_times.push_back(std::chrono::duration<double, std::nano>(Clock::now() - a).count());
  }
  const double ref_ns = mean_and_stderr(ref_times).first;
  const auto tuned = local_search(wl, tuning().db, pool, tuning().search);
  MeasureOptions mo;
  mo.repeats = 10;
  const MeasuredScheme best = measure(wl, tuned.front().schedule, pool, mo);
  const double conv_speedup = ref_ns / best.mean_ns;

  // (b) 10-conv chain: transforms around every conv (weights packed at run
  // time) vs transforms only at the boundaries (weights packed ahead).
  const Graph chain = simplify(gen_model(ModelParams{"chain", 10, 16, 28, 4}));
  const LayoutAssignment uniform = uniform_assignment(chain);
  Executor per_conv(lower(chain, uniform, TransformPolicy::kPerConv, false));
  Executor eliminated(lower(chain, uniform, TransformPolicy::kEliminate, true));
  const auto feeds = random_inputs(per_conv, 3);
  double per_ns = 0, elim_ns = 0;
  // Interleave the two configurations so drift hits both alike.
  for (int round = 0; round < 5; ++round) {
    per_ns += benchmark(per_conv, pool, feeds, 40).mean_ns;
    elim_ns += benchmark(eliminated, pool, feeds, 40).mean_ns;
  }
  const double elim_speedup = per_ns / elim_ns;

  const double secs = seconds_since(t0);
  const std::string detail =
      "conv 64x64x56x56 3x3: reference " + fmt("%.2f", ref_ns / 1e6) + " ms, tuned " +
      tuned.front().schedule.str() + " " + fmt("%.2f", best.mean_ns / 1e6) + " ms, speedup " +
      fmt("%.2f", conv_speedup) + "x (want >= 2); 10-conv chain transform elimination " +
      fmt("%.3f", elim_speedup) + "x (want >= 1.1); lane width " + std::to_string(lanes) + ", " +
      fmt("%.1f", secs) + " s (limit 180)";
  const bool ok = conv_speedup >= 2.0 && elim_speedup >= 1.1 && secs < 180;
  if (lanes < 8) return {true, "vector width below 8, reported only: " + detail, !ok};
  return {ok, detail};
}

Outcome scalability() {
  const auto t0 = Clock::now();
  const Graph g = gen_model(ModelParams{"resnet-block", 2, 32, 16, 8});
  const Graph s = simplify(g);
  Executor ex(lower(s, uniform_assignment(s)));
  const auto feeds = random_inputs(ex, 1);
  const auto counts = scaling_thread_counts(physical_core_count());
  std::ostringstream csv;
  csv << kBenchCsvHeader << "\n";
  std::vector<Tensor> first;
  bool deterministic = true, monotone = true;
  double prev_throughput = 0.0;
  for (int n : counts) {
    ThreadPool pool(ThreadPool::Options{n, true, false});
    auto out = ex.run(feeds, pool);
    if (first.empty()) {
      first = std::move(out);
    } else {
      deterministic = deterministic && t::bitwise_equal(first, out);
    }
    const BenchResult r = benchmark(ex, pool, feeds, 200);
    csv << r.csv() << "\n";
    const double throughput = 1e9 / r.mean_ns;
    if (n <= 4 && prev_throughput > 0 && throughput < 0.9 * prev_throughput) monotone = false;
    prev_throughput = throughput;
  }
  std::ofstream("scalability.csv") << csv.str();
  std::cout << csv.str();
  std::string list;
  for (int n : counts) list += (list.empty() ? "" : ",") + std::to_string(n);
  const double secs = seconds_since(t0);
  return {deterministic && monotone && secs < 120,
          "threads {" + list + "} written to scalability.csv, deterministic=" +
              (deterministic ? "yes" : "no") + ", monotone within 10%=" + (monotone ? "yes" : "no") +
              ", " + fmt("%.1f", secs) + " s (limit 120)"};
}

}  // namespace
}  // namespace neoplan

int main() {
  using namespace neoplan;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"conv oracle equivalence", conv_oracle},
      {"layout round-trips", layout_round_trips},
      {"semantic preservation end-to-end", semantic_preservation},
      {"DP exactness", dp_exactness},
      {"PBQP quality", pbqp_quality},
      {"transform minimality", transform_minimality},
      {"determinism under parallelism", determinism},
      {"directional performance", directional_performance},
      {"scalability report", scalability},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const char* tag = o.pass ? (o.warn_only ? "WARN" : "PASS") : "FAIL";
    std::cout << "[" << tag << "] criterion " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
