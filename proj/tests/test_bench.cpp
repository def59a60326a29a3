/*
 * Copyright 2026 The fixpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "fixpt/bench.hpp"
#include "fixpt/errors.hpp"

using namespace fixpt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Trace make_trace(std::string name, std::vector<double> times, std::vector<double> residuals) {
  Trace t{std::move(name), {}};
  for (std::size_t i = 0; i < times.size(); ++i) {
    t.records.push_back({i, residuals[i], times[i], i + 1});
  }
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fixpt_test_bench_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string config_error(const std::string& text) {
  try {
    BenchConfig::from_json(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

const char* kSmallConfig = R"({
  "problem": {"kind": "linear_contraction", "d": 20, "rho": 0.9, "seed": 1},
  "solvers": [
    {"name": "fwd", "kind": "forward", "tol": 1e-6},
    {"name": "aa", "kind": "anderson", "m": 5, "lambda": 1e-10, "tol": 1e-6}
  ],
  "repetitions": 3,
  "tolerances": [1e-2, 1e-4]
})";

}  // namespace

TEST_CASE("trace CSV round trip") {
  const Trace t = make_trace("x", {0.0, 0.001, 0.0025}, {1.0, 0.123456789012345, 3.5e-9});
  const std::string csv = trace_to_csv(t);
  CHECK(csv.rfind("k,fevals,residual,elapsed_seconds\n", 0) == 0);
  const Trace back = trace_from_csv(csv, "x");
  REQUIRE(back.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records[i].k == i);
    CHECK(back.records[i].fevals == i + 1);
    CHECK(back.records[i].residual == doctest::Approx(t.records[i].residual).epsilon(1e-12));
    CHECK(back.records[i].elapsed_seconds == doctest::Approx(t.records[i].elapsed_seconds).epsilon(1e-9));
  }
  CHECK(trace_to_csv(back) == csv);

  const fs::path dir = scratch("csv");
  write_trace_csv(dir / "run_a.csv", t);
  CHECK(read_trace_csv(dir / "run_a.csv").name == "run_a");
  CHECK_THROWS_AS(read_trace_csv(dir / "missing.csv"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("trace CSV parse errors carry line numbers") {
  auto err = [](const std::string& text) {
    try {
      trace_from_csv(text, "t");
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string head = "k,fevals,residual,elapsed_seconds\n";
  CHECK(err("") .find("line 1") != std::string::npos);
  CHECK(err("a,b,c\n").find("line 1") != std::string::npos);
  CHECK(err(head + "0,1,0.5,0.0\n0,2,abc,0.1\n").find("line 3") != std::string::npos);
  CHECK(err(head + "0,1,0.5\n").find("line 2") != std::string::npos);
  CHECK(err(head + "0,1,-0.5,0.0\n").find("line 2") != std::string::npos);
  CHECK(err(head + "0,1,0.5,0.2\n1,2,0.4,0.1\n").find("line 3") != std::string::npos);
  CHECK(err(head + "0,1,0.5,0.2\n1,2,0.4,0.1\n").rfind("t: ", 0) == 0);
  CHECK(trace_from_csv(head, "t").records.empty());
}

TEST_CASE("residual_at_time interpolates log-linearly and clamps") {
  const Trace t = make_trace("t", {1.0, 3.0}, {1e-2, 1e-6});
  CHECK(residual_at_time(t, 1.0) == 1e-2);
  CHECK(residual_at_time(t, 3.0) == 1e-6);
  CHECK(residual_at_time(t, 2.0) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(residual_at_time(t, 0.0) == 1e-2);
  CHECK(residual_at_time(t, 9.0) == 1e-6);
  CHECK(residual_at_time(make_trace("z", {0.0, 1.0}, {1.0, 0.0}), 1.0) > 0.0);
  CHECK_THROWS_AS(residual_at_time(Trace{"e", {}}, 0.0), InvalidArgument);
}

TEST_CASE("crossover examples") {
  SUBCASE("anderson starts behind and then overtakes") {
    const Trace f = make_trace("f", {1, 2, 3}, {0.9, 0.8, 0.7});
    const Trace a = make_trace("a", {1, 2, 3}, {1.0, 0.6, 0.3});
    const CrossoverReport r = detect_crossover(f, a);
    REQUIRE(r.crossover_time_seconds.has_value());
    CHECK(*r.crossover_time_seconds == 2.0);
    CHECK(*r.mixing_penalty_ratio == 1.0 / 0.9);
  }
  SUBCASE("identical traces cross at the first sample") {
    const Trace f = make_trace("f", {0.5, 1, 2}, {1.0, 0.5, 0.25});
    const CrossoverReport r = detect_crossover(f, f);
    CHECK(*r.crossover_time_seconds == 0.5);
    CHECK(*r.mixing_penalty_ratio == 1.0);
  }
  SUBCASE("anderson always worse") {
    const Trace f = make_trace("f", {0, 1, 2}, {0.5, 0.05, 0.005});
    const Trace a = make_trace("a", {0, 1, 2}, {1.0, 0.1, 0.01});
    const CrossoverReport r = detect_crossover(f, a);
    CHECK_FALSE(r.crossover_time_seconds.has_value());
    CHECK_FALSE(r.mixing_penalty_ratio.has_value());
  }
  SUBCASE("interpolated times from the other trace") {
    const Trace f = make_trace("f", {0, 1, 2, 3}, {1.0, 0.5, 0.25, 0.125});
    const Trace a = make_trace("a", {0, 1.5, 3}, {1.0, 0.8, 0.01});
    const CrossoverReport r = detect_crossover(f, a);
    // at t=2 anderson sits at exp(log 0.8 + (log 0.01 - log 0.8) / 3) ~ 0.185 < 0.25
    CHECK(*r.crossover_time_seconds == 2.0);
    CHECK(*r.mixing_penalty_ratio == doctest::Approx(0.8 / residual_at_time(f, 1.5)).epsilon(1e-14));
  }
  SUBCASE("disjoint time ranges") {
    const Trace f = make_trace("f", {0, 1}, {1.0, 0.1});
    const Trace a = make_trace("a", {2, 3}, {0.01, 0.001});
    CHECK_FALSE(detect_crossover(f, a).crossover_time_seconds.has_value());
  }
  CHECK_THROWS_AS(detect_crossover(Trace{"f", {}}, make_trace("a", {0}, {1})), InvalidArgument);
}

TEST_CASE("crossover property on random traces") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> step(0.01, 1.0);
  std::uniform_real_distribution<double> decay(0.2, 1.05);
  for (int trial = 0; trial < 300; ++trial) {
    auto random_trace = [&](const char* name) {
      Trace t{name, {}};
      double time = 0.0, r = 1.0;
      const std::size_t n = 2 + rng() % 20;
      for (std::size_t i = 0; i < n; ++i) {
        t.records.push_back({i, r, time, i + 1});
        time += step(rng);
        r *= decay(rng);
      }
      return t;
    };
    const Trace f = random_trace("f");
    const Trace a = random_trace("a");
    const CrossoverReport rep = detect_crossover(f, a);
    const double hi = std::min(f.records.back().elapsed_seconds, a.records.back().elapsed_seconds);
    std::set<double> ts;
    for (const Trace* t : {&f, &a})
      for (const auto& r : t->records)
        if (r.elapsed_seconds <= hi) ts.insert(r.elapsed_seconds);
    const double end_ratio = residual_at_time(a, hi) / residual_at_time(f, hi);
    CHECK(rep.crossover_time_seconds.has_value() == (end_ratio <= 1.0));
    if (!rep.crossover_time_seconds) continue;
    double worst_before = 1.0;
    bool prev_above = false;
    for (double t : ts) {
      const double ratio = residual_at_time(a, t) / residual_at_time(f, t);
      if (t >= *rep.crossover_time_seconds) {
        CHECK(ratio <= 1.0);
      } else {
        worst_before = std::max(worst_before, ratio);
        prev_above = ratio > 1.0;
      }
    }
    if (*rep.crossover_time_seconds > 0.0) CHECK(prev_above);
    CHECK(*rep.mixing_penalty_ratio == worst_before);
  }
}

TEST_CASE("speedup examples") {
  const Trace a = make_trace("a", {0.0, 0.5, 1.0, 1.5}, {1.0, 0.1, 0.01, 0.001});
  CHECK(speedup(a, a, 1e-2) == 1.0);
  Trace slow = a;
  slow.name = "slow";
  for (auto& r : slow.records) r.elapsed_seconds *= 2.0;
  CHECK(speedup(a, slow, 0.05) == 2.0);
  CHECK(speedup(slow, a, 0.05) == 0.5);
  CHECK(*time_to_tol(a, 0.05) == doctest::Approx(0.5 + 0.5 * std::log10(2.0)).epsilon(1e-12));
  CHECK(*time_to_tol(a, 2.0) == 0.0);
  CHECK(*time_to_tol(a, 0.05, TraceAxis::Fevals) == doctest::Approx(2.0 + std::log10(2.0)).epsilon(1e-12));
  CHECK_FALSE(time_to_tol(a, 1e-4).has_value());
  try {
    speedup(a, slow, 1e-5);
    FAIL("expected NotReached");
  } catch (const NotReached& e) {
    CHECK(std::string(e.what()).find("'a'") != std::string::npos);
  }
  CHECK_THROWS_AS(time_to_tol(a, 0.0), InvalidArgument);
}

TEST_CASE("plot_svg structure") {
  const Trace f = make_trace("fwd", {0, 1, 2, 3}, {1.0, 0.5, 0.25, 0.125});
  const Trace a = make_trace("aa", {0, 1, 2, 3}, {1.0, 0.8, 0.1, 0.01});
  const std::string svg = plot_svg({f, a}, detect_crossover(f, a));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(count(svg, "class=\"series\"") == 4);
  CHECK(count(svg, "data-name=\"fwd\"") == 2);
  CHECK(count(svg, "data-panel=\"time\"") == 2);
  CHECK(count(svg, "class=\"crossover\"") == 1);
  CHECK(svg.find("data-time=\"2\"") != std::string::npos);
  CHECK(svg.find("class=\"legend\"") != std::string::npos);
  const std::regex poly("<polyline[^>]*data-name=\"aa\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, poly));
  const std::string pts = m[1];
  CHECK(std::count(pts.begin(), pts.end(), ',') == 4);

  const std::string bare = plot_svg({f});
  CHECK(count(bare, "class=\"series\"") == 2);
  CHECK(bare.find("class=\"crossover\"") == std::string::npos);
}

TEST_CASE("plot of a seeded run has the frozen structure") {
  const fs::path dir = scratch("golden");
  const BenchConfig cfg = BenchConfig::from_json(R"({
    "problem": {"kind": "linear_contraction", "d": 50, "rho": 0.9, "seed": 0},
    "solvers": [{"kind": "forward"}, {"kind": "anderson"}]
  })", dir);
  const BenchResult r = run_bench(cfg);
  const std::string svg = slurp(dir / "out" / "plot.svg");
  CHECK(count(svg, "class=\"series\"") == 4);
  CHECK(count(svg, "class=\"crossover\"") == 1);
  // frozen from the first run of this config
  const std::size_t expected_points[] = {21, 7};
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r.solvers[i].trace->records.size() == expected_points[i]);
    const std::regex poly("<polyline[^>]*data-name=\"" + r.solvers[i].name +
                          "\"[^>]*data-panel=\"iteration\"[^>]*points=\"([^\"]*)\"");
    std::smatch m;
    REQUIRE(std::regex_search(svg, m, poly));
    const std::string pts = m[1];
    CHECK(static_cast<std::size_t>(std::count(pts.begin(), pts.end(), ',')) == expected_points[i]);
  }
  fs::remove_all(dir);
}

TEST_CASE("config parsing") {
  const BenchConfig c = BenchConfig::from_json(kSmallConfig, "/base");
  CHECK(c.problem.kind == "linear_contraction");
  REQUIRE(c.solvers.size() == 2);
  CHECK(c.solvers[0].name == "fwd");
  CHECK(c.solvers[1].kind == SolverKind::Anderson);
  CHECK(c.solvers[1].cfg.lambda == 1e-10);
  CHECK(c.solvers[0].cfg.lambda == 1e-5);
  CHECK(c.repetitions == 3);
  CHECK(c.tolerances == std::vector<double>{1e-2, 1e-4});
  CHECK(c.resolved_output_dir() == fs::path("/base/out"));
  const BenchConfig again = BenchConfig::from_json(c.to_json(), "/base");
  CHECK(again.to_json() == c.to_json());
}

TEST_CASE("config errors report the field and line") {
  const std::string missing_kind = R"({
  "problem": {"kind": "deq", "d": 4, "seed": 0},
  "solvers": [
    {"name": "a"}
  ]
})";
  const std::string e1 = config_error(missing_kind);
  CHECK(e1.find("solvers[0].kind") != std::string::npos);
  CHECK(e1.find("line 4") != std::string::npos);

  const std::string unknown = R"({
  "problem": {"kind": "deq", "d": 4, "seed": 0},
  "solvers": [{"kind": "forward"}],
  "colour": "red"
})";
  const std::string e2 = config_error(unknown);
  CHECK(e2.find("colour") != std::string::npos);
  CHECK(e2.find("line 4") != std::string::npos);

  const std::string bad_beta = R"({
  "problem": {"kind": "deq", "d": 4, "seed": 0},
  "solvers": [
    {"kind": "forward"},
    {"kind": "anderson",
     "beta": 1.5}
  ]
})";
  const std::string e3 = config_error(bad_beta);
  CHECK(e3.find("solvers[1].beta") != std::string::npos);
  CHECK(e3.find("line 6") != std::string::npos);

  CHECK(config_error(R"({"problem": {"kind": "deq", "d": 4, "seed": 0}, "solvers": [{"kind": "forward"}, {"kind": "forward"}]})")
            .find("duplicate") != std::string::npos);
  CHECK(config_error(R"({"problem": {"kind": "deq", "d": 4}, "solvers": [{"kind": "forward"}]})")
            .find("problem.seed") != std::string::npos);
  CHECK(config_error(R"({"problem": {"kind": "deq", "d": 4, "seed": 0}, "solvers": []})")
            .find("solvers") != std::string::npos);
  CHECK(config_error(R"({"problem": {"kind": "deq", "d": 4, "seed": 0}, "solvers": [{"kind": "forward", "name": "a/b"}]})")
            .find("solvers[0].name") != std::string::npos);
  CHECK_THROWS_AS(BenchConfig::from_json("{\n\"problem\": \n"), ParseError);
  CHECK(config_error("{\n\"problem\": \n").find("line") != std::string::npos);
  CHECK_THROWS_AS(BenchConfig::load("/nonexistent/fixpt.json"), IoError);
}

TEST_CASE("run_bench writes traces, plot and summary") {
  const fs::path dir = scratch("run");
  const BenchConfig cfg = BenchConfig::from_json(kSmallConfig, dir);
  const BenchResult r = run_bench(cfg);
  CHECK_FALSE(r.any_diverged);
  REQUIRE(r.solvers.size() == 2);
  for (const char* name : {"fwd", "aa"}) {
    for (int rep = 1; rep <= 3; ++rep) {
      CHECK(fs::exists(dir / "out" / (std::string(name) + "_rep" + std::to_string(rep) + ".csv")));
    }
    CHECK(fs::exists(dir / "out" / (std::string(name) + ".csv")));
  }
  CHECK(fs::exists(dir / "out" / "plot.svg"));
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  CHECK(s.at("timing") == "serial");
  CHECK(s.at("solvers").size() == 2);
  CHECK(s.at("solvers")[0].at("status") == "converged");
  CHECK(s.at("crossover").at("forward") == "fwd");
  CHECK(s.at("crossover").at("speedup_to_tol").size() == 2);
  CHECK(s == json::parse(r.summary_json));
  REQUIRE(r.crossover.has_value());
  CHECK(r.crossover->speedup_to_tol.size() == 2);
  CHECK(r.solvers[1].fevals < r.solvers[0].fevals);

  // residual columns do not depend on the run
  const BenchResult again = run_bench(cfg, RunOptions{true, dir / "par"});
  const json sp = json::parse(slurp(dir / "par" / "summary.json"));
  CHECK(sp.at("timing") == "parallel");
  for (std::size_t i = 0; i < 2; ++i) {
    const Trace& x = *r.solvers[i].trace;
    const Trace& y = *again.solvers[i].trace;
    REQUIRE(x.records.size() == y.records.size());
    for (std::size_t k = 0; k < x.records.size(); ++k) CHECK(x.records[k].residual == y.records[k].residual);
  }
  const Trace rep1 = read_trace_csv(dir / "out" / "aa_rep1.csv");
  const Trace rep2 = read_trace_csv(dir / "out" / "aa_rep2.csv");
  REQUIRE(rep1.records.size() == rep2.records.size());
  for (std::size_t k = 0; k < rep1.records.size(); ++k) CHECK(rep1.records[k].residual == rep2.records[k].residual);
  fs::remove_all(dir);
}

TEST_CASE("run_bench records non-convergence") {
  const fs::path dir = scratch("maxiter");
  const BenchConfig cfg = BenchConfig::from_json(R"({
    "problem": {"kind": "linear_contraction", "d": 10, "rho": 0.99, "seed": 0},
    "solvers": [{"kind": "forward", "tol": 1e-12, "max_iter": 5}]
  })", dir);
  const BenchResult r = run_bench(cfg);
  CHECK(r.solvers[0].status == "max_iter");
  CHECK_FALSE(r.any_diverged);
  CHECK_FALSE(r.crossover.has_value());
  fs::remove_all(dir);
}
