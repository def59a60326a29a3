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

#include "fixpt/fixpt.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fixpt/anderson.hpp"
#include "fixpt/bench.hpp"
#include "fixpt/errors.hpp"
#include "fixpt/problems.hpp"
#include "fixpt/train.hpp"

struct fixpt_problem {
  fixpt::BenchProblem problem;
};

struct fixpt_trace {
  fixpt::Trace trace;
  bool converged = false;
  fixpt::StateBatch final_state;
};

namespace {

thread_local std::string g_last_error;

fixpt_status fail(fixpt_status s, const char* what) {
  g_last_error = what;
  return s;
}

template <typename F>
fixpt_status guarded(F&& body) {
  try {
    body();
    return FIXPT_OK;
  } catch (const fixpt::InvalidArgument& e) {
    return fail(FIXPT_ERR_INVALID_ARGUMENT, e.what());
  } catch (const fixpt::ParseError& e) {
    return fail(FIXPT_ERR_PARSE, e.what());
  } catch (const fixpt::IoError& e) {
    return fail(FIXPT_ERR_IO, e.what());
  } catch (const fixpt::Divergence& e) {
    return fail(FIXPT_ERR_DIVERGENCE, e.what());
  } catch (const fixpt::SingularSystem& e) {
    return fail(FIXPT_ERR_SINGULAR, e.what());
  } catch (const fixpt::NotReached& e) {
    return fail(FIXPT_ERR_NOT_REACHED, e.what());
  } catch (const std::exception& e) {
    return fail(FIXPT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FIXPT_ERR_INTERNAL, "unknown error");
  }
}

fixpt_status null_arg(const char* name) {
  return fail(FIXPT_ERR_INVALID_ARGUMENT, (std::string(name) + " must not be NULL").c_str());
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

fixpt::AndersonConfig to_cpp(const fixpt_anderson_config* c) {
  fixpt::AndersonConfig cfg;
  if (c != nullptr) {
    cfg.m = c->m;
    cfg.lambda = c->lambda;
    cfg.beta = c->beta;
    cfg.tol = c->tol;
    cfg.max_iter = c->max_iter;
  }
  return cfg;
}

fixpt::SolverKind to_cpp(fixpt_solver s) {
  switch (s) {
    case FIXPT_SOLVER_FORWARD: return fixpt::SolverKind::Forward;
    case FIXPT_SOLVER_ANDERSON: return fixpt::SolverKind::Anderson;
  }
  throw fixpt::InvalidArgument("unknown solver id " + std::to_string(static_cast<int>(s)));
}

}  // namespace

extern "C" {

const char* fixpt_version(void) { return "0.1.0"; }

const char* fixpt_status_string(fixpt_status status) {
  switch (status) {
    case FIXPT_OK: return "ok";
    case FIXPT_ERR_INVALID_ARGUMENT: return "invalid argument";
    case FIXPT_ERR_PARSE: return "parse error";
    case FIXPT_ERR_IO: return "i/o error";
    case FIXPT_ERR_DIVERGENCE: return "divergence";
    case FIXPT_ERR_SINGULAR: return "singular system";
    case FIXPT_ERR_NOT_REACHED: return "tolerance not reached";
    case FIXPT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* fixpt_last_error(void) { return g_last_error.c_str(); }

void fixpt_string_free(char* s) { std::free(s); }

void fixpt_anderson_config_default(fixpt_anderson_config* cfg) {
  if (cfg == nullptr) return;
  const fixpt::AndersonConfig d;
  *cfg = {d.m, d.lambda, d.beta, d.tol, d.max_iter};
}

fixpt_status fixpt_problem_from_json(const char* json, fixpt_problem** out) {
  if (json == nullptr) return null_arg("json");
  if (out == nullptr) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto p = std::make_unique<fixpt_problem>();
    p->problem = fixpt::build_problem(fixpt::ProblemSpec::from_json(json));
    *out = p.release();
  });
}

void fixpt_problem_free(fixpt_problem* problem) { delete problem; }

fixpt_status fixpt_problem_dims(const fixpt_problem* problem, size_t* batch, size_t* dim) {
  if (problem == nullptr) return null_arg("problem");
  if (batch != nullptr) *batch = problem->problem.z0.batch();
  if (dim != nullptr) *dim = problem->problem.z0.dim();
  return FIXPT_OK;
}

fixpt_status fixpt_solve(const fixpt_problem* problem, fixpt_solver solver,
                         const fixpt_anderson_config* cfg, fixpt_trace** out) {
  if (problem == nullptr) return null_arg("problem");
  if (out == nullptr) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    const fixpt::SolverKind kind = to_cpp(solver);
    const fixpt::BenchProblem& p = problem->problem;
    fixpt::SolverTrace t = fixpt::solve(kind, *p.map, p.x, p.z0, to_cpp(cfg));
    auto h = std::make_unique<fixpt_trace>();
    h->trace = fixpt::trace_from_solver(fixpt::to_string(kind), t);
    h->converged = t.converged;
    h->final_state = std::move(t.final_state);
    *out = h.release();
  });
}

fixpt_status fixpt_trace_read_csv(const char* path, fixpt_trace** out) {
  if (path == nullptr) return null_arg("path");
  if (out == nullptr) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    auto h = std::make_unique<fixpt_trace>();
    h->trace = fixpt::read_trace_csv(path);
    *out = h.release();
  });
}

fixpt_status fixpt_trace_write_csv(const fixpt_trace* trace, const char* path) {
  if (trace == nullptr) return null_arg("trace");
  if (path == nullptr) return null_arg("path");
  return guarded([&] { fixpt::write_trace_csv(path, trace->trace); });
}

void fixpt_trace_free(fixpt_trace* trace) { delete trace; }

size_t fixpt_trace_length(const fixpt_trace* trace) {
  return trace == nullptr ? 0 : trace->trace.records.size();
}

fixpt_status fixpt_trace_record(const fixpt_trace* trace, size_t i, fixpt_record* out) {
  if (trace == nullptr) return null_arg("trace");
  if (out == nullptr) return null_arg("out");
  if (i >= trace->trace.records.size()) {
    return fail(FIXPT_ERR_INVALID_ARGUMENT, "record index out of range");
  }
  const fixpt::IterationRecord& r = trace->trace.records[i];
  *out = {r.k, r.fevals, r.residual, r.elapsed_seconds};
  return FIXPT_OK;
}

int fixpt_trace_converged(const fixpt_trace* trace) {
  return trace != nullptr && trace->converged ? 1 : 0;
}

fixpt_status fixpt_trace_final_state(const fixpt_trace* trace, double* out, size_t n) {
  if (trace == nullptr) return null_arg("trace");
  if (out == nullptr) return null_arg("out");
  const std::vector<double>& v = trace->final_state.values();
  if (n < v.size()) return fail(FIXPT_ERR_INVALID_ARGUMENT, "output buffer too small");
  std::copy(v.begin(), v.end(), out);
  return FIXPT_OK;
}

fixpt_status fixpt_detect_crossover(const fixpt_trace* forward, const fixpt_trace* anderson,
                                    fixpt_crossover* out) {
  if (forward == nullptr) return null_arg("forward");
  if (anderson == nullptr) return null_arg("anderson");
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    const fixpt::CrossoverReport r = fixpt::detect_crossover(forward->trace, anderson->trace);
    out->has_crossover = r.crossover_time_seconds.has_value() ? 1 : 0;
    out->crossover_time_seconds = r.crossover_time_seconds.value_or(0.0);
    out->mixing_penalty_ratio = r.mixing_penalty_ratio.value_or(0.0);
  });
}

fixpt_status fixpt_speedup(const fixpt_trace* a, const fixpt_trace* b, double tol, double* out) {
  if (a == nullptr) return null_arg("a");
  if (b == nullptr) return null_arg("b");
  if (out == nullptr) return null_arg("out");
  return guarded([&] { *out = fixpt::speedup(a->trace, b->trace, tol); });
}

fixpt_status fixpt_plot_svg(const fixpt_trace* const* traces, size_t n, const char* path) {
  if (traces == nullptr) return null_arg("traces");
  if (path == nullptr) return null_arg("path");
  return guarded([&] {
    std::vector<fixpt::Trace> ts;
    for (size_t i = 0; i < n; ++i) {
      if (traces[i] == nullptr) throw fixpt::InvalidArgument("traces[" + std::to_string(i) + "] is NULL");
      ts.push_back(traces[i]->trace);
    }
    std::optional<fixpt::CrossoverReport> cr;
    if (ts.size() == 2) cr = fixpt::detect_crossover(ts[0], ts[1]);
    const std::string svg = fixpt::plot_svg(ts, cr);
    std::FILE* f = std::fopen(path, "wb");
    if (f == nullptr) throw fixpt::IoError(std::string("cannot write ") + path);
    const bool ok = std::fwrite(svg.data(), 1, svg.size(), f) == svg.size();
    if (std::fclose(f) != 0 || !ok) throw fixpt::IoError(std::string("failed writing ") + path);
  });
}

fixpt_status fixpt_bench_run(const char* config_path, const char* out_dir, int parallel,
                             int* diverged) {
  if (config_path == nullptr) return null_arg("config_path");
  return guarded([&] {
    const fixpt::BenchConfig cfg = fixpt::BenchConfig::load(config_path);
    fixpt::RunOptions opts;
    opts.parallel = parallel != 0;
    if (out_dir != nullptr) opts.output_dir = out_dir;
    const fixpt::BenchResult r = fixpt::run_bench(cfg, opts);
    if (diverged != nullptr) *diverged = r.any_diverged ? 1 : 0;
  });
}

fixpt_status fixpt_train_demo(fixpt_solver solver, const fixpt_train_options* opts, char** csv,
                              char** summary_json) {
  if (csv != nullptr) *csv = nullptr;
  if (summary_json != nullptr) *summary_json = nullptr;
  return guarded([&] {
    fixpt::TrainOptions to;
    if (opts != nullptr) {
      to.epochs = opts->epochs;
      to.lr = opts->lr;
      to.seed = opts->seed;
    }
    const fixpt::BlobDataset data = fixpt::generate_blobs(400, 8, 2, 2.0, to.seed);
    const fixpt::TrainReport rep = fixpt::train(data, to_cpp(solver), to);
    std::string c = rep.to_csv();
    std::string s = rep.summary_json();
    char* cp = csv != nullptr ? dup_string(c) : nullptr;
    if (summary_json != nullptr) {
      try {
        *summary_json = dup_string(s);
      } catch (...) {
        std::free(cp);
        throw;
      }
    }
    if (csv != nullptr) *csv = cp;
  });
}

}  // extern "C"
