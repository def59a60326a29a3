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

/* C interface to the fixpt solvers, benchmark harness and training demo.
 *
 * Every call returns a fixpt_status. On failure the message is available from
 * fixpt_last_error() on the same thread until the next failing call. Handles
 * are opaque; release them with the matching *_free function. Strings handed
 * out by the library are released with fixpt_string_free.
 */
#ifndef FIXPT_H
#define FIXPT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FIXPT_API __declspec(dllexport)
#else
#define FIXPT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fixpt_status {
  FIXPT_OK = 0,
  FIXPT_ERR_INVALID_ARGUMENT = 1,
  FIXPT_ERR_PARSE = 2,
  FIXPT_ERR_IO = 3,
  FIXPT_ERR_DIVERGENCE = 4,
  FIXPT_ERR_SINGULAR = 5,
  FIXPT_ERR_NOT_REACHED = 6,
  FIXPT_ERR_INTERNAL = 7
} fixpt_status;

typedef enum fixpt_solver { FIXPT_SOLVER_FORWARD = 0, FIXPT_SOLVER_ANDERSON = 1 } fixpt_solver;

typedef struct fixpt_problem fixpt_problem;
typedef struct fixpt_trace fixpt_trace;

typedef struct fixpt_anderson_config {
  size_t m;
  double lambda;
  double beta;
  double tol;
  size_t max_iter;
} fixpt_anderson_config;

typedef struct fixpt_record {
  size_t k;
  size_t fevals;
  double residual;
  double elapsed_seconds;
} fixpt_record;

typedef struct fixpt_crossover {
  int has_crossover; /* 0: the other fields are unset */
  double crossover_time_seconds;
  double mixing_penalty_ratio;
} fixpt_crossover;

typedef struct fixpt_train_options {
  size_t epochs;
  double lr;
  uint64_t seed;
} fixpt_train_options;

FIXPT_API const char* fixpt_version(void);
FIXPT_API const char* fixpt_status_string(fixpt_status status);
FIXPT_API const char* fixpt_last_error(void);
FIXPT_API void fixpt_string_free(char* s);

/* m=5, lambda=1e-5, beta=1, tol=1e-2, max_iter=1000. */
FIXPT_API void fixpt_anderson_config_default(fixpt_anderson_config* cfg);

/* Problem from a JSON object: {"kind": "linear_contraction"|"simple_deq"|"deq",
 * "d", "seed", "rho", ...}. */
FIXPT_API fixpt_status fixpt_problem_from_json(const char* json, fixpt_problem** out);
FIXPT_API void fixpt_problem_free(fixpt_problem* problem);
FIXPT_API fixpt_status fixpt_problem_dims(const fixpt_problem* problem, size_t* batch,
                                          size_t* dim);

FIXPT_API fixpt_status fixpt_solve(const fixpt_problem* problem, fixpt_solver solver,
                                   const fixpt_anderson_config* cfg, fixpt_trace** out);

FIXPT_API fixpt_status fixpt_trace_read_csv(const char* path, fixpt_trace** out);
FIXPT_API fixpt_status fixpt_trace_write_csv(const fixpt_trace* trace, const char* path);
FIXPT_API void fixpt_trace_free(fixpt_trace* trace);
FIXPT_API size_t fixpt_trace_length(const fixpt_trace* trace);
FIXPT_API fixpt_status fixpt_trace_record(const fixpt_trace* trace, size_t i, fixpt_record* out);
/* 1 when the solve met its tolerance; 0 for traces read from CSV. */
FIXPT_API int fixpt_trace_converged(const fixpt_trace* trace);
/* Copies batch*dim values; n must be at least that. */
FIXPT_API fixpt_status fixpt_trace_final_state(const fixpt_trace* trace, double* out, size_t n);

FIXPT_API fixpt_status fixpt_detect_crossover(const fixpt_trace* forward,
                                              const fixpt_trace* anderson,
                                              fixpt_crossover* out);
/* Time for b to reach tol divided by the time for a. */
FIXPT_API fixpt_status fixpt_speedup(const fixpt_trace* a, const fixpt_trace* b, double tol,
                                     double* out);
/* With exactly two traces the first is taken as the forward baseline and the
 * crossover is marked. */
FIXPT_API fixpt_status fixpt_plot_svg(const fixpt_trace* const* traces, size_t n,
                                      const char* path);

/* Runs a benchmark config. out_dir may be NULL to use the config's. On
 * FIXPT_OK *diverged is set to 1 when any solver diverged. */
FIXPT_API fixpt_status fixpt_bench_run(const char* config_path, const char* out_dir,
                                       int parallel, int* diverged);

/* Trains the DEQ classifier on the seeded two-class blobs (400 points, 8
 * features). opts may be NULL for 200 epochs, lr 0.5, seed 0. *csv receives the
 * per-epoch table and *summary_json the summary; either may be NULL. */
FIXPT_API fixpt_status fixpt_train_demo(fixpt_solver solver, const fixpt_train_options* opts,
                                        char** csv, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* FIXPT_H */
