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

#include <stdio.h>
#include <string.h>

#include "fixpt/fixpt.h"

int main(void) {
  fixpt_problem* p = NULL;
  fixpt_trace* t = NULL;
  fixpt_anderson_config cfg;
  double z[4];
  fixpt_anderson_config_default(&cfg);
  cfg.tol = 1e-8;
  if (fixpt_problem_from_json("{\"kind\": \"linear_contraction\", \"d\": 4, \"rho\": 0.5, \"seed\": 1}",
                              &p) != FIXPT_OK) {
    fprintf(stderr, "problem: %s\n", fixpt_last_error());
    return 1;
  }
  if (fixpt_solve(p, FIXPT_SOLVER_ANDERSON, &cfg, &t) != FIXPT_OK || !fixpt_trace_converged(t)) {
    fprintf(stderr, "solve: %s\n", fixpt_last_error());
    return 1;
  }
  if (fixpt_trace_final_state(t, z, 4) != FIXPT_OK) return 1;
  printf("fixpt %s: %zu records, z[0] = %.6f\n", fixpt_version(), fixpt_trace_length(t), z[0]);
  fixpt_trace_free(t);
  fixpt_problem_free(p);
  return strcmp(fixpt_status_string(FIXPT_OK), "ok") == 0 ? 0 : 1;
}
