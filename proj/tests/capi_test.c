/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "routelab/routelab.h"

static int failures = 0;

#define EXPECT(cond)                                               \
  do {                                                             \
    if (!(cond)) {                                                 \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                  \
    }                                                              \
  } while (0)

static const char* kSpec =
    "{\"d\": 16, \"n_layers\": 3, \"emergence_layer\": 1, \"seed\": 5,"
    " \"categories\": ["
    "  {\"name\": \"a\", \"kind\": \"political\", \"n_positive\": 8, \"n_control\": 8},"
    "  {\"name\": \"b\", \"kind\": \"political\", \"n_positive\": 8, \"n_control\": 8}]}";

static void test_errors(void) {
  rl_set* set = NULL;
  EXPECT(rl_set_read("/nonexistent/set.rtl", &set) == RL_ERR_IO);
  EXPECT(set == NULL);
  EXPECT(strlen(rl_last_error()) > 0);
  EXPECT(strcmp(rl_status_name(RL_ERR_LEAKAGE), "leakage") == 0);
  EXPECT(rl_set_info(NULL, 0, NULL) == RL_ERR_INVALID_ARGUMENT);
  EXPECT(rl_synth("{not json", &set, NULL, NULL) == RL_ERR_INVALID_ARGUMENT);
  EXPECT(rl_synth("{\"d\": 16, \"bogus\": 1}", &set, NULL, NULL) == RL_ERR_INVALID_ARGUMENT);
}

static void test_pipeline(void) {
  rl_set* set = NULL;
  rl_oracle* oracle = NULL;
  EXPECT(rl_synth(kSpec, &set, &oracle, NULL) == RL_OK);
  if (!set || !oracle) return;

  const float* data = NULL;
  size_t n = 0, d = 0;
  EXPECT(rl_set_layer(set, 2, &data, &n, &d) == RL_OK);
  EXPECT(n == 32 && d == 16);
  EXPECT(rl_set_layer(set, 7, &data, &n, &d) == RL_ERR_MISSING_LAYER);

  char* probe = NULL;
  EXPECT(rl_probe(set, "{\"layers\": [2], \"scheme\": \"loco\", \"permutations\": 3, \"seed\": 1}", &probe) ==
         RL_OK);
  EXPECT(probe && strstr(probe, "\"permutation_cv_means\"") != NULL);
  char* table = NULL;
  EXPECT(rl_report("probe", probe, &table) == RL_OK);
  EXPECT(table && strstr(table, "CV mean") != NULL);
  rl_string_free(table);
  rl_string_free(probe);

  rl_direction* dir = NULL;
  EXPECT(rl_caa(set, "{\"layer\": 2, \"positive\": {\"group\": \"positive\"}, \"negative\": {\"group\": \"control\"},"
                     " \"kind\": \"political\"}",
                &dir) == RL_OK);
  double c = 0.0;
  EXPECT(rl_cosine(dir, dir, &c) == RL_OK);
  EXPECT(c == 1.0);

  rl_direction* other = NULL;
  EXPECT(rl_direction_random(8, 3, 0, &other) == RL_OK);
  EXPECT(rl_cosine(dir, other, &c) == RL_ERR_DIMENSION_MISMATCH);
  rl_direction_free(other);

  char* run = NULL;
  EXPECT(rl_ablation_run(set, dir, oracle, "{\"layers\": [2], \"alpha\": 1, \"eval\": {\"group\": \"positive\"}}",
                         &run) == RL_OK);
  EXPECT(run && strstr(run, "\"delta_pp\"") != NULL);
  rl_string_free(run);

  rl_set* sel = NULL;
  EXPECT(rl_set_select(set, "{\"category\": \"a\"}", &sel) == RL_OK);
  const rl_direction* bank[] = {dir};
  char* out = NULL;
  EXPECT(rl_alpha_select(sel, sel, sel, bank, 1, oracle, "{\"layers\": [2]}", &out) == RL_ERR_LEAKAGE);
  EXPECT(out == NULL);
  rl_set_free(sel);

  rl_direction_free(dir);
  rl_oracle_free(oracle);
  rl_set_free(set);
}

static void test_stats(void) {
  double kappa = 0.0;
  EXPECT(rl_kappa("{\"a\": [\"x\", \"x\", \"y\", \"y\"], \"b\": [\"x\", \"y\", \"y\", \"y\"]}", &kappa) == RL_OK);
  EXPECT(fabs(kappa - 0.5) < 1e-12);
  char* grade = NULL;
  EXPECT(rl_grade("{\"train_sep\": true, \"heldout_cv\": true, \"causal_intervention\": false,"
                  " \"failure_mode\": true}",
                  &grade) == RL_OK);
  EXPECT(grade && strstr(grade, "\"level_number\": 2") != NULL);
  rl_string_free(grade);
  char* cls = NULL;
  EXPECT(rl_classify_discrimination(-10.0, &cls) == RL_OK);
  EXPECT(cls && strstr(cls, "neutral") != NULL && strstr(cls, "\"on_boundary\": true") != NULL);
  rl_string_free(cls);
}

int main(void) {
  EXPECT(rl_version() != NULL && strlen(rl_version()) > 0);
  test_errors();
  test_pipeline();
  test_stats();
  if (failures) {
    fprintf(stderr, "%d check(s) failed\n", failures);
    return 1;
  }
  printf("capi: all checks passed\n");
  return 0;
}
