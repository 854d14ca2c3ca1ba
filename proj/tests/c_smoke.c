/* Plain C client of the shared library. */
#include <stdio.h>
#include <string.h>

#include "nmpg/nmpg.h"

static int failures = 0;

#define EXPECT(cond)                                               \
  do {                                                             \
    if (!(cond)) {                                                 \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                  \
    }                                                              \
  } while (0)

static void count_lines(const char* line, size_t length, void* user) {
  (void)line;
  (void)length;
  ++*(int*)user;
}

int main(void) {
  const uint8_t bits[8] = {0, 1, 1, 0, 1, 0, 0, 1};
  nmpg_mask* m0 = NULL;
  nmpg_logits* logits = NULL;
  nmpg_mask* drawn = NULL;
  double lp = 0.0, grad[8];
  uint8_t out[8];
  nmpg_memory_report report;
  nmpg_config* config = NULL;
  nmpg_config* missing = NULL;
  char text[4096];
  size_t needed = 0;
  int lines = 0;

  EXPECT(strlen(nmpg_version()) > 0);
  EXPECT(nmpg_mask_new(2, 4, bits, 8, &m0) == NMPG_OK);
  EXPECT(nmpg_mask_dim(m0) == 8);
  EXPECT(nmpg_logits_init(m0, 10.0, &logits) == NMPG_OK);
  EXPECT(nmpg_sample_mask(logits, 1, 0, &drawn) == NMPG_OK);
  EXPECT(nmpg_mask_bits(drawn, out, 8) == NMPG_OK);
  EXPECT(nmpg_log_prob(m0, logits, &lp) == NMPG_OK);
  EXPECT(lp < 0.0 && lp > -0.01);
  EXPECT(nmpg_grad_log_prob(m0, logits, grad, 8) == NMPG_OK);
  EXPECT(grad[0] + grad[1] + grad[2] + grad[3] < 1e-12 &&
         grad[0] + grad[1] + grad[2] + grad[3] > -1e-12);

  EXPECT(nmpg_memory_report_compute(2, 4, 64, &report) == NMPG_OK);
  EXPECT(report.per_pattern_logits == 96 && report.ratio_numerator == 3 &&
         report.ratio_denominator == 2);
  EXPECT(nmpg_run_memory_report(4, 8, 64, count_lines, &lines) == NMPG_OK);
  EXPECT(lines == 1);

  EXPECT(nmpg_config_new(&config) == NMPG_OK);
  EXPECT(nmpg_config_set(config, "alpha", "1.5") == NMPG_CONFIG_ERROR);
  EXPECT(strstr(nmpg_last_error(), "alpha") != NULL);
  EXPECT(nmpg_config_to_text(config, text, sizeof text, &needed) == NMPG_OK);
  EXPECT(needed > 0 && needed < sizeof text);
  EXPECT(nmpg_config_load("/nonexistent/nmpg.cfg", &missing) == NMPG_IO_ERROR);
  EXPECT(missing == NULL);

  nmpg_mask_free(drawn);
  nmpg_logits_free(logits);
  nmpg_mask_free(m0);
  nmpg_config_free(config);
  if (failures == 0) printf("c_smoke: ok\n");
  return failures == 0 ? 0 : 1;
}
