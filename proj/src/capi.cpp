#include "nmpg/nmpg.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "nmpg/error.hpp"
#include "nmpg/harness.hpp"

struct nmpg_config {
  nmpg::RunConfig value;
};
struct nmpg_logits {
  nmpg::GroupLogits value;
};
struct nmpg_mask {
  nmpg::NMMask value;
};

namespace {

thread_local std::string g_last_error;

nmpg_status set_error(nmpg_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

// Runs `body`, translating exceptions into status codes.
template <class F>
nmpg_status guarded(F&& body) noexcept {
  try {
    return body();
  } catch (const nmpg::Error& e) {
    return set_error(static_cast<nmpg_status>(nmpg::exit_status_for(e.kind())), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(NMPG_NUMERIC_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return set_error(NMPG_CONFIG_ERROR, e.what());
  } catch (...) {
    return set_error(NMPG_CONFIG_ERROR, "unknown error");
  }
}

#define NMPG_REQUIRE_ARG(cond, name)                                       \
  do {                                                                     \
    if (!(cond)) return set_error(NMPG_CONFIG_ERROR, "null argument: " name); \
  } while (0)

nmpg::LineSink make_sink(nmpg_line_fn fn, void* user) {
  return [fn, user](std::string_view line) {
    if (fn) fn(line.data(), line.size(), user);
  };
}

nmpg_status to_status(nmpg::ExitStatus s) { return static_cast<nmpg_status>(s); }

}  // namespace

extern "C" {

const char* nmpg_version(void) { return "0.1.0"; }

const char* nmpg_last_error(void) { return g_last_error.c_str(); }

nmpg_status nmpg_config_new(nmpg_config** out) {
  NMPG_REQUIRE_ARG(out, "out");
  return guarded([&] {
    *out = new nmpg_config{};
    return NMPG_OK;
  });
}

nmpg_status nmpg_config_load(const char* path, nmpg_config** out) {
  NMPG_REQUIRE_ARG(path && out, "path/out");
  return guarded([&] {
    *out = new nmpg_config{nmpg::load_config(path)};
    return NMPG_OK;
  });
}

nmpg_status nmpg_config_parse(const char* text, nmpg_config** out) {
  NMPG_REQUIRE_ARG(text && out, "text/out");
  return guarded([&] {
    *out = new nmpg_config{nmpg::parse_config(text)};
    return NMPG_OK;
  });
}

nmpg_status nmpg_config_set(nmpg_config* config, const char* key, const char* value) {
  NMPG_REQUIRE_ARG(config && key && value, "config/key/value");
  return guarded([&] {
    nmpg::set_config_value(config->value, key, value);
    return NMPG_OK;
  });
}

nmpg_status nmpg_config_to_text(const nmpg_config* config, char* buf, size_t capacity,
                                size_t* needed) {
  NMPG_REQUIRE_ARG(config, "config");
  return guarded([&] {
    const std::string text = nmpg::to_text(config->value);
    if (needed) *needed = text.size();
    if (buf && capacity > 0) {
      const size_t n = std::min(capacity - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
    return NMPG_OK;
  });
}

void nmpg_config_free(nmpg_config* config) { delete config; }

nmpg_status nmpg_mask_new(int n_keep, int group_size, const uint8_t* bits, size_t d,
                          nmpg_mask** out) {
  NMPG_REQUIRE_ARG(out && (bits || d == 0), "bits/out");
  return guarded([&] {
    *out = new nmpg_mask{nmpg::NMMask(nmpg::SparsityPattern::make(n_keep, group_size),
                                      std::vector<std::uint8_t>(bits, bits + d))};
    return NMPG_OK;
  });
}

nmpg_status nmpg_mask_from_text(const char* text, nmpg_mask** out) {
  NMPG_REQUIRE_ARG(text && out, "text/out");
  return guarded([&] {
    *out = new nmpg_mask{nmpg::mask_from_text(text)};
    return NMPG_OK;
  });
}

size_t nmpg_mask_dim(const nmpg_mask* mask) { return mask ? mask->value.dim() : 0; }

nmpg_status nmpg_mask_bits(const nmpg_mask* mask, uint8_t* out, size_t d) {
  NMPG_REQUIRE_ARG(mask && out, "mask/out");
  if (d != mask->value.dim()) {
    return set_error(NMPG_CONFIG_ERROR, "output length " + std::to_string(d) +
                                            " does not match mask dimension " +
                                            std::to_string(mask->value.dim()));
  }
  std::memcpy(out, mask->value.bits().data(), d);
  return NMPG_OK;
}

void nmpg_mask_free(nmpg_mask* mask) { delete mask; }

nmpg_status nmpg_logits_new(int n_keep, int group_size, const double* values, size_t d,
                            nmpg_logits** out) {
  NMPG_REQUIRE_ARG(out && (values || d == 0), "values/out");
  return guarded([&] {
    *out = new nmpg_logits{nmpg::GroupLogits(nmpg::SparsityPattern::make(n_keep, group_size),
                                             std::vector<double>(values, values + d))};
    return NMPG_OK;
  });
}

nmpg_status nmpg_logits_init(const nmpg_mask* m0, double magnitude, nmpg_logits** out) {
  NMPG_REQUIRE_ARG(m0 && out, "m0/out");
  return guarded([&] {
    *out = new nmpg_logits{nmpg::init_logits(m0->value, magnitude)};
    return NMPG_OK;
  });
}

void nmpg_logits_free(nmpg_logits* logits) { delete logits; }

nmpg_status nmpg_sample_mask(const nmpg_logits* logits, uint64_t seed, uint64_t step,
                             nmpg_mask** out) {
  NMPG_REQUIRE_ARG(logits && out, "logits/out");
  return guarded([&] {
    *out = new nmpg_mask{nmpg::sample_mask(logits->value, seed, step)};
    return NMPG_OK;
  });
}

nmpg_status nmpg_log_prob(const nmpg_mask* mask, const nmpg_logits* logits, double* out) {
  NMPG_REQUIRE_ARG(mask && logits && out, "mask/logits/out");
  return guarded([&] {
    *out = nmpg::log_prob(mask->value, logits->value);
    return NMPG_OK;
  });
}

nmpg_status nmpg_grad_log_prob(const nmpg_mask* mask, const nmpg_logits* logits, double* out,
                               size_t d) {
  NMPG_REQUIRE_ARG(mask && logits && out, "mask/logits/out");
  return guarded([&] {
    const auto g = nmpg::grad_log_prob(mask->value, logits->value);
    if (g.size() != d) {
      return set_error(NMPG_CONFIG_ERROR, "output length " + std::to_string(d) +
                                              " does not match dimension " +
                                              std::to_string(g.size()));
    }
    std::memcpy(out, g.data(), d * sizeof(double));
    return NMPG_OK;
  });
}

nmpg_status nmpg_top_n_mask(const nmpg_logits* logits, nmpg_mask** out) {
  NMPG_REQUIRE_ARG(logits && out, "logits/out");
  return guarded([&] {
    *out = new nmpg_mask{nmpg::extract_final_mask(logits->value)};
    return NMPG_OK;
  });
}

nmpg_status nmpg_memory_report_compute(int n_keep, int group_size, uint64_t d,
                                       nmpg_memory_report* out) {
  NMPG_REQUIRE_ARG(out, "out");
  return guarded([&] {
    const auto r = nmpg::memory_report(nmpg::SparsityPattern::make(n_keep, group_size), d);
    *out = nmpg_memory_report{r.dim, r.per_position_logits, r.per_pattern_logits,
                              r.ratio_numerator, r.ratio_denominator};
    return NMPG_OK;
  });
}

nmpg_status nmpg_run_memory_report(int n_keep, int group_size, uint64_t d, nmpg_line_fn sink,
                                   void* user) {
  return guarded([&] {
    const auto r = nmpg::memory_report(nmpg::SparsityPattern::make(n_keep, group_size), d);
    make_sink(sink, user)(nmpg::memory_report_line(r));
    return NMPG_OK;
  });
}

nmpg_status nmpg_run_train(const nmpg_config* config, const char* out_dir, nmpg_line_fn sink,
                           void* user) {
  NMPG_REQUIRE_ARG(config, "config");
  return guarded([&] {
    const std::string dir = out_dir ? out_dir : config->value.output_dir;
    return to_status(nmpg::run_train(config->value, dir, make_sink(sink, user)));
  });
}

nmpg_status nmpg_run_verify(const char* scope, uint64_t seed, nmpg_line_fn sink, void* user) {
  NMPG_REQUIRE_ARG(scope, "scope");
  return guarded([&] {
    const auto s = nmpg::run_verify(scope, seed, make_sink(sink, user));
    if (s != nmpg::ExitStatus::Ok) {
      set_error(NMPG_PROPERTY_FAILURE, std::string("verify scope '") + scope + "' had failures");
    }
    return to_status(s);
  });
}

nmpg_status nmpg_run_variance_report(const nmpg_config* config, const char* out_dir,
                                     nmpg_line_fn sink, void* user) {
  NMPG_REQUIRE_ARG(config, "config");
  return guarded([&] {
    const std::string dir = out_dir ? out_dir : config->value.output_dir;
    const auto s = nmpg::run_variance_report(config->value, dir, make_sink(sink, user));
    if (s != nmpg::ExitStatus::Ok) set_error(NMPG_PROPERTY_FAILURE, "variance report check failed");
    return to_status(s);
  });
}

nmpg_status nmpg_run_c_sweep(const nmpg_config* config, const double* c_values, size_t count,
                             const char* out_dir, nmpg_line_fn sink, void* user) {
  NMPG_REQUIRE_ARG(config && (c_values || count == 0), "config/c_values");
  return guarded([&] {
    const std::string dir = out_dir ? out_dir : config->value.output_dir;
    const auto s = nmpg::run_c_sweep(config->value, std::span<const double>(c_values, count), dir,
                                     make_sink(sink, user));
    if (s != nmpg::ExitStatus::Ok) set_error(NMPG_PROPERTY_FAILURE, "c-sweep check failed");
    return to_status(s);
  });
}

}  // extern "C"
