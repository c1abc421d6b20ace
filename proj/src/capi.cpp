#include "ebmlens.h"

#include <algorithm>
#include <string>

#include "energy/energy.hpp"
#include "nets/model.hpp"
#include "shell/data.hpp"
#include "shell/pipeline.hpp"

using namespace ebml;

struct ebml_model {
  ModelState state;
};

struct ebml_dataset {
  data::Dataset data;
};

namespace {

thread_local std::string g_last_error = "ok";

ebml_status classify(const std::exception& e) {
  g_last_error = e.what();
  if (dynamic_cast<const NumericError*>(&e)) return EBML_ERR_NUMERIC;
  if (dynamic_cast<const ContractError*>(&e)) return EBML_ERR_CONFIG;
  if (dynamic_cast<const shell::ConfigError*>(&e)) return EBML_ERR_CONFIG;
  return EBML_ERR_UNKNOWN;
}

}  // namespace

extern "C" {

const char* ebml_version(void) { return shell::kVersion; }

const char* ebml_last_error(void) { return g_last_error.c_str(); }

int ebml_run(const char* subcommand, const char* config_path,
             const char* overrides_json) {
  if (!subcommand) {
    g_last_error = "subcommand is NULL";
    return shell::kExitConfig;
  }
  nlohmann::json overrides = nlohmann::json::object();
  if (overrides_json && *overrides_json) {
    overrides = nlohmann::json::parse(overrides_json, nullptr, false);
    if (overrides.is_discarded() || !overrides.is_object()) {
      g_last_error = "overrides_json is not a JSON object";
      return shell::kExitConfig;
    }
  }
  std::string err;
  int rc = shell::run_subcommand(subcommand, config_path ? config_path : "",
                                 overrides, err);
  if (rc != shell::kExitOk) g_last_error = err;
  return rc;
}

ebml_status ebml_model_load(const char* checkpoint_path, ebml_model** out) {
  if (!checkpoint_path || !out) {
    g_last_error = "NULL argument";
    return EBML_ERR_CONFIG;
  }
  try {
    auto* m = new ebml_model{load_checkpoint(checkpoint_path)};
    *out = m;
    return EBML_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

void ebml_model_free(ebml_model* m) { delete m; }

ebml_status ebml_model_num_classes(const ebml_model* m, size_t* out) {
  if (!m || !out) {
    g_last_error = "NULL argument";
    return EBML_ERR_CONFIG;
  }
  *out = m->state.spec.num_classes;
  return EBML_OK;
}

ebml_status ebml_dataset_load(const char* path, size_t count,
                              ebml_dataset** out) {
  if (!path || !out) {
    g_last_error = "NULL argument";
    return EBML_ERR_CONFIG;
  }
  try {
    auto* d = new ebml_dataset{data::load_cifar10_binary(path, count)};
    *out = d;
    return EBML_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

void ebml_dataset_free(ebml_dataset* d) { delete d; }

ebml_status ebml_dataset_size(const ebml_dataset* d, size_t* out) {
  if (!d || !out) {
    g_last_error = "NULL argument";
    return EBML_ERR_CONFIG;
  }
  *out = d->data.size();
  return EBML_OK;
}

ebml_status ebml_energies(const ebml_model* m, const ebml_dataset* d,
                          size_t count, double* marginal, double* joint) {
  if (!m || !d) {
    g_last_error = "NULL argument";
    return EBML_ERR_CONFIG;
  }
  try {
    data::Dataset sub = d->data.take(std::min(count, d->data.size()));
    auto pairs = energy::batch_energies(m->state, sub.images, sub.labels);
    for (size_t i = 0; i < pairs.size(); ++i) {
      if (marginal) marginal[i] = pairs[i].marginal;
      if (joint) joint[i] = pairs[i].joint;
    }
    return EBML_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

double ebml_weat_weight(double marginal_energy) {
  return energy::weat_weight(marginal_energy);
}

ebml_status ebml_verify_identities(size_t trials, uint64_t seed,
                                   double* max_residual) {
  try {
    shell::IdentityReport r = shell::verify_identities(trials, seed);
    double worst = std::max({r.max_eq_ce, r.max_kl_decomp, r.max_trades});
    if (max_residual) *max_residual = worst;
    if (worst >= 1e-9) {
      g_last_error = "identity residual exceeds 1e-9";
      return EBML_ERR_NUMERIC;
    }
    return EBML_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

}  // extern "C"
