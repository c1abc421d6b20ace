#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "attacks/attacks.hpp"
#include "genesis/genesis.hpp"
#include "nets/model.hpp"
#include "train/train.hpp"

namespace ebml::shell {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataConfig {
  std::string source = "synthetic_images";  // cifar10 | synthetic_images | mixture
  std::string path;                         // cifar10 binary batch file
  std::size_t count = 0;                    // 0 = all records
  std::size_t classes = 10;
  std::size_t n_per_class = 100;
  std::size_t dim = 2;                      // mixture only
  double separation = 6.0;                  // mixture only
  double noise = 0.12;                      // synthetic_images only
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::size_t trials = 10000;               // verify-identities
  ModelSpec model_spec;
  std::string model_checkpoint;             // load instead of init when set
  DataConfig data;
  train::TrainConfig train;
  std::string trace_csv;                    // trace-overfit input, optional
  double ablate_fraction = 0.1;
  std::size_t attack_count = 0;             // eval subset for attack pipelines
  std::size_t histogram_bins = 40;
  genesis::SGLDConfig sgld;
  double retained_variance = 0.99;
  std::size_t per_class = 8;

  nlohmann::json canonical;                 // merged, validated document
};

// Parses and validates strictly: unknown keys or type mismatches are
// rejected before any computation. Overrides is a flat JSON object of
// {seed, epochs, epsilon, beta, method, steps, out, trials}.
ExperimentConfig load_config(const std::string& path,
                             const nlohmann::json& overrides);
ExperimentConfig parse_config(nlohmann::json doc, const nlohmann::json& overrides);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace ebml::shell
