// Command-line front end; links only the C API.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "ebmlens.h"

namespace {

const char* kSubcommands[] = {"train",          "attack",   "analyze-energy",
                              "trace-overfit",  "generate", "ablate-subsets",
                              "verify-identities"};

void append(std::string& json, const std::string& key, const std::string& value,
            bool quote) {
  json += json.size() > 1 ? "," : "";
  json += "\"" + key + "\":";
  json += quote ? "\"" + value + "\"" : value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("energy-lens toolkit ") + ebml_version()};
  app.require_subcommand(1);
  app.allow_extras(false);

  std::string config, out, method;
  long long seed = -1, epochs = -1, steps = -1, trials = -1;
  double epsilon = -1.0, beta = -1.0;

  for (const char* name : kSubcommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "experiment config (JSON)");
    sub->add_option("--seed", seed, "RNG seed");
    sub->add_option("--epochs", epochs, "training epochs");
    sub->add_option("--epsilon", epsilon, "attack radius (l-infinity)");
    sub->add_option("--beta", beta, "KL coefficient");
    sub->add_option("--method", method, "training method");
    sub->add_option("--steps", steps, "attack steps");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--trials", trials, "identity-check trials");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    // CLI11 returns 0 for --help; everything else is a usage error
    return rc == 0 ? 0 : 2;
  }

  std::string overrides = "{";
  if (seed >= 0) append(overrides, "seed", std::to_string(seed), false);
  if (epochs >= 0) append(overrides, "epochs", std::to_string(epochs), false);
  if (steps >= 0) append(overrides, "steps", std::to_string(steps), false);
  if (trials >= 0) append(overrides, "trials", std::to_string(trials), false);
  if (epsilon >= 0) append(overrides, "epsilon", std::to_string(epsilon), false);
  if (beta >= 0) append(overrides, "beta", std::to_string(beta), false);
  if (!method.empty()) append(overrides, "method", method, true);
  if (!out.empty()) append(overrides, "out", out, true);
  overrides += "}";

  const std::string name = app.get_subcommands().front()->get_name();
  int rc = ebml_run(name.c_str(), config.empty() ? nullptr : config.c_str(),
                    overrides.c_str());
  if (rc != 0) std::fprintf(stderr, "error: %s\n", ebml_last_error());
  return rc;
}
