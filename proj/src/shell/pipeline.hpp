#pragma once

#include <string>
#include <vector>

#include "energy/energy.hpp"
#include "shell/config.hpp"
#include "shell/data.hpp"

namespace ebml::shell {

inline constexpr const char* kVersion = "0.1.0";

// exit codes per the CLI contract
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Residual maxima of the three energy identities plus the beta=1
// high-confidence limit check, over `trials` random draws.
struct IdentityReport {
  double max_eq_ce = 0.0;       // |ce_energy - direct softmax CE|
  double max_kl_decomp = 0.0;   // |kl_ebm.total - kl_direct|
  double max_trades = 0.0;      // |trades_loss - trades_loss_ebm|
  double max_sat_limit = 0.0;   // beta=1, margin-20 limit vs CE(adv)
};

IdentityReport verify_identities(std::size_t trials, std::uint64_t seed);

// Shared-binning histograms over the union range; two CSVs with columns
// bin_left, bin_right, count_natural, count_adversarial.
void emit_energy_histograms(const std::vector<energy::EnergyPair>& natural,
                            const std::vector<energy::EnergyPair>& adversarial,
                            std::size_t bins, const std::string& marginal_csv,
                            const std::string& joint_csv);

data::Dataset build_dataset(const DataConfig& cfg, std::uint64_t seed);

// Executes a named pipeline; writes artifacts and a manifest under
// output_dir. Returns an exit code; on failure fills errmsg.
int run_subcommand(const std::string& subcommand, const std::string& config_path,
                   const nlohmann::json& overrides, std::string& errmsg);

}  // namespace ebml::shell
