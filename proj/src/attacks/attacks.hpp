#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "energy/energy.hpp"
#include "nets/model.hpp"

namespace ebml::attacks {

enum class InnerLoss { ce_untargeted, ce_targeted, kl_trades, cw_margin };
enum class RandomStart { none, uniform_ball, gaussian };

InnerLoss inner_loss_from_string(const std::string& s);
std::string to_string(InnerLoss l);
RandomStart random_start_from_string(const std::string& s);

struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t steps = 20;
  InnerLoss loss = InnerLoss::ce_untargeted;
  std::optional<std::size_t> target;  // fixed target class; ce_targeted may
                                      // instead use per-sample targets
  RandomStart random_start = RandomStart::none;
  double gaussian_sigma = 0.001;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
  double cw_kappa = 0.0;

  void validate() const;
};

struct AttackResult {
  Tensor adversarial;
  // index 0 is the (possibly random-started, projected) initialization,
  // index s the state after step s
  std::vector<double> per_step_marginal;
  std::vector<double> per_step_joint;
  std::vector<double> per_step_marginal_std;
  std::vector<double> per_step_joint_std;
  std::vector<bool> success_mask;
};

// elementwise clip into [origin - eps, origin + eps], then into the pixel
// box; idempotent
Tensor project_linf(const Tensor& candidate, const Tensor& origin, double eps,
                    double clamp_lo, double clamp_hi);

// Sign-gradient PGD. y_or_target holds true labels, or per-sample targets
// when cfg.loss == ce_targeted. Ascends the inner loss for ce_untargeted
// and kl_trades, descends for ce_targeted and cw_margin.
AttackResult pgd(const ModelState& m, const Tensor& x,
                 const std::vector<std::size_t>& y_or_target,
                 const AttackConfig& cfg, Rng& rng);

// TRADES inner maximization: ascends KL(p(.|x) || p(.|x')) with the natural
// distribution computed once and detached. Labels are used only for the
// energy log and success mask.
AttackResult pgd_kl(const ModelState& m, const Tensor& x,
                    const std::vector<std::size_t>& y, const AttackConfig& cfg,
                    Rng& rng);

struct EnergyShiftSummary {
  double mean_natural = 0.0;
  double mean_adversarial = 0.0;
  double shift = 0.0;  // mean E(x'_adv) - mean E(x_nat)
};

// Runs a targeted attack with random targets != y and reports the marginal
// energy shift.
EnergyShiftSummary targeted_energy_shift(const ModelState& m, const Tensor& x,
                                         const std::vector<std::size_t>& y,
                                         AttackConfig cfg, Rng& rng);

// columns: step, mean_marginal, mean_joint, std_marginal, std_joint
void write_step_energy_csv(const AttackResult& r, const std::string& path);

}  // namespace ebml::attacks
