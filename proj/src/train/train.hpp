#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attacks/attacks.hpp"
#include "nets/model.hpp"
#include "shell/data.hpp"

namespace ebml::train {

enum class Method { sat, trades, weat_nat, weat_adv, ablation_variant };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

enum class InnerKind { ce, kl };
enum class OuterKind { ce_adv, ce_nat, bce_adv };
enum class WeightKind { none, weat, mart };

struct AblationSpec {
  InnerKind inner = InnerKind::ce;
  OuterKind outer = OuterKind::ce_adv;
  WeightKind weight = WeightKind::none;
};

struct TrainConfig {
  Method method = Method::sat;
  double beta = 6.0;                // KL coefficient; ignored for sat
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_peak = 0.1;             // one triangular cycle 0 -> peak -> 0
  attacks::AttackConfig attack;     // inner maximization
  std::uint64_t seed = 0;
  AblationSpec ablation;            // only for ablation_variant
  std::size_t probe_size = 512;     // fixed training probe for energy traces
  double eval_fraction = 0.05;      // validation holdout
  // ramp the inner attack radius linearly over the first warmup_epochs so
  // features can form before the full threat is applied; 0 disables the
  // ramp. Probe and validation attacks always run at the full radius.
  std::size_t warmup_epochs = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;            // 1-based
  double e_nat = 0.0;
  double e_adv = 0.0;
  double delta_e = 0.0;             // e_nat - e_adv, exactly
  double e_joint_nat = 0.0;
  double e_joint_adv = 0.0;
  double train_loss = 0.0;
  double nat_err = 0.0;
  double rob_err = 0.0;
};

struct EnergyTrace {
  std::vector<EpochRecord> records;
  void write_csv(const std::string& path) const;
  static EnergyTrace read_csv(const std::string& path);
};

struct PhaseReport {
  std::vector<std::size_t> boundaries;  // strictly increasing epoch indices
  bool overfit_flag = false;
  std::optional<std::size_t> divergence_epoch;
};

struct TrainResult {
  ModelState model;                 // final epoch
  ModelState best_model;            // best robust accuracy on validation
  std::size_t best_epoch = 0;       // 1-based
  EnergyTrace trace;
  bool aborted = false;             // NaN divergence; model = last good epoch
};

TrainResult train(const data::Dataset& dataset, const ModelSpec& spec,
                  const TrainConfig& cfg);

// one triangular cycle: 0 -> peak over the first half of the epochs,
// peak -> 0 over the second; sampled at mid-epoch
double cyclic_lr(double peak, std::size_t epoch, std::size_t epochs);

struct BatchLoss {
  Tensor loss;               // scalar, on the tape
  double value;
};

// Assembles the per-batch objective for cfg.method from natural and
// adversarial inputs. Exposed so the loss construction (weighting, detach
// semantics, identity audit) can be checked directly.
BatchLoss method_loss(const ModelState& m, const Tensor& x, const Tensor& xadv,
                      const std::vector<std::size_t>& y, const TrainConfig& cfg);

// Smooths delta_e with a centered moving average (window 5); phase-3 onset
// is the first epoch where the smoothed series drops below
// median(first half) - 2*IQR(first half).
PhaseReport detect_phases(const EnergyTrace& trace);

struct SubsetSplit {
  data::Dataset drop_random_correct;   // C
  data::Dataset drop_incorrect;        // I
  data::Dataset drop_high_energy;      // H (highest-energy correct removed)
  data::Dataset drop_low_energy;       // L (lowest-energy correct removed)
  std::size_t removed_count = 0;
  std::size_t incorrect_count = 0;
  double high_energy_threshold = 0.0;  // min energy among H-removed
  double low_energy_threshold = 0.0;   // max energy among L-removed
};

SubsetSplit ablate_energy_subsets(const data::Dataset& dataset,
                                  const ModelState& base_model, double fraction,
                                  std::uint64_t seed);

}  // namespace ebml::train
