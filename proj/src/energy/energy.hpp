#pragma once

#include <vector>

#include "core/tensor.hpp"
#include "nets/model.hpp"

namespace ebml::energy {

// Per-sample (E(x), E(x,y)) in nats. E(x) = -log sum_k exp f(x)[k],
// E(x,y) = -f(x)[y]. CE = E(x,y) - E(x) >= 0.
struct EnergyPair {
  double marginal = 0.0;
  double joint = 0.0;
  std::size_t label = 0;
};

// KL(p(.|x) || p(.|x')) split into its two energy terms:
//   conditional_term = E_{k~p(y|x)}[E(x',k) - E(x,k)]
//   marginal_term    = E(x) - E(x')
// total = conditional_term + marginal_term.
struct KLDecomposition {
  double conditional_term = 0.0;
  double marginal_term = 0.0;
  double total = 0.0;
};

// ---- scalar (non-tape) calculus over raw logit vectors ----
double marginal_energy(const std::vector<double>& logits);
double joint_energy(const std::vector<double>& logits, std::size_t y);
EnergyPair energy_pair(const std::vector<double>& logits, std::size_t y);
double ce_energy(const std::vector<double>& logits, std::size_t y);
double kl_direct(const std::vector<double>& logits_a,
                 const std::vector<double>& logits_b);
KLDecomposition kl_ebm(const std::vector<double>& logits_a,
                       const std::vector<double>& logits_b);
double trades_loss(const std::vector<double>& logits_nat,
                   const std::vector<double>& logits_adv, std::size_t y,
                   double beta);
double trades_loss_ebm(const std::vector<double>& logits_nat,
                       const std::vector<double>& logits_adv, std::size_t y,
                       double beta);

// w(E) = 1 / ln(1 + exp(|E|)), range (0, 1/ln 2]
double weat_weight(double marginal_energy);

// untargeted CW margin: max(f[y] - max_{i!=y} f[i], -kappa),
// ties in the max broken by lowest index
double cw_margin(const std::vector<double>& logits, std::size_t y, double kappa);

// ---- differentiable batched calculus over logits [n,K] ----
Tensor marginal_energy_rows(const Tensor& logits);                    // [n]
Tensor joint_energy_rows(const Tensor& logits,
                         const std::vector<std::size_t>& y);          // [n]
Tensor ce_rows(const Tensor& logits, const std::vector<std::size_t>& y);
Tensor kl_rows(const Tensor& logits_a, const Tensor& logits_b);       // [n]
Tensor cw_margin_rows(const Tensor& logits, const std::vector<std::size_t>& y,
                      double kappa);
// mean over batch of CE(nat,y) + beta * KL(nat || adv)
Tensor trades_objective(const Tensor& logits_nat, const Tensor& logits_adv,
                        const std::vector<std::size_t>& y, double beta);

// -grad_x E(x) for a batch; same shape as x
Tensor score(const ModelState& m, const Tensor& x);

// per-sample energy pairs for a batch of inputs
std::vector<EnergyPair> batch_energies(const ModelState& m, const Tensor& x,
                                       const std::vector<std::size_t>& y);

}  // namespace ebml::energy
