#include "energy/energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ebml::energy {

double marginal_energy(const std::vector<double>& logits) {
  return -logsumexp(logits);
}

double joint_energy(const std::vector<double>& logits, std::size_t y) {
  if (y >= logits.size())
    throw ContractError("joint_energy: label out of range");
  return -logits[y];
}

EnergyPair energy_pair(const std::vector<double>& logits, std::size_t y) {
  return {marginal_energy(logits), joint_energy(logits, y), y};
}

double ce_energy(const std::vector<double>& logits, std::size_t y) {
  return joint_energy(logits, y) - marginal_energy(logits);
}

namespace {

// log-softmax of a logit vector
std::vector<double> log_probs(const std::vector<double>& logits) {
  double lse = logsumexp(logits);
  std::vector<double> lp(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) lp[k] = logits[k] - lse;
  return lp;
}

}  // namespace

double kl_direct(const std::vector<double>& logits_a,
                 const std::vector<double>& logits_b) {
  if (logits_a.size() != logits_b.size())
    throw ContractError("kl_direct: shape mismatch");
  auto la = log_probs(logits_a);
  auto lb = log_probs(logits_b);
  double kl = 0.0;
  for (std::size_t k = 0; k < la.size(); ++k)
    kl += std::exp(la[k]) * (la[k] - lb[k]);
  return kl;
}

KLDecomposition kl_ebm(const std::vector<double>& logits_a,
                       const std::vector<double>& logits_b) {
  if (logits_a.size() != logits_b.size())
    throw ContractError("kl_ebm: shape mismatch");
  double e_a = marginal_energy(logits_a);
  double e_b = marginal_energy(logits_b);
  auto la = log_probs(logits_a);
  KLDecomposition d;
  // E_{k~p(y|x)}[E(x',k) - E(x,k)] with E(x,k) = -logits[k]
  for (std::size_t k = 0; k < la.size(); ++k)
    d.conditional_term += std::exp(la[k]) * (-logits_b[k] - (-logits_a[k]));
  d.marginal_term = e_a - e_b;
  d.total = d.conditional_term + d.marginal_term;
  return d;
}

double trades_loss(const std::vector<double>& logits_nat,
                   const std::vector<double>& logits_adv, std::size_t y,
                   double beta) {
  if (!(beta > 0)) throw ContractError("trades_loss: beta must be positive");
  return ce_energy(logits_nat, y) + beta * kl_direct(logits_nat, logits_adv);
}

double trades_loss_ebm(const std::vector<double>& logits_nat,
                       const std::vector<double>& logits_adv, std::size_t y,
                       double beta) {
  if (!(beta > 0)) throw ContractError("trades_loss_ebm: beta must be positive");
  double e_nat = marginal_energy(logits_nat);
  double e_adv = marginal_energy(logits_adv);
  double e_joint = joint_energy(logits_nat, y);
  auto lp = log_probs(logits_nat);
  // E_{p(y|x)}[E(x,k) - E(x',k)]
  double cond = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k)
    cond += std::exp(lp[k]) * (-logits_nat[k] - (-logits_adv[k]));
  return e_joint + (beta - 1.0) * e_nat - beta * (e_adv + cond);
}

double weat_weight(double marginal) {
  double t = std::fabs(marginal);
  // stable ln(1 + e^t)
  double softplus = t > 30.0 ? t + std::log1p(std::exp(-t))
                             : std::log1p(std::exp(t));
  return 1.0 / softplus;
}

double cw_margin(const std::vector<double>& logits, std::size_t y,
                 double kappa) {
  if (logits.size() < 2) throw ContractError("cw_margin: needs K >= 2");
  if (y >= logits.size()) throw ContractError("cw_margin: label out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (k != y && logits[k] > best_other) best_other = logits[k];
  return std::max(logits[y] - best_other, -kappa);
}

// ---- batched, differentiable ----

Tensor marginal_energy_rows(const Tensor& logits) {
  return neg(logsumexp_rows(logits));
}

Tensor joint_energy_rows(const Tensor& logits,
                         const std::vector<std::size_t>& y) {
  return neg(gather_rows(logits, y));
}

Tensor ce_rows(const Tensor& logits, const std::vector<std::size_t>& y) {
  return sub(joint_energy_rows(logits, y), marginal_energy_rows(logits));
}

Tensor kl_rows(const Tensor& logits_a, const Tensor& logits_b) {
  if (logits_a.shape() != logits_b.shape())
    throw ContractError("kl_rows: shape mismatch");
  Tensor la = sub_colvec(logits_a, logsumexp_rows(logits_a));
  Tensor lb = sub_colvec(logits_b, logsumexp_rows(logits_b));
  return row_sum(mul(exp(la), sub(la, lb)));
}

Tensor cw_margin_rows(const Tensor& logits, const std::vector<std::size_t>& y,
                      double kappa) {
  std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (k < 2) throw ContractError("cw_margin_rows: needs K >= 2");
  // gather the strongest competing logit per row, lowest index on ties
  std::vector<std::size_t> rival(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = y[i] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != y[i] && logits.data()[i * k + j] > logits.data()[i * k + best])
        best = j;
    rival[i] = best;
  }
  Tensor margin = sub(gather_rows(logits, y), gather_rows(logits, rival));
  // max(margin, -kappa) = relu(margin + kappa) - kappa
  return add_scalar(relu(add_scalar(margin, kappa)), -kappa);
}

Tensor trades_objective(const Tensor& logits_nat, const Tensor& logits_adv,
                        const std::vector<std::size_t>& y, double beta) {
  if (!(beta > 0)) throw ContractError("trades_objective: beta must be positive");
  Tensor ce = mean(ce_rows(logits_nat, y));
  Tensor kl = mean(kl_rows(logits_nat, logits_adv));
  return add(ce, scale(kl, beta));
}

Tensor score(const ModelState& m, const Tensor& x) {
  Tensor leaf(x.shape(), x.data(), true);
  Tensor logits = forward(m, leaf, false);
  sum(logsumexp_rows(logits)).backward();
  return Tensor(x.shape(), leaf.grad());
}

std::vector<EnergyPair> batch_energies(const ModelState& m, const Tensor& x,
                                       const std::vector<std::size_t>& y) {
  Tensor logits = forward(m, x.detach(), false);
  std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (y.size() != n) throw ContractError("batch_energies: label count mismatch");
  std::vector<EnergyPair> out(n);
  std::vector<double> row(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(logits.data().begin() + static_cast<std::ptrdiff_t>(i * k), k,
                row.begin());
    out[i] = energy_pair(row, y[i]);
  }
  return out;
}

}  // namespace ebml::energy
