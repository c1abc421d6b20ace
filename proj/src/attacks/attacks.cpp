#include "attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/parallel.hpp"

namespace ebml::attacks {

InnerLoss inner_loss_from_string(const std::string& s) {
  if (s == "ce_untargeted") return InnerLoss::ce_untargeted;
  if (s == "ce_targeted") return InnerLoss::ce_targeted;
  if (s == "kl_trades") return InnerLoss::kl_trades;
  if (s == "cw_margin") return InnerLoss::cw_margin;
  throw ContractError("unknown inner loss '" + s + "'");
}

std::string to_string(InnerLoss l) {
  switch (l) {
    case InnerLoss::ce_untargeted: return "ce_untargeted";
    case InnerLoss::ce_targeted: return "ce_targeted";
    case InnerLoss::kl_trades: return "kl_trades";
    case InnerLoss::cw_margin: return "cw_margin";
  }
  return "?";
}

RandomStart random_start_from_string(const std::string& s) {
  if (s == "none") return RandomStart::none;
  if (s == "uniform_ball") return RandomStart::uniform_ball;
  if (s == "gaussian") return RandomStart::gaussian;
  throw ContractError("unknown random start '" + s + "'");
}

void AttackConfig::validate() const {
  if (epsilon < 0) throw ContractError("attack: epsilon must be >= 0");
  if (!(alpha > 0)) throw ContractError("attack: alpha must be > 0");
  if (clamp_lo >= clamp_hi) throw ContractError("attack: empty clamp range");
}

Tensor project_linf(const Tensor& candidate, const Tensor& origin, double eps,
                    double clamp_lo, double clamp_hi) {
  if (candidate.shape() != origin.shape())
    throw ContractError("project_linf: shape mismatch");
  std::vector<double> out(candidate.data());
  const auto& o = origin.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i], o[i] - eps, o[i] + eps);
    out[i] = std::clamp(out[i], clamp_lo, clamp_hi);
  }
  return Tensor(candidate.shape(), std::move(out));
}

namespace {

Tensor random_start_point(const Tensor& x, const AttackConfig& cfg, Rng& rng) {
  if (cfg.random_start == RandomStart::none) {
    return project_linf(x, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
  }
  std::vector<double> d(x.data());
  if (cfg.random_start == RandomStart::uniform_ball) {
    for (auto& v : d) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
  } else {
    for (auto& v : d) v += rng.gaussian(0.0, cfg.gaussian_sigma);
  }
  return project_linf(Tensor(x.shape(), std::move(d)), x, cfg.epsilon,
                      cfg.clamp_lo, cfg.clamp_hi);
}

// sign(0) = 0
inline double sgn(double v) { return (v > 0) - (v < 0); }

// Per-shard loss: receives logits of the shard plus the index range it
// covers in the original batch (labels etc. are indexed globally).
using LossFn =
    std::function<Tensor(const Tensor& logits, std::size_t begin, std::size_t end)>;

AttackResult pgd_loop(const ModelState& m, const Tensor& x,
                      const std::vector<std::size_t>& y_log,
                      const AttackConfig& cfg, Rng& rng, const LossFn& loss_fn,
                      double direction,
                      const std::vector<std::size_t>& success_against,
                      bool success_means_equal) {
  cfg.validate();
  if (x.ndim() < 2) throw ContractError("pgd: input must be batched");
  std::size_t n = x.shape()[0];
  std::size_t d = x.size() / n;
  if (y_log.size() != n) throw ContractError("pgd: label count mismatch");
  for (std::size_t i = 0; i < n; ++i)
    if (y_log[i] >= m.spec.num_classes)
      throw ContractError("pgd: label/target out of range");

  // random start drawn up front so results are shard-count independent
  Tensor start = random_start_point(x, cfg, rng);
  std::size_t k = m.spec.num_classes;
  std::size_t records = cfg.steps + 1;
  std::vector<double> marg(records * n), joint(records * n);
  std::vector<double> adv(n * d);
  std::vector<char> success(n, 0);

  parallel_shards(n, [&](std::size_t, std::size_t b, std::size_t e) {
    std::size_t sn = e - b;
    Shape sshape = x.shape();
    sshape[0] = sn;
    auto slice = [&](const Tensor& t) {
      std::vector<double> v(sn * d);
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(b * d), sn * d,
                  v.begin());
      return Tensor(sshape, std::move(v));
    };
    Tensor origin = slice(x);
    Tensor cur = slice(start);
    Tensor logits;
    std::vector<double> row(k);
    for (std::size_t step = 0; step <= cfg.steps; ++step) {
      Tensor leaf(cur.shape(), cur.data(), true);
      logits = forward(m, leaf, false);
      for (std::size_t i = 0; i < sn; ++i) {
        std::copy_n(logits.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                    k, row.begin());
        marg[step * n + b + i] = energy::marginal_energy(row);
        joint[step * n + b + i] = energy::joint_energy(row, y_log[b + i]);
      }
      if (step == cfg.steps) break;
      sum(loss_fn(logits, b, e)).backward();
      const auto& g = leaf.grad();
      std::vector<double> next(cur.data());
      for (std::size_t i = 0; i < next.size(); ++i)
        next[i] += cfg.alpha * direction * sgn(g[i]);
      cur = project_linf(Tensor(cur.shape(), std::move(next)), origin,
                         cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    }
    std::copy_n(cur.data().begin(), sn * d,
                adv.begin() + static_cast<std::ptrdiff_t>(b * d));
    for (std::size_t i = 0; i < sn; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits.data()[i * k + j] > logits.data()[i * k + best]) best = j;
      bool eq = best == success_against[b + i];
      success[b + i] = success_means_equal ? eq : !eq;
    }
  });

  AttackResult res;
  res.adversarial = Tensor(x.shape(), std::move(adv));
  res.success_mask.assign(success.begin(), success.end());
  for (std::size_t s = 0; s < records; ++s) {
    auto mean_std = [&](const std::vector<double>& v) {
      double mu = 0;
      for (std::size_t i = 0; i < n; ++i) mu += v[s * n + i];
      mu /= static_cast<double>(n);
      double s2 = 0;
      for (std::size_t i = 0; i < n; ++i)
        s2 += (v[s * n + i] - mu) * (v[s * n + i] - mu);
      return std::pair<double, double>(mu,
                                       std::sqrt(s2 / static_cast<double>(n)));
    };
    auto [mm, ms] = mean_std(marg);
    auto [jm, js] = mean_std(joint);
    res.per_step_marginal.push_back(mm);
    res.per_step_joint.push_back(jm);
    res.per_step_marginal_std.push_back(ms);
    res.per_step_joint_std.push_back(js);
  }
  return res;
}

}  // namespace

AttackResult pgd(const ModelState& m, const Tensor& x,
                 const std::vector<std::size_t>& y_or_target,
                 const AttackConfig& cfg, Rng& rng) {
  auto labels_in = [&](std::size_t b, std::size_t e) {
    return std::vector<std::size_t>(y_or_target.begin() + static_cast<std::ptrdiff_t>(b),
                                    y_or_target.begin() + static_cast<std::ptrdiff_t>(e));
  };
  switch (cfg.loss) {
    case InnerLoss::ce_untargeted:
      return pgd_loop(
          m, x, y_or_target, cfg, rng,
          [&](const Tensor& lg, std::size_t b, std::size_t e) {
            return energy::ce_rows(lg, labels_in(b, e));
          },
          +1.0, y_or_target, false);
    case InnerLoss::ce_targeted:
      return pgd_loop(
          m, x, y_or_target, cfg, rng,
          [&](const Tensor& lg, std::size_t b, std::size_t e) {
            return energy::ce_rows(lg, labels_in(b, e));
          },
          -1.0, y_or_target, true);
    case InnerLoss::cw_margin:
      return pgd_loop(
          m, x, y_or_target, cfg, rng,
          [&](const Tensor& lg, std::size_t b, std::size_t e) {
            return energy::cw_margin_rows(lg, labels_in(b, e), cfg.cw_kappa);
          },
          -1.0, y_or_target, false);
    case InnerLoss::kl_trades:
      return pgd_kl(m, x, y_or_target, cfg, rng);
  }
  throw ContractError("pgd: unreachable");
}

AttackResult pgd_kl(const ModelState& m, const Tensor& x,
                    const std::vector<std::size_t>& y, const AttackConfig& cfg,
                    Rng& rng) {
  if (cfg.loss != InnerLoss::kl_trades)
    throw ContractError("pgd_kl requires loss = kl_trades");
  Tensor ref_logits = forward(m, x.detach(), false).detach();
  std::size_t k = m.spec.num_classes;
  return pgd_loop(
      m, x, y, cfg, rng,
      [&](const Tensor& lg, std::size_t b, std::size_t e) {
        std::vector<double> ref((e - b) * k);
        std::copy_n(ref_logits.data().begin() + static_cast<std::ptrdiff_t>(b * k),
                    ref.size(), ref.begin());
        return energy::kl_rows(Tensor({e - b, k}, std::move(ref)), lg);
      },
      +1.0, y, false);
}

EnergyShiftSummary targeted_energy_shift(const ModelState& m, const Tensor& x,
                                         const std::vector<std::size_t>& y,
                                         AttackConfig cfg, Rng& rng) {
  if (cfg.loss != InnerLoss::ce_targeted)
    throw ContractError("targeted_energy_shift requires loss = ce_targeted");
  std::size_t k = m.spec.num_classes;
  if (k < 2) throw ContractError("targeted_energy_shift: needs K >= 2");
  std::vector<std::size_t> targets(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::size_t t = rng.index(k - 1);
    targets[i] = t >= y[i] ? t + 1 : t;
  }
  auto nat = energy::batch_energies(m, x, y);
  AttackResult r = pgd(m, x, targets, cfg, rng);
  auto adv = energy::batch_energies(m, r.adversarial, y);
  EnergyShiftSummary s;
  for (std::size_t i = 0; i < nat.size(); ++i) {
    s.mean_natural += nat[i].marginal;
    s.mean_adversarial += adv[i].marginal;
  }
  s.mean_natural /= static_cast<double>(nat.size());
  s.mean_adversarial /= static_cast<double>(adv.size());
  s.shift = s.mean_adversarial - s.mean_natural;
  return s;
}

void write_step_energy_csv(const AttackResult& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot open '" + path + "' for writing");
  os << "step,mean_marginal,mean_joint,std_marginal,std_joint\n";
  char buf[256];
  for (std::size_t s = 0; s < r.per_step_marginal.size(); ++s) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", s,
                  r.per_step_marginal[s], r.per_step_joint[s],
                  r.per_step_marginal_std[s], r.per_step_joint_std[s]);
    os << buf;
  }
}

}  // namespace ebml::attacks
