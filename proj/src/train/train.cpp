#include "train/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ebml::train {

Method method_from_string(const std::string& s) {
  if (s == "sat") return Method::sat;
  if (s == "trades") return Method::trades;
  if (s == "weat_nat") return Method::weat_nat;
  if (s == "weat_adv") return Method::weat_adv;
  if (s == "ablation_variant") return Method::ablation_variant;
  throw ContractError("unknown training method '" + s + "'");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::sat: return "sat";
    case Method::trades: return "trades";
    case Method::weat_nat: return "weat_nat";
    case Method::weat_adv: return "weat_adv";
    case Method::ablation_variant: return "ablation_variant";
  }
  return "?";
}

void TrainConfig::validate() const {
  attack.validate();
  if (batch_size == 0) throw ContractError("train: batch_size must be positive");
  if (method != Method::sat && !(beta > 0))
    throw ContractError("train: beta must be positive for " + to_string(method));
  if (method == Method::sat &&
      attack.loss != attacks::InnerLoss::ce_untargeted)
    throw ContractError("train: sat requires attack loss ce_untargeted");
  if ((method == Method::trades || method == Method::weat_nat ||
       method == Method::weat_adv) &&
      attack.loss != attacks::InnerLoss::kl_trades)
    throw ContractError("train: " + to_string(method) +
                        " requires attack loss kl_trades");
  if (!(eval_fraction > 0.0 && eval_fraction < 0.5))
    throw ContractError("train: eval_fraction out of range");
}

void EnergyTrace::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw ContractError("cannot open '" + path + "' for writing");
  os << "epoch,e_nat,e_adv,delta_e,e_joint_nat,e_joint_adv,train_loss,"
        "nat_err,rob_err\n";
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf,
                  "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.epoch, r.e_nat, r.e_adv, r.delta_e, r.e_joint_nat,
                  r.e_joint_adv, r.train_loss, r.nat_err, r.rob_err);
    os << buf;
  }
}

EnergyTrace EnergyTrace::read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("cannot open trace csv '" + path + "'");
  std::string line;
  std::getline(is, line);  // header
  EnergyTrace t;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    if (!(ss >> r.epoch >> r.e_nat >> r.e_adv >> r.delta_e >> r.e_joint_nat >>
          r.e_joint_adv >> r.train_loss >> r.nat_err >> r.rob_err))
      throw ContractError("malformed trace row in '" + path + "'");
    t.records.push_back(r);
  }
  return t;
}

namespace {

class SgdMomentum {
 public:
  SgdMomentum(ModelState& m, double momentum, double weight_decay)
      : model_(m), momentum_(momentum), weight_decay_(weight_decay) {
    for (auto& [name, t] : m.params)
      velocity_.emplace_back(t.size(), 0.0);
  }

  void step(double lr) {
    for (std::size_t p = 0; p < model_.params.size(); ++p) {
      Tensor& t = model_.params[p].second;
      const auto& g = t.grad();
      auto& v = velocity_[p];
      auto& w = t.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = momentum_ * v[i] - lr * (g[i] + weight_decay_ * w[i]);
        w[i] += v[i];
        if (!std::isfinite(w[i]))
          throw NumericError("parameter update produced non-finite value");
      }
    }
  }

 private:
  ModelState& model_;
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace

double cyclic_lr(double peak, std::size_t epoch, std::size_t epochs) {
  if (epochs <= 1) return peak;
  double half = static_cast<double>(epochs) / 2.0;
  double e = static_cast<double>(epoch) + 0.5;  // mid-epoch position
  double frac = e <= half ? e / half : (static_cast<double>(epochs) - e) / half;
  return peak * std::max(frac, 0.0);
}

namespace {

// per-batch CE computed via energies must equal direct softmax CE
void audit_ce_identity(const Tensor& logits, const std::vector<std::size_t>& y) {
  std::size_t n = logits.shape()[0], k = logits.shape()[1];
  std::vector<double> row(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(logits.data().begin() + static_cast<std::ptrdiff_t>(i * k), k,
                row.begin());
    double via_energy = energy::ce_energy(row, y[i]);
    // direct softmax cross-entropy
    double lse = logsumexp(row);
    double direct = -(row[y[i]] - lse);
    if (std::fabs(via_energy - direct) >= 1e-9)
      throw NumericError("CE energy identity violated during training");
  }
}

std::vector<double> batch_weat_weights(const Tensor& logits_nat) {
  std::size_t n = logits_nat.shape()[0], k = logits_nat.shape()[1];
  std::vector<double> w(n), row(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(logits_nat.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                k, row.begin());
    w[i] = energy::weat_weight(energy::marginal_energy(row));
  }
  return w;
}

// -log(1 - max_{k != y} p(k|x')) term of MART's boosted CE, assembled from
// logits: log(1 - p_r) = lse(logits excluding r) - lse(logits)
Tensor bce_boost_rows(const Tensor& logits, const std::vector<std::size_t>& y) {
  std::size_t n = logits.shape()[0], k = logits.shape()[1];
  // strongest non-true logit per row
  std::vector<std::size_t> rival(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = y[i] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != y[i] && logits.data()[i * k + j] > logits.data()[i * k + best])
        best = j;
    rival[i] = best;
  }
  // lse over the row with the rival excluded, via the shifted-sum trick on
  // raw data (graph-safe: rebuild from ops)
  // exp(l) row-summed minus exp(l_rival), in log space:
  // log(sum - exp(l_r)) = lse + log(1 - softmax_r)
  // assemble directly: log( sum_j!=r exp(l_j - M) ) + M with M = rowmax
  // For tape simplicity use: lse_excl = log( exp(lse) - exp(l_r) ) computed
  // stably as lse + log1p(-exp(l_r - lse)). Build with available ops:
  Tensor lse = logsumexp_rows(logits);
  Tensor lr = gather_rows(logits, rival);
  // t = l_r - lse  (<= 0); log(1 - e^t) via series is not available as an
  // op, so clamp-free exact form: log1p(-exp(t))
  Tensor t = sub(lr, lse);
  // custom: y = log(1 - exp(t)); dy/dt = -exp(t)/(1-exp(t))
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double ti = t.data()[i];
    if (ti >= 0) ti = -1e-12;  // numeric guard at p_r -> 1
    out[i] = std::log1p(-std::exp(ti));
  }
  Tensor log1mexp =
      make_op(t.shape(), std::move(out), {t},
              [](detail::Node& nd) {
                auto& par = *nd.parents[0];
                if (par.grad.size() != par.value.size())
                  par.grad.assign(par.value.size(), 0.0);
                for (std::size_t i = 0; i < par.value.size(); ++i) {
                  double ti = std::min(par.value[i], -1e-12);
                  double e = std::exp(ti);
                  par.grad[i] += nd.grad[i] * (-e / (1.0 - e));
                }
              },
              "log1mexp");
  return neg(log1mexp);
}

}  // namespace

BatchLoss method_loss(const ModelState& m, const Tensor& x, const Tensor& xadv,
                      const std::vector<std::size_t>& y,
                      const TrainConfig& cfg) {
  Tensor loss;
  switch (cfg.method) {
    case Method::sat: {
      Tensor logits_adv = forward(m, xadv, true);
      audit_ce_identity(logits_adv, y);
      loss = mean(energy::ce_rows(logits_adv, y));
      break;
    }
    case Method::trades: {
      Tensor logits_nat = forward(m, x, true);
      Tensor logits_adv = forward(m, xadv, true);
      audit_ce_identity(logits_nat, y);
      loss = energy::trades_objective(logits_nat, logits_adv, y, cfg.beta);
      break;
    }
    case Method::weat_nat:
    case Method::weat_adv: {
      Tensor logits_nat = forward(m, x, true);
      Tensor logits_adv = forward(m, xadv, true);
      audit_ce_identity(logits_nat, y);
      // weights from natural marginal energies, detached by construction
      Tensor w(Shape{y.size()}, batch_weat_weights(logits_nat));
      const Tensor& z = cfg.method == Method::weat_nat ? logits_nat : logits_adv;
      Tensor ce = mean(mul(energy::ce_rows(z, y), w));
      Tensor kl = mean(mul(energy::kl_rows(logits_nat, logits_adv), w));
      loss = add(ce, scale(kl, cfg.beta));
      break;
    }
    case Method::ablation_variant: {
      Tensor logits_nat = forward(m, x, true);
      Tensor logits_adv = forward(m, xadv, true);
      audit_ce_identity(logits_nat, y);
      Tensor outer;
      switch (cfg.ablation.outer) {
        case OuterKind::ce_adv: outer = energy::ce_rows(logits_adv, y); break;
        case OuterKind::ce_nat: outer = energy::ce_rows(logits_nat, y); break;
        case OuterKind::bce_adv:
          outer = add(energy::ce_rows(logits_adv, y),
                      bce_boost_rows(logits_adv, y));
          break;
      }
      Tensor kl = energy::kl_rows(logits_nat, logits_adv);
      switch (cfg.ablation.weight) {
        case WeightKind::none:
          break;
        case WeightKind::weat: {
          Tensor w(Shape{y.size()}, batch_weat_weights(logits_nat));
          outer = mul(outer, w);
          kl = mul(kl, w);
          break;
        }
        case WeightKind::mart: {
          // 1 - p(y|x) on the KL term only
          std::size_t n = logits_nat.shape()[0], k = logits_nat.shape()[1];
          std::vector<double> w(n), row(k);
          for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(logits_nat.data().begin() +
                            static_cast<std::ptrdiff_t>(i * k),
                        k, row.begin());
            w[i] = 1.0 - std::exp(-energy::ce_energy(row, y[i]));
          }
          kl = mul(kl, Tensor(Shape{n}, std::move(w)));
          break;
        }
      }
      loss = add(mean(outer), scale(mean(kl), cfg.beta));
      break;
    }
  }
  return {loss, loss.item()};
}

namespace {

Tensor inner_attack(const ModelState& m, const Tensor& x,
                    const std::vector<std::size_t>& y, const TrainConfig& cfg,
                    Rng& rng) {
  if (cfg.attack.epsilon == 0.0) return x.detach();
  attacks::AttackConfig ac = cfg.attack;
  bool use_kl = ac.loss == attacks::InnerLoss::kl_trades;
  if (cfg.method == Method::ablation_variant)
    use_kl = cfg.ablation.inner == InnerKind::kl;
  if (use_kl) {
    ac.loss = attacks::InnerLoss::kl_trades;
    return attacks::pgd_kl(m, x, y, ac, rng).adversarial;
  }
  ac.loss = attacks::InnerLoss::ce_untargeted;
  return attacks::pgd(m, x, y, ac, rng).adversarial;
}

struct EvalErrors {
  double nat_err, rob_err;
};

EvalErrors evaluate(const ModelState& m, const data::Dataset& d,
                    const attacks::AttackConfig& ac, Rng& rng) {
  auto pred = predict(m, d.images);
  std::size_t nat_wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i) nat_wrong += pred[i] != d.labels[i];
  attacks::AttackConfig rc = ac;
  Tensor adv;
  if (rc.epsilon == 0.0) {
    adv = d.images;
  } else if (rc.loss == attacks::InnerLoss::kl_trades) {
    adv = attacks::pgd_kl(m, d.images, d.labels, rc, rng).adversarial;
  } else {
    adv = attacks::pgd(m, d.images, d.labels, rc, rng).adversarial;
  }
  auto pred_adv = predict(m, adv);
  std::size_t rob_wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    rob_wrong += pred_adv[i] != d.labels[i];
  double n = static_cast<double>(d.size());
  return {nat_wrong / n, rob_wrong / n};
}

}  // namespace

TrainResult train(const data::Dataset& dataset, const ModelSpec& spec,
                  const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();
  Rng rng(cfg.seed);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.eval_fraction *
                                  static_cast<double>(dataset.size())));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
  data::Dataset val = dataset.subset(val_idx);
  data::Dataset trainset = dataset.subset(train_idx);

  std::vector<std::size_t> probe_idx(std::min(cfg.probe_size, trainset.size()));
  std::iota(probe_idx.begin(), probe_idx.end(), 0);
  data::Dataset probe = trainset.subset(probe_idx);

  TrainResult res;
  res.model = init_model(spec, cfg.seed);
  res.best_model = res.model;
  double best_rob_acc = -1.0;
  SgdMomentum opt(res.model, cfg.momentum, cfg.weight_decay);

  ModelState last_good = res.model;
  std::size_t n_train = trainset.size();
  std::vector<std::size_t> perm(n_train);
  std::iota(perm.begin(), perm.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cyclic_lr(cfg.lr_peak, epoch, cfg.epochs);
    TrainConfig ecfg = cfg;
    if (cfg.warmup_epochs > 0 && epoch < cfg.warmup_epochs) {
      double scale = static_cast<double>(epoch + 1) /
                     static_cast<double>(cfg.warmup_epochs);
      ecfg.attack.epsilon = cfg.attack.epsilon * scale;
      ecfg.attack.alpha = cfg.attack.alpha * scale;
    }
    rng.shuffle(perm);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t off = 0; off < n_train; off += cfg.batch_size) {
        std::size_t lim = std::min(off + cfg.batch_size, n_train);
        std::vector<std::size_t> bidx(perm.begin() + off, perm.begin() + lim);
        data::Dataset batch = trainset.subset(bidx);
        Tensor xadv =
            inner_attack(res.model, batch.images, batch.labels, ecfg, rng);
        res.model.zero_grads();
        BatchLoss bl =
            method_loss(res.model, batch.images, xadv, batch.labels, cfg);
        bl.loss.backward();
        opt.step(lr);
        loss_sum += bl.value;
        ++batches;
      }
    } catch (const NumericError&) {
      res.model = last_good;
      res.aborted = true;
      return res;
    }

    // epoch trace on the fixed probe batch
    Rng probe_rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL + epoch));
    Tensor probe_adv =
        inner_attack(res.model, probe.images, probe.labels, cfg, probe_rng);
    auto nat = energy::batch_energies(res.model, probe.images, probe.labels);
    auto adv = energy::batch_energies(res.model, probe_adv, probe.labels);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t i = 0; i < nat.size(); ++i) {
      rec.e_nat += nat[i].marginal;
      rec.e_adv += adv[i].marginal;
      rec.e_joint_nat += nat[i].joint;
      rec.e_joint_adv += adv[i].joint;
    }
    double pn = static_cast<double>(nat.size());
    rec.e_nat /= pn;
    rec.e_adv /= pn;
    rec.e_joint_nat /= pn;
    rec.e_joint_adv /= pn;
    rec.delta_e = rec.e_nat - rec.e_adv;
    rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    EvalErrors ev = evaluate(res.model, val, cfg.attack, probe_rng);
    rec.nat_err = ev.nat_err;
    rec.rob_err = ev.rob_err;
    res.trace.records.push_back(rec);

    double rob_acc = 1.0 - ev.rob_err;
    if (rob_acc > best_rob_acc) {
      best_rob_acc = rob_acc;
      res.best_model = res.model;
      res.best_epoch = epoch + 1;
    }
    last_good = res.model;
  }
  if (res.best_epoch == 0) {
    res.best_model = res.model;
    res.best_epoch = cfg.epochs;
  }
  return res;
}

PhaseReport detect_phases(const EnergyTrace& trace) {
  const auto& rec = trace.records;
  if (rec.size() < 10)
    throw ContractError("detect_phases: need at least 10 recorded epochs");
  std::size_t n = rec.size();
  std::vector<double> delta(n), smooth(n);
  for (std::size_t i = 0; i < n; ++i) delta[i] = rec[i].delta_e;
  // centered moving average, window 5, truncated at the ends
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i >= 2 ? i - 2 : 0;
    std::size_t hi = std::min(i + 2, n - 1);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += delta[j];
    smooth[i] = s / static_cast<double>(hi - lo + 1);
  }
  std::size_t half = n / 2;
  std::vector<double> first(smooth.begin(), smooth.begin() + half);
  std::sort(first.begin(), first.end());
  auto quantile = [&](double q) {
    double pos = q * static_cast<double>(first.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(lo);
    std::size_t hi = std::min(lo + 1, first.size() - 1);
    return first[lo] * (1 - frac) + first[hi] * frac;
  };
  double median = quantile(0.5);
  double iqr = quantile(0.75) - quantile(0.25);
  double threshold = median - 2.0 * iqr;

  PhaseReport report;
  for (std::size_t i = 0; i < n; ++i)
    if (smooth[i] < threshold) {
      report.divergence_epoch = rec[i].epoch;
      break;
    }

  // overfit: divergence exists and robust error rises >= 1 point above its
  // minimum at some epoch after the minimum was reached
  if (report.divergence_epoch) {
    std::size_t min_at = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (rec[i].rob_err < rec[min_at].rob_err) min_at = i;
    for (std::size_t i = min_at + 1; i < n; ++i)
      if (rec[i].rob_err >= rec[min_at].rob_err + 0.01) {
        report.overfit_flag = true;
        break;
      }
  }

  // boundaries: best-robust-accuracy epoch, then divergence onset
  std::size_t best_epoch = rec[0].epoch;
  double best = rec[0].rob_err;
  for (const auto& r : rec)
    if (r.rob_err < best) {
      best = r.rob_err;
      best_epoch = r.epoch;
    }
  if (best_epoch > 1 && best_epoch < rec.back().epoch)
    report.boundaries.push_back(best_epoch);
  if (report.divergence_epoch &&
      (report.boundaries.empty() ||
       *report.divergence_epoch > report.boundaries.back()))
    report.boundaries.push_back(*report.divergence_epoch);
  return report;
}

SubsetSplit ablate_energy_subsets(const data::Dataset& dataset,
                                  const ModelState& base_model, double fraction,
                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 0.5))
    throw ContractError("ablate_energy_subsets: fraction must be in (0, 0.5)");
  dataset.validate();
  std::size_t n = dataset.size();
  std::size_t remove = static_cast<std::size_t>(
      fraction * static_cast<double>(n));
  if (remove == 0) throw ContractError("ablate_energy_subsets: empty removal");

  auto pred = predict(base_model, dataset.images);
  auto pairs = energy::batch_energies(base_model, dataset.images, dataset.labels);
  std::vector<std::size_t> correct, incorrect;
  for (std::size_t i = 0; i < n; ++i)
    (pred[i] == dataset.labels[i] ? correct : incorrect).push_back(i);

  if (remove > correct.size())
    throw ContractError("ablate_energy_subsets: fraction exceeds correct pool");
  if (remove > incorrect.size() && remove > correct.size())
    throw ContractError("ablate_energy_subsets: fraction exceeds pools");

  auto keep_complement = [&](const std::vector<std::size_t>& removed) {
    std::vector<bool> drop(n, false);
    for (auto i : removed) drop[i] = true;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
      if (!drop[i]) keep.push_back(i);
    return dataset.subset(keep);
  };

  SubsetSplit out;
  out.removed_count = remove;
  out.incorrect_count = incorrect.size();

  // C: random correct
  Rng rng(seed);
  std::vector<std::size_t> shuffled = correct;
  rng.shuffle(shuffled);
  out.drop_random_correct = keep_complement(
      {shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(remove)});

  // I: incorrect (capped at the incorrect pool)
  std::size_t ri = std::min(remove, incorrect.size());
  if (ri < remove)
    throw ContractError("ablate_energy_subsets: fraction exceeds incorrect pool");
  out.drop_incorrect = keep_complement(
      {incorrect.begin(), incorrect.begin() + static_cast<std::ptrdiff_t>(ri)});

  // H/L: correct samples sorted by marginal energy
  std::vector<std::size_t> by_energy = correct;
  std::sort(by_energy.begin(), by_energy.end(),
            [&](std::size_t a, std::size_t b) {
              return pairs[a].marginal < pairs[b].marginal;
            });
  std::vector<std::size_t> low(
      by_energy.begin(), by_energy.begin() + static_cast<std::ptrdiff_t>(remove));
  std::vector<std::size_t> high(
      by_energy.end() - static_cast<std::ptrdiff_t>(remove), by_energy.end());
  out.drop_low_energy = keep_complement(low);
  out.drop_high_energy = keep_complement(high);
  out.high_energy_threshold = pairs[high.front()].marginal;  // min removed
  out.low_energy_threshold = pairs[low.back()].marginal;     // max removed
  return out;
}

}  // namespace ebml::train
