#include "shell/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "genesis/genesis.hpp"
#include "train/train.hpp"

namespace ebml::shell {

namespace fs = std::filesystem;
using nlohmann::json;

IdentityReport verify_identities(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  IdentityReport rep;
  const std::size_t ks[] = {2, 10, 100};
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t k = ks[t % 3];
    std::vector<double> a(k), b(k);
    for (auto& v : a) v = rng.uniform(-30.0, 30.0);
    for (auto& v : b) v = rng.uniform(-30.0, 30.0);
    std::size_t y = rng.index(k);

    // Eq: CE as energy difference vs direct softmax CE
    double direct_ce = -(a[y] - logsumexp(a));
    rep.max_eq_ce = std::max(rep.max_eq_ce,
                             std::fabs(energy::ce_energy(a, y) - direct_ce));

    // KL decomposition vs direct KL
    auto dec = energy::kl_ebm(a, b);
    rep.max_kl_decomp = std::max(
        rep.max_kl_decomp, std::fabs(dec.total - energy::kl_direct(a, b)));

    // TRADES objective: direct vs energy form, beta in {1, 6}
    double beta = t % 2 ? 1.0 : 6.0;
    rep.max_trades = std::max(
        rep.max_trades, std::fabs(energy::trades_loss(a, b, y, beta) -
                                  energy::trades_loss_ebm(a, b, y, beta)));

    // beta=1 high-confidence limit: confident natural logits reduce the
    // objective to CE on the adversarial logits
    std::vector<double> conf(b.size(), 0.0);
    conf[y] = 20.0;
    double lhs = energy::trades_loss_ebm(conf, b, y, 1.0);
    double rhs = -(b[y] - logsumexp(b));
    rep.max_sat_limit = std::max(rep.max_sat_limit, std::fabs(lhs - rhs));
  }
  return rep;
}

void emit_energy_histograms(const std::vector<energy::EnergyPair>& natural,
                            const std::vector<energy::EnergyPair>& adversarial,
                            std::size_t bins, const std::string& marginal_csv,
                            const std::string& joint_csv) {
  if (bins < 1) throw ContractError("emit_energy_histograms: bins < 1");
  if (natural.size() != adversarial.size())
    throw ContractError("emit_energy_histograms: sample count mismatch");
  auto emit = [&](auto select, const std::string& path) {
    double lo = select(natural[0]), hi = lo;
    for (const auto& p : natural) {
      lo = std::min(lo, select(p));
      hi = std::max(hi, select(p));
    }
    for (const auto& p : adversarial) {
      lo = std::min(lo, select(p));
      hi = std::max(hi, select(p));
    }
    double span = hi > lo ? hi - lo : 1.0;
    std::vector<std::size_t> cn(bins, 0), ca(bins, 0);
    auto bucket = [&](double v) {
      auto b = static_cast<std::size_t>((v - lo) / span * static_cast<double>(bins));
      return std::min(b, bins - 1);
    };
    for (const auto& p : natural) ++cn[bucket(select(p))];
    for (const auto& p : adversarial) ++ca[bucket(select(p))];
    std::ofstream os(path);
    if (!os) throw ContractError("cannot open '" + path + "'");
    os << "bin_left,bin_right,count_natural,count_adversarial\n";
    char buf[160];
    for (std::size_t b = 0; b < bins; ++b) {
      double left = lo + span * static_cast<double>(b) / static_cast<double>(bins);
      double right = lo + span * static_cast<double>(b + 1) / static_cast<double>(bins);
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu,%zu\n", left, right,
                    cn[b], ca[b]);
      os << buf;
    }
  };
  emit([](const energy::EnergyPair& p) { return p.marginal; }, marginal_csv);
  emit([](const energy::EnergyPair& p) { return p.joint; }, joint_csv);
}

data::Dataset build_dataset(const DataConfig& cfg, std::uint64_t seed) {
  if (cfg.source == "cifar10")
    return data::load_cifar10_binary(cfg.path, cfg.count);
  if (cfg.source == "mixture")
    return data::synth_mixture(cfg.classes, cfg.n_per_class, cfg.dim,
                               cfg.separation, seed);
  data::Dataset d = data::synth_images(cfg.classes, cfg.n_per_class, seed,
                                       cfg.noise);
  if (cfg.count > 0) d = d.take(cfg.count);
  return d;
}

namespace {

ModelState obtain_model(const ExperimentConfig& cfg) {
  if (!cfg.model_checkpoint.empty())
    return load_checkpoint(cfg.model_checkpoint);
  return init_model(cfg.model_spec, cfg.seed);
}

void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                    double wall_s) {
  json m;
  std::string canon = cfg.canonical.dump();
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon + "|" + command)));
  m["config_hash"] = hash;
  m["seed"] = cfg.seed;
  m["version"] = kVersion;
  m["command"] = command;
  m["wall_time_s"] = wall_s;
  std::ofstream os(fs::path(cfg.output_dir) / "manifest.json");
  os << m.dump(2) << "\n";
}

std::string outpath(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

int cmd_train(const ExperimentConfig& cfg) {
  data::Dataset d = build_dataset(cfg.data, cfg.seed);
  train::TrainResult r = train::train(d, cfg.model_spec, cfg.train);
  r.trace.write_csv(outpath(cfg, "trace.csv"));
  save_checkpoint(r.model, outpath(cfg, "checkpoint_final.ebml"));
  save_checkpoint(r.best_model, outpath(cfg, "checkpoint_best.ebml"));
  json s;
  s["best_epoch"] = r.best_epoch;
  s["epochs_run"] = r.trace.records.size();
  s["aborted"] = r.aborted;
  std::ofstream(outpath(cfg, "train_summary.json")) << s.dump(2) << "\n";
  if (r.aborted) {
    std::cerr << "training aborted on numerical divergence; last good epoch "
                 "checkpointed\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_attack(const ExperimentConfig& cfg) {
  data::Dataset d = build_dataset(cfg.data, cfg.seed);
  if (cfg.attack_count > 0) d = d.take(cfg.attack_count);
  ModelState m = obtain_model(cfg);
  Rng rng(cfg.seed);
  attacks::AttackConfig ac = cfg.train.attack;
  attacks::AttackResult r;
  if (ac.loss == attacks::InnerLoss::ce_targeted) {
    std::vector<std::size_t> targets(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (ac.target) {
        targets[i] = *ac.target;
      } else {
        std::size_t t = rng.index(m.spec.num_classes - 1);
        targets[i] = t >= d.labels[i] ? t + 1 : t;
      }
    }
    r = attacks::pgd(m, d.images, targets, ac, rng);
  } else if (ac.loss == attacks::InnerLoss::kl_trades) {
    r = attacks::pgd_kl(m, d.images, d.labels, ac, rng);
  } else {
    r = attacks::pgd(m, d.images, d.labels, ac, rng);
  }
  attacks::write_step_energy_csv(r, outpath(cfg, "step_energies.csv"));
  std::size_t hits = 0;
  for (bool b : r.success_mask) hits += b;
  double linf = 0.0;
  for (std::size_t i = 0; i < r.adversarial.size(); ++i)
    linf = std::max(linf, std::fabs(r.adversarial.data()[i] - d.images.data()[i]));
  json s;
  s["samples"] = d.size();
  s["success_rate"] = static_cast<double>(hits) / static_cast<double>(d.size());
  s["max_linf"] = linf;
  s["epsilon"] = ac.epsilon;
  std::ofstream(outpath(cfg, "attack_summary.json")) << s.dump(2) << "\n";
  if (d.sample_size() == 3072) {
    data::Dataset adv = d;
    adv.images = r.adversarial;
    data::write_cifar10_binary(adv, outpath(cfg, "adversarial.bin"));
  }
  return kExitOk;
}

int cmd_analyze_energy(const ExperimentConfig& cfg) {
  data::Dataset d = build_dataset(cfg.data, cfg.seed);
  if (cfg.attack_count > 0) d = d.take(cfg.attack_count);
  ModelState m = obtain_model(cfg);
  Rng rng(cfg.seed);
  attacks::AttackConfig ac = cfg.train.attack;
  attacks::AttackResult r = ac.loss == attacks::InnerLoss::kl_trades
                                ? attacks::pgd_kl(m, d.images, d.labels, ac, rng)
                                : attacks::pgd(m, d.images, d.labels, ac, rng);
  auto nat = energy::batch_energies(m, d.images, d.labels);
  auto adv = energy::batch_energies(m, r.adversarial, d.labels);
  emit_energy_histograms(nat, adv, cfg.histogram_bins,
                         outpath(cfg, "hist_marginal.csv"),
                         outpath(cfg, "hist_joint.csv"));
  return kExitOk;
}

json phase_to_json(const train::PhaseReport& p) {
  json j;
  j["boundaries"] = p.boundaries;
  j["overfit_flag"] = p.overfit_flag;
  if (p.divergence_epoch) j["divergence_epoch"] = *p.divergence_epoch;
  else j["divergence_epoch"] = nullptr;
  return j;
}

int cmd_trace_overfit(const ExperimentConfig& cfg) {
  train::EnergyTrace trace;
  if (!cfg.trace_csv.empty()) {
    trace = train::EnergyTrace::read_csv(cfg.trace_csv);
  } else {
    data::Dataset d = build_dataset(cfg.data, cfg.seed);
    train::TrainResult r = train::train(d, cfg.model_spec, cfg.train);
    trace = r.trace;
    trace.write_csv(outpath(cfg, "trace.csv"));
    if (r.aborted) return kExitNumeric;
  }
  train::PhaseReport p = train::detect_phases(trace);
  std::ofstream(outpath(cfg, "phase_report.json"))
      << phase_to_json(p).dump(2) << "\n";
  return kExitOk;
}

int cmd_generate(const ExperimentConfig& cfg) {
  data::Dataset d = build_dataset(cfg.data, cfg.seed);
  ModelState m = obtain_model(cfg);
  auto pcas = genesis::fit_all_class_pca(d, cfg.retained_variance);
  Rng rng(cfg.seed);
  genesis::GridResult g = genesis::generate_grid(
      m, pcas, cfg.sgld, cfg.per_class, d, rng, outpath(cfg, "grid.png"),
      outpath(cfg, "trajectories.csv"));
  json s = json::array();
  for (std::size_t c = 0; c < g.per_class.size(); ++c) {
    const auto& r = g.per_class[c];
    json e;
    e["class"] = c;
    e["final_joint_energy"] = r.joint_energy_trajectory.empty()
                                  ? 0.0
                                  : r.joint_energy_trajectory.back();
    e["reference_joint_energy"] = r.reference_energy;
    e["clamped_init_fraction"] = r.clamped_init_fraction;
    s.push_back(e);
  }
  std::ofstream(outpath(cfg, "generate_summary.json")) << s.dump(2) << "\n";
  return kExitOk;
}

int cmd_ablate_subsets(const ExperimentConfig& cfg) {
  data::Dataset d = build_dataset(cfg.data, cfg.seed);
  ModelState m = obtain_model(cfg);
  train::SubsetSplit split =
      train::ablate_energy_subsets(d, m, cfg.ablate_fraction, cfg.seed);
  json s;
  s["total"] = d.size();
  s["removed_count"] = split.removed_count;
  s["incorrect_count"] = split.incorrect_count;
  s["high_energy_threshold"] = split.high_energy_threshold;
  s["low_energy_threshold"] = split.low_energy_threshold;
  s["sizes"] = {{"C", split.drop_random_correct.size()},
                {"I", split.drop_incorrect.size()},
                {"H", split.drop_high_energy.size()},
                {"L", split.drop_low_energy.size()}};
  std::ofstream(outpath(cfg, "subset_stats.json")) << s.dump(2) << "\n";
  if (d.sample_size() == 3072) {
    data::write_cifar10_binary(split.drop_random_correct,
                               outpath(cfg, "subset_C.bin"));
    data::write_cifar10_binary(split.drop_incorrect, outpath(cfg, "subset_I.bin"));
    data::write_cifar10_binary(split.drop_high_energy,
                               outpath(cfg, "subset_H.bin"));
    data::write_cifar10_binary(split.drop_low_energy,
                               outpath(cfg, "subset_L.bin"));
  }
  return kExitOk;
}

int cmd_verify_identities(const ExperimentConfig& cfg) {
  IdentityReport rep = verify_identities(cfg.trials, cfg.seed);
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "ce_identity_max_residual %.3e\n"
                "kl_decomposition_max_residual %.3e\n"
                "trades_equivalence_max_residual %.3e\n"
                "sat_limit_max_residual %.3e\n",
                rep.max_eq_ce, rep.max_kl_decomp, rep.max_trades,
                rep.max_sat_limit);
  std::cout << buf;
  std::ofstream(outpath(cfg, "identities.txt")) << buf;
  bool ok = rep.max_eq_ce < 1e-9 && rep.max_kl_decomp < 1e-9 &&
            rep.max_trades < 1e-9 && rep.max_sat_limit < 1e-3;
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int run_subcommand(const std::string& subcommand, const std::string& config_path,
                   const json& overrides, std::string& errmsg) {
  auto t0 = std::chrono::steady_clock::now();
  try {
    ExperimentConfig cfg = config_path.empty()
                               ? parse_config(json::object(), overrides)
                               : load_config(config_path, overrides);
    fs::create_directories(cfg.output_dir);
    int rc;
    if (subcommand == "train") rc = cmd_train(cfg);
    else if (subcommand == "attack") rc = cmd_attack(cfg);
    else if (subcommand == "analyze-energy") rc = cmd_analyze_energy(cfg);
    else if (subcommand == "trace-overfit") rc = cmd_trace_overfit(cfg);
    else if (subcommand == "generate") rc = cmd_generate(cfg);
    else if (subcommand == "ablate-subsets") rc = cmd_ablate_subsets(cfg);
    else if (subcommand == "verify-identities") rc = cmd_verify_identities(cfg);
    else {
      errmsg = "unknown subcommand '" + subcommand + "'";
      return kExitConfig;
    }
    double wall = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    write_manifest(cfg, subcommand, wall);
    return rc;
  } catch (const ConfigError& e) {
    errmsg = e.what();
    return kExitConfig;
  } catch (const NumericError& e) {
    errmsg = e.what();
    return kExitNumeric;
  } catch (const std::exception& e) {
    errmsg = e.what();
    return kExitConfig;
  }
}

}  // namespace ebml::shell
