#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <doctest.h>

#include "core/rng.hpp"
#include "genesis/genesis.hpp"
#include "shell/data.hpp"

using namespace ebml;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

TEST_CASE("single image gives a component-free basis") {
  std::vector<std::vector<double>> imgs = {{0.2, 0.8, 0.5}};
  auto pca = genesis::fit_class_pca(imgs, 3, 0.99);
  CHECK(pca.components.empty());
  CHECK(pca.mean == imgs[0]);
  CHECK(pca.label == 3);
  CHECK_THROWS_AS(genesis::fit_class_pca({}, 0, 0.99), ContractError);
}

TEST_CASE("two points give one component along their difference") {
  std::vector<double> a = {0.1, 0.4, 0.7, 0.2};
  std::vector<double> b = {0.3, 0.2, 0.9, 0.6};
  auto pca = genesis::fit_class_pca({a, b}, 0, 0.99);
  REQUIRE(pca.components.size() == 1);
  std::vector<double> diff(4);
  double norm = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    diff[i] = b[i] - a[i];
    norm += diff[i] * diff[i];
  }
  norm = std::sqrt(norm);
  // direction matches up to sign
  double align = std::fabs(dot(pca.components[0], diff)) / norm;
  CHECK(align == doctest::Approx(1.0).epsilon(1e-10));
  // scale is the sample standard deviation along that axis: |b-a| / sqrt(2)
  CHECK(pca.scales[0] == doctest::Approx(norm / std::sqrt(2.0)).epsilon(1e-10));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(pca.mean[i] == doctest::Approx((a[i] + b[i]) / 2).epsilon(1e-12));
}

TEST_CASE("orthonormality, ordering and variance retention") {
  Rng rng(8);
  std::vector<std::vector<double>> imgs;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> v(12);
    for (auto& x : v) x = std::clamp(0.5 + rng.gaussian(0.0, 0.15), 0.0, 1.0);
    imgs.push_back(v);
  }
  auto pca = genesis::fit_class_pca(imgs, 1, 0.99);
  // Gram residual
  for (std::size_t i = 0; i < pca.components.size(); ++i)
    for (std::size_t j = 0; j < pca.components.size(); ++j) {
      double g = dot(pca.components[i], pca.components[j]);
      CHECK(std::fabs(g - (i == j ? 1.0 : 0.0)) < 1e-8);
    }
  // non-increasing scales, all >= 0
  for (std::size_t i = 1; i < pca.scales.size(); ++i)
    CHECK(pca.scales[i] <= pca.scales[i - 1] + 1e-12);
  for (double s : pca.scales) CHECK(s >= 0.0);
  CHECK(pca.retained_variance >= 0.99);

  // full-rank reconstruction recovers each image
  auto full = genesis::fit_class_pca(imgs, 1, 1.0);
  for (const auto& img : imgs) {
    std::vector<double> rec = full.mean;
    for (std::size_t c = 0; c < full.components.size(); ++c) {
      std::vector<double> centered(img.size());
      for (std::size_t i = 0; i < img.size(); ++i)
        centered[i] = img[i] - full.mean[i];
      double coef = dot(full.components[c], centered);
      for (std::size_t i = 0; i < img.size(); ++i)
        rec[i] += coef * full.components[c][i];
    }
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(std::fabs(rec[i] - img[i]) < 1e-8);
  }
}

TEST_CASE("initialization draws have the prescribed spread") {
  std::vector<std::vector<double>> imgs = {{0.4, 0.5, 0.6}};
  auto pca0 = genesis::fit_class_pca(imgs, 0, 0.99);
  Rng rng(1);
  CHECK(genesis::sample_init(pca0, 0.01, rng) == pca0.mean);

  // two-component synthetic basis, interior mean so the clamp never bites
  genesis::ClassPCA pca;
  pca.mean = {0.5, 0.5, 0.5};
  pca.components = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
  pca.scales = {2.0, 1.0};
  Rng rng2(2);
  double sigma = 0.01;
  // sigma -> 0 limit
  auto tiny = genesis::sample_init(pca, 1e-12, rng2);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::fabs(tiny[i] - pca.mean[i]) < 1e-6);

  std::size_t n = 10000;
  std::vector<double> acc0, acc1;
  double clamped_total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    double cf = 0.0;
    auto x = genesis::sample_init(pca, sigma, rng2, &cf);
    clamped_total += cf;
    acc0.push_back(x[0] - pca.mean[0]);
    acc1.push_back(x[1] - pca.mean[1]);
  }
  CHECK(clamped_total == 0.0);  // interior mean, tiny spread
  auto var = [&](const std::vector<double>& v) {
    double s2 = 0.0;
    for (double x : v) s2 += x * x;
    return s2 / static_cast<double>(v.size());
  };
  CHECK(std::fabs(var(acc0) - 4.0 * sigma * sigma) / (4.0 * sigma * sigma) <
        0.10);
  CHECK(std::fabs(var(acc1) - sigma * sigma) / (sigma * sigma) < 0.10);
}

TEST_CASE("momentum chain reductions") {
  // quadratic surrogate E(x) = 0.5 ||x - c||^2, grad = x - c
  std::vector<double> c = {0.3, 0.7, 0.5, 0.4};
  genesis::EnergyGradFn grad_fn = [&](const Tensor& x, std::vector<double>& joint,
                                      std::vector<double>& marginal) {
    std::size_t n = x.shape()[0], d = x.size() / n;
    std::vector<double> g(x.size());
    joint.assign(n, 0.0);
    marginal.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double diff = x.data()[i * d + j] - c[j];
        g[i * d + j] = diff;
        joint[i] += 0.5 * diff * diff;
      }
    return Tensor(x.shape(), std::move(g));
  };

  // zeta=0, gamma=0, one step: plain gradient step
  genesis::SGLDConfig cfg;
  cfg.steps = 1;
  cfg.friction = 0.0;
  cfg.step_size = 0.05;
  cfg.noise_variance = 0.0;
  Tensor x0({1, 4}, {0.9, 0.1, 0.2, 0.8});
  Rng rng(3);
  auto r = genesis::sgld_momentum(grad_fn, x0, cfg, rng);
  for (std::size_t j = 0; j < 4; ++j) {
    double want = x0.data()[j] - (cfg.step_size / 2) * (x0.data()[j] - c[j]);
    CHECK(r.samples.data()[j] == doctest::Approx(want).epsilon(1e-12));
  }

  // hand-rolled momentum recurrence matches the full chain exactly
  cfg.steps = 25;
  cfg.friction = 0.8;
  Rng rng2(4);
  auto rr = genesis::sgld_momentum(grad_fn, x0, cfg, rng2);
  std::vector<double> x(x0.data()), nu(4, 0.0);
  for (std::size_t s = 0; s < cfg.steps; ++s)
    for (std::size_t j = 0; j < 4; ++j) {
      nu[j] = cfg.friction * nu[j] - (cfg.step_size / 2) * (x[j] - c[j]);
      x[j] = std::clamp(x[j] + nu[j], 0.0, 1.0);
    }
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(rr.samples.data()[j] == doctest::Approx(x[j]).epsilon(1e-12));

  // convergence: after 150 steps the distance to c is below 1% of initial
  cfg.steps = 150;
  Rng rng3(5);
  auto conv = genesis::sgld_momentum(grad_fn, x0, cfg, rng3);
  double d0 = 0.0, dN = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    d0 += (x0.data()[j] - c[j]) * (x0.data()[j] - c[j]);
    dN += (conv.samples.data()[j] - c[j]) * (conv.samples.data()[j] - c[j]);
  }
  CHECK(std::sqrt(dN) < 0.01 * std::sqrt(d0));
  // energy trajectory covers the initial state plus every step
  CHECK(conv.joint_energy_trajectory.size() == cfg.steps + 1);
  CHECK(conv.joint_energy_trajectory.back() <
        conv.joint_energy_trajectory.front());
}

TEST_CASE("chains stand still without forces") {
  // zero-weight model: zero gradient everywhere; zeta=1, gamma=0
  ModelState m = init_model(ModelSpec::make_mlp({1, 2, 2}, {3}, 2), 0);
  for (auto& [name, t] : m.params)
    for (auto& v : t.mutable_data()) v = 0.0;
  genesis::SGLDConfig cfg;
  cfg.steps = 5;
  cfg.friction = 1.0;
  cfg.noise_variance = 0.0;
  Tensor x0({1, 1, 2, 2}, {0.2, 0.4, 0.6, 0.8});
  Rng rng(1);
  auto r = genesis::sgld_momentum(m, 0, x0, cfg, rng);
  CHECK(r.samples.data() == x0.data());
}

TEST_CASE("noise-free chains are deterministic and stay inside the box") {
  ModelState m = init_model(ModelSpec::make_mlp({1, 2, 2}, {6}, 3), 9);
  genesis::SGLDConfig cfg;
  cfg.steps = 30;
  cfg.noise_variance = 0.0;
  Tensor x0({2, 1, 2, 2}, {0.1, 0.9, 0.5, 0.3, 0.8, 0.2, 0.6, 0.4});
  Rng a(1), b(2);
  auto ra = genesis::sgld_momentum(m, 1, x0, cfg, a);
  auto rb = genesis::sgld_momentum(m, 1, x0, cfg, b);
  CHECK(ra.samples.data() == rb.samples.data());
  for (double v : ra.samples.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(ra.per_chain_joint.size() == cfg.steps + 1);
  CHECK(ra.per_chain_joint[0].size() == 2);
}

TEST_CASE("default schedules match the published settings") {
  auto tr = genesis::SGLDConfig::trades_style();
  CHECK(tr.steps == 150);
  CHECK(tr.friction == 0.8);
  CHECK(tr.step_size == 0.05);
  CHECK(tr.noise_variance == 0.001);
  CHECK(tr.sigma_pca == 0.01);
  auto sat = genesis::SGLDConfig::sat_style();
  CHECK(sat.steps == 20);
  CHECK(sat.friction == 0.5);
}

TEST_CASE("grid generation writes artifacts and honors per_class=0") {
  data::Dataset d = data::synth_images(2, 6, 3, 0.1);
  ModelState m = init_model(ModelSpec::make_smallcnn({3, 32, 32}, 2, 2, 2, 8), 4);
  auto pcas = genesis::fit_all_class_pca(d, 0.99);
  REQUIRE(pcas.size() == 2);
  genesis::SGLDConfig cfg;
  cfg.steps = 2;
  Rng rng(6);
  auto empty = genesis::generate_grid(m, pcas, cfg, 0, d, rng, "grid_none.png",
                                      "traj_none.csv");
  CHECK(empty.per_class.size() == 2);
  CHECK(empty.per_class[0].joint_energy_trajectory.empty());

  Rng rng2(7);
  auto g = genesis::generate_grid(m, pcas, cfg, 2, d, rng2, "grid_test.png",
                                  "traj_test.csv");
  CHECK(g.grid_w == 2 * 32);
  CHECK(g.grid_h == 2 * 32);
  std::ifstream png("grid_test.png", std::ios::binary);
  char sig[8];
  png.read(sig, 8);
  CHECK(static_cast<unsigned char>(sig[1]) == 'P');
  std::ifstream csv("traj_test.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "chain_id,step,joint_energy,marginal_energy");
  std::remove("grid_none.png");
  std::remove("traj_none.csv");
  std::remove("grid_test.png");
  std::remove("traj_test.csv");
}
