#include "genesis/genesis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "energy/energy.hpp"

namespace ebml::genesis {

void SGLDConfig::validate() const {
  if (!(friction >= 0.0 && friction <= 1.0))
    throw ContractError("sgld: friction must be in [0,1]");
  if (!(step_size > 0)) throw ContractError("sgld: step_size must be > 0");
  if (noise_variance < 0) throw ContractError("sgld: negative noise variance");
  if (!(sigma_pca > 0)) throw ContractError("sgld: sigma_pca must be > 0");
  if (clamp_lo >= clamp_hi) throw ContractError("sgld: empty clamp range");
}

ClassPCA fit_class_pca(const std::vector<std::vector<double>>& images,
                       std::size_t label, double retained_variance) {
  if (images.empty()) throw ContractError("fit_class_pca: empty class");
  std::size_t n = images.size(), d = images[0].size();
  ClassPCA pca;
  pca.label = label;
  pca.mean.assign(d, 0.0);
  for (const auto& img : images) {
    if (img.size() != d) throw ContractError("fit_class_pca: ragged images");
    for (std::size_t j = 0; j < d; ++j) pca.mean[j] += img[j];
  }
  for (auto& v : pca.mean) v /= static_cast<double>(n);
  if (n == 1) {
    pca.retained_variance = 1.0;
    return pca;
  }
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          images[i][j] - pca.mean[j];
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) total += sv(i) * sv(i);
  if (total <= 0.0) {
    pca.retained_variance = 1.0;
    return pca;
  }
  double acc = 0.0;
  double norm = std::sqrt(static_cast<double>(n - 1));
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    acc += sv(i) * sv(i);
    pca.scales.push_back(sv(i) / norm);
    std::vector<double> row(d);
    for (std::size_t j = 0; j < d; ++j)
      row[j] = svd.matrixV()(static_cast<Eigen::Index>(j), i);
    pca.components.push_back(std::move(row));
    if (acc / total >= retained_variance) break;
  }
  pca.retained_variance = acc / total;
  return pca;
}

std::vector<ClassPCA> fit_all_class_pca(const data::Dataset& d,
                                        double retained_variance) {
  std::vector<ClassPCA> out;
  std::size_t dim = d.sample_size();
  for (std::size_t c = 0; c < d.num_classes; ++c) {
    std::vector<std::vector<double>> imgs;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.labels[i] == c) {
        std::vector<double> img(dim);
        std::copy_n(
            d.images.data().begin() + static_cast<std::ptrdiff_t>(i * dim), dim,
            img.begin());
        imgs.push_back(std::move(img));
      }
    out.push_back(fit_class_pca(imgs, c, retained_variance));
  }
  return out;
}

std::vector<double> sample_init(const ClassPCA& pca, double sigma, Rng& rng,
                                double* clamped_fraction) {
  if (!(sigma > 0)) throw ContractError("sample_init: sigma must be > 0");
  std::vector<double> x = pca.mean;
  for (std::size_t i = 0; i < pca.components.size(); ++i) {
    double alpha = rng.gaussian(0.0, sigma);
    double coef = pca.scales[i] * alpha;
    const auto& u = pca.components[i];
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += coef * u[j];
  }
  std::size_t clamped = 0;
  for (auto& v : x) {
    double c = std::clamp(v, 0.0, 1.0);
    clamped += c != v;
    v = c;
  }
  if (clamped_fraction)
    *clamped_fraction = static_cast<double>(clamped) / static_cast<double>(x.size());
  return x;
}

GenerationResult sgld_momentum(const EnergyGradFn& grad_fn, const Tensor& x0,
                               const SGLDConfig& cfg, Rng& rng) {
  cfg.validate();
  for (double v : x0.data())
    if (v < cfg.clamp_lo || v > cfg.clamp_hi)
      throw ContractError("sgld: x0 outside clamp range");
  std::size_t chains = x0.shape()[0];
  GenerationResult res;
  Tensor x = x0.detach();
  std::vector<double> nu(x.size(), 0.0);
  double noise_std = std::sqrt(cfg.noise_variance);

  auto record = [&](const Tensor& cur) {
    std::vector<double> joint(chains), marginal(chains);
    Tensor g = grad_fn(cur, joint, marginal);
    double mj = 0.0;
    for (double v : joint) mj += v;
    res.joint_energy_trajectory.push_back(mj / static_cast<double>(chains));
    res.per_chain_joint.push_back(std::move(joint));
    res.per_chain_marginal.push_back(std::move(marginal));
    return g;
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor g = record(x);
    std::vector<double> next(x.data());
    for (std::size_t i = 0; i < next.size(); ++i) {
      nu[i] = cfg.friction * nu[i] - 0.5 * cfg.step_size * g.data()[i];
      double eps = noise_std > 0 ? rng.gaussian(0.0, noise_std) : 0.0;
      next[i] = std::clamp(next[i] + nu[i] + eps, cfg.clamp_lo, cfg.clamp_hi);
    }
    x = Tensor(x.shape(), std::move(next));
  }
  record(x);  // final state energies, gradient discarded
  res.samples = x;
  return res;
}

namespace {

EnergyGradFn model_energy_grad(const ModelState& m, std::size_t y) {
  return [&m, y](const Tensor& x, std::vector<double>& joint,
                 std::vector<double>& marginal) {
    Tensor leaf(x.shape(), x.data(), true);
    Tensor logits = forward(m, leaf, false);
    std::size_t n = logits.shape()[0], k = logits.shape()[1];
    std::vector<double> row(k);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(logits.data().begin() + static_cast<std::ptrdiff_t>(i * k), k,
                  row.begin());
      joint[i] = energy::joint_energy(row, y);
      marginal[i] = energy::marginal_energy(row);
    }
    std::vector<std::size_t> ys(n, y);
    sum(energy::joint_energy_rows(logits, ys)).backward();
    return Tensor(x.shape(), leaf.grad());
  };
}

}  // namespace

GenerationResult sgld_momentum(const ModelState& m, std::size_t y,
                               const Tensor& x0, const SGLDConfig& cfg,
                               Rng& rng) {
  if (y >= m.spec.num_classes) throw ContractError("sgld: label out of range");
  return sgld_momentum(model_energy_grad(m, y), x0, cfg, rng);
}

GridResult generate_grid(const ModelState& m, const std::vector<ClassPCA>& pcas,
                         const SGLDConfig& cfg, std::size_t per_class,
                         const data::Dataset& reference, Rng& rng,
                         const std::string& png_path,
                         const std::string& csv_path) {
  cfg.validate();
  GridResult grid;
  const Shape& in = m.spec.input_shape;
  if (in.size() != 3) throw ContractError("generate_grid: image models only");
  std::size_t c = in[0], h = in[1], w = in[2], d = c * h * w;

  std::ofstream csv(csv_path);
  if (!csv) throw ContractError("cannot open '" + csv_path + "'");
  csv << "chain_id,step,joint_energy,marginal_energy\n";

  std::size_t classes = pcas.size();
  grid.grid_w = std::max<std::size_t>(1, per_class) * w;
  grid.grid_h = classes * h;
  grid.grid_rgb.assign(grid.grid_w * grid.grid_h * 3, 0);

  char buf[160];
  for (std::size_t ci = 0; ci < classes; ++ci) {
    const ClassPCA& pca = pcas[ci];
    if (pca.dim() != d) throw ContractError("generate_grid: PCA dim mismatch");
    GenerationResult res;
    if (per_class > 0) {
      std::vector<double> flat(per_class * d);
      double clamped = 0.0;
      for (std::size_t s = 0; s < per_class; ++s) {
        double frac = 0.0;
        auto x0 = sample_init(pca, cfg.sigma_pca, rng, &frac);
        clamped += frac;
        std::copy(x0.begin(), x0.end(),
                  flat.begin() + static_cast<std::ptrdiff_t>(s * d));
      }
      Tensor x0(Shape{per_class, c, h, w}, std::move(flat));
      res = sgld_momentum(m, pca.label, x0, cfg, rng);
      res.clamped_init_fraction = clamped / static_cast<double>(per_class);

      // reference: mean E(x,y) over real images of this class
      std::vector<std::size_t> cls_idx;
      for (std::size_t i = 0; i < reference.size(); ++i)
        if (reference.labels[i] == pca.label) cls_idx.push_back(i);
      if (!cls_idx.empty()) {
        data::Dataset refc = reference.subset(cls_idx);
        auto pairs = energy::batch_energies(m, refc.images, refc.labels);
        double s = 0.0;
        for (const auto& p : pairs) s += p.joint;
        res.reference_energy = s / static_cast<double>(pairs.size());
      }

      for (std::size_t step = 0; step < res.per_chain_joint.size(); ++step)
        for (std::size_t ch = 0; ch < per_class; ++ch) {
          std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n",
                        ci * per_class + ch, step,
                        res.per_chain_joint[step][ch],
                        res.per_chain_marginal[step][ch]);
          csv << buf;
        }

      // paint the row: channel planes -> interleaved RGB
      for (std::size_t s = 0; s < per_class; ++s)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) {
              double v = c == 3
                             ? res.samples.data()[((s * c + ch) * h + y) * w + x]
                             : res.samples.data()[(s * c * h + y) * w + x];
              std::size_t gy = ci * h + y, gx = s * w + x;
              grid.grid_rgb[(gy * grid.grid_w + gx) * 3 + ch] =
                  static_cast<unsigned char>(std::lround(v * 255.0));
            }
    }
    grid.per_class.push_back(std::move(res));
  }
  png::write_rgb(png_path, grid.grid_rgb.data(), grid.grid_w, grid.grid_h);
  return grid;
}

}  // namespace ebml::genesis
