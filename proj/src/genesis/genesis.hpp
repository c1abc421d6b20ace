#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "nets/model.hpp"
#include "shell/data.hpp"

namespace ebml::genesis {

struct ClassPCA {
  std::size_t label = 0;
  std::vector<double> mean;                    // flattened image
  std::vector<std::vector<double>> components; // orthonormal rows
  std::vector<double> scales;                  // per-component std, non-increasing
  double retained_variance = 1.0;              // fraction actually retained

  std::size_t dim() const { return mean.size(); }
};

struct SGLDConfig {
  std::size_t steps = 150;
  double friction = 0.8;        // zeta
  double step_size = 0.05;      // eta
  double noise_variance = 0.001;  // gamma; noise std = sqrt(gamma)
  double sigma_pca = 0.01;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const;

  static SGLDConfig trades_style() { return {}; }
  static SGLDConfig sat_style() {
    SGLDConfig c;
    c.steps = 20;
    c.friction = 0.5;
    return c;
  }
};

struct GenerationResult {
  Tensor samples;                                // final chain states
  std::vector<double> joint_energy_trajectory;   // mean E(x,y) per step
  std::vector<std::vector<double>> per_chain_joint;     // [step][chain]
  std::vector<std::vector<double>> per_chain_marginal;  // [step][chain]
  double reference_energy = 0.0;  // mean E(x,y) over real class images
  double clamped_init_fraction = 0.0;
};

ClassPCA fit_class_pca(const std::vector<std::vector<double>>& images,
                       std::size_t label, double retained_variance);
std::vector<ClassPCA> fit_all_class_pca(const data::Dataset& d,
                                        double retained_variance);

// x0 = mu_y + sum_i scale_i * alpha_i * U_i with alpha_i ~ N(0, sigma),
// clamped to [0,1]. clamped_fraction, when given, receives the share of
// clipped coordinates.
std::vector<double> sample_init(const ClassPCA& pca, double sigma, Rng& rng,
                                double* clamped_fraction = nullptr);

// Per-step gradient oracle for a batch of chains: fills per-sample joint and
// marginal energies and returns the gradient of sum_i E(x_i, y) w.r.t. x.
using EnergyGradFn = std::function<Tensor(
    const Tensor& x, std::vector<double>& joint, std::vector<double>& marginal)>;

// nu <- zeta*nu - (eta/2) * grad E(x,y); x <- clamp(x + nu + noise)
GenerationResult sgld_momentum(const EnergyGradFn& grad_fn, const Tensor& x0,
                               const SGLDConfig& cfg, Rng& rng);
GenerationResult sgld_momentum(const ModelState& m, std::size_t y,
                               const Tensor& x0, const SGLDConfig& cfg,
                               Rng& rng);

struct GridResult {
  std::vector<GenerationResult> per_class;
  std::vector<unsigned char> grid_rgb;  // row of samples per class
  std::size_t grid_w = 0, grid_h = 0;
};

// per_class samples for each label; PNG grid (one row per class) and a
// trajectory CSV with columns chain_id, step, joint_energy, marginal_energy
GridResult generate_grid(const ModelState& m, const std::vector<ClassPCA>& pcas,
                         const SGLDConfig& cfg, std::size_t per_class,
                         const data::Dataset& reference, Rng& rng,
                         const std::string& png_path,
                         const std::string& csv_path);

}  // namespace ebml::genesis

namespace ebml::png {
// Minimal 8-bit RGB PNG writer (zlib-compressed)
void write_rgb(const std::string& path, const unsigned char* rgb,
               std::size_t width, std::size_t height);
}  // namespace ebml::png
