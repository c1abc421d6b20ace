#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace ebml::data {

struct Dataset {
  Tensor images;                     // [N, C, H, W], values in [0,1]
  std::vector<std::size_t> labels;   // < num_classes
  std::size_t num_classes = 0;
  std::string split;                 // "train", "test", ...
  std::string provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return images.size() / labels.size(); }

  Dataset subset(const std::vector<std::size_t>& indices) const;
  Dataset take(std::size_t count) const;
  void validate() const;
};

// Canonical binary batch layout: 3073-byte records, 1 label byte then 3072
// pixel bytes (R plane, G plane, B plane, each 32x32 row-major). Pixels are
// scaled to [0,1] by /255; subset = first `count` records (0 = all).
Dataset load_cifar10_binary(const std::string& path, std::size_t count = 0);
void write_cifar10_binary(const Dataset& d, const std::string& path);

// Isotropic unit-variance Gaussian blobs at separation * (unit class
// anchors), affinely rescaled into [0,1]. Images come out as [N, 1, 1, dim].
Dataset synth_mixture(std::size_t k_classes, std::size_t n_per_class,
                      std::size_t dim, double separation, std::uint64_t seed);

// Deterministic class-structured 32x32x3 image set: per-class smooth
// low-frequency templates plus per-sample jitter and noise, quantized to
// 8-bit levels so it round-trips through the binary batch format.
//
// marker > 0 additionally stamps a high-contrast 8x8 class-specific patch
// into every image. The smooth templates carry a low-amplitude signal
// spread over all pixels — separable, but erasable by an l-inf adversary
// whose leverage grows with dimension — so robust training needs the
// concentrated patch signal to have anything to latch onto.
Dataset synth_images(std::size_t k_classes, std::size_t n_per_class,
                     std::uint64_t seed, double noise = 0.12,
                     double marker = 0.0);

}  // namespace ebml::data
