#include "shell/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ebml::data {

void Dataset::validate() const {
  if (labels.empty()) throw ContractError("dataset: empty");
  if (images.shape().empty() || images.shape()[0] != labels.size())
    throw ContractError("dataset: image/label count mismatch");
  for (auto y : labels)
    if (y >= num_classes) throw ContractError("dataset: label out of range");
  for (double v : images.data())
    if (v < 0.0 || v > 1.0)
      throw ContractError("dataset: pixel outside [0,1]");
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  std::size_t d = sample_size();
  std::vector<double> img(indices.size() * d);
  std::vector<std::size_t> lab(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::size_t src = indices[i];
    if (src >= size()) throw ContractError("dataset subset: index out of range");
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                img.begin() + static_cast<std::ptrdiff_t>(i * d));
    lab[i] = labels[src];
  }
  Shape s = images.shape();
  s[0] = indices.size();
  Dataset out;
  out.images = Tensor(std::move(s), std::move(img));
  out.labels = std::move(lab);
  out.num_classes = num_classes;
  out.split = split;
  out.provenance = provenance;
  return out;
}

Dataset Dataset::take(std::size_t count) const {
  std::vector<std::size_t> idx(std::min(count, size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return subset(idx);
}

Dataset load_cifar10_binary(const std::string& path, std::size_t count) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw ContractError("cannot open '" + path + "'");
  std::size_t bytes = static_cast<std::size_t>(is.tellg());
  if (bytes == 0 || bytes % kRecord != 0)
    throw ContractError("'" + path + "': size " + std::to_string(bytes) +
                        " is not a multiple of 3073");
  std::size_t n = bytes / kRecord;
  if (count > 0) n = std::min(n, count);
  is.seekg(0);
  std::vector<double> img(n * kPixels);
  std::vector<std::size_t> lab(n);
  std::vector<unsigned char> rec(kRecord);
  for (std::size_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!is) throw ContractError("'" + path + "': truncated record");
    if (rec[0] >= 10)
      throw ContractError("'" + path + "': label byte " +
                          std::to_string(rec[0]) + " out of range");
    lab[i] = rec[0];
    for (std::size_t j = 0; j < kPixels; ++j)
      img[i * kPixels + j] = rec[1 + j] / 255.0;
  }
  Dataset d;
  d.images = Tensor({n, 3, 32, 32}, std::move(img));
  d.labels = std::move(lab);
  d.num_classes = 10;
  d.provenance = "cifar10-binary:" + path;
  return d;
}

void write_cifar10_binary(const Dataset& d, const std::string& path) {
  if (d.sample_size() != 3072)
    throw ContractError("write_cifar10_binary: samples must be 3x32x32");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open '" + path + "' for writing");
  std::vector<unsigned char> rec(3073);
  for (std::size_t i = 0; i < d.size(); ++i) {
    rec[0] = static_cast<unsigned char>(d.labels[i]);
    for (std::size_t j = 0; j < 3072; ++j) {
      double v = d.images.data()[i * 3072 + j];
      rec[1 + j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(rec.data()), 3073);
  }
  if (!os) throw ContractError("write failed: " + path);
}

Dataset synth_mixture(std::size_t k_classes, std::size_t n_per_class,
                      std::size_t dim, double separation, std::uint64_t seed) {
  if (k_classes == 0 || n_per_class == 0 || dim == 0)
    throw ContractError("synth_mixture: invalid sizes");
  if (separation <= 0)
    throw ContractError("synth_mixture: separation must be positive");
  Rng rng(seed);
  // deterministic unit anchors per class
  std::vector<std::vector<double>> anchors(k_classes,
                                           std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < k_classes; ++c) {
    double norm = 0.0;
    for (auto& v : anchors[c]) {
      v = rng.gaussian(0.0, 1.0);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : anchors[c]) v /= norm;
  }
  std::size_t n = k_classes * n_per_class;
  std::vector<double> raw(n * dim);
  std::vector<std::size_t> lab(n);
  for (std::size_t c = 0, i = 0; c < k_classes; ++c)
    for (std::size_t s = 0; s < n_per_class; ++s, ++i) {
      lab[i] = c;
      for (std::size_t j = 0; j < dim; ++j)
        raw[i * dim + j] = separation * anchors[c][j] + rng.gaussian(0.0, 1.0);
    }
  // affine rescale into [0,1]
  double lo = *std::min_element(raw.begin(), raw.end());
  double hi = *std::max_element(raw.begin(), raw.end());
  double span = hi > lo ? hi - lo : 1.0;
  for (auto& v : raw) v = (v - lo) / span;
  Dataset d;
  d.images = Tensor({n, 1, 1, dim}, std::move(raw));
  d.labels = std::move(lab);
  d.num_classes = k_classes;
  d.provenance = "synth-mixture seed=" + std::to_string(seed);
  return d;
}

namespace {

// bilinear upsample of a g x g grid to 32x32
void upsample(const std::vector<double>& grid, std::size_t g, double* out) {
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      double fy = (y + 0.5) / 32.0 * g - 0.5;
      double fx = (x + 0.5) / 32.0 * g - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(g - 1));
      fx = std::clamp(fx, 0.0, static_cast<double>(g - 1));
      std::size_t y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      std::size_t y1 = std::min(y0 + 1, g - 1), x1 = std::min(x0 + 1, g - 1);
      double wy = fy - y0, wx = fx - x0;
      out[y * 32 + x] = (1 - wy) * ((1 - wx) * grid[y0 * g + x0] + wx * grid[y0 * g + x1]) +
                        wy * ((1 - wx) * grid[y1 * g + x0] + wx * grid[y1 * g + x1]);
    }
}

}  // namespace

Dataset synth_images(std::size_t k_classes, std::size_t n_per_class,
                     std::uint64_t seed, double noise, double marker) {
  if (k_classes == 0 || k_classes > 10 || n_per_class == 0)
    throw ContractError("synth_images: invalid sizes (k in [1,10])");
  if (marker < 0.0) throw ContractError("synth_images: negative marker");
  Rng rng(seed);
  constexpr std::size_t g = 4;
  // smooth templates: a base pattern shared by every class plus a
  // class-specific component, so classes share most of their features
  // (as natural image categories do) while remaining separable
  constexpr double kClassShare = 0.35;
  std::vector<double> base(3 * 1024);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<double> grid(g * g);
    for (auto& v : grid) v = rng.uniform(0.1, 0.9);
    upsample(grid, g, base.data() + ch * 1024);
  }
  std::vector<std::vector<double>> templates(k_classes,
                                             std::vector<double>(3 * 1024));
  for (std::size_t c = 0; c < k_classes; ++c)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      std::vector<double> grid(g * g);
      for (auto& v : grid) v = rng.uniform(0.1, 0.9);
      upsample(grid, g, templates[c].data() + ch * 1024);
      for (std::size_t p = 0; p < 1024; ++p) {
        double& t = templates[c][ch * 1024 + p];
        t = (1.0 - kClassShare) * base[ch * 1024 + p] + kClassShare * t;
      }
    }
  // optional concentrated class signal: an 8x8 high-contrast pattern per
  // class at a class-dependent position, drawn from a side stream so the
  // default (marker = 0) leaves the main random stream untouched
  std::vector<std::vector<double>> marks;
  if (marker > 0.0) {
    marks.assign(k_classes, std::vector<double>(64));
    for (std::size_t c = 0; c < k_classes; ++c) {
      Rng mrng(seed * 1000003 + c);
      for (auto& v : marks[c]) v = mrng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    }
  }
  std::size_t n = k_classes * n_per_class;
  std::vector<double> img(n * 3072);
  std::vector<std::size_t> lab(n);
  for (std::size_t c = 0, i = 0; c < k_classes; ++c)
    for (std::size_t s = 0; s < n_per_class; ++s, ++i) {
      lab[i] = c;
      // circular shift and amplitude jitter
      std::size_t dy = rng.index(9), dx = rng.index(9);
      double amp = rng.uniform(0.6, 1.0);
      std::size_t my = 2 + (c / 5) * 14, mx = 2 + (c % 5) * 5;
      double mamp = marker > 0.0 ? marker * rng.uniform(0.5, 1.0) : 0.0;
      // per-sample smooth distortion
      std::vector<double> pat(1024);
      {
        std::vector<double> grid(4);
        for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
        upsample(grid, 2, pat.data());
      }
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < 32; ++y)
          for (std::size_t x = 0; x < 32; ++x) {
            double t = templates[c][ch * 1024 + ((y + dy) % 32) * 32 +
                                    (x + dx) % 32];
            double v = 0.5 + amp * (t - 0.5) + 0.15 * pat[y * 32 + x] +
                       rng.gaussian(0.0, noise);
            if (mamp > 0.0 && y >= my && y < my + 8 && x >= mx && x < mx + 8)
              v += mamp * marks[c][(y - my) * 8 + (x - mx)];
            v = std::clamp(v, 0.0, 1.0);
            // quantize to 8-bit levels for binary-format fidelity
            img[i * 3072 + ch * 1024 + y * 32 + x] =
                std::lround(v * 255.0) / 255.0;
          }
    }
  Dataset d;
  d.images = Tensor({n, 3, 32, 32}, std::move(img));
  d.labels = std::move(lab);
  d.num_classes = std::max<std::size_t>(k_classes, 2);
  d.provenance = "synth-images seed=" + std::to_string(seed);
  return d;
}

}  // namespace ebml::data
