#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace ebml {

enum class ModelKind { mlp, smallcnn };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ModelSpec {
  ModelKind kind = ModelKind::mlp;
  Shape input_shape;                 // mlp: flattened input; smallcnn: {c,h,w}
  std::vector<std::size_t> hidden;   // mlp: hidden widths; smallcnn: {c1,c2,dense}
  std::size_t num_classes = 2;
  std::string activation = "relu";

  std::size_t input_size() const { return shape_size(input_shape); }

  static ModelSpec make_mlp(Shape input_shape, std::vector<std::size_t> hidden,
                            std::size_t num_classes);
  // 2 conv blocks (3x3, stride 2, pad 1) + 2 dense layers.
  static ModelSpec make_smallcnn(Shape input_shape, std::size_t num_classes,
                                 std::size_t c1 = 16, std::size_t c2 = 32,
                                 std::size_t dense = 128);

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);

  void validate() const;
};

struct ModelState {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> params;  // ordered, named
  std::uint64_t rng_seed = 0;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t param_count() const;
  void zero_grads();
};

ModelState init_model(const ModelSpec& spec, std::uint64_t seed);

// logits [batch, K]; differentiable w.r.t. x always, w.r.t. parameters only
// when trainable_params is set (attacks run with it off).
Tensor forward(const ModelState& m, const Tensor& x, bool trainable_params);

// argmax with lowest-index tie-break
std::vector<std::size_t> predict(const ModelState& m, const Tensor& x);

void save_checkpoint(const ModelState& m, const std::string& path);
ModelState load_checkpoint(const std::string& path);

}  // namespace ebml
