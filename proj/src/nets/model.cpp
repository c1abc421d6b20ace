#include "nets/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "core/rng.hpp"

namespace ebml {

std::string to_string(ModelKind k) {
  return k == ModelKind::mlp ? "mlp" : "smallcnn";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::mlp;
  if (s == "smallcnn") return ModelKind::smallcnn;
  throw ContractError("unknown model kind '" + s + "'");
}

ModelSpec ModelSpec::make_mlp(Shape input_shape, std::vector<std::size_t> hidden,
                              std::size_t num_classes) {
  ModelSpec s;
  s.kind = ModelKind::mlp;
  s.input_shape = std::move(input_shape);
  s.hidden = std::move(hidden);
  s.num_classes = num_classes;
  s.validate();
  return s;
}

ModelSpec ModelSpec::make_smallcnn(Shape input_shape, std::size_t num_classes,
                                   std::size_t c1, std::size_t c2,
                                   std::size_t dense) {
  ModelSpec s;
  s.kind = ModelKind::smallcnn;
  s.input_shape = std::move(input_shape);
  s.hidden = {c1, c2, dense};
  s.num_classes = num_classes;
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  if (num_classes < 1) throw ContractError("num_classes must be positive");
  if (input_shape.empty() || input_size() == 0)
    throw ContractError("empty input shape");
  if (activation != "relu") throw ContractError("unsupported activation");
  if (kind == ModelKind::smallcnn) {
    if (input_shape.size() != 3)
      throw ContractError("smallcnn needs a (c,h,w) input shape");
    if (hidden.size() != 3)
      throw ContractError("smallcnn hidden must be {c1,c2,dense}");
    if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0)
      throw ContractError("smallcnn needs h,w divisible by 4");
  }
}

std::string ModelSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["input_shape"] = input_shape;
  j["hidden"] = hidden;
  j["num_classes"] = num_classes;
  j["activation"] = activation;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelSpec s;
  s.kind = model_kind_from_string(j.at("kind").get<std::string>());
  s.input_shape = j.at("input_shape").get<Shape>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.activation = j.at("activation").get<std::string>();
  s.validate();
  return s;
}

Tensor& ModelState::param(const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

const Tensor& ModelState::param(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

std::size_t ModelState::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

void ModelState::zero_grads() {
  for (auto& [name, t] : params) t.zero_grad();
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> d(shape_size(shape));
  for (auto& x : d) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(d), true);
}

}  // namespace

ModelState init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelState m;
  m.spec = spec;
  m.rng_seed = seed;
  Rng rng(seed);
  if (spec.kind == ModelKind::mlp) {
    std::size_t in = spec.input_size();
    std::vector<std::size_t> widths = spec.hidden;
    widths.push_back(spec.num_classes);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      std::size_t out = widths[i];
      m.params.emplace_back("fc" + std::to_string(i) + ".w",
                            kaiming_uniform({in, out}, in, rng));
      m.params.emplace_back("fc" + std::to_string(i) + ".b",
                            Tensor::zeros({out}, true));
      in = out;
    }
  } else {
    std::size_t c = spec.input_shape[0];
    std::size_t h = spec.input_shape[1], w = spec.input_shape[2];
    std::size_t c1 = spec.hidden[0], c2 = spec.hidden[1], dense = spec.hidden[2];
    m.params.emplace_back("conv0.w",
                          kaiming_uniform({c1, c, 3, 3}, c * 9, rng));
    m.params.emplace_back("conv0.b", Tensor::zeros({c1}, true));
    m.params.emplace_back("conv1.w",
                          kaiming_uniform({c2, c1, 3, 3}, c1 * 9, rng));
    m.params.emplace_back("conv1.b", Tensor::zeros({c2}, true));
    std::size_t flat = c2 * (h / 4) * (w / 4);
    m.params.emplace_back("fc0.w", kaiming_uniform({flat, dense}, flat, rng));
    m.params.emplace_back("fc0.b", Tensor::zeros({dense}, true));
    m.params.emplace_back("fc1.w",
                          kaiming_uniform({dense, spec.num_classes}, dense, rng));
    m.params.emplace_back("fc1.b", Tensor::zeros({spec.num_classes}, true));
  }
  return m;
}

Tensor forward(const ModelState& m, const Tensor& x, bool trainable_params) {
  auto p = [&](const std::string& name) -> Tensor {
    const Tensor& t = m.param(name);
    return trainable_params ? t : t.detach();
  };
  std::size_t batch = x.shape().empty() ? 1 : x.shape()[0];
  if (m.spec.kind == ModelKind::mlp) {
    if (x.size() != batch * m.spec.input_size())
      throw ContractError("forward: input size mismatch");
    Tensor h = reshape(x, {batch, m.spec.input_size()});
    std::size_t layers = m.spec.hidden.size() + 1;
    for (std::size_t i = 0; i < layers; ++i) {
      std::string fc = "fc" + std::to_string(i);
      h = add_rowvec(matmul(h, p(fc + ".w")), p(fc + ".b"));
      if (i + 1 < layers) h = relu(h);
    }
    return h;
  }
  const Shape& in = m.spec.input_shape;
  if (x.ndim() != 4 || x.shape()[1] != in[0] || x.shape()[2] != in[1] ||
      x.shape()[3] != in[2])
    throw ContractError("forward: expected input shape [n," +
                        shape_str(in) + "], got " + shape_str(x.shape()));
  Tensor h = relu(conv2d(x, p("conv0.w"), p("conv0.b"), 2, 1));
  h = relu(conv2d(h, p("conv1.w"), p("conv1.b"), 2, 1));
  std::size_t flat = h.size() / batch;
  h = relu(add_rowvec(matmul(reshape(h, {batch, flat}), p("fc0.w")), p("fc0.b")));
  return add_rowvec(matmul(h, p("fc1.w")), p("fc1.b"));
}

std::vector<std::size_t> predict(const ModelState& m, const Tensor& x) {
  Tensor logits = forward(m, x, false);
  std::size_t n = logits.shape()[0], k = logits.shape()[1];
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.data()[i * k + j] > logits.data()[i * k + best]) best = j;
    out[i] = best;
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'E', 'B', 'M', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ContractError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ModelState& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  nlohmann::json meta;
  meta["spec"] = nlohmann::json::parse(m.spec.to_json());
  meta["rng_seed"] = m.rng_seed;
  std::string j = meta.dump();
  write_pod(os, static_cast<std::uint32_t>(j.size()));
  os.write(j.data(), static_cast<std::streamsize>(j.size()));
  for (const auto& [name, t] : m.params) {
    write_pod(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint32_t>(t.ndim()));
    for (auto e : t.shape()) write_pod(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw ContractError("checkpoint write failed: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ContractError("checkpoint: bad magic");
  if (read_pod<std::uint32_t>(is) != kVersion)
    throw ContractError("checkpoint: unsupported version");
  auto jlen = read_pod<std::uint32_t>(is);
  std::string j(jlen, '\0');
  is.read(j.data(), jlen);
  if (!is) throw ContractError("checkpoint: truncated header");
  nlohmann::json meta = nlohmann::json::parse(j);
  ModelState m;
  m.spec = ModelSpec::from_json(meta.at("spec").dump());
  m.rng_seed = meta.at("rng_seed").get<std::uint64_t>();
  while (true) {
    std::uint32_t nlen;
    is.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    if (is.eof()) break;
    if (!is) throw ContractError("checkpoint: truncated record");
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    auto rank = read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    std::vector<double> data(shape_size(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw ContractError("checkpoint: truncated parameter data");
    m.params.emplace_back(name, Tensor(std::move(shape), std::move(data), true));
  }
  return m;
}

}  // namespace ebml
