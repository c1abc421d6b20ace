#include <cmath>
#include <cstdio>
#include <fstream>

#include <doctest.h>

#include "core/rng.hpp"
#include "nets/model.hpp"

using namespace ebml;

namespace {

std::vector<double> random_input(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("init is deterministic and seed-sensitive") {
  ModelSpec spec = ModelSpec::make_mlp({4}, {8}, 3);
  ModelState a = init_model(spec, 5), b = init_model(spec, 5);
  ModelState c = init_model(spec, 6);
  CHECK(a.param_count() == 4 * 8 + 8 + 8 * 3 + 3);  // 67
  bool identical = true, differs = false;
  for (std::size_t p = 0; p < a.params.size(); ++p) {
    identical = identical && a.params[p].second.data() == b.params[p].second.data();
    differs = differs || a.params[p].second.data() != c.params[p].second.data();
  }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("biases start at zero, weights within the Kaiming bound") {
  ModelState m = init_model(ModelSpec::make_mlp({10}, {6}, 4), 3);
  for (double v : m.param("fc0.b").data()) CHECK(v == 0.0);
  double bound = std::sqrt(6.0 / 10.0);
  for (double v : m.param("fc0.w").data()) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("zero-weight model emits constant logits") {
  ModelState m = init_model(ModelSpec::make_smallcnn({1, 4, 4}, 3, 2, 2, 4), 1);
  for (auto& [name, t] : m.params)
    for (auto& v : t.mutable_data()) v = 0.0;
  m.param("fc1.b").mutable_data() = {0.3, 0.3, 0.3};
  Tensor x({2, 1, 4, 4}, random_input(32, 1));
  Tensor logits = forward(m, x, false);
  for (double v : logits.data()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("batched forward equals concatenated singleton forwards") {
  ModelState m = init_model(ModelSpec::make_smallcnn({2, 4, 4}, 5, 3, 4, 8), 21);
  auto v = random_input(2 * 2 * 4 * 4, 2);
  Tensor both({2, 2, 4, 4}, v);
  Tensor first({1, 2, 4, 4}, std::vector<double>(v.begin(), v.begin() + 32));
  Tensor second({1, 2, 4, 4}, std::vector<double>(v.begin() + 32, v.end()));
  Tensor lb = forward(m, both, false);
  Tensor l1 = forward(m, first, false);
  Tensor l2 = forward(m, second, false);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(lb.data()[j] == doctest::Approx(l1.data()[j]).epsilon(1e-12));
    CHECK(lb.data()[5 + j] == doctest::Approx(l2.data()[j]).epsilon(1e-12));
  }
}

TEST_CASE("input gradient of the logit sum matches finite differences") {
  ModelState m = init_model(ModelSpec::make_mlp({6}, {5}, 3), 8);
  auto xv = random_input(6, 3);
  auto f = [&](const std::vector<double>& v) {
    return sum(forward(m, Tensor({1, 6}, v), false)).item();
  };
  Tensor x({1, 6}, xv, true);
  sum(forward(m, x, false)).backward();
  for (std::size_t i = 0; i < 6; ++i) {
    double keep = xv[i];
    xv[i] = keep + 1e-3;
    double up = f(xv);
    xv[i] = keep - 1e-3;
    double dn = f(xv);
    xv[i] = keep;
    double fd = (up - dn) / 2e-3;
    CHECK(std::fabs(x.grad()[i] - fd) /
              std::max({std::fabs(fd), std::fabs(x.grad()[i]), 1e-8}) <
          1e-4);
  }
}

TEST_CASE("permuting output rows permutes logits identically") {
  ModelState m = init_model(ModelSpec::make_mlp({4}, {6}, 3), 9);
  Tensor x({2, 4}, random_input(8, 4));
  Tensor before = forward(m, x, false);
  // swap classes 0 and 2 in the last layer
  auto& w = m.param("fc1.w").mutable_data();  // [6,3]
  auto& b = m.param("fc1.b").mutable_data();
  for (std::size_t r = 0; r < 6; ++r) std::swap(w[r * 3 + 0], w[r * 3 + 2]);
  std::swap(b[0], b[2]);
  Tensor after = forward(m, x, false);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(after.data()[i * 3 + 0] == before.data()[i * 3 + 2]);
    CHECK(after.data()[i * 3 + 2] == before.data()[i * 3 + 0]);
    CHECK(after.data()[i * 3 + 1] == before.data()[i * 3 + 1]);
  }
}

TEST_CASE("predict breaks ties toward the lowest index") {
  ModelState m = init_model(ModelSpec::make_mlp({2}, {}, 3), 0);
  for (auto& [name, t] : m.params)
    for (auto& v : t.mutable_data()) v = 0.0;
  auto pred = predict(m, Tensor({1, 2}, {0.4, 0.6}));
  CHECK(pred == std::vector<std::size_t>{0});
}

TEST_CASE("attack-mode forward keeps parameters off the tape") {
  ModelState m = init_model(ModelSpec::make_mlp({3}, {4}, 2), 2);
  Tensor x({1, 3}, random_input(3, 5), true);
  sum(forward(m, x, false)).backward();
  CHECK(x.grad().size() == 3);
  CHECK_THROWS_AS(m.param("fc0.w").grad(), ContractError);
}

TEST_CASE("spec JSON and checkpoint round-trip") {
  ModelSpec spec = ModelSpec::make_smallcnn({3, 8, 8}, 7, 4, 6, 12);
  CHECK(ModelSpec::from_json(spec.to_json()).to_json() == spec.to_json());

  ModelState m = init_model(spec, 31);
  std::string p1 = "ckpt_roundtrip_a.ebml", p2 = "ckpt_roundtrip_b.ebml";
  save_checkpoint(m, p1);
  ModelState r = load_checkpoint(p1);
  save_checkpoint(r, p2);
  CHECK(slurp(p1) == slurp(p2));  // bit-identical
  CHECK(r.param_count() == m.param_count());
  for (std::size_t p = 0; p < m.params.size(); ++p) {
    CHECK(r.params[p].first == m.params[p].first);
    CHECK(r.params[p].second.data() == m.params[p].second.data());
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("invalid specs are rejected") {
  ModelSpec s;
  s.kind = ModelKind::smallcnn;
  s.input_shape = {3, 6, 6};  // not divisible by 4
  s.hidden = {4, 4, 8};
  s.num_classes = 2;
  CHECK_THROWS_AS(s.validate(), ContractError);
  CHECK_THROWS_AS(load_checkpoint("no_such_file.ebml"), ContractError);
}
