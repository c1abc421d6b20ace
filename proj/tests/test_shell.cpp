#include <cstdio>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "shell/data.hpp"
#include "shell/pipeline.hpp"

using namespace ebml;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& child = "") const {
    return (child.empty() ? path : path / child).string();
  }
};

}  // namespace

TEST_CASE("binary batch loader") {
  TempDir tmp("ebml_loader_test");
  // one record: label 7, all pixels 255
  {
    std::ofstream os(tmp.str("one.bin"), std::ios::binary);
    char label = 7;
    os.write(&label, 1);
    std::vector<char> px(3072, static_cast<char>(255));
    os.write(px.data(), 3072);
  }
  data::Dataset d = data::load_cifar10_binary(tmp.str("one.bin"));
  CHECK(d.size() == 1);
  CHECK(d.labels[0] == 7);
  for (double v : d.images.data()) CHECK(v == 1.0);
  CHECK(d.images.shape() == Shape{1, 3, 32, 32});

  // size arithmetic and count subsetting
  data::Dataset synth = data::synth_images(3, 4, 1);
  data::write_cifar10_binary(synth, tmp.str("batch.bin"));
  CHECK(fs::file_size(tmp.str("batch.bin")) == 12 * 3073);
  CHECK(data::load_cifar10_binary(tmp.str("batch.bin")).size() == 12);
  CHECK(data::load_cifar10_binary(tmp.str("batch.bin"), 5).size() == 5);

  // round trip is bit-identical
  data::Dataset back = data::load_cifar10_binary(tmp.str("batch.bin"));
  data::write_cifar10_binary(back, tmp.str("batch2.bin"));
  CHECK(slurp(tmp.str("batch.bin")) == slurp(tmp.str("batch2.bin")));

  // truncated file
  {
    std::ofstream os(tmp.str("bad.bin"), std::ios::binary);
    os.write("abc", 3);
  }
  CHECK_THROWS_AS(data::load_cifar10_binary(tmp.str("bad.bin")), ContractError);
  // label out of range
  {
    std::ofstream os(tmp.str("badlabel.bin"), std::ios::binary);
    char label = 11;
    os.write(&label, 1);
    std::vector<char> px(3072, 0);
    os.write(px.data(), 3072);
  }
  CHECK_THROWS_AS(data::load_cifar10_binary(tmp.str("badlabel.bin")),
                  ContractError);
}

TEST_CASE("synthetic mixture generator") {
  data::Dataset one = data::synth_mixture(4, 1, 2, 6.0, 3);
  CHECK(one.size() == 4);
  data::Dataset d = data::synth_mixture(3, 50, 5, 6.0, 3);
  CHECK(d.size() == 150);
  CHECK(d.num_classes == 3);
  for (double v : d.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  d.validate();
  // determinism
  data::Dataset d2 = data::synth_mixture(3, 50, 5, 6.0, 3);
  CHECK(d.images.data() == d2.images.data());
  CHECK_THROWS_AS(data::synth_mixture(3, 50, 5, 0.0, 3), ContractError);
}

TEST_CASE("synthetic images survive the binary format") {
  data::Dataset d = data::synth_images(4, 5, 9, 0.15);
  CHECK(d.size() == 20);
  CHECK(d.images.shape() == Shape{20, 3, 32, 32});
  TempDir tmp("ebml_synth_test");
  data::write_cifar10_binary(d, tmp.str("s.bin"));
  data::Dataset back = data::load_cifar10_binary(tmp.str("s.bin"));
  CHECK(back.images.data() == d.images.data());  // pre-quantized generator
  CHECK(back.labels == d.labels);
}

TEST_CASE("strict config validation") {
  CHECK_THROWS_AS(shell::parse_config({{"bogus_key", 1}}, json::object()),
                  shell::ConfigError);
  CHECK_THROWS_AS(shell::parse_config({{"seed", "not-a-number"}}, json::object()),
                  shell::ConfigError);
  CHECK_THROWS_AS(
      shell::parse_config({{"train", {{"method", "made-up"}}}}, json::object()),
      shell::ConfigError);
  CHECK_THROWS_AS(shell::parse_config({{"data", {{"source", "imagenet"}}}},
                                      json::object()),
                  shell::ConfigError);
  CHECK_THROWS_AS(shell::parse_config(json::object(), {{"nope", 1}}),
                  shell::ConfigError);
  // target only makes sense for the targeted loss
  CHECK_THROWS_AS(shell::parse_config({{"attack", {{"target", 3}}}},
                                      json::object()),
                  shell::ConfigError);

  shell::ExperimentConfig cfg = shell::parse_config(
      {{"seed", 11},
       {"train", {{"method", "trades"}, {"beta", 7.0}}},
       {"attack", {{"loss", "kl_trades"}, {"epsilon", 0.05}}}},
      {{"epochs", 3}});
  CHECK(cfg.seed == 11);
  CHECK(cfg.train.method == train::Method::trades);
  CHECK(cfg.train.beta == 7.0);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.attack.epsilon == 0.05);
}

TEST_CASE("identity residuals over random draws") {
  auto rep = shell::verify_identities(2000, 42);
  CHECK(rep.max_eq_ce < 1e-9);
  CHECK(rep.max_kl_decomp < 1e-9);
  CHECK(rep.max_trades < 1e-9);
  CHECK(rep.max_sat_limit < 1e-3);
}

TEST_CASE("histogram emission") {
  std::vector<energy::EnergyPair> nat, adv;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    energy::EnergyPair p;
    p.marginal = rng.gaussian(-5.0, 1.0);
    p.joint = p.marginal + rng.uniform(0.0, 2.0);
    nat.push_back(p);
    p.marginal -= 1.5;
    p.joint -= 1.0;
    adv.push_back(p);
  }
  TempDir tmp("ebml_hist_test");
  shell::emit_energy_histograms(nat, adv, 16, tmp.str("m.csv"), tmp.str("j.csv"));
  auto count_sum = [&](const std::string& path) {
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "bin_left,bin_right,count_natural,count_adversarial");
    std::size_t rows = 0, cn = 0, ca = 0;
    while (std::getline(is, line)) {
      ++rows;
      auto p1 = line.rfind(',');
      auto p2 = line.rfind(',', p1 - 1);
      ca += std::stoul(line.substr(p1 + 1));
      cn += std::stoul(line.substr(p2 + 1, p1 - p2 - 1));
    }
    CHECK(rows == 16);
    CHECK(cn == 200);
    CHECK(ca == 200);
  };
  count_sum(tmp.str("m.csv"));
  count_sum(tmp.str("j.csv"));

  // identical inputs produce identical count columns
  shell::emit_energy_histograms(nat, nat, 8, tmp.str("mm.csv"), tmp.str("jj.csv"));
  std::ifstream is(tmp.str("mm.csv"));
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    auto p1 = line.rfind(',');
    auto p2 = line.rfind(',', p1 - 1);
    CHECK(line.substr(p1 + 1) == line.substr(p2 + 1, p1 - p2 - 1));
  }
  CHECK_THROWS_AS(
      shell::emit_energy_histograms(nat, adv, 0, tmp.str("x"), tmp.str("y")),
      ContractError);
}

TEST_CASE("pipelines write manifests and honor exit codes") {
  TempDir tmp("ebml_pipeline_test");
  std::string err;

  json cfg = {{"seed", 3},
              {"output_dir", tmp.str("vi")},
              {"trials", 500}};
  std::ofstream(tmp.str("cfg.json")) << cfg.dump();
  CHECK(shell::run_subcommand("verify-identities", tmp.str("cfg.json"),
                              json::object(), err) == 0);
  json manifest = json::parse(slurp(tmp.str("vi") + "/manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["version"] == shell::kVersion);
  CHECK(manifest.contains("config_hash"));

  CHECK(shell::run_subcommand("no-such-command", "", json::object(), err) == 2);
  CHECK(shell::run_subcommand("train", tmp.str("missing.json"), json::object(),
                              err) == 2);
}

TEST_CASE("zero-budget attack leaves the inputs untouched") {
  TempDir tmp("ebml_attack0_test");
  json cfg = {{"seed", 5},
              {"output_dir", tmp.str("out")},
              {"model",
               {{"kind", "smallcnn"},
                {"input_shape", {3, 32, 32}},
                {"hidden", {2, 2, 8}},
                {"num_classes", 2}}},
              {"data",
               {{"source", "synthetic_images"}, {"classes", 2},
                {"n_per_class", 3}}},
              {"attack", {{"epsilon", 0.0}, {"steps", 0}}}};
  std::ofstream(tmp.str("cfg.json")) << cfg.dump();
  std::string err;
  REQUIRE(shell::run_subcommand("attack", tmp.str("cfg.json"), json::object(),
                                err) == 0);
  // adversarial batch equals the generator output byte for byte
  data::Dataset input = data::synth_images(2, 3, 5);
  data::write_cifar10_binary(input, tmp.str("input.bin"));
  CHECK(slurp(tmp.str("out") + "/adversarial.bin") == slurp(tmp.str("input.bin")));
}

TEST_CASE("reruns with the same config produce identical CSV bytes") {
  TempDir tmp("ebml_rerun_test");
  json cfg = {{"model",
               {{"kind", "mlp"},
                {"input_shape", {1, 1, 4}},
                {"hidden", {6}},
                {"num_classes", 3}}},
              {"data",
               {{"source", "mixture"}, {"classes", 3}, {"n_per_class", 10},
                {"dim", 4}}},
              {"attack", {{"steps", 3}, {"epsilon", 0.05}, {"alpha", 0.02}}}};
  std::string err;
  for (const char* out : {"a", "b"}) {
    cfg["output_dir"] = tmp.str(out);
    std::ofstream(tmp.str("cfg.json")) << cfg.dump();
    REQUIRE(shell::run_subcommand("attack", tmp.str("cfg.json"), json::object(),
                                  err) == 0);
  }
  CHECK(slurp(tmp.str("a") + "/step_energies.csv") ==
        slurp(tmp.str("b") + "/step_energies.csv"));
}
