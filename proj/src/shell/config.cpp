#include "shell/config.hpp"

#include <fstream>

namespace ebml::shell {

namespace {

using nlohmann::json;

enum class Kind { object, string, number, integer, boolean, array };

void expect_kind(const json& v, Kind k, const std::string& where) {
  bool ok = false;
  switch (k) {
    case Kind::object: ok = v.is_object(); break;
    case Kind::string: ok = v.is_string(); break;
    case Kind::number: ok = v.is_number(); break;
    case Kind::integer: ok = v.is_number_integer(); break;
    case Kind::boolean: ok = v.is_boolean(); break;
    case Kind::array: ok = v.is_array(); break;
  }
  if (!ok) throw ConfigError("config: wrong type at '" + where + "'");
}

struct Field {
  const char* name;
  Kind kind;
};

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<Field> fields) {
  expect_kind(obj, Kind::object, where);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const auto& f : fields)
      if (it.key() == f.name) {
        expect_kind(it.value(), f.kind, where + "." + f.name);
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key '" + where + "." + it.key() + "'");
  }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

ExperimentConfig parse_config(json doc, const json& overrides) {
  // apply flag overrides before validation
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const std::string& k = it.key();
    if (k == "seed") doc["seed"] = it.value();
    else if (k == "out") doc["output_dir"] = it.value();
    else if (k == "trials") doc["trials"] = it.value();
    else if (k == "epochs") doc["train"]["epochs"] = it.value();
    else if (k == "beta") doc["train"]["beta"] = it.value();
    else if (k == "method") doc["train"]["method"] = it.value();
    else if (k == "epsilon") doc["attack"]["epsilon"] = it.value();
    else if (k == "steps") doc["attack"]["steps"] = it.value();
    else throw ConfigError("unknown override '" + k + "'");
  }

  check_keys(doc, "$",
             {{"seed", Kind::integer},
              {"output_dir", Kind::string},
              {"trials", Kind::integer},
              {"model", Kind::object},
              {"data", Kind::object},
              {"train", Kind::object},
              {"attack", Kind::object},
              {"sgld", Kind::object}});

  ExperimentConfig c;
  get_if(doc, "seed", c.seed);
  get_if(doc, "output_dir", c.output_dir);
  get_if(doc, "trials", c.trials);

  if (doc.contains("model")) {
    const json& m = doc["model"];
    check_keys(m, "model",
               {{"kind", Kind::string},
                {"input_shape", Kind::array},
                {"hidden", Kind::array},
                {"num_classes", Kind::integer},
                {"activation", Kind::string},
                {"checkpoint", Kind::string}});
    ModelSpec spec;
    spec.kind = model_kind_from_string(
        m.value("kind", std::string("smallcnn")));
    spec.input_shape = m.value("input_shape", Shape{3, 32, 32});
    spec.num_classes = m.value("num_classes", std::size_t{10});
    spec.activation = m.value("activation", std::string("relu"));
    if (m.contains("hidden"))
      spec.hidden = m["hidden"].get<std::vector<std::size_t>>();
    else
      spec.hidden = spec.kind == ModelKind::smallcnn
                        ? std::vector<std::size_t>{16, 32, 128}
                        : std::vector<std::size_t>{64, 64};
    try {
      spec.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("config: model: ") + e.what());
    }
    c.model_spec = spec;
    get_if(m, "checkpoint", c.model_checkpoint);
  } else {
    c.model_spec = ModelSpec::make_smallcnn({3, 32, 32}, 10);
  }

  if (doc.contains("data")) {
    const json& d = doc["data"];
    check_keys(d, "data",
               {{"source", Kind::string},
                {"path", Kind::string},
                {"count", Kind::integer},
                {"classes", Kind::integer},
                {"n_per_class", Kind::integer},
                {"dim", Kind::integer},
                {"separation", Kind::number},
                {"noise", Kind::number}});
    get_if(d, "source", c.data.source);
    get_if(d, "path", c.data.path);
    get_if(d, "count", c.data.count);
    get_if(d, "classes", c.data.classes);
    get_if(d, "n_per_class", c.data.n_per_class);
    get_if(d, "dim", c.data.dim);
    get_if(d, "separation", c.data.separation);
    get_if(d, "noise", c.data.noise);
    if (c.data.source != "cifar10" && c.data.source != "synthetic_images" &&
        c.data.source != "mixture")
      throw ConfigError("config: data.source must be cifar10, synthetic_images "
                        "or mixture");
    if (c.data.source == "cifar10" && c.data.path.empty())
      throw ConfigError("config: data.source cifar10 requires data.path");
  }

  if (doc.contains("train")) {
    const json& t = doc["train"];
    check_keys(t, "train",
               {{"method", Kind::string},
                {"beta", Kind::number},
                {"epochs", Kind::integer},
                {"batch_size", Kind::integer},
                {"momentum", Kind::number},
                {"weight_decay", Kind::number},
                {"lr_peak", Kind::number},
                {"probe_size", Kind::integer},
                {"eval_fraction", Kind::number},
                {"trace_csv", Kind::string},
                {"ablate_fraction", Kind::number},
                {"inner", Kind::string},
                {"outer", Kind::string},
                {"weight", Kind::string}});
    if (t.contains("method")) {
      try {
        c.train.method =
            train::method_from_string(t["method"].get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    }
    get_if(t, "beta", c.train.beta);
    get_if(t, "epochs", c.train.epochs);
    get_if(t, "batch_size", c.train.batch_size);
    get_if(t, "momentum", c.train.momentum);
    get_if(t, "weight_decay", c.train.weight_decay);
    get_if(t, "lr_peak", c.train.lr_peak);
    get_if(t, "probe_size", c.train.probe_size);
    get_if(t, "eval_fraction", c.train.eval_fraction);
    get_if(t, "trace_csv", c.trace_csv);
    get_if(t, "ablate_fraction", c.ablate_fraction);
    if (t.contains("inner")) {
      std::string s = t["inner"].get<std::string>();
      if (s == "ce") c.train.ablation.inner = train::InnerKind::ce;
      else if (s == "kl") c.train.ablation.inner = train::InnerKind::kl;
      else throw ConfigError("config: train.inner must be ce or kl");
    }
    if (t.contains("outer")) {
      std::string s = t["outer"].get<std::string>();
      if (s == "ce_adv") c.train.ablation.outer = train::OuterKind::ce_adv;
      else if (s == "ce_nat") c.train.ablation.outer = train::OuterKind::ce_nat;
      else if (s == "bce_adv") c.train.ablation.outer = train::OuterKind::bce_adv;
      else throw ConfigError("config: train.outer must be ce_adv, ce_nat or bce_adv");
    }
    if (t.contains("weight")) {
      std::string s = t["weight"].get<std::string>();
      if (s == "none") c.train.ablation.weight = train::WeightKind::none;
      else if (s == "weat") c.train.ablation.weight = train::WeightKind::weat;
      else if (s == "mart") c.train.ablation.weight = train::WeightKind::mart;
      else throw ConfigError("config: train.weight must be none, weat or mart");
    }
  }

  if (doc.contains("attack")) {
    const json& a = doc["attack"];
    check_keys(a, "attack",
               {{"epsilon", Kind::number},
                {"alpha", Kind::number},
                {"steps", Kind::integer},
                {"loss", Kind::string},
                {"target", Kind::integer},
                {"random_start", Kind::string},
                {"gaussian_sigma", Kind::number},
                {"cw_kappa", Kind::number},
                {"count", Kind::integer},
                {"bins", Kind::integer}});
    auto& ac = c.train.attack;
    get_if(a, "epsilon", ac.epsilon);
    get_if(a, "alpha", ac.alpha);
    get_if(a, "steps", ac.steps);
    if (a.contains("loss"))
      ac.loss = attacks::inner_loss_from_string(a["loss"].get<std::string>());
    if (a.contains("target")) ac.target = a["target"].get<std::size_t>();
    if (a.contains("random_start"))
      ac.random_start =
          attacks::random_start_from_string(a["random_start"].get<std::string>());
    get_if(a, "gaussian_sigma", ac.gaussian_sigma);
    get_if(a, "cw_kappa", ac.cw_kappa);
    get_if(a, "count", c.attack_count);
    get_if(a, "bins", c.histogram_bins);
    if (ac.target.has_value() != (ac.loss == attacks::InnerLoss::ce_targeted) &&
        ac.target.has_value())
      throw ConfigError("config: attack.target requires loss ce_targeted");
    try {
      ac.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("config: attack: ") + e.what());
    }
  }

  if (doc.contains("sgld")) {
    const json& s = doc["sgld"];
    check_keys(s, "sgld",
               {{"steps", Kind::integer},
                {"friction", Kind::number},
                {"step_size", Kind::number},
                {"noise_variance", Kind::number},
                {"sigma_pca", Kind::number},
                {"retained_variance", Kind::number},
                {"per_class", Kind::integer}});
    get_if(s, "steps", c.sgld.steps);
    get_if(s, "friction", c.sgld.friction);
    get_if(s, "step_size", c.sgld.step_size);
    get_if(s, "noise_variance", c.sgld.noise_variance);
    get_if(s, "sigma_pca", c.sgld.sigma_pca);
    get_if(s, "retained_variance", c.retained_variance);
    get_if(s, "per_class", c.per_class);
    try {
      c.sgld.validate();
    } catch (const ContractError& e) {
      throw ConfigError(std::string("config: sgld: ") + e.what());
    }
  }

  c.train.seed = c.seed;
  c.canonical = doc;
  return c;
}

ExperimentConfig load_config(const std::string& path, const json& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    is >> doc;
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return parse_config(std::move(doc), overrides);
}

}  // namespace ebml::shell
