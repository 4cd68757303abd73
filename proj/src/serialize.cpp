#include "finch/serialize.hpp"

#include <cmath>

#include "finch/store.hpp"

namespace finch {

namespace {

constexpr const char* kCheckpointFormat = "finch-checkpoint";
constexpr int kCheckpointVersion = 1;

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw MalformedFile(std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(std::string("bad field '") + key + "': " + e.what());
  }
}

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(what) + " contains non-finite values");
    }
  }
}

Json layer_to_json(const DenseLayer& l) {
  return Json{{"in", l.in}, {"out", l.out}, {"weights", l.weights}, {"bias", l.bias}};
}

DenseLayer layer_from_json(const Json& j) {
  DenseLayer l;
  l.in = field<std::size_t>(j, "in");
  l.out = field<std::size_t>(j, "out");
  l.weights = field<std::vector<double>>(j, "weights");
  l.bias = field<std::vector<double>>(j, "bias");
  return l;
}

}  // namespace

Json to_json(const TrainConfig& c) {
  return Json{{"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"warmup_fraction", c.warmup_fraction},
              {"lambda_var", c.lambda_var},
              {"seed", c.seed},
              {"val_fraction", c.val_fraction},
              {"gate_hidden", c.gate_hidden},
              {"gate_dropout", c.gate_dropout},
              {"omega_max_init", c.omega_max_init},
              {"omega_init", c.omega_init}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.lr = field<double>(j, "lr");
  c.weight_decay = field<double>(j, "weight_decay");
  c.epochs = field<std::size_t>(j, "epochs");
  c.batch_size = field<std::size_t>(j, "batch_size");
  c.warmup_fraction = field<double>(j, "warmup_fraction");
  c.lambda_var = field<double>(j, "lambda_var");
  c.seed = field<std::uint64_t>(j, "seed");
  c.val_fraction = field<double>(j, "val_fraction");
  c.gate_hidden = field<std::size_t>(j, "gate_hidden");
  c.gate_dropout = field<double>(j, "gate_dropout");
  c.omega_max_init = field<double>(j, "omega_max_init");
  c.omega_init = field<double>(j, "omega_init");
  return c;
}

Json to_json(const GateParameters& g) {
  g.validate();
  return Json{{"hidden", g.hidden},
              {"dropout_rate", g.dropout_rate},
              {"w1", g.w1},
              {"b1", g.b1},
              {"w2", g.w2},
              {"b2", g.b2},
              {"omega_max_raw", g.omega_max_raw},
              {"temp_raw", g.temp_raw},
              {"eps_raw", g.eps_raw}};
}

GateParameters gate_from_json(const Json& j) {
  GateParameters g;
  g.hidden = field<std::size_t>(j, "hidden");
  g.dropout_rate = field<double>(j, "dropout_rate");
  g.w1 = field<std::vector<double>>(j, "w1");
  g.b1 = field<std::vector<double>>(j, "b1");
  g.w2 = field<std::vector<double>>(j, "w2");
  g.b2 = field<double>(j, "b2");
  g.omega_max_raw = field<double>(j, "omega_max_raw");
  g.temp_raw = field<double>(j, "temp_raw");
  g.eps_raw = field<double>(j, "eps_raw");
  try {
    g.validate();
  } catch (const Error& e) {
    throw MalformedFile(std::string("gate parameters: ") + e.what());
  }
  return g;
}

Json to_json(const StageCheckpoint& ckpt) {
  ckpt.validate();
  require_finite(ckpt.head.weights, "head weights");
  Json j{{"format", kCheckpointFormat},
         {"version", kCheckpointVersion},
         {"stage", static_cast<int>(ckpt.stage)},
         {"head",
          {{"n_classes", ckpt.head.n_classes},
           {"dim", ckpt.head.dim},
           {"weights", ckpt.head.weights},
           {"bias", ckpt.head.bias}}},
         {"temp_raw", ckpt.temp_raw},
         {"eps_raw", ckpt.eps_raw},
         {"config", to_json(ckpt.config)},
         {"best_val_accuracy", ckpt.best_val_accuracy},
         {"best_epoch", ckpt.best_epoch},
         {"seed", ckpt.seed}};
  if (ckpt.stage == Stage::fixed_weight) {
    j["omega_raw"] = ckpt.omega_raw;
  }
  if (ckpt.stage == Stage::adaptive) {
    j["gate"] = to_json(*ckpt.gate);
  }
  return j;
}

StageCheckpoint checkpoint_from_json(const Json& j) {
  if (field<std::string>(j, "format") != kCheckpointFormat) {
    throw MagicMismatch("not a checkpoint file");
  }
  if (field<int>(j, "version") != kCheckpointVersion) {
    throw UnsupportedVersion("checkpoint version not supported");
  }
  StageCheckpoint ckpt;
  const int stage = field<int>(j, "stage");
  if (stage < 1 || stage > 3) {
    throw MalformedFile("checkpoint stage tag must be 1, 2 or 3");
  }
  ckpt.stage = static_cast<Stage>(stage);

  const Json& head = j.at("head");
  ckpt.head.n_classes = field<std::size_t>(head, "n_classes");
  ckpt.head.dim = field<std::size_t>(head, "dim");
  ckpt.head.weights = field<std::vector<double>>(head, "weights");
  ckpt.head.bias = field<std::vector<double>>(head, "bias");
  ckpt.temp_raw = field<double>(j, "temp_raw");
  ckpt.eps_raw = field<double>(j, "eps_raw");
  ckpt.config = train_config_from_json(j.at("config"));
  ckpt.best_val_accuracy = field<double>(j, "best_val_accuracy");
  ckpt.best_epoch = field<std::size_t>(j, "best_epoch");
  ckpt.seed = field<std::uint64_t>(j, "seed");

  const bool has_omega = j.contains("omega_raw");
  const bool has_gate = j.contains("gate");
  if (has_omega != (ckpt.stage == Stage::fixed_weight)) {
    throw MalformedFile("checkpoint stage tag " + std::to_string(stage) +
                        (has_omega ? " must not carry" : " requires") + " a scalar fusion weight");
  }
  if (has_gate != (ckpt.stage == Stage::adaptive)) {
    throw MalformedFile("checkpoint stage tag " + std::to_string(stage) +
                        (has_gate ? " must not carry" : " requires") + " a gating network");
  }
  if (has_omega) {
    ckpt.omega_raw = field<double>(j, "omega_raw");
  }
  if (has_gate) {
    ckpt.gate = gate_from_json(j.at("gate"));
  }
  try {
    ckpt.validate();
  } catch (const StoreError&) {
    throw;
  } catch (const Error& e) {
    throw MalformedFile(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

Json to_json(const EvalReport& r) {
  return Json{{"top1", r.top1},
              {"cmap", r.cmap},
              {"auroc", r.auroc},
              {"mean_log_loss", r.mean_log_loss},
              {"per_class_ap", r.per_class_ap},
              {"n_samples", r.n_samples}};
}

Json to_json(const EpochMetrics& m) {
  return Json{{"epoch", m.epoch},
              {"train_loss", m.train_loss},
              {"val_acc", m.val_accuracy},
              {"lr", m.lr},
              {"mean_omega", m.mean_omega},
              {"var_omega", m.var_omega}};
}

Json to_json(const DependenceReport& r) {
  return Json{{"classes_tested", r.classes_tested},
              {"per_class_r2", r.per_class_r2},
              {"per_class_improvement", r.per_class_improvement},
              {"mean_r2", r.mean_r2},
              {"cohens_d", r.cohens_d},
              {"permutation_p", r.permutation_p},
              {"frac_positive_improvement", r.frac_positive_improvement},
              {"frac_r2_above_005", r.frac_r2_above_005},
              {"n_classes_tested", r.n_classes_tested}};
}

Json to_json(const SyntheticConfig& c) {
  return Json{{"n_classes", c.n_classes},
              {"embed_dim", c.embed_dim},
              {"n_cells", c.n_cells},
              {"n_samples", c.n_samples},
              {"class_sep", c.class_sep},
              {"prior_peakedness", c.prior_peakedness},
              {"corruption", to_string(c.corruption)},
              {"corruption_fraction", c.corruption_fraction},
              {"region_coupled", c.region_coupled},
              {"dependence_strength", c.dependence_strength},
              {"class_prior_skew", c.class_prior_skew},
              {"seed", c.seed}};
}

Json to_json(const ContextMlp& model) {
  Json layers = Json::array();
  for (const DenseLayer& l : model.layers()) {
    layers.push_back(layer_to_json(l));
  }
  return Json{{"format", "finch-context-mlp"}, {"layers", layers}};
}

ContextMlp context_mlp_from_json(const Json& j) {
  if (field<std::string>(j, "format") != "finch-context-mlp") {
    throw MagicMismatch("not a context MLP file");
  }
  const Json& layers = j.at("layers");
  if (!layers.is_array() || layers.size() != 3) {
    throw MalformedFile("context MLP needs exactly 3 layers");
  }
  try {
    return ContextMlp({layer_from_json(layers[0]), layer_from_json(layers[1]),
                       layer_from_json(layers[2])});
  } catch (const StoreError&) {
    throw;
  } catch (const Error& e) {
    throw MalformedFile(std::string("context MLP: ") + e.what());
  }
}

std::string canonical_dump(const Json& j) { return j.dump(2) + "\n"; }

std::string line_dump(const Json& j) { return j.dump(); }

void write_checkpoint(const StageCheckpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, canonical_dump(to_json(ckpt)));
}

StageCheckpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace finch
