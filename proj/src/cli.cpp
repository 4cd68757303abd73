#include "finch/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "finch/context_mlp.hpp"
#include "finch/diagnostics.hpp"
#include "finch/error.hpp"
#include "finch/fusion.hpp"
#include "finch/gradcheck.hpp"
#include "finch/serialize.hpp"
#include "finch/store.hpp"

namespace finch {

namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "finch 0.1.0";

// Seed from the flag if given, else FINCH_SEED, else 0.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value) {
  if (flag->count() > 0) {
    return flag_value;
  }
  if (const char* env = std::getenv("FINCH_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) {
        throw InvalidInput("");
      }
      return v;
    } catch (const std::exception&) {
      throw InvalidInput(std::string("FINCH_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

void write_manifest(const fs::path& path, const std::string& command,
                    const std::vector<std::string>& args, Json config) {
  Json m{{"tool", kToolVersion}, {"command", command}, {"args", args}, {"config", std::move(config)}};
  write_text_file(path, canonical_dump(m));
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !std::isfinite(v) || v < 0.0) {
      throw InvalidInput("bad omega grid entry '" + item + "'");
    }
    grid.push_back(v);
  }
  if (grid.empty()) {
    throw InvalidInput("omega grid is empty");
  }
  return grid;
}

std::vector<double> parse_doubles(const std::string& text, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    try {
      v.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw InvalidInput(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  return v;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void add_train_flags(CLI::App* app, TrainConfig& c) {
  app->add_option("--lr", c.lr, "Peak learning rate")->capture_default_str();
  app->add_option("--weight-decay", c.weight_decay, "AdamW decoupled weight decay")
      ->capture_default_str();
  app->add_option("--epochs", c.epochs)->capture_default_str();
  app->add_option("--batch-size", c.batch_size)->capture_default_str();
  app->add_option("--warmup-fraction", c.warmup_fraction)->capture_default_str();
  app->add_option("--lambda-var", c.lambda_var, "Weight of the gate-variance reward")
      ->capture_default_str();
  app->add_option("--val-fraction", c.val_fraction)->capture_default_str();
  app->add_option("--gate-hidden", c.gate_hidden)->capture_default_str();
  app->add_option("--gate-dropout", c.gate_dropout)->capture_default_str();
  app->add_option("--omega-max-init", c.omega_max_init)->capture_default_str();
  app->add_option("--omega-init", c.omega_init, "Starting weight of stage 2 (0 = pick by training loss)")
      ->capture_default_str();
}

PriorTable load_priors(const std::string& priors_path, const std::string& context_model,
                       const Dataset& data) {
  if (!context_model.empty()) {
    const ContextMlp model = context_mlp_from_json(Json::parse(read_text_file(context_model)));
    if (model.n_classes() != data.n_classes) {
      throw DimensionError("context model class count does not match the dataset");
    }
    return prior_table_from_model(model, data);
  }
  PriorTable table = read_prior_table(priors_path);
  if (table.n_classes() != data.n_classes) {
    throw DimensionError("prior table class count does not match the dataset");
  }
  return table;
}

void check_compatible(const StageCheckpoint& ckpt, const Dataset& data) {
  if (ckpt.head.n_classes != data.n_classes || ckpt.head.dim != data.dim) {
    throw DimensionError("checkpoint expects C=" + std::to_string(ckpt.head.n_classes) +
                         ", D=" + std::to_string(ckpt.head.dim) + " but the dataset has C=" +
                         std::to_string(data.n_classes) + ", D=" + std::to_string(data.dim));
  }
}

std::vector<std::size_t> labels_of(const Dataset& data) {
  std::vector<std::size_t> labels;
  labels.reserve(data.size());
  for (const SampleRecord& r : data.records) {
    labels.push_back(r.label);
  }
  return labels;
}

Json top_k(const CategoricalDistribution& p, std::size_t k) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  Json out = Json::array();
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    out.push_back(Json{{"class", order[i]}, {"prob", p[order[i]]}});
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::string preset = "ci";
  std::string out_dir;
  double test_fraction = 0.2;
  std::size_t n = 0, classes = 0, dim = 0, cells = 0;
  double class_sep = 0, peak = 0, rho = 0, kappa = 0, skew = 0;
  std::string corruption;
  bool region_coupled = false;
  std::uint64_t seed = 0;
  CLI::Option *o_n, *o_classes, *o_dim, *o_cells, *o_sep, *o_peak, *o_rho, *o_kappa, *o_skew,
      *o_corr, *o_region, *o_seed;
};

int cmd_synth(const SynthFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  SyntheticConfig c = synthetic_preset(f.preset);
  if (f.o_n->count()) c.n_samples = f.n;
  if (f.o_classes->count()) c.n_classes = f.classes;
  if (f.o_dim->count()) c.embed_dim = f.dim;
  if (f.o_cells->count()) c.n_cells = f.cells;
  if (f.o_sep->count()) c.class_sep = f.class_sep;
  if (f.o_peak->count()) c.prior_peakedness = f.peak;
  if (f.o_corr->count()) c.corruption = parse_corruption_mode(f.corruption);
  if (f.o_rho->count()) c.corruption_fraction = f.rho;
  if (f.o_region->count()) c.region_coupled = f.region_coupled;
  if (f.o_kappa->count()) c.dependence_strength = f.kappa;
  if (f.o_skew->count()) c.class_prior_skew = f.skew;
  c.seed = resolve_seed(f.o_seed, f.seed);
  c.validate();

  const SynthOutputs files = write_synthetic_split(c, f.test_fraction, f.out_dir);
  Json cfg = to_json(c);
  cfg["preset"] = f.preset;
  cfg["test_fraction"] = f.test_fraction;
  write_manifest(fs::path(f.out_dir) / "manifest.json", "synth", args, cfg);
  out << "wrote " << files.train_data.string() << ", " << files.train_priors.string() << ", "
      << files.test_data.string() << ", " << files.test_priors.string() << "\n";
  return 0;
}

struct TrainFlags {
  int stage = 1;
  std::string data, priors, init, out, metrics, context_model;
  bool context_mlp = false;
  TrainConfig config;
  CLI::Option* o_seed;
};

int cmd_train(TrainFlags f, const std::vector<std::string>& args, std::ostream& out) {
  f.config.seed = resolve_seed(f.o_seed, f.config.seed);
  f.config.validate();
  const Dataset data = read_dataset(f.data);

  std::optional<StageCheckpoint> prev;
  if (f.stage > 1) {
    if (f.init.empty()) {
      throw InvalidInput("stage " + std::to_string(f.stage) + " needs the stage " +
                         std::to_string(f.stage - 1) + " checkpoint (--init)");
    }
    if (!fs::exists(f.init)) {
      throw NotFound("prerequisite checkpoint " + f.init + " does not exist");
    }
    prev = read_checkpoint(f.init);
    if (static_cast<int>(prev->stage) != f.stage - 1) {
      throw InvalidInput("--init must be a stage " + std::to_string(f.stage - 1) +
                         " checkpoint, got stage " +
                         std::to_string(static_cast<int>(prev->stage)));
    }
    check_compatible(*prev, data);
  }

  std::optional<PriorTable> priors;
  Json cfg = to_json(f.config);
  if (f.stage > 1) {
    if (f.context_mlp) {
      ContextMlpResult ctx = train_context_mlp(data, f.config);
      const fs::path ctx_path = with_suffix(f.out, ".ctx.json");
      write_text_file(ctx_path, canonical_dump(to_json(ctx.model)));
      priors = prior_table_from_model(ctx.model, data);
      cfg["context_model"] = ctx_path.string();
      out << "context MLP: best val acc " << fixed(ctx.best_val_accuracy, 4) << " at epoch "
          << ctx.best_epoch << ", saved to " << ctx_path.string() << "\n";
    } else if (!f.priors.empty() || !f.context_model.empty()) {
      priors = load_priors(f.priors, f.context_model, data);
    } else {
      throw InvalidInput("fusion stages need --priors, --context-model or --context-mlp");
    }
  }

  const fs::path metrics_path = f.metrics.empty() ? with_suffix(f.out, ".metrics.jsonl")
                                                  : fs::path(f.metrics);
  std::string log;
  auto on_epoch = [&](const StageCheckpoint&, const EpochMetrics& m) {
    Json line = to_json(m);
    line["stage"] = f.stage;
    log += line_dump(line) + "\n";
  };

  TrainResult result;
  switch (f.stage) {
    case 1:
      result = train_stage1(data, f.config, on_epoch);
      break;
    case 2:
      result = train_stage2(data, *priors, *prev, f.config, on_epoch);
      break;
    case 3:
      result = train_stage3(data, *priors, *prev, f.config, on_epoch);
      break;
    default:
      throw InvalidInput("--stage must be 1, 2 or 3");
  }
  if (prev && !(result.best.head == prev->head)) {
    throw ContractViolation("audio head changed during fusion training");
  }
  write_checkpoint(result.best, f.out);
  write_text_file(metrics_path, log);

  cfg["stage"] = f.stage;
  cfg["data"] = f.data;
  cfg["priors"] = f.priors;
  cfg["init"] = f.init;
  write_manifest(with_suffix(f.out, ".manifest.json"), "train", args, cfg);

  for (const std::string& w : result.warnings) {
    out << "warning: " << w << "\n";
  }
  out << "stage " << f.stage << ": best val acc " << fixed(result.best.best_val_accuracy, 4)
      << " at epoch " << result.best.best_epoch;
  if (f.stage == 2) {
    out << ", omega " << fixed(result.best.omega(), 4);
  }
  if (f.stage >= 2) {
    out << ", T " << fixed(result.best.temperature(), 4);
  }
  out << "\n";
  return 0;
}

struct EvalFlags {
  std::string checkpoint, data, priors, context_model, out = "eval_report.json";
  bool audio_only = false;
};

int cmd_eval(const EvalFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  const StageCheckpoint ckpt = read_checkpoint(f.checkpoint);
  const Dataset data = read_dataset(f.data);
  check_compatible(ckpt, data);
  const bool needs_priors = !f.audio_only && ckpt.stage != Stage::audio_only;
  std::optional<PriorTable> priors;
  if (needs_priors) {
    if (f.priors.empty() && f.context_model.empty()) {
      throw InvalidInput("a fusion checkpoint needs --priors or --context-model");
    }
    priors = load_priors(f.priors, f.context_model, data);
  }
  const auto preds = predict_dataset(ckpt, data, priors ? &*priors : nullptr,
                                     f.audio_only ? PredictMode::audio_only : PredictMode::full);
  const EvalReport report = evaluate_predictions(preds, data, f.audio_only);
  Json j = to_json(report);
  j["stage"] = static_cast<int>(ckpt.stage);
  j["audio_only"] = f.audio_only;
  write_text_file(f.out, line_dump(j) + "\n");
  write_manifest(with_suffix(f.out, ".manifest.json"), "eval", args,
                 Json{{"checkpoint", f.checkpoint},
                      {"data", f.data},
                      {"priors", f.priors},
                      {"context_model", f.context_model},
                      {"audio_only", f.audio_only}});
  out << line_dump(j) << "\n";
  return 0;
}

struct SweepFlags {
  std::string checkpoint, data, priors, context_model, out = "sweep.jsonl";
  std::string grid = "0,0.2,0.4,0.8,1.6,2.0";
};

int cmd_sweep(const SweepFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  const StageCheckpoint ckpt = read_checkpoint(f.checkpoint);
  const Dataset data = read_dataset(f.data);
  check_compatible(ckpt, data);
  if (f.priors.empty() && f.context_model.empty()) {
    throw InvalidInput("sweep needs --priors or --context-model");
  }
  const PriorTable priors = load_priors(f.priors, f.context_model, data);
  const std::vector<double> grid = parse_grid(f.grid);
  const std::vector<SweepRow> rows = sweep_omega(ckpt, data, priors, grid);

  std::string jsonl;
  out << std::left << std::setw(10) << "omega" << std::right << std::setw(10) << "Acc"
      << std::setw(10) << "mAP" << "\n";
  for (const SweepRow& r : rows) {
    out << std::left << std::setw(10) << r.label << std::right << std::setw(10)
        << fixed(100.0 * r.accuracy, 2) << std::setw(10) << fixed(100.0 * r.cmap, 2) << "\n";
    Json line{{"row", r.label}, {"accuracy", r.accuracy}, {"cmap", r.cmap}};
    line["omega"] = r.omega ? Json(*r.omega) : Json(nullptr);
    jsonl += line_dump(line) + "\n";
  }
  write_text_file(f.out, jsonl);
  write_manifest(with_suffix(f.out, ".manifest.json"), "sweep", args,
                 Json{{"checkpoint", f.checkpoint},
                      {"data", f.data},
                      {"priors", f.priors},
                      {"context_model", f.context_model},
                      {"omega_grid", grid}});
  return 0;
}

struct FuseFlags {
  std::string checkpoint, data, priors, context_model, out = "fuse.json";
  std::optional<std::uint64_t> id;
  std::string embedding, prior;
  double lat = 0, lon = 0, day = 1, hour = 12;
  std::size_t k = 5;
};

int cmd_fuse(const FuseFlags& f, const std::vector<std::string>& args, std::ostream& out) {
  const StageCheckpoint ckpt = read_checkpoint(f.checkpoint);
  SampleRecord record;
  std::optional<CategoricalDistribution> prior;
  if (f.id) {
    if (f.data.empty()) {
      throw InvalidInput("--id needs --data");
    }
    const Dataset data = read_dataset(f.data);
    check_compatible(ckpt, data);
    auto it = std::find_if(data.records.begin(), data.records.end(),
                           [&](const SampleRecord& r) { return r.sample_id == *f.id; });
    if (it == data.records.end()) {
      throw NotFound("sample id " + std::to_string(*f.id) + " not in " + f.data);
    }
    record = *it;
    if (!f.prior.empty()) {
      prior = CategoricalDistribution(parse_doubles(f.prior, "prior"));
    } else if (!f.priors.empty() || !f.context_model.empty()) {
      const Dataset one{data.n_classes, data.dim, {record}};
      prior = lookup_prior(load_priors(f.priors, f.context_model, one), record.sample_id);
    }
  } else {
    if (f.embedding.empty()) {
      throw InvalidInput("fuse needs either --id with --data, or --embedding");
    }
    record.embedding = parse_doubles(f.embedding, "embedding");
    record.context = SpatioTemporalContext{f.lat, f.lon, f.day, f.hour};
    record.context.validate();
    if (record.embedding.size() != ckpt.head.dim) {
      throw DimensionError("embedding has " + std::to_string(record.embedding.size()) +
                           " values, checkpoint expects " + std::to_string(ckpt.head.dim));
    }
    if (!f.prior.empty()) {
      prior = CategoricalDistribution(parse_doubles(f.prior, "prior"));
    } else if (!f.context_model.empty()) {
      const Dataset one{ckpt.head.n_classes, ckpt.head.dim, {record}};
      prior = lookup_prior(load_priors("", f.context_model, one), record.sample_id);
    }
  }
  if (!prior) {
    if (ckpt.stage != Stage::audio_only) {
      throw InvalidInput("a fusion checkpoint needs a prior (--prior, --priors or --context-model)");
    }
    prior = CategoricalDistribution::uniform(ckpt.head.n_classes);
  }
  if (prior->size() != ckpt.head.n_classes) {
    throw DimensionError("prior has the wrong number of classes");
  }
  const Prediction p = predict(ckpt, record, *prior);
  Json j{{"sample_id", record.sample_id},
         {"stage", static_cast<int>(ckpt.stage)},
         {"omega", p.omega},
         {"temperature", ckpt.stage == Stage::audio_only ? 1.0 : ckpt.temperature()},
         {"audio_top_k", top_k(p.audio, f.k)},
         {"prior_top_k", top_k(*prior, f.k)},
         {"fused_top_k", top_k(p.fused, f.k)}};
  if (f.id) {
    j["label"] = record.label;
  }
  write_text_file(f.out, canonical_dump(j));
  write_manifest(with_suffix(f.out, ".manifest.json"), "fuse", args,
                 Json{{"checkpoint", f.checkpoint}, {"data", f.data}, {"top_k", f.k}});
  out << line_dump(j) << "\n";
  return 0;
}

struct DiagnoseFlags {
  std::string data, priors, context_model, out = "dependence.json";
  DependenceOptions options;
  CLI::Option* o_seed;
};

int cmd_diagnose(DiagnoseFlags f, const std::vector<std::string>& args, std::ostream& out) {
  f.options.seed = resolve_seed(f.o_seed, f.options.seed);
  const Dataset data = read_dataset(f.data);
  if (f.priors.empty() && f.context_model.empty()) {
    throw InvalidInput("diagnose needs --priors or --context-model");
  }
  const PriorTable priors = load_priors(f.priors, f.context_model, data);
  const DependenceReport report = dependence_report(data, priors, f.options);
  write_text_file(f.out, canonical_dump(to_json(report)));
  write_manifest(with_suffix(f.out, ".manifest.json"), "diagnose", args,
                 Json{{"data", f.data},
                      {"priors", f.priors},
                      {"context_model", f.context_model},
                      {"min_samples_per_class", f.options.min_samples_per_class},
                      {"n_perm", f.options.n_perm},
                      {"ridge", f.options.ridge},
                      {"full_row", f.options.full_row},
                      {"seed", f.options.seed}});
  out << std::left << std::setw(28) << "classes tested" << report.n_classes_tested << "\n"
      << std::setw(28) << "mean R^2" << fixed(report.mean_r2, 4) << "\n"
      << std::setw(28) << "frac R^2 > 0.05" << fixed(report.frac_r2_above_005, 4) << "\n"
      << std::setw(28) << "frac improvement > 0" << fixed(report.frac_positive_improvement, 4)
      << "\n"
      << std::setw(28) << "Cohen's d" << fixed(report.cohens_d, 4) << "\n"
      << std::setw(28) << "permutation p" << fixed(report.permutation_p, 4) << "\n";
  return 0;
}

struct GradcheckFlags {
  std::uint64_t seed = 0;
  std::size_t batch = 16;
  std::string out = "gradcheck.json";
  CLI::Option* o_seed;
};

int cmd_gradcheck(const GradcheckFlags& f, const std::vector<std::string>& args,
                  std::ostream& out) {
  const std::uint64_t seed = resolve_seed(f.o_seed, f.seed);
  if (f.batch == 0) {
    throw InvalidInput("--batch must be positive");
  }
  SyntheticConfig sc = synthetic_preset("ci");
  sc.n_classes = 6;
  sc.embed_dim = 5;
  sc.n_cells = 8;
  sc.n_samples = f.batch;
  sc.seed = seed;
  const auto samples = generate(sc);
  const Dataset data = to_dataset(samples, sc.n_classes, sc.embed_dim);
  const PriorTable priors = to_prior_table(samples);

  std::mt19937_64 rng(derive_seed(seed, 0x6c7a));
  std::normal_distribution<double> normal(0.0, 0.3);
  AudioHead head = AudioHead::zeros(sc.n_classes, sc.embed_dim);
  for (double& w : head.weights) w = normal(rng);
  for (double& b : head.bias) b = normal(rng);

  std::vector<std::size_t> batch(data.size());
  std::iota(batch.begin(), batch.end(), std::size_t{0});
  std::vector<FusionSample> fusion;
  for (const SampleRecord& r : data.records) {
    fusion.push_back(make_fusion_sample(head, r, lookup_prior(priors, r.sample_id)));
  }
  const double lambda = 0.5;
  const FixedWeightParams fw{normal(rng), normal(rng), normal(rng)};
  const GateParameters gate = random_gate(8, kDefaultGateDropout, 0.5, derive_seed(seed, 0x6a7e));

  std::vector<GradCheckReport> reports;
  reports.push_back(gradcheck_head(head, data.records, batch));
  reports.push_back(gradcheck_fixed_weight(fw, fusion, batch, lambda));
  reports.push_back(
      gradcheck_adaptive(gate, fusion, batch, lambda, GateMode::train, derive_seed(seed, 7)));

  bool ok = true;
  Json j = Json::array();
  for (const GradCheckReport& r : reports) {
    ok = ok && r.pass;
    const double worst = r.max_rel_error;
    out << std::left << std::setw(14) << r.group << (r.pass ? "PASS" : "FAIL") << "  params "
        << r.entries.size() << "  max rel err " << std::scientific << std::setprecision(2)
        << worst << std::defaultfloat << "\n";
    Json failures = Json::array();
    for (const GradCheckEntry& e : r.entries) {
      if (!e.pass) {
        failures.push_back(Json{{"param", e.name}, {"analytic", e.analytic},
                                {"numeric", e.numeric}, {"rel_error", e.rel_error}});
      }
    }
    j.push_back(Json{{"group", r.group}, {"pass", r.pass}, {"n_params", r.entries.size()},
                     {"max_rel_error", worst}, {"failures", failures}});
  }
  write_text_file(f.out, canonical_dump(j));
  write_manifest(with_suffix(f.out, ".manifest.json"), "gradcheck", args,
                 Json{{"seed", seed}, {"batch", f.batch}});
  return ok ? 0 : 1;
}

}  // namespace

std::vector<Prediction> predict_dataset(const StageCheckpoint& ckpt, const Dataset& dataset,
                                        const PriorTable* priors, PredictMode mode) {
  std::vector<Prediction> preds;
  preds.reserve(dataset.size());
  const auto uniform = CategoricalDistribution::uniform(dataset.n_classes);
  for (const SampleRecord& r : dataset.records) {
    preds.push_back(
        predict(ckpt, r, priors != nullptr ? lookup_prior(*priors, r.sample_id) : uniform, mode));
  }
  return preds;
}

EvalReport evaluate_predictions(const std::vector<Prediction>& preds, const Dataset& dataset,
                                bool audio_only) {
  std::vector<CategoricalDistribution> dists;
  dists.reserve(preds.size());
  for (const Prediction& p : preds) {
    dists.push_back(audio_only ? p.audio : p.fused);
  }
  const auto labels = labels_of(dataset);
  return evaluate(dists, labels);
}

std::vector<SweepRow> sweep_omega(const StageCheckpoint& ckpt, const Dataset& dataset,
                                  const PriorTable& priors, const std::vector<double>& grid) {
  check_compatible(ckpt, dataset);
  const auto labels = labels_of(dataset);
  std::vector<CategoricalDistribution> priors_by_sample;
  priors_by_sample.reserve(dataset.size());
  for (const SampleRecord& r : dataset.records) {
    priors_by_sample.push_back(lookup_prior(priors, r.sample_id));
  }
  auto score = [&](const std::vector<CategoricalDistribution>& dists, SweepRow row) {
    row.accuracy = top1_accuracy(dists, labels);
    row.cmap = class_mean_average_precision(dists, labels);
    return row;
  };

  std::vector<SweepRow> rows;
  for (double omega : grid) {
    std::vector<CategoricalDistribution> dists;
    dists.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      dists.push_back(
          predict_fixed_omega(ckpt, dataset.records[i], priors_by_sample[i], omega).fused);
    }
    std::ostringstream label;
    label << omega;
    rows.push_back(score(dists, SweepRow{label.str(), omega, 0.0, 0.0}));
  }
  if (ckpt.stage != Stage::audio_only) {
    std::vector<CategoricalDistribution> dists;
    dists.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      dists.push_back(predict(ckpt, dataset.records[i], priors_by_sample[i]).fused);
    }
    SweepRow row;
    if (ckpt.stage == Stage::adaptive) {
      row.label = "adaptive";
    } else {
      row.label = "learned";
      row.omega = ckpt.omega();
    }
    rows.push_back(score(dists, row));
  }
  return rows;
}

SynthOutputs write_synthetic_split(const SyntheticConfig& config, double test_fraction,
                                   const fs::path& out_dir) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidInput("test fraction must lie in (0, 1)");
  }
  config.validate();
  std::vector<SyntheticSample> samples = generate(config);
  corrupt_priors(samples, config);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(config.seed, 0x5917));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(samples.size())));
  if (n_test == 0 || n_test >= samples.size()) {
    throw InvalidInput("test fraction leaves one side of the split empty");
  }
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_test), order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  auto subset = [&](const std::vector<std::size_t>& idx) {
    std::vector<SyntheticSample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
      out.push_back(samples[i]);
    }
    return out;
  };
  fs::create_directories(out_dir);
  SynthOutputs files{out_dir / "train.fnds", out_dir / "train.fprt", out_dir / "test.fnds",
                     out_dir / "test.fprt"};
  const auto train = subset(train_idx);
  const auto test = subset(test_idx);
  write_dataset(to_dataset(train, config.n_classes, config.embed_dim), files.train_data);
  write_prior_table(to_prior_table(train), files.train_priors);
  write_dataset(to_dataset(test, config.n_classes, config.embed_dim), files.test_data);
  write_prior_table(to_prior_table(test), files.test_priors);
  return files;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive fusion of audio posteriors with context priors", "finch"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic train/test split");
  s->add_option("--preset", synth.preset, "ci, dependent or heterogeneous")->capture_default_str();
  s->add_option("--out-dir", synth.out_dir, "Directory for the generated files")->required();
  s->add_option("--test-fraction", synth.test_fraction)->capture_default_str();
  synth.o_n = s->add_option("--n", synth.n, "Number of samples");
  synth.o_classes = s->add_option("--classes", synth.classes);
  synth.o_dim = s->add_option("--dim", synth.dim, "Embedding dimension");
  synth.o_cells = s->add_option("--cells", synth.cells);
  synth.o_sep = s->add_option("--class-sep", synth.class_sep);
  synth.o_peak = s->add_option("--prior-peakedness", synth.peak);
  synth.o_corr = s->add_option("--corruption", synth.corruption,
                               "none, shuffle, uniform or confident_wrong");
  synth.o_rho = s->add_option("--corruption-fraction", synth.rho);
  synth.o_region = s->add_option("--region-coupled", synth.region_coupled);
  synth.o_kappa = s->add_option("--dependence-strength", synth.kappa);
  synth.o_skew = s->add_option("--class-prior-skew", synth.skew);
  synth.o_seed = s->add_option("--seed", synth.seed);

  TrainFlags train;
  auto* t = app.add_subcommand("train", "Train one stage and write its best checkpoint");
  t->add_option("--stage", train.stage)->required()->check(CLI::Range(1, 3));
  t->add_option("--data", train.data, "Training dataset file")->required();
  t->add_option("--priors", train.priors, "Prior table file");
  t->add_option("--context-model", train.context_model, "Saved context MLP used as the prior");
  t->add_flag("--context-mlp", train.context_mlp, "Train a context MLP to supply the prior");
  t->add_option("--init", train.init, "Checkpoint of the previous stage");
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--metrics", train.metrics, "Per-epoch log (default <out>.metrics.jsonl)");
  add_train_flags(t, train.config);
  train.o_seed = t->add_option("--seed", train.config.seed);

  EvalFlags eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint)->required();
  e->add_option("--data", eval.data)->required();
  e->add_option("--priors", eval.priors);
  e->add_option("--context-model", eval.context_model);
  e->add_flag("--audio-only", eval.audio_only, "Evaluate the omega = 0 fallback");
  e->add_option("--out", eval.out)->capture_default_str();

  SweepFlags sweep;
  auto* w = app.add_subcommand("sweep", "Accuracy and mAP over a grid of fixed fusion weights");
  w->add_option("--checkpoint", sweep.checkpoint)->required();
  w->add_option("--data", sweep.data)->required();
  w->add_option("--priors", sweep.priors);
  w->add_option("--context-model", sweep.context_model);
  w->add_option("--omega-grid", sweep.grid)->capture_default_str();
  w->add_option("--out", sweep.out)->capture_default_str();

  FuseFlags fuse;
  auto* fu = app.add_subcommand("fuse", "Show the fused prediction for one sample");
  fu->add_option("--checkpoint", fuse.checkpoint)->required();
  fu->add_option("--data", fuse.data);
  fu->add_option("--id", fuse.id, "Sample id in --data");
  fu->add_option("--priors", fuse.priors);
  fu->add_option("--context-model", fuse.context_model);
  fu->add_option("--embedding", fuse.embedding, "Comma-separated embedding");
  fu->add_option("--prior", fuse.prior, "Comma-separated prior distribution");
  fu->add_option("--lat", fuse.lat);
  fu->add_option("--lon", fuse.lon);
  fu->add_option("--day", fuse.day);
  fu->add_option("--hour", fuse.hour);
  fu->add_option("--top-k", fuse.k)->capture_default_str();
  fu->add_option("--out", fuse.out)->capture_default_str();

  DiagnoseFlags diag;
  auto* d = app.add_subcommand("diagnose", "Test whether embeddings predict the prior");
  d->add_option("--data", diag.data)->required();
  d->add_option("--priors", diag.priors);
  d->add_option("--context-model", diag.context_model);
  d->add_option("--min-samples", diag.options.min_samples_per_class)->capture_default_str();
  d->add_option("--n-perm", diag.options.n_perm)->capture_default_str();
  d->add_option("--ridge", diag.options.ridge)->capture_default_str();
  d->add_flag("--full-row", diag.options.full_row, "Regress the whole prior row");
  d->add_option("--out", diag.out)->capture_default_str();
  diag.o_seed = d->add_option("--seed", diag.options.seed);

  GradcheckFlags grad;
  auto* g = app.add_subcommand("gradcheck", "Compare analytic and numerical gradients");
  grad.o_seed = g->add_option("--seed", grad.seed);
  g->add_option("--batch", grad.batch)->capture_default_str();
  g->add_option("--out", grad.out)->capture_default_str();

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.emplace_back("finch");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& a : argv_storage) {
    argv.push_back(a.data());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) return cmd_synth(synth, args, out);
    if (*t) return cmd_train(train, args, out);
    if (*e) return cmd_eval(eval, args, out);
    if (*w) return cmd_sweep(sweep, args, out);
    if (*fu) return cmd_fuse(fuse, args, out);
    if (*d) return cmd_diagnose(diag, args, out);
    if (*g) return cmd_gradcheck(grad, args, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace finch
