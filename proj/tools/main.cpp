// Command-line surface: train / spectrum / eval / align / concentration /
// synth. Exit codes: 0 success, 2 configuration or usage error, 3 numerical
// failure (divergence).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "sparsehead/analysis.hpp"
#include "sparsehead/datagen.hpp"
#include "sparsehead/errors.hpp"
#include "sparsehead/evaluation.hpp"
#include "sparsehead/models.hpp"
#include "sparsehead/objectives.hpp"
#include "sparsehead/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparsehead;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& context) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + context);
  }
}

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// -- config schema ------------------------------------------------------------

struct DataSection {
  std::string kind;  // synthetic | tds | raw_images
  std::string path;
  std::size_t n_samples = 2048;
  std::uint64_t world_seed = 0;
  std::uint64_t data_seed = 1;
  WorldConfig world;
  std::optional<RawImageLayout> layout;
  std::size_t image_h = 0, image_w = 0, image_c = 0;
};

struct ExperimentConfig {
  std::string experiment = "run";
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  DataSection data;
  TrainConfig train;
};

WorldConfig parse_world(const json& j) {
  check_keys(j,
             {"latent_dim", "obs_dim", "subject_dim", "decoder", "mlp_hidden", "condition_limit",
              "n_classes"},
             "data.world");
  WorldConfig w;
  w.latent_dim = j.value("latent_dim", w.latent_dim);
  w.obs_dim = j.value("obs_dim", w.obs_dim);
  w.subject_dim = j.value("subject_dim", w.subject_dim);
  if (j.contains("decoder")) {
    const std::string d = j["decoder"].get<std::string>();
    if (d == "linear") {
      w.decoder = DecoderKind::linear;
    } else if (d == "mlp") {
      w.decoder = DecoderKind::mlp;
    } else {
      throw ConfigError("data.world.decoder must be \"linear\" or \"mlp\"");
    }
  }
  w.mlp_hidden = j.value("mlp_hidden", w.mlp_hidden);
  w.condition_limit = j.value("condition_limit", w.condition_limit);
  w.n_classes = j.value("n_classes", w.n_classes);
  return w;
}

DataSection parse_data(const json& j) {
  check_keys(j, {"kind", "path", "n_samples", "world_seed", "data_seed", "world", "layout",
                 "image_shape"},
             "data");
  DataSection d;
  if (!j.contains("kind")) throw ConfigError("data.kind is required");
  d.kind = j["kind"].get<std::string>();
  if (d.kind != "synthetic" && d.kind != "tds" && d.kind != "raw_images") {
    throw ConfigError("data.kind must be synthetic, tds or raw_images");
  }
  d.path = j.value("path", std::string());
  d.n_samples = j.value("n_samples", d.n_samples);
  d.world_seed = j.value("world_seed", d.world_seed);
  d.data_seed = j.value("data_seed", d.data_seed);
  if (j.contains("world")) d.world = parse_world(j["world"]);
  if (j.contains("layout")) {
    const json& l = j["layout"];
    check_keys(l, {"height", "width", "channels", "n_classes"}, "data.layout");
    RawImageLayout layout;
    layout.height = l.value("height", layout.height);
    layout.width = l.value("width", layout.width);
    layout.channels = l.value("channels", layout.channels);
    layout.n_classes = l.value("n_classes", layout.n_classes);
    d.layout = layout;
  }
  if (j.contains("image_shape")) {
    const auto shape = j["image_shape"].get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw ConfigError("data.image_shape must be [height, width, channels]");
    d.image_h = shape[0];
    d.image_w = shape[1];
    d.image_c = shape[2];
  }
  if (d.kind != "synthetic" && d.path.empty()) {
    throw ConfigError("data.path is required for kind \"" + d.kind + "\"");
  }
  return d;
}

AugmentationRule parse_augmentation(const json& j) {
  check_keys(j, {"kind", "noise_scale", "flip_prob", "mask_size"}, "train.augmentation");
  AugmentationRule r;
  if (j.contains("kind")) {
    const std::string k = j["kind"].get<std::string>();
    if (k == "latent_nuisance") {
      r.kind = AugmentationKind::latent_nuisance;
    } else if (k == "pixel") {
      r.kind = AugmentationKind::pixel;
    } else {
      throw ConfigError("augmentation.kind must be latent_nuisance or pixel");
    }
  }
  r.noise_scale = j.value("noise_scale", r.noise_scale);
  r.flip_prob = j.value("flip_prob", r.flip_prob);
  r.mask_size = j.value("mask_size", r.mask_size);
  return r;
}

TrainConfig parse_train(const json& j) {
  check_keys(j,
             {"batch_size", "steps", "temperature", "lambda", "sparsity_mode", "lr",
              "weight_decay", "cosine_lr", "encoder_hidden", "representation_dim", "head",
              "embedding_dim", "head_hidden", "standardize", "augmentation", "diag_every",
              "diag_max_rows", "tasks"},
             "train");
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.temperature = j.value("temperature", c.temperature);
  c.lambda = j.value("lambda", c.lambda);
  if (j.contains("sparsity_mode")) {
    const std::string m = j["sparsity_mode"].get<std::string>();
    if (m == "penalty") {
      c.sparsity_mode = SparsityMode::penalty;
    } else if (m == "proximal") {
      c.sparsity_mode = SparsityMode::proximal;
    } else {
      throw ConfigError("train.sparsity_mode must be penalty or proximal");
    }
  }
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.cosine_lr = j.value("cosine_lr", c.cosine_lr);
  c.encoder.hidden = j.value("encoder_hidden", std::vector<std::size_t>{});
  if (!j.contains("representation_dim")) throw ConfigError("train.representation_dim is required");
  c.encoder.output_dim = j["representation_dim"].get<std::size_t>();
  c.head.kind = head_kind_from_name(j.value("head", std::string("identity")));
  c.head.input_dim = c.encoder.output_dim;
  c.head.output_dim = j.value("embedding_dim", c.encoder.output_dim);
  c.head.hidden = j.value("head_hidden", std::size_t{0});
  c.head.standardize = j.value("standardize", false);
  if (j.contains("augmentation")) c.augmentation = parse_augmentation(j["augmentation"]);
  c.diag_every = j.value("diag_every", c.diag_every);
  c.diag_max_rows = j.value("diag_max_rows", c.diag_max_rows);
  if (j.contains("tasks")) {
    const json& t = j["tasks"];
    check_keys(t, {"count", "min_size", "max_size"}, "train.tasks");
    c.task_count = t.value("count", std::size_t{0});
    c.task_min_size = t.value("min_size", std::size_t{0});
    c.task_max_size = t.value("max_size", std::size_t{0});
  }
  return c;
}

ExperimentConfig parse_experiment(const json& j) {
  check_keys(j, {"experiment", "out_dir", "seed", "data", "train"}, "config");
  ExperimentConfig cfg;
  cfg.experiment = j.value("experiment", cfg.experiment);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.seed = j.value("seed", cfg.seed);
  if (!j.contains("data")) throw ConfigError("config.data is required");
  cfg.data = parse_data(j["data"]);
  if (!j.contains("train")) throw ConfigError("config.train is required");
  cfg.train = parse_train(j["train"]);
  cfg.train.seed = cfg.seed;
  return cfg;
}

struct LoadedData {
  Dataset dataset;
  std::optional<SyntheticWorld> world;
};

LoadedData load_data(const DataSection& d) {
  LoadedData out;
  if (d.kind == "synthetic") {
    out.world = SyntheticWorld::sample(d.world, d.world_seed);
    out.dataset = out.world->sample_dataset(d.n_samples, d.data_seed);
  } else if (d.kind == "tds") {
    if (!fs::exists(d.path)) throw ConfigError("data.path does not exist: " + d.path);
    out.dataset = load_tds(d.path);
    if (d.image_c > 0) {
      if (d.image_h * d.image_w * d.image_c != out.dataset.dim()) {
        throw ConfigError("data.image_shape does not match the dataset width");
      }
      out.dataset.image_height = d.image_h;
      out.dataset.image_width = d.image_w;
      out.dataset.image_channels = d.image_c;
    }
  } else {
    if (!fs::exists(d.path)) throw ConfigError("data.path does not exist: " + d.path);
    out.dataset = import_raw_images(d.path, d.layout.value_or(RawImageLayout{}));
  }
  return out;
}

Tensor encode_all(const ModelState& model, const Tensor& x) {
  Tape tape;
  return model.encode(tape, x);
}

// -- commands -----------------------------------------------------------------

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
              std::optional<std::string> out_flag) {
  ExperimentConfig cfg = parse_experiment(load_json(config_path));
  if (seed_flag) {
    cfg.seed = *seed_flag;
    cfg.train.seed = *seed_flag;
  }
  if (out_flag) cfg.out_dir = *out_flag;

  LoadedData data = load_data(cfg.data);
  cfg.train.encoder.input_dim = data.dataset.dim();
  cfg.train.head.input_dim = cfg.train.encoder.output_dim;

  fs::create_directories(cfg.out_dir);
  const fs::path base = fs::path(cfg.out_dir) / cfg.experiment;
  const SyntheticWorld* world = data.world ? &*data.world : nullptr;

  RunRecord partial;
  try {
    TrainResult result = train(cfg.train, data.dataset, world);

    save_checkpoint((base.string() + ".sphd"), result.model);
    {
      std::ofstream os(base.string() + ".metrics.jsonl");
      write_metrics_jsonl(os, result.record);
    }
    {
      const std::size_t n_eval = std::min(data.dataset.size(), cfg.train.diag_max_rows);
      std::vector<double> rows(n_eval * data.dataset.dim());
      for (std::size_t i = 0; i < n_eval; ++i)
        for (std::size_t j = 0; j < data.dataset.dim(); ++j)
          rows[i * data.dataset.dim() + j] = data.dataset.features.at(i, j);
      const Tensor eval_x = Tensor::from_data({n_eval, data.dataset.dim()}, std::move(rows));
      const DiagnosticsSnapshot snap = snapshot_diagnostics(result.model, eval_x);
      std::ofstream os(base.string() + ".spectrum.csv");
      write_spectrum_csv(os, snap.spectrum);
    }
    std::cerr << "train: " << result.record.steps_completed << " steps, wall "
              << result.record.wall_seconds << "s\n";
    return kExitOk;
  } catch (const DivergenceError& e) {
    // keep the partial metrics around for diagnosis
    std::ofstream os(base.string() + ".metrics.jsonl");
    write_metrics_jsonl(os, e.record);
    throw;
  }
}

int cmd_spectrum(const std::string& checkpoint, const std::string& data_path,
                 const std::string& out_csv) {
  ModelState model = load_checkpoint(checkpoint);
  if (!fs::exists(data_path)) throw ConfigError("dataset does not exist: " + data_path);
  Dataset ds = load_tds(data_path);
  if (ds.dim() != model.encoder_spec().input_dim) {
    throw ConfigError("checkpoint/dataset mismatch: encoder expects " +
                      std::to_string(model.encoder_spec().input_dim) + " features, dataset has " +
                      std::to_string(ds.dim()));
  }
  const DiagnosticsSnapshot snap = snapshot_diagnostics(model, ds.features);
  std::ofstream os(out_csv);
  if (!os) throw ConfigError("cannot open output: " + out_csv);
  write_spectrum_csv(os, snap.spectrum);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& train_path,
             const std::string& test_path, std::size_t k, std::size_t probe_iters, double probe_lr,
             std::uint64_t seed) {
  ModelState model = load_checkpoint(checkpoint);
  Dataset train_ds = load_tds(train_path);
  Dataset test_ds = load_tds(test_path);
  if (!train_ds.has_labels() || !test_ds.has_labels()) {
    throw ConfigError("eval needs labeled datasets");
  }
  if (train_ds.dim() != model.encoder_spec().input_dim) {
    throw ConfigError("checkpoint/dataset mismatch on feature width");
  }

  const Tensor train_feats = encode_all(model, train_ds.features);
  const Tensor test_feats = encode_all(model, test_ds.features);

  ProbeOptions popts;
  popts.iters = probe_iters;
  popts.lr = probe_lr;
  popts.seed = seed;
  const ProbeModel probe = train_probe(train_feats, train_ds.labels, popts);
  const double linear_acc = eval_probe(probe, test_feats, test_ds.labels);

  const auto preds = knn_classify(train_feats, train_ds.labels, test_feats, k);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == test_ds.labels[i];
  const double knn_acc = static_cast<double>(hit) / static_cast<double>(preds.size());

  std::cout << "{\"linear_acc\":" << fmt_double(linear_acc) << ",\"knn_acc\":"
            << fmt_double(knn_acc) << "}\n";
  return kExitOk;
}

int cmd_align(const std::string& config_path, const std::string& checkpoint,
              std::optional<std::size_t> n_flag, std::optional<std::uint64_t> data_seed_flag) {
  ExperimentConfig cfg = parse_experiment(load_json(config_path));
  if (cfg.data.kind != "synthetic") throw ConfigError("align needs a synthetic data section");
  if (n_flag) cfg.data.n_samples = *n_flag;
  if (data_seed_flag) cfg.data.data_seed = *data_seed_flag;

  ModelState model = load_checkpoint(checkpoint);
  LoadedData data = load_data(cfg.data);
  if (data.dataset.dim() != model.encoder_spec().input_dim) {
    throw ConfigError("checkpoint/world mismatch on observation width");
  }

  const Tensor learned = encode_all(model, data.dataset.features);
  const AlignmentReport rep = gte_alignment(learned, data.dataset.latents);

  json out;
  out["mcc"] = rep.mcc;
  json assignment = json::array(), abs_r = json::array(), scale = json::array();
  for (std::size_t i = 0; i < rep.assignment.size(); ++i) {
    assignment.push_back(rep.assignment[i] == AlignmentReport::npos
                             ? json(nullptr)
                             : json(rep.assignment[i]));
    abs_r.push_back(rep.matched_abs_r[i]);
    scale.push_back(rep.scale[i]);
  }
  out["assignment"] = assignment;
  out["abs_r"] = abs_r;
  out["scale"] = scale;
  std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_concentration(const std::string& dims_csv, std::size_t n, std::size_t trials,
                      std::uint64_t seed, const std::string& out_path) {
  std::vector<std::size_t> dims;
  std::size_t pos = 0;
  while (pos < dims_csv.size()) {
    const std::size_t comma = dims_csv.find(',', pos);
    const std::string tok = dims_csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    try {
      dims.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad dims list: " + dims_csv);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  const auto curve = concentration_curve(dims, n, trials, seed);

  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out_path.empty() && out_path != "-") {
    file.open(out_path);
    if (!file) throw ConfigError("cannot open output: " + out_path);
    os = &file;
  }
  *os << "d,mean_M\n";
  for (const auto& [d, m] : curve) *os << d << ',' << fmt_double(m) << '\n';
  return kExitOk;
}

int cmd_synth(const std::string& config_path, const std::string& out_path) {
  ExperimentConfig cfg = parse_experiment(load_json(config_path));
  if (cfg.data.kind != "synthetic") throw ConfigError("synth needs a synthetic data section");
  LoadedData data = load_data(cfg.data);
  save_tds(out_path, data.dataset);
  std::cerr << "synth: wrote " << data.dataset.size() << " rows to " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SparseHead contrastive-learning laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, data_path, train_path, test_path, out_csv;
  std::string dims = "16,64,256,1024";
  std::uint64_t seed = 0;
  bool seed_set = false, out_set = false;
  std::size_t knn_k = 5, probe_iters = 500, conc_n = 100, conc_trials = 20;
  double probe_lr = 0.1;
  std::size_t align_n = 0;
  std::uint64_t align_data_seed = 0;
  bool align_n_set = false, align_seed_set = false;

  auto* train_cmd = app.add_subcommand("train", "run a training experiment from a JSON config");
  train_cmd->add_option("--config", config_path, "experiment config path")->required();
  train_cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  train_cmd->add_option("--out", out_dir, "output directory override")
      ->each([&](const std::string&) { out_set = true; });

  auto* spectrum_cmd =
      app.add_subcommand("spectrum", "eigen-spectra of a checkpoint over a dataset");
  spectrum_cmd->add_option("--checkpoint", checkpoint, "SPHD checkpoint")->required();
  spectrum_cmd->add_option("--data", data_path, "TDS dataset")->required();
  spectrum_cmd->add_option("--out", out_csv, "output CSV path")->required();

  auto* eval_cmd = app.add_subcommand("eval", "linear probe and kNN accuracy");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--train", train_path, "labeled TDS training set")->required();
  eval_cmd->add_option("--test", test_path, "labeled TDS test set")->required();
  eval_cmd->add_option("--k", knn_k, "kNN neighbourhood size");
  eval_cmd->add_option("--probe-iters", probe_iters);
  eval_cmd->add_option("--probe-lr", probe_lr);
  eval_cmd->add_option("--seed", seed);

  auto* align_cmd = app.add_subcommand("align", "ground-truth alignment of a checkpoint");
  align_cmd->add_option("--config", config_path, "experiment config with a synthetic world")
      ->required();
  align_cmd->add_option("--checkpoint", checkpoint)->required();
  align_cmd->add_option("--n", align_n, "evaluation sample count")
      ->each([&](const std::string&) { align_n_set = true; });
  align_cmd->add_option("--data-seed", align_data_seed)->each([&](const std::string&) {
    align_seed_set = true;
  });

  auto* conc_cmd = app.add_subcommand("concentration", "min-max distance ratio curve");
  conc_cmd->add_option("--dims", dims, "comma-separated dimensions");
  conc_cmd->add_option("--n", conc_n, "points per trial");
  conc_cmd->add_option("--trials", conc_trials);
  conc_cmd->add_option("--seed", seed);
  conc_cmd->add_option("--out", out_csv, "CSV path or - for stdout");

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset as TDS");
  synth_cmd->add_option("--config", config_path)->required();
  synth_cmd->add_option("--out", out_csv, "output TDS path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      return cmd_train(config_path,
                       seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt,
                       out_set ? std::optional<std::string>(out_dir) : std::nullopt);
    }
    if (spectrum_cmd->parsed()) return cmd_spectrum(checkpoint, data_path, out_csv);
    if (eval_cmd->parsed()) {
      return cmd_eval(checkpoint, train_path, test_path, knn_k, probe_iters, probe_lr, seed);
    }
    if (align_cmd->parsed()) {
      return cmd_align(config_path, checkpoint,
                       align_n_set ? std::optional<std::size_t>(align_n) : std::nullopt,
                       align_seed_set ? std::optional<std::uint64_t>(align_data_seed)
                                      : std::nullopt);
    }
    if (conc_cmd->parsed()) return cmd_concentration(dims, conc_n, conc_trials, seed, out_csv);
    if (synth_cmd->parsed()) return cmd_synth(config_path, out_csv);
    std::cerr << "no command given\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return kExitNumeric;
  }
}
