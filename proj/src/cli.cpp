#include "clmlf/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <toml.hpp>

#include "clmlf/inspection.hpp"

namespace clmlf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- TOML <-> JSON ---------------------------------------------------------

json toml_to_json(const toml::node& node, const std::string& where) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (auto&& [key, value] : *t) {
      const std::string k(key.str());
      out[k] = toml_to_json(value, where.empty() ? k : where + "." + k);
    }
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v, where));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  throw ConfigError("unsupported value type for key " + where);
}

void json_to_toml(const json& j, toml::table& out);

toml::array json_array_to_toml(const json& j) {
  toml::array arr;
  for (const auto& v : j) {
    if (v.is_string()) {
      arr.push_back(v.get<std::string>());
    } else if (v.is_boolean()) {
      arr.push_back(v.get<bool>());
    } else if (v.is_number_integer()) {
      arr.push_back(v.get<std::int64_t>());
    } else if (v.is_number()) {
      arr.push_back(v.get<double>());
    }
  }
  return arr;
}

void json_to_toml(const json& j, toml::table& out) {
  for (const auto& [key, v] : j.items()) {
    if (v.is_object()) {
      toml::table sub;
      json_to_toml(v, sub);
      out.insert_or_assign(key, std::move(sub));
    } else if (v.is_array()) {
      out.insert_or_assign(key, json_array_to_toml(v));
    } else if (v.is_string()) {
      out.insert_or_assign(key, v.get<std::string>());
    } else if (v.is_boolean()) {
      out.insert_or_assign(key, v.get<bool>());
    } else if (v.is_number_integer()) {
      out.insert_or_assign(key, v.get<std::int64_t>());
    } else if (v.is_number()) {
      out.insert_or_assign(key, v.get<double>());
    }
  }
}

// ---- helpers ----------------------------------------------------------------

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw std::runtime_error(what + " not found: " + path.string());
}

Dataset load_dataset(const fs::path& path) {
  require_file(path, "dataset file");
  return load_jsonl(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,loss_sc,loss_lbcl,loss_dbcl,loss_total,n_pos_pairs,augment_warnings,val_accuracy,val_weighted_f1,"
        "val_macro_f1\n";
  for (const auto& h : history) {
    os << h.epoch << "," << json(h.loss_sc).dump() << "," << json(h.loss_lbcl).dump() << ","
       << json(h.loss_dbcl).dump() << "," << json(h.loss_total).dump() << "," << h.n_pos_pairs << ","
       << h.augment_warnings;
    if (h.val) {
      os << "," << json(h.val->accuracy).dump() << "," << json(h.val->weighted_f1).dump() << ","
         << json(h.val->macro_f1).dump();
    } else {
      os << ",,,";
    }
    os << "\n";
  }
  return os.str();
}

/// Parses `args` with `app`; returns -1 to continue, otherwise an exit code.
int parse(CLI::App& app, std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return -1;
}

// ---- commands ----------------------------------------------------------------

int cmd_train(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train a model", "train"};
  std::string config_path, data_dir, out_dir, train_path, val_path, test_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  app.add_option("--config", config_path, "TOML run config");
  app.add_option("--seed", seed, "Override train.seed");
  app.add_option("--epochs", epochs, "Override train.epochs");
  app.add_option("--data", data_dir, "Directory holding train/val/test.jsonl");
  app.add_option("--train", train_path, "Training JSONL");
  app.add_option("--val", val_path, "Validation JSONL");
  app.add_option("--test", test_path, "Test JSONL");
  app.add_option("--out", out_dir, "Output directory");
  if (int rc = parse(app, args, out, err); rc >= 0) return rc;

  RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (seed) cfg.train.seed = *seed;
  if (epochs) cfg.train.epochs = *epochs;
  if (!data_dir.empty()) {
    cfg.train_path = (fs::path(data_dir) / "train.jsonl").string();
    cfg.val_path = fs::exists(fs::path(data_dir) / "val.jsonl") ? (fs::path(data_dir) / "val.jsonl").string() : "";
    cfg.test_path = fs::exists(fs::path(data_dir) / "test.jsonl") ? (fs::path(data_dir) / "test.jsonl").string() : "";
  }
  if (!train_path.empty()) cfg.train_path = train_path;
  if (!val_path.empty()) cfg.val_path = val_path;
  if (!test_path.empty()) cfg.test_path = test_path;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (cfg.train_path.empty()) throw ConfigError("no training data: set data.train or pass --train/--data");
  cfg.train.validate();

  const Dataset train_set = load_dataset(cfg.train_path);
  std::optional<Dataset> val_set, test_set;
  if (!cfg.val_path.empty()) val_set = load_dataset(cfg.val_path);
  if (!cfg.test_path.empty()) test_set = load_dataset(cfg.test_path);

  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  TrainResult result = train(cfg.train, train_set, val_set ? &*val_set : nullptr);
  cfg.train = result.config;

  json metrics = {{"best_epoch", result.best_epoch}, {"epochs", result.config.epochs}};
  metrics["val"] = val_set ? to_json(evaluate(result.model, result.vocab, *val_set, cfg.train.eval_batch_size).metrics)
                           : json(nullptr);
  metrics["test"] = test_set
                        ? to_json(evaluate(result.model, result.vocab, *test_set, cfg.train.eval_batch_size).metrics)
                        : json(nullptr);
  save_checkpoint(dir / "model.ckpt", result.model, result.vocab, result.config, result.rng_state);
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(dir / "history.csv", history_csv(result.history));
  write_text(dir / "config.toml", to_toml(cfg));
  out << "best epoch " << result.best_epoch;
  if (!metrics["test"].is_null()) out << ", test accuracy " << metrics["test"]["accuracy"].get<double>();
  out << "; outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evaluate a checkpoint", "eval"};
  std::string ckpt, data, out_path;
  int batch_size = 64;
  app.add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  app.add_option("--data", data, "JSONL dataset")->required();
  app.add_option("--out", out_path, "metrics.json path");
  app.add_option("--batch-size", batch_size, "Evaluation batch size");
  if (int rc = parse(app, args, out, err); rc >= 0) return rc;

  require_file(ckpt, "checkpoint");
  Checkpoint ck = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  const json metrics = to_json(evaluate(ck.model, ck.vocab, ds, batch_size).metrics);
  if (!out_path.empty()) {
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    write_text(out_path, metrics.dump(2) + "\n");
  }
  out << metrics.dump(2) << "\n";
  return 0;
}

int cmd_synth(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generate a synthetic dataset", "synth"};
  std::string spec_path, out_dir;
  app.add_option("--spec", spec_path, "Synthetic spec JSON");
  app.add_option("--out", out_dir, "Output directory")->required();
  if (int rc = parse(app, args, out, err); rc >= 0) return rc;

  SyntheticSpec spec;
  if (!spec_path.empty()) {
    require_file(spec_path, "spec file");
    spec = load_synthetic_spec(spec_path);
  }
  spec.validate();
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  write_jsonl(synthesize(spec), dir / "all.jsonl");
  const Dataset all = load_jsonl(dir / "all.jsonl");
  const auto parts = split(all, SplitRatios{}, spec.seed);
  const char* names[] = {"train.jsonl", "val.jsonl", "test.jsonl"};
  for (int k = 0; k < 3; ++k) write_jsonl(parts[static_cast<std::size_t>(k)], dir / names[k]);
  write_text(dir / "synonyms.txt", synthetic_synonym_table(spec));
  json spec_json = spec;
  write_text(dir / "spec.json", spec_json.dump(2) + "\n");
  out << "wrote " << all.size() << " examples (" << parts[0].size() << "/" << parts[1].size() << "/"
      << parts[2].size() << ") to " << dir.string() << "\n";
  return 0;
}

int cmd_augment_preview(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Write original/augmented sample pairs", "augment-preview"};
  std::string config_path, data, out_dir;
  int count = 8;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "TOML run config (augmentation and image size)");
  app.add_option("--data", data, "JSONL dataset")->required();
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--count", count, "Number of examples");
  app.add_option("--seed", seed, "Augmentation seed");
  if (int rc = parse(app, args, out, err); rc >= 0) return rc;

  const RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  cfg.train.augmentation.validate();
  const Dataset ds = load_dataset(data);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const TextAugmenter text_aug = cfg.train.augmentation.make_text_augmenter();
  const CollateParams cp = cfg.train.collate();
  Rng selection(seed), aug_rng(derive_seed(seed, 1));
  std::ostringstream texts;
  texts << "id\toriginal\taugmented\n";
  const int n = std::min<int>(count, static_cast<int>(ds.size()));
  for (int i = 0; i < n; ++i) {
    const Example& ex = ds.examples[static_cast<std::size_t>(i)];
    const TextAugmentResult t = back_translate(ex.text, text_aug, aug_rng);
    const FloatImage original = load_example_image(ex, cp, selection);
    const FloatImage augmented = rand_augment(original, cfg.train.augmentation.image, aug_rng);
    const Image a = to_bytes(original), b = to_bytes(augmented);
    Image pair(a.height, a.width * 2, 3);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x)
        for (int c = 0; c < 3; ++c) {
          pair.at(y, x, c) = a.at(y, x, c);
          pair.at(y, a.width + x, c) = b.at(y, x, c);
        }
    write_png(pair, dir / (ex.id + ".png"));
    texts << ex.id << "\t" << ex.text << "\t" << t.text << (t.warning ? "\t(augmenter fallback)" : "") << "\n";
  }
  write_text(dir / "texts.tsv", texts.str());
  out << "wrote " << n << " previews to " << dir.string() << "\n";
  return 0;
}

int cmd_attn(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Export attention overlays", "attn"};
  std::string ckpt, data, out_dir;
  int head = 0, token = -1, count = 16;
  app.add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  app.add_option("--data", data, "JSONL dataset")->required();
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--head", head, "Attention head (default 0)");
  app.add_option("--token", token,
                 "Text token index; default is the evidence word when the example records one, else 1");
  app.add_option("--count", count, "Number of examples");
  if (int rc = parse(app, args, out, err); rc >= 0) return rc;

  require_file(ckpt, "checkpoint");
  Checkpoint ck = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const CollateParams cp = ck.config.collate();
  const int n = std::min<int>(count, static_cast<int>(ds.size()));
  for (int i = 0; i < n; ++i) {
    const Example& ex = ds.examples[static_cast<std::size_t>(i)];
    const AttentionMap map = extract_attention(ck.model, ck.vocab, ex, head);
    int t = token;
    if (t < 0) t = (ex.meta && ex.meta->evidence_word >= 0) ? ex.meta->evidence_word + 1 : 1;
    Rng selection(0);
    const Image image = to_bytes(load_example_image(ex, cp, selection));
    export_overlay(map.patch_weights(t), map.grid, image, dir / (ex.id + ".png"));
  }
  out << "wrote " << n << " overlays to " << dir.string() << "\n";
  return 0;
}

int cmd_embed(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Export representations", "embed"};
  std::string ckpt, data, out_path, project;
  app.add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  app.add_option("--data", data, "JSONL dataset")->required();
  app.add_option("--out", out_path, "Embeddings CSV")->required();
  app.add_option("--project", project, "Also write PCA coordinates to this CSV");
  if (int rc = parse(app, args, out, err); rc >= 0) return rc;

  require_file(ckpt, "checkpoint");
  Checkpoint ck = load_checkpoint(ckpt);
  const Dataset ds = load_dataset(data);
  const Embeddings e = compute_embeddings(ck.model, ck.vocab, ds, ck.config.eval_batch_size);
  write_embeddings_csv(e, out_path);
  if (!project.empty()) {
    write_coordinates_csv(e.ids, e.labels, project_2d(e.values.cast<double>()), project);
  }
  out << "wrote " << e.ids.size() << " rows to " << out_path << "\n";
  return 0;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a table");
  RunConfig cfg;
  json rest = j;
  if (j.contains("data")) {
    const json& d = j.at("data");
    if (!d.is_object()) throw ConfigError("key data must be a table");
    for (const auto& [key, value] : d.items()) {
      std::string* slot = key == "train" ? &cfg.train_path
                          : key == "val" ? &cfg.val_path
                          : key == "test" ? &cfg.test_path
                                          : nullptr;
      if (!slot) throw ConfigError("unknown config key: data." + key);
      if (!value.is_string()) throw ConfigError("invalid value for key data." + key + ": " + value.dump());
      *slot = value.get<std::string>();
    }
    rest.erase("data");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    if (!o.is_object()) throw ConfigError("key output must be a table");
    for (const auto& [key, value] : o.items()) {
      if (key != "dir") throw ConfigError("unknown config key: output." + key);
      if (!value.is_string()) throw ConfigError("invalid value for key output.dir: " + value.dump());
      cfg.output_dir = value.get<std::string>();
    }
    rest.erase("output");
  }
  cfg.train = train_config_from_json(rest);
  return cfg;
}

json to_json(const RunConfig& cfg) {
  json j = clmlf::to_json(cfg.train);
  j["data"] = {{"train", cfg.train_path}, {"val", cfg.val_path}, {"test", cfg.test_path}};
  j["output"] = {{"dir", cfg.output_dir}};
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  require_file(path, "config file");
  toml::table table;
  try {
    table = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    const auto& src = e.source();
    throw ConfigError(path.string() + ":" + std::to_string(src.begin.line) + ":" + std::to_string(src.begin.column) +
                      ": " + std::string(e.description()));
  }
  RunConfig cfg = run_config_from_json(toml_to_json(table, ""));
  // Relative paths are resolved against the config file's directory.
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  for (std::string* p : {&cfg.train_path, &cfg.val_path, &cfg.test_path, &cfg.train.augmentation.synonyms}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return cfg;
}

std::string to_toml(const RunConfig& cfg) {
  RunConfig resolved = cfg;
  for (std::string* p : {&resolved.train_path, &resolved.val_path, &resolved.test_path,
                         &resolved.train.augmentation.synonyms, &resolved.output_dir}) {
    if (!p->empty()) *p = fs::absolute(*p).lexically_normal().string();
  }
  toml::table t;
  json_to_toml(to_json(resolved), t);
  std::ostringstream os;
  os << toml::toml_formatter(t) << "\n";
  return os.str();
}

std::string usage() {
  return "usage: clmlf <command> [options]\n"
         "\n"
         "commands:\n"
         "  train            train a model (--config run.toml, --data DIR, --seed N, --out DIR)\n"
         "  eval             evaluate a checkpoint on a JSONL dataset\n"
         "  synth            generate a synthetic dataset (--spec s.json --out DIR)\n"
         "  augment-preview  write original/augmented sample pairs\n"
         "  attn             export attention overlays for text tokens\n"
         "  embed            export representations (+ PCA coordinates with --project)\n"
         "\n"
         "Run `clmlf <command> --help` for command options.\n";
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || args[0] == "-h" || args[0] == "--help") {
    (args.empty() ? err : out) << usage();
    return args.empty() ? 2 : 0;
  }
  const std::string& command = args[0];
  const std::vector<std::string> rest(args.begin() + 1, args.end());
  try {
    if (command == "train") return cmd_train(rest, out, err);
    if (command == "eval") return cmd_eval(rest, out, err);
    if (command == "synth") return cmd_synth(rest, out, err);
    if (command == "augment-preview") return cmd_augment_preview(rest, out, err);
    if (command == "attn") return cmd_attn(rest, out, err);
    if (command == "embed") return cmd_embed(rest, out, err);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  err << "error: unknown command '" << command << "'\n" << usage();
  return 2;
}

}  // namespace clmlf::cli
