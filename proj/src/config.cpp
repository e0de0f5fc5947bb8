#include <set>
#include <string>

#include "clmlf/training.hpp"

namespace clmlf {

using nlohmann::json;

void AugmentationConfig::validate() const {
  if (!(substitute_prob >= 0.0 && substitute_prob <= 1.0)) {
    throw ConfigError("augmentation.substitute_prob must be in [0, 1]");
  }
  if (!(word_dropout >= 0.0 && word_dropout < 1.0)) throw ConfigError("augmentation.word_dropout must be in [0, 1)");
  if (text == TextAugmentKind::mt && mt_endpoint.empty()) {
    throw ConfigError("augmentation.mt_endpoint is required when augmentation.text = \"mt\"");
  }
  if (!(mt_timeout > 0.0)) throw ConfigError("augmentation.mt_timeout must be positive");
  image.validate();
}

TextAugmenter AugmentationConfig::make_text_augmenter() const {
  switch (text) {
    case TextAugmentKind::identity:
      return TextAugmenter::identity();
    case TextAugmentKind::stub: {
      StubSettings s;
      if (!synonyms.empty()) s.table = SynonymTable::load(synonyms);
      s.substitute_prob = substitute_prob;
      s.dropout = word_dropout;
      return TextAugmenter::stub(std::move(s));
    }
    case TextAugmentKind::mt: {
      MtClientSettings s;
      s.endpoint = mt_endpoint;
      s.source_language = mt_source;
      s.pivot_language = mt_pivot;
      s.timeout_seconds = mt_timeout;
      return TextAugmenter::mt_client(std::move(s));
    }
  }
  throw std::logic_error("unhandled text augmenter kind");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (eval_batch_size < 1) throw ConfigError("train.eval_batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  contrastive.validate();
  augmentation.validate();
}

CollateParams TrainConfig::collate() const {
  CollateParams p;
  p.max_len = model.encoder.max_len;
  p.image_height = model.encoder.image_size;
  p.image_width = model.encoder.image_size;
  return p;
}

namespace {

std::string text_kind_name(TextAugmentKind k) {
  switch (k) {
    case TextAugmentKind::identity:
      return "identity";
    case TextAugmentKind::stub:
      return "stub";
    case TextAugmentKind::mt:
      return "mt";
  }
  return "stub";
}

TextAugmentKind text_kind_from(const std::string& s, const std::string& key) {
  if (s == "identity") return TextAugmentKind::identity;
  if (s == "stub") return TextAugmentKind::stub;
  if (s == "mt") return TextAugmentKind::mt;
  throw ConfigError("invalid value \"" + s + "\" for key " + key + " (expected identity, stub or mt)");
}

/// Reads fields from one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& parent, const std::string& name) : name_(name) {
    if (!parent.contains(name)) return;
    obj_ = &parent.at(name);
    if (!obj_->is_object()) throw ConfigError("key " + name + " must be a table");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return;
    const json& v = obj_->at(key);
    bool ok = true;
    if constexpr (std::is_same_v<V, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_unsigned_v<V>) {
      ok = v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
    } else if constexpr (std::is_integral_v<V>) {
      ok = v.is_number_integer();
    } else if constexpr (std::is_floating_point_v<V>) {
      ok = v.is_number();
    } else if constexpr (std::is_same_v<V, std::string>) {
      ok = v.is_string();
    }
    if (ok) {
      try {
        out = v.template get<V>();
        return;
      } catch (const json::exception&) {
      }
    }
    throw ConfigError("invalid value for key " + path(key) + ": " + v.dump());
  }

  std::string path(const char* key) const { return name_ + "." + key; }

  void finish() const {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key: " + name_ + "." + key);
    }
  }

 private:
  std::string name_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

void write_model(json& j, const ModelConfig& m) {
  const EncoderConfig& e = m.encoder;
  j["model"] = {{"vocab_size", e.vocab_size},   {"d_t", e.d_t},
                {"text_layers", e.text_layers}, {"text_heads", e.text_heads},
                {"text_ff", e.text_ff},         {"max_len", e.max_len},
                {"d_i", e.d_i},                 {"conv_blocks", e.conv_blocks},
                {"image_channels", e.image_channels}, {"image_size", e.image_size},
                {"num_classes", m.num_classes}, {"gelu_logits", m.gelu_logits}};
  const MLFConfig& f = m.mlf;
  j["fusion"] = {{"fusion_layers", f.fusion_layers}, {"image_layers", f.image_layers}, {"heads", f.heads},
                 {"ff", f.ff},
                 {"pool_hidden", f.pool_hidden},     {"dropout", f.dropout},           {"use_image", f.use_image}};
}

void read_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  EncoderConfig& e = m.encoder;
  s.get("vocab_size", e.vocab_size);
  s.get("d_t", e.d_t);
  s.get("text_layers", e.text_layers);
  s.get("text_heads", e.text_heads);
  s.get("text_ff", e.text_ff);
  s.get("max_len", e.max_len);
  s.get("d_i", e.d_i);
  s.get("conv_blocks", e.conv_blocks);
  s.get("image_channels", e.image_channels);
  s.get("image_size", e.image_size);
  s.get("num_classes", m.num_classes);
  s.get("gelu_logits", m.gelu_logits);
  s.finish();
  Section f(j, "fusion");
  f.get("fusion_layers", m.mlf.fusion_layers);
  f.get("image_layers", m.mlf.image_layers);
  f.get("heads", m.mlf.heads);
  f.get("ff", m.mlf.ff);
  f.get("pool_hidden", m.mlf.pool_hidden);
  f.get("dropout", m.mlf.dropout);
  f.get("use_image", m.mlf.use_image);
  f.finish();
}

void check_sections(const json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config root must be a table");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown config key: " + key);
  }
}

}  // namespace

json to_json(const ModelConfig& cfg) {
  json j = json::object();
  write_model(j, cfg);
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  check_sections(j, {"model", "fusion"});
  ModelConfig m;
  read_model(j, m);
  return m;
}

json to_json(const TrainConfig& cfg) {
  json j = json::object();
  j["train"] = {{"batch_size", cfg.batch_size},
                {"eval_batch_size", cfg.eval_batch_size},
                {"learning_rate", cfg.learning_rate},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"eps", cfg.eps},
                {"weight_decay", cfg.weight_decay},
                {"epochs", cfg.epochs},
                {"seed", cfg.seed}};
  write_model(j, cfg.model);
  const ContrastiveConfig& c = cfg.contrastive;
  j["contrastive"] = {{"tau", c.tau},
                      {"normalize", c.normalize},
                      {"self_pairs", to_string(c.self_pairs)},
                      {"lambda_lbcl", c.lambda_lbcl},
                      {"lambda_dbcl", c.lambda_dbcl}};
  const AugmentationConfig& a = cfg.augmentation;
  json ops = json::array();
  for (ImageOp op : a.image.ops) ops.push_back(to_string(op));
  j["augmentation"] = {{"text", text_kind_name(a.text)},
                       {"substitute_prob", a.substitute_prob},
                       {"word_dropout", a.word_dropout},
                       {"synonyms", a.synonyms},
                       {"mt_endpoint", a.mt_endpoint},
                       {"mt_source", a.mt_source},
                       {"mt_pivot", a.mt_pivot},
                       {"mt_timeout", a.mt_timeout},
                       {"n_ops", a.image.n_ops},
                       {"magnitude", a.image.magnitude},
                       {"ops", ops}};
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  check_sections(j, {"train", "model", "fusion", "contrastive", "augmentation"});
  TrainConfig cfg;
  Section t(j, "train");
  t.get("batch_size", cfg.batch_size);
  t.get("eval_batch_size", cfg.eval_batch_size);
  t.get("learning_rate", cfg.learning_rate);
  t.get("beta1", cfg.beta1);
  t.get("beta2", cfg.beta2);
  t.get("eps", cfg.eps);
  t.get("weight_decay", cfg.weight_decay);
  t.get("epochs", cfg.epochs);
  t.get("seed", cfg.seed);
  t.finish();
  read_model(j, cfg.model);

  Section c(j, "contrastive");
  c.get("tau", cfg.contrastive.tau);
  c.get("normalize", cfg.contrastive.normalize);
  std::string self_pairs = to_string(cfg.contrastive.self_pairs);
  c.get("self_pairs", self_pairs);
  try {
    cfg.contrastive.self_pairs = self_pairs_from_string(self_pairs);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("contrastive.self_pairs: ") + e.what());
  }
  c.get("lambda_lbcl", cfg.contrastive.lambda_lbcl);
  c.get("lambda_dbcl", cfg.contrastive.lambda_dbcl);
  c.finish();

  Section a(j, "augmentation");
  AugmentationConfig& aug = cfg.augmentation;
  std::string kind = text_kind_name(aug.text);
  a.get("text", kind);
  aug.text = text_kind_from(kind, a.path("text"));
  a.get("substitute_prob", aug.substitute_prob);
  a.get("word_dropout", aug.word_dropout);
  a.get("synonyms", aug.synonyms);
  a.get("mt_endpoint", aug.mt_endpoint);
  a.get("mt_source", aug.mt_source);
  a.get("mt_pivot", aug.mt_pivot);
  a.get("mt_timeout", aug.mt_timeout);
  a.get("n_ops", aug.image.n_ops);
  a.get("magnitude", aug.image.magnitude);
  std::vector<std::string> ops;
  for (ImageOp op : aug.image.ops) ops.push_back(to_string(op));
  a.get("ops", ops);
  aug.image.ops.clear();
  for (const auto& name : ops) {
    try {
      aug.image.ops.push_back(image_op_from_string(name));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("augmentation.ops: ") + e.what());
    }
  }
  a.finish();
  return cfg;
}

}  // namespace clmlf
