#include "clmlf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace clmlf {

using nlohmann::json;

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
    case SplitTag::all: return "all";
  }
  return "all";
}

void Dataset::validate() const {
  if (num_classes < 1) throw SchemaError("dataset: num_classes must be positive");
  std::unordered_set<std::string> ids;
  for (const auto& ex : examples) {
    if (!ids.insert(ex.id).second) throw SchemaError("dataset: duplicate id '" + ex.id + "'");
    if (ex.label < 0 || ex.label >= num_classes) {
      throw SchemaError("dataset: example '" + ex.id + "' has label " + std::to_string(ex.label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
    if (split_whitespace(ex.text).empty()) throw SchemaError("dataset: example '" + ex.id + "' has empty text");
    if (ex.images.empty()) throw SchemaError("dataset: example '" + ex.id + "' has no image");
  }
}

// ---- JSONL -----------------------------------------------------------------

namespace {

[[noreturn]] void line_error(std::size_t line, const std::string& msg) {
  throw SchemaError("line " + std::to_string(line) + ": " + msg);
}

ImageSource image_from_json(const json& v, const std::filesystem::path& base_dir, std::size_t line) {
  if (v.is_string()) {
    std::filesystem::path p = v.get<std::string>();
    if (p.empty()) line_error(line, "empty image path");
    return p.is_absolute() ? p : base_dir / p;
  }
  if (v.is_object()) {
    for (const char* key : {"height", "width", "channels", "data"}) {
      if (!v.contains(key)) line_error(line, std::string("raw image missing '") + key + "'");
    }
    Image img(v.at("height").get<int>(), v.at("width").get<int>(), v.at("channels").get<int>());
    const auto& data = v.at("data");
    if (!data.is_array() || data.size() != img.pixels.size()) line_error(line, "raw image data size mismatch");
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      const int b = data[i].get<int>();
      if (b < 0 || b > 255) line_error(line, "raw image byte out of range");
      img.pixels[i] = static_cast<std::uint8_t>(b);
    }
    return img;
  }
  line_error(line, "image must be a path string or a raw image object");
}

json image_to_json(const ImageSource& src) {
  if (const auto* p = std::get_if<std::filesystem::path>(&src)) return p->generic_string();
  const auto& img = std::get<Image>(src);
  json data = json::array();
  for (auto b : img.pixels) data.push_back(static_cast<int>(b));
  return json{{"height", img.height}, {"width", img.width}, {"channels", img.channels}, {"data", std::move(data)}};
}

Example parse_record(const json& rec, const std::filesystem::path& base_dir, std::size_t line) {
  static const std::set<std::string> known{"id", "text", "image", "images", "label", "aspect", "meta"};
  if (!rec.is_object()) line_error(line, "record is not a JSON object");
  for (const auto& [key, _] : rec.items()) {
    if (!known.count(key)) line_error(line, "unexpected field '" + key + "'");
  }
  for (const char* key : {"id", "text", "label"}) {
    if (!rec.contains(key)) line_error(line, std::string("missing required field '") + key + "'");
  }
  const bool has_image = rec.contains("image");
  const bool has_images = rec.contains("images");
  if (has_image == has_images) line_error(line, "exactly one of 'image' or 'images' is required");

  Example ex;
  if (!rec["id"].is_string()) line_error(line, "'id' must be a string");
  if (!rec["text"].is_string()) line_error(line, "'text' must be a string");
  if (!rec["label"].is_number_integer()) line_error(line, "'label' must be an integer");
  ex.id = rec["id"].get<std::string>();
  ex.text = rec["text"].get<std::string>();
  ex.label = rec["label"].get<int>();
  if (ex.id.empty()) line_error(line, "'id' is empty");
  if (split_whitespace(ex.text).empty()) line_error(line, "'text' is empty");
  if (ex.label < 0) line_error(line, "'label' is negative");
  if (has_image) {
    ex.images.push_back(image_from_json(rec["image"], base_dir, line));
  } else {
    const auto& arr = rec["images"];
    if (!arr.is_array() || arr.empty()) line_error(line, "'images' must be a non-empty array");
    for (const auto& v : arr) ex.images.push_back(image_from_json(v, base_dir, line));
    ex.multi_image = true;
  }
  if (rec.contains("aspect")) {
    if (!rec["aspect"].is_string() || rec["aspect"].get<std::string>().empty()) {
      line_error(line, "'aspect' must be a non-empty string when present");
    }
    ex.aspect = rec["aspect"].get<std::string>();
  }
  if (rec.contains("meta")) {
    const auto& m = rec["meta"];
    if (!m.is_object()) line_error(line, "'meta' must be an object");
    SyntheticMeta meta;
    meta.motif_cell = m.value("motif_cell", -1);
    meta.evidence_word = m.value("evidence_word", -1);
    ex.meta = meta;
  }
  return ex;
}

}  // namespace

json example_to_json(const Example& ex) {
  json rec;
  rec["id"] = ex.id;
  rec["text"] = ex.text;
  if (ex.multi_image) {
    json arr = json::array();
    for (const auto& src : ex.images) arr.push_back(image_to_json(src));
    rec["images"] = std::move(arr);
  } else {
    if (ex.images.size() != 1) throw SchemaError("example '" + ex.id + "' must carry exactly one image");
    rec["image"] = image_to_json(ex.images.front());
  }
  rec["label"] = ex.label;
  if (ex.aspect) rec["aspect"] = *ex.aspect;
  if (ex.meta) rec["meta"] = {{"motif_cell", ex.meta->motif_cell}, {"evidence_word", ex.meta->evidence_word}};
  return rec;
}

Example example_from_json(const json& record, const std::filesystem::path& base_dir) {
  return parse_record(record, base_dir, 0);
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
  const std::filesystem::path base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  Dataset ds;
  std::optional<int> declared_k;
  std::unordered_map<std::string, std::size_t> seen;
  std::string text;
  std::size_t line = 0;
  bool first = true;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      line_error(line, std::string("invalid JSON: ") + e.what());
    }
    if (first && rec.is_object() && rec.size() == 1 && rec.contains("num_classes")) {
      first = false;
      if (!rec["num_classes"].is_number_integer() || rec["num_classes"].get<int>() < 1) {
        line_error(line, "'num_classes' must be a positive integer");
      }
      declared_k = rec["num_classes"].get<int>();
      continue;
    }
    first = false;
    Example ex = parse_record(rec, base_dir, line);
    if (auto [it, inserted] = seen.emplace(ex.id, line); !inserted) {
      line_error(line, "duplicate id '" + ex.id + "' (first seen on line " + std::to_string(it->second) + ")");
    }
    if (declared_k && ex.label >= *declared_k) {
      line_error(line, "label " + std::to_string(ex.label) + " not below num_classes " + std::to_string(*declared_k));
    }
    ds.examples.push_back(std::move(ex));
  }
  if (declared_k) {
    ds.num_classes = *declared_k;
  } else {
    int max_label = -1;
    for (const auto& ex : ds.examples) max_label = std::max(max_label, ex.label);
    ds.num_classes = max_label + 1;
  }
  return ds;
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path, const std::filesystem::path& image_dir) {
  const std::filesystem::path base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path.string());
  out << json{{"num_classes", dataset.num_classes}}.dump() << '\n';
  bool made_dir = false;
  for (const auto& ex : dataset.examples) {
    Example copy = ex;
    for (std::size_t k = 0; k < copy.images.size(); ++k) {
      auto* img = std::get_if<Image>(&copy.images[k]);
      if (img) {
        if (!made_dir) {
          std::filesystem::create_directories(base_dir / image_dir);
          made_dir = true;
        }
        const std::string name = copy.images.size() == 1 ? ex.id + ".png" : ex.id + "_" + std::to_string(k) + ".png";
        const std::filesystem::path rel = image_dir / name;
        write_png(*img, base_dir / rel);
        copy.images[k] = rel;
        continue;
      }
      auto& p = std::get<std::filesystem::path>(copy.images[k]);
      std::error_code ec;
      const auto rel = std::filesystem::relative(p, base_dir, ec);
      if (!ec && !rel.empty()) p = rel;
    }
    out << example_to_json(copy).dump() << '\n';
  }
  if (!out) throw std::runtime_error("error while writing dataset file: " + path.string());
}

// ---- split -----------------------------------------------------------------

std::array<Dataset, 3> split(const Dataset& dataset, SplitRatios ratios, std::uint64_t seed,
                             std::optional<std::array<std::size_t, 3>> explicit_counts) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
    throw std::invalid_argument("split: ratios must be positive");
  }
  const std::size_t n = dataset.size();
  std::array<std::size_t, 3> counts{};
  if (explicit_counts) {
    counts = *explicit_counts;
    const std::size_t total = counts[0] + counts[1] + counts[2];
    if (total != n) {
      throw std::invalid_argument("split: explicit counts sum to " + std::to_string(total) + " but dataset has " +
                                  std::to_string(n) + " examples");
    }
  } else {
    const std::size_t denom = static_cast<std::size_t>(ratios.train + ratios.val + ratios.test);
    counts[1] = n * static_cast<std::size_t>(ratios.val) / denom;
    counts[2] = n * static_cast<std::size_t>(ratios.test) / denom;
    counts[0] = n - counts[1] - counts[2];
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  std::array<Dataset, 3> out;
  const std::array<SplitTag, 3> tags{SplitTag::train, SplitTag::val, SplitTag::test};
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    out[s].num_classes = dataset.num_classes;
    out[s].split = tags[s];
    out[s].examples.reserve(counts[s]);
    for (std::size_t i = 0; i < counts[s]; ++i) out[s].examples.push_back(dataset.examples[order[cursor++]]);
  }
  return out;
}

// ---- text ------------------------------------------------------------------

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) words.push_back(std::move(w));
  return words;
}

std::string format_input(const std::string& text, const std::optional<std::string>& aspect) {
  const auto words = split_whitespace(text);
  if (words.empty()) throw std::invalid_argument("format_input: text is empty");
  std::string out = "[CLS]";
  for (const auto& w : words) out += " " + w;
  out += " [SEP]";
  if (aspect) {
    const auto aspect_words = split_whitespace(*aspect);
    if (aspect_words.empty()) throw std::invalid_argument("format_input: aspect is empty (omit it instead)");
    for (const auto& w : aspect_words) out += " " + w;
    out += " [SEP]";
  }
  return out;
}

Vocab::Vocab() {
  for (const char* special : {"[PAD]", "[CLS]", "[SEP]", "[UNK]"}) add(special);
}

int Vocab::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

Vocab Vocab::build(const Dataset& dataset) {
  Vocab v;
  for (const auto& ex : dataset.examples) {
    for (const auto& w : split_whitespace(ex.text)) v.add(w);
    if (ex.aspect) {
      for (const auto& w : split_whitespace(*ex.aspect)) v.add(w);
    }
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  const auto& specials = v.tokens();
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (i >= tokens.size() || tokens[i] != specials[i]) {
      throw std::invalid_argument("vocabulary must start with [PAD] [CLS] [SEP] [UNK]");
    }
  }
  for (std::size_t i = specials.size(); i < tokens.size(); ++i) {
    if (v.add(tokens[i]) != static_cast<int>(i)) throw std::invalid_argument("duplicate vocabulary token " + tokens[i]);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> encode_tokens(const std::string& text, const std::optional<std::string>& aspect, const Vocab& vocab,
                               int max_len) {
  if (max_len < 3) throw std::invalid_argument("encode_tokens: max_len must be at least 3");
  const auto words = split_whitespace(format_input(text, aspect));
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  if (static_cast<int>(ids.size()) > max_len) {
    ids.resize(static_cast<std::size_t>(max_len));
    ids.back() = Vocab::kSep;
  }
  return ids;
}

// ---- collation -------------------------------------------------------------

void CollateParams::validate() const {
  if (max_len < 3) throw std::invalid_argument("collate: max_len must be at least 3");
  if (image_height <= 0 || image_width <= 0) throw std::invalid_argument("collate: image size must be positive");
}

FloatImage load_example_image(const Example& example, const CollateParams& params, Rng& rng) {
  if (example.images.empty()) throw std::runtime_error("example '" + example.id + "' has no image");
  const std::size_t pick = example.multi_image ? rng.below(example.images.size()) : 0;
  const ImageSource& src = example.images[pick];
  Image img;
  try {
    if (const auto* p = std::get_if<std::filesystem::path>(&src)) {
      img = read_image(*p);
    } else {
      img = std::get<Image>(src);
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("example '" + example.id + "': unreadable image: " + e.what());
  }
  return to_float(resize_bilinear(to_rgb(img), params.image_height, params.image_width));
}

void standardize(FloatImage& image) {
  for (auto& v : image.data) v = (v - kImageMean) / kImageStd;
}

Batch assemble_batch(const std::vector<std::vector<int>>& token_rows, std::vector<FloatImage> images,
                     const std::vector<int>& labels, const CollateParams& params) {
  params.validate();
  const std::size_t S = token_rows.size();
  if (S == 0) throw std::invalid_argument("collate: empty batch");
  if (images.size() != S || labels.size() != S) throw std::invalid_argument("collate: ragged batch inputs");
  Batch b;
  b.size = static_cast<int>(S);
  b.seq_len = params.max_len;
  b.height = params.image_height;
  b.width = params.image_width;
  b.channels = 3;
  b.token_ids.assign(S * params.max_len, Vocab::kPad);
  b.text_mask.assign(S * params.max_len, 0);
  const std::size_t image_size = static_cast<std::size_t>(b.channels) * b.height * b.width;
  b.images.reserve(S * image_size);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& row = token_rows[s];
    if (row.empty() || row.front() != Vocab::kCls || static_cast<int>(row.size()) > params.max_len) {
      throw std::invalid_argument("collate: malformed token row");
    }
    std::copy(row.begin(), row.end(), b.token_ids.begin() + static_cast<std::ptrdiff_t>(s * params.max_len));
    std::fill_n(b.text_mask.begin() + static_cast<std::ptrdiff_t>(s * params.max_len), row.size(), 1);
    FloatImage& img = images[s];
    if (img.channels != b.channels || img.height != b.height || img.width != b.width) {
      throw std::invalid_argument("collate: image has wrong dimensions");
    }
    standardize(img);
    b.images.insert(b.images.end(), img.data.begin(), img.data.end());
  }
  b.labels = labels;
  return b;
}

Batch collate(const std::vector<const Example*>& examples, const Vocab& vocab, const CollateParams& params, Rng& rng) {
  params.validate();
  std::vector<std::vector<int>> rows;
  std::vector<FloatImage> images;
  std::vector<int> labels;
  rows.reserve(examples.size());
  images.reserve(examples.size());
  for (const Example* ex : examples) {
    rows.push_back(encode_tokens(ex->text, ex->aspect, vocab, params.max_len));
    images.push_back(load_example_image(*ex, params, rng));
    labels.push_back(ex->label);
  }
  return assemble_batch(rows, std::move(images), labels, params);
}

Batch collate(const std::vector<Example>& examples, const Vocab& vocab, const CollateParams& params, Rng& rng) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(examples.size());
  for (const auto& ex : examples) ptrs.push_back(&ex);
  return collate(ptrs, vocab, params, rng);
}

// ---- synthetic corpus ------------------------------------------------------

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synthetic spec: " + msg); };
  if (num_examples <= 0) fail("num_examples must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (evidence_tokens_per_class < 1) fail("evidence_tokens_per_class must be at least 1");
  if (text_length < 0) fail("text_length must be non-negative");
  if (text_length > 0 && noise_tokens < 1) fail("noise_tokens must be positive when text_length > 0");
  if (text_length == 0 && (complementary || p_text < 1.0)) fail("text_length 0 requires evidence in every text");
  for (double p : {p_text, p_image, background_noise}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("probabilities and noise levels must lie in [0, 1]");
  }
  if (grid < 1) fail("grid must be positive");
  if (image_size % grid != 0) fail("image_size must be a multiple of grid");
  if (cell_size() < 2) fail("grid cells must be at least 2 pixels wide");
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"num_classes", s.num_classes},
           {"num_examples", s.num_examples},
           {"evidence_tokens_per_class", s.evidence_tokens_per_class},
           {"noise_tokens", s.noise_tokens},
           {"text_length", s.text_length},
           {"p_text", s.p_text},
           {"p_image", s.p_image},
           {"complementary", s.complementary},
           {"grid", s.grid},
           {"image_size", s.image_size},
           {"background_noise", s.background_noise},
           {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  static const std::set<std::string> known{"num_classes", "num_examples", "evidence_tokens_per_class",
                                           "noise_tokens", "text_length",  "p_text",
                                           "p_image",      "complementary", "grid",
                                           "image_size",   "background_noise", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("synthetic spec: unknown key '" + key + "'");
  }
  SyntheticSpec d;
  s.num_classes = j.value("num_classes", d.num_classes);
  s.num_examples = j.value("num_examples", d.num_examples);
  s.evidence_tokens_per_class = j.value("evidence_tokens_per_class", d.evidence_tokens_per_class);
  s.noise_tokens = j.value("noise_tokens", d.noise_tokens);
  s.text_length = j.value("text_length", d.text_length);
  s.p_text = j.value("p_text", d.p_text);
  s.p_image = j.value("p_image", d.p_image);
  s.complementary = j.value("complementary", d.complementary);
  s.grid = j.value("grid", d.grid);
  s.image_size = j.value("image_size", d.image_size);
  s.background_noise = j.value("background_noise", d.background_noise);
  s.seed = j.value("seed", d.seed);
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open synthetic spec: " + path.string());
  SyntheticSpec spec = json::parse(in).get<SyntheticSpec>();
  spec.validate();
  return spec;
}

std::vector<Motif> make_motifs(const SyntheticSpec& spec) {
  spec.validate();
  const int cell = spec.cell_size();
  const std::size_t area = static_cast<std::size_t>(cell) * cell;
  const std::size_t min_on = std::max<std::size_t>(2, area / 4);
  const std::size_t min_distance = std::max<std::size_t>(1, area / 4);
  Rng rng(derive_seed(spec.seed, 0x6d6f746966ULL));
  std::vector<Motif> motifs;
  for (int k = 0; k < spec.num_classes; ++k) {
    Motif m;
    for (int attempt = 0;; ++attempt) {
      m.mask.assign(area, 0);
      std::size_t on = 0;
      for (auto& bit : m.mask) {
        bit = rng.bernoulli(0.5) ? 1 : 0;
        on += bit;
      }
      if (on < min_on) continue;
      const bool distinct = std::all_of(motifs.begin(), motifs.end(), [&](const Motif& other) {
        std::size_t diff = 0;
        for (std::size_t i = 0; i < area; ++i) diff += m.mask[i] != other.mask[i];
        return diff >= min_distance;
      });
      if (distinct || attempt > 1000) break;
    }
    // Evenly spaced fully saturated hues.
    const double hue = 6.0 * k / spec.num_classes;
    const int sector = static_cast<int>(hue) % 6;
    const double frac = hue - std::floor(hue);
    const auto up = static_cast<std::uint8_t>(std::lround(255.0 * frac));
    const auto down = static_cast<std::uint8_t>(255 - up);
    switch (sector) {
      case 0: m.color = {255, up, 0}; break;
      case 1: m.color = {down, 255, 0}; break;
      case 2: m.color = {0, 255, up}; break;
      case 3: m.color = {0, down, 255}; break;
      case 4: m.color = {up, 0, 255}; break;
      default: m.color = {255, 0, down}; break;
    }
    motifs.push_back(std::move(m));
  }
  return motifs;
}

std::string evidence_token(int label, int index) { return "e" + std::to_string(label) + "_" + std::to_string(index); }

std::string noise_token(int index) { return "w" + std::to_string(index); }

Dataset synthesize(const SyntheticSpec& spec) {
  spec.validate();
  const auto motifs = make_motifs(spec);
  const int cell = spec.cell_size();
  const int background_max = static_cast<int>(std::floor(spec.background_noise * 255.0));
  Rng rng(spec.seed);
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.examples.reserve(static_cast<std::size_t>(spec.num_examples));
  const int digits = static_cast<int>(std::to_string(spec.num_examples).size());
  for (int i = 0; i < spec.num_examples; ++i) {
    const int y = static_cast<int>(rng.below(static_cast<std::size_t>(spec.num_classes)));
    bool has_text = false;
    bool has_image = false;
    if (spec.complementary) {
      has_text = rng.bernoulli(0.5);
      has_image = !has_text;
    } else {
      has_text = rng.bernoulli(spec.p_text);
      has_image = rng.bernoulli(spec.p_image);
    }

    std::vector<std::string> words;
    for (int w = 0; w < spec.text_length; ++w) {
      words.push_back(noise_token(static_cast<int>(rng.below(static_cast<std::size_t>(spec.noise_tokens)))));
    }
    SyntheticMeta meta;
    if (has_text) {
      const auto which = static_cast<int>(rng.below(static_cast<std::size_t>(spec.evidence_tokens_per_class)));
      const auto pos = static_cast<int>(rng.below(words.size() + 1));
      words.insert(words.begin() + pos, evidence_token(y, which));
      meta.evidence_word = pos;
    }
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;

    Image img(spec.image_size, spec.image_size, 3);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.below(static_cast<std::size_t>(background_max) + 1));
    if (has_image) {
      const int c = static_cast<int>(rng.below(static_cast<std::size_t>(spec.grid) * spec.grid));
      const int oy = (c / spec.grid) * cell;
      const int ox = (c % spec.grid) * cell;
      const Motif& m = motifs[static_cast<std::size_t>(y)];
      for (int dy = 0; dy < cell; ++dy)
        for (int dx = 0; dx < cell; ++dx) {
          if (!m.mask[static_cast<std::size_t>(dy) * cell + dx]) continue;
          for (int ch = 0; ch < 3; ++ch) img.at(oy + dy, ox + dx, ch) = m.color[static_cast<std::size_t>(ch)];
        }
      meta.motif_cell = c;
    }

    std::string id = std::to_string(i);
    id.insert(0, static_cast<std::size_t>(digits) - id.size(), '0');
    Example ex;
    ex.id = "syn-" + id;
    ex.text = std::move(text);
    ex.images.emplace_back(std::move(img));
    ex.label = y;
    ex.meta = meta;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

std::string synthetic_synonym_table(const SyntheticSpec& spec) {
  std::string out;
  for (int j = 0; j + 1 < spec.noise_tokens; j += 2) {
    out += noise_token(j) + " " + noise_token(j + 1) + "\n";
    out += noise_token(j + 1) + " " + noise_token(j) + "\n";
  }
  return out;
}

}  // namespace clmlf
