#include "clmlf/augmentation.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace clmlf {

namespace detail {
extern const char* const kBundledSynonyms;
}

// ---- synonym table ---------------------------------------------------------

SynonymTable SynonymTable::parse(const std::string& text) {
  SynonymTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto words = split_whitespace(line);
    if (words.empty() || words.front().starts_with('#')) continue;
    if (words.size() != 2) {
      throw std::runtime_error("synonym table line " + std::to_string(lineno) + ": expected two columns");
    }
    table.add(words[0], words[1]);
  }
  return table;
}

SynonymTable SynonymTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open synonym table: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const SynonymTable& SynonymTable::bundled() {
  static const SynonymTable table = parse(detail::kBundledSynonyms);
  return table;
}

void SynonymTable::add(const std::string& word, const std::string& synonym) {
  auto& list = entries_[word];
  if (std::find(list.begin(), list.end(), synonym) == list.end()) list.push_back(synonym);
}

const std::vector<std::string>* SynonymTable::find(const std::string& word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? nullptr : &it->second;
}

// ---- text augmentation -----------------------------------------------------

TextAugmenter TextAugmenter::identity() { return TextAugmenter{}; }

TextAugmenter TextAugmenter::stub(StubSettings settings) {
  if (settings.substitute_prob < 0 || settings.substitute_prob > 1 || settings.dropout < 0 || settings.dropout >= 1) {
    throw std::invalid_argument("stub augmenter: probabilities must lie in [0, 1)");
  }
  TextAugmenter a;
  a.kind_ = Kind::stub;
  a.stub_ = std::move(settings);
  return a;
}

TextAugmenter TextAugmenter::mt_client(MtClientSettings settings) {
  if (settings.endpoint.empty()) throw std::invalid_argument("mt_client augmenter: endpoint is required");
  if (settings.timeout_seconds <= 0) throw std::invalid_argument("mt_client augmenter: timeout must be positive");
  TextAugmenter a;
  a.kind_ = Kind::mt_client;
  a.mt_ = std::move(settings);
  return a;
}

namespace {

std::string stub_rewrite(const std::string& text, const StubSettings& s, Rng& rng) {
  auto words = split_whitespace(text);
  for (auto& w : words) {
    const auto* options = s.table.find(w);
    // Draw unconditionally so the stream position does not depend on the table.
    const bool substitute = rng.bernoulli(s.substitute_prob);
    const std::size_t pick = rng.below(options ? options->size() : 1);
    if (options && substitute) w = (*options)[pick];
  }
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const bool drop = rng.bernoulli(s.dropout);
    const bool last_chance = kept.empty() && i + 1 == words.size();
    if (!drop || last_chance) kept.push_back(words[i]);
  }
  std::string out;
  for (const auto& w : kept) out += (out.empty() ? "" : " ") + w;
  return out;
}

struct Endpoint {
  std::string host;
  std::string base_path;
};

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  Endpoint e;
  e.host = url.substr(0, path_start);
  e.base_path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
  return e;
}

std::optional<std::string> translate(httplib::Client& client, const std::string& path, const std::string& text,
                                     const std::string& source, const std::string& target) {
  const nlohmann::json body{{"q", text}, {"source", source}, {"target", target}, {"format", "text"}};
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res || res->status != 200) return std::nullopt;
  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("translatedText") || !reply["translatedText"].is_string()) {
    return std::nullopt;
  }
  auto out = reply["translatedText"].get<std::string>();
  if (split_whitespace(out).empty()) return std::nullopt;
  return out;
}

TextAugmentResult mt_round_trip(const std::string& text, const MtClientSettings& s) {
  const Endpoint ep = parse_endpoint(s.endpoint);
  try {
    httplib::Client client(ep.host);
    const auto secs = static_cast<time_t>(s.timeout_seconds);
    const auto usecs = static_cast<time_t>((s.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const std::string path = ep.base_path + "/translate";
    const auto pivot = translate(client, path, text, s.source_language, s.pivot_language);
    if (!pivot) return {text, true};
    const auto back = translate(client, path, *pivot, s.pivot_language, s.source_language);
    if (!back) return {text, true};
    return {*back, false};
  } catch (const std::exception&) {
    return {text, true};
  }
}

}  // namespace

TextAugmentResult back_translate(const std::string& text, const TextAugmenter& aug, Rng& rng) {
  if (split_whitespace(text).empty()) throw std::invalid_argument("back_translate: text is empty");
  switch (aug.kind_) {
    case TextAugmenter::Kind::identity: return {text, false};
    case TextAugmenter::Kind::stub: return {stub_rewrite(text, aug.stub_, rng), false};
    case TextAugmenter::Kind::mt_client: return mt_round_trip(text, aug.mt_);
  }
  return {text, false};
}

// ---- image augmentation ----------------------------------------------------

std::string to_string(ImageOp op) {
  switch (op) {
    case ImageOp::identity: return "identity";
    case ImageOp::brightness: return "brightness";
    case ImageOp::contrast: return "contrast";
    case ImageOp::sharpness: return "sharpness";
    case ImageOp::rotate: return "rotate";
    case ImageOp::translate_x: return "translate_x";
    case ImageOp::translate_y: return "translate_y";
    case ImageOp::shear_x: return "shear_x";
    case ImageOp::shear_y: return "shear_y";
    case ImageOp::posterize: return "posterize";
    case ImageOp::solarize: return "solarize";
  }
  return "identity";
}

const std::vector<ImageOp>& all_image_ops() {
  static const std::vector<ImageOp> ops{ImageOp::identity,    ImageOp::brightness,  ImageOp::contrast,
                                        ImageOp::sharpness,   ImageOp::rotate,      ImageOp::translate_x,
                                        ImageOp::translate_y, ImageOp::shear_x,     ImageOp::shear_y,
                                        ImageOp::posterize,   ImageOp::solarize};
  return ops;
}

ImageOp image_op_from_string(const std::string& name) {
  for (ImageOp op : all_image_ops()) {
    if (to_string(op) == name) return op;
  }
  throw std::invalid_argument("unknown image augmentation op '" + name + "'");
}

void ImageAugmentPolicy::validate() const {
  if (n_ops < 0) throw std::invalid_argument("image policy: n_ops must be non-negative");
  if (magnitude < 0 || magnitude > 10) throw std::invalid_argument("image policy: magnitude must lie in [0, 10]");
  if (n_ops > 0 && ops.empty()) throw std::invalid_argument("image policy: op set is empty");
}

namespace {

/// Bilinear sample with edge replication.
float sample(const FloatImage& img, int c, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double wy = y - y0;
  const double wx = x - x0;
  const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
  const double bottom = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
  return static_cast<float>(top * (1 - wy) + bottom * wy);
}

/// Output pixel (y, x) reads the source at map(y, x).
template <typename Map>
FloatImage warp(const FloatImage& img, Map map) {
  FloatImage out(img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto [sy, sx] = map(static_cast<double>(y), static_cast<double>(x));
      for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = sample(img, c, sy, sx);
    }
  return out;
}

FloatImage blend(const FloatImage& base, const FloatImage& img, double factor) {
  FloatImage out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>(base.data[i] + factor * (img.data[i] - base.data[i]));
  }
  return out;
}

}  // namespace

FloatImage apply_image_op(const FloatImage& image, ImageOp op, int magnitude, int sign) {
  const double level = magnitude / 10.0;
  const double s = sign < 0 ? -1.0 : 1.0;
  const double factor = 1.0 + 0.9 * level * s;
  const double cy = (image.height - 1) / 2.0;
  const double cx = (image.width - 1) / 2.0;
  FloatImage out;
  switch (op) {
    case ImageOp::identity:
      out = image;
      break;
    case ImageOp::brightness:
      out = image;
      for (auto& v : out.data) v = static_cast<float>(v * factor);
      break;
    case ImageOp::contrast: {
      double mean = 0;
      if (image.channels == 3) {
        for (int y = 0; y < image.height; ++y)
          for (int x = 0; x < image.width; ++x)
            mean += 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
        mean /= static_cast<double>(image.height) * image.width;
      } else {
        for (float v : image.data) mean += v;
        mean /= static_cast<double>(image.data.size());
      }
      FloatImage gray(image.channels, image.height, image.width, static_cast<float>(mean));
      out = blend(gray, image, factor);
      break;
    }
    case ImageOp::sharpness: {
      FloatImage smooth = image;
      for (int c = 0; c < image.channels; ++c)
        for (int y = 1; y + 1 < image.height; ++y)
          for (int x = 1; x + 1 < image.width; ++x) {
            double acc = 4.0 * image.at(c, y, x);
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) acc += image.at(c, y + dy, x + dx);
            smooth.at(c, y, x) = static_cast<float>(acc / 13.0);
          }
      out = blend(smooth, image, factor);
      break;
    }
    case ImageOp::rotate: {
      const double theta = s * level * 30.0 * std::numbers::pi / 180.0;
      const double ct = std::cos(theta);
      const double st = std::sin(theta);
      out = warp(image, [&](double y, double x) {
        const double dy = y - cy;
        const double dx = x - cx;
        return std::pair{cy - st * dx + ct * dy, cx + ct * dx + st * dy};
      });
      break;
    }
    case ImageOp::translate_x: {
      const double shift = s * 0.3 * image.width * level;
      out = warp(image, [&](double y, double x) { return std::pair{y, x - shift}; });
      break;
    }
    case ImageOp::translate_y: {
      const double shift = s * 0.3 * image.height * level;
      out = warp(image, [&](double y, double x) { return std::pair{y - shift, x}; });
      break;
    }
    case ImageOp::shear_x: {
      const double k = s * 0.3 * level;
      out = warp(image, [&](double y, double x) { return std::pair{y, x - k * (y - cy)}; });
      break;
    }
    case ImageOp::shear_y: {
      const double k = s * 0.3 * level;
      out = warp(image, [&](double y, double x) { return std::pair{y - k * (x - cx), x}; });
      break;
    }
    case ImageOp::posterize: {
      const int bits = 8 - static_cast<int>(std::lround(4.0 * level));
      const int keep = (0xFF << (8 - bits)) & 0xFF;
      out = image;
      for (auto& v : out.data) {
        const long byte = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
        v = static_cast<float>(byte & keep) / 255.0f;
      }
      break;
    }
    case ImageOp::solarize: {
      const double threshold = 1.0 - level;
      out = image;
      for (auto& v : out.data) {
        if (v > threshold) v = 1.0f - v;
      }
      break;
    }
  }
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

FloatImage rand_augment(const FloatImage& image, const ImageAugmentPolicy& policy, Rng& rng) {
  policy.validate();
  FloatImage out = image;
  for (int i = 0; i < policy.n_ops; ++i) {
    const ImageOp op = policy.ops[rng.below(policy.ops.size())];
    const int sign = rng.sign();
    out = apply_image_op(out, op, policy.magnitude, sign);
  }
  return out;
}

Batch augment_batch(const std::vector<const Example*>& examples, const TextAugmenter& text_aug,
                    const ImageAugmentPolicy& policy, const Vocab& vocab, const CollateParams& params,
                    Rng selection_rng, Rng& aug_rng, std::size_t* warnings) {
  params.validate();
  policy.validate();
  std::vector<std::vector<int>> rows;
  std::vector<FloatImage> images;
  std::vector<int> labels;
  for (const Example* ex : examples) {
    const auto rewritten = back_translate(ex->text, text_aug, aug_rng);
    if (rewritten.warning && warnings) ++*warnings;
    rows.push_back(encode_tokens(rewritten.text, ex->aspect, vocab, params.max_len));
    images.push_back(rand_augment(load_example_image(*ex, params, selection_rng), policy, aug_rng));
    labels.push_back(ex->label);
  }
  return assemble_batch(rows, std::move(images), labels, params);
}

}  // namespace clmlf
