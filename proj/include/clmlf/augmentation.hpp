#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "clmlf/data.hpp"
#include "clmlf/image_io.hpp"
#include "clmlf/rng.hpp"

namespace clmlf {

// ---- text ------------------------------------------------------------------

/// word -> candidate replacements, read from "word synonym" lines.
class SynonymTable {
 public:
  static SynonymTable parse(const std::string& text);
  static SynonymTable load(const std::filesystem::path& path);
  /// The table shipped with the library (data/synonyms.txt).
  static const SynonymTable& bundled();

  void add(const std::string& word, const std::string& synonym);
  const std::vector<std::string>* find(const std::string& word) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, std::vector<std::string>> entries_;
};

struct StubSettings {
  SynonymTable table = SynonymTable::bundled();
  double substitute_prob = 0.5;
  double dropout = 0.1;
};

/// LibreTranslate-style endpoint: POST {endpoint}/translate with
/// {"q","source","target","format"} and a {"translatedText"} reply.
struct MtClientSettings {
  std::string endpoint;
  std::string source_language = "en";
  std::string pivot_language = "de";
  double timeout_seconds = 5.0;
};

struct TextAugmentResult {
  std::string text;
  /// Set when the augmenter fell back to returning its input.
  bool warning = false;
};

class TextAugmenter {
 public:
  enum class Kind { identity, stub, mt_client };

  static TextAugmenter identity();
  static TextAugmenter stub(StubSettings settings = {});
  static TextAugmenter mt_client(MtClientSettings settings);

  Kind kind() const { return kind_; }
  const StubSettings& stub_settings() const { return stub_; }
  const MtClientSettings& mt_settings() const { return mt_; }

 private:
  friend TextAugmentResult back_translate(const std::string& text, const TextAugmenter& aug, Rng& rng);
  Kind kind_ = Kind::identity;
  StubSettings stub_;
  MtClientSettings mt_;
};

/// Paraphrase-like rewrite of `text`. The stub substitutes synonyms and
/// drops words (never the last remaining one); the MT client round-trips
/// through the pivot language and falls back to the input on any failure.
TextAugmentResult back_translate(const std::string& text, const TextAugmenter& aug, Rng& rng);

// ---- image -----------------------------------------------------------------

enum class ImageOp {
  identity,
  brightness,
  contrast,
  sharpness,
  rotate,
  translate_x,
  translate_y,
  shear_x,
  shear_y,
  posterize,
  solarize,
};

std::string to_string(ImageOp op);
ImageOp image_op_from_string(const std::string& name);
const std::vector<ImageOp>& all_image_ops();

struct ImageAugmentPolicy {
  int n_ops = 2;
  int magnitude = 9;
  std::vector<ImageOp> ops = all_image_ops();

  /// Throws on magnitude outside [0, 10], negative n_ops, or an empty op set
  /// with n_ops > 0.
  void validate() const;
};

/// Applies one op with an explicit sign (±1) for the signed ops.
FloatImage apply_image_op(const FloatImage& image, ImageOp op, int magnitude, int sign);

/// Samples `n_ops` ops uniformly with replacement and applies them in
/// order. Input and output are planar [0, 1] images.
FloatImage rand_augment(const FloatImage& image, const ImageAugmentPolicy& policy, Rng& rng);

// ---- batch -----------------------------------------------------------------

/// Augmented counterpart of `collate`: texts are rewritten before
/// tokenization, images are augmented before standardization. Pass the same
/// `selection_rng` state used for the clean batch so multi-image examples
/// pick the same image.
Batch augment_batch(const std::vector<const Example*>& examples, const TextAugmenter& text_aug,
                    const ImageAugmentPolicy& policy, const Vocab& vocab, const CollateParams& params,
                    Rng selection_rng, Rng& aug_rng, std::size_t* warnings = nullptr);

}  // namespace clmlf
