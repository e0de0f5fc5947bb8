#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "clmlf/image_io.hpp"
#include "clmlf/rng.hpp"

namespace clmlf {

/// Raised for malformed dataset records; the message names the line.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An image reference: a file path or in-memory pixels.
using ImageSource = std::variant<std::filesystem::path, Image>;

/// Ground truth recorded by the synthetic generator.
struct SyntheticMeta {
  /// Row-major grid cell holding the class motif, or -1.
  int motif_cell = -1;
  /// Word index of the class-evidence token within `text`, or -1.
  int evidence_word = -1;
  bool operator==(const SyntheticMeta&) const = default;
};

struct Example {
  std::string id;
  std::string text;
  /// One entry for the single-image form; several when `multi_image`.
  std::vector<ImageSource> images;
  bool multi_image = false;
  int label = 0;
  std::optional<std::string> aspect;
  std::optional<SyntheticMeta> meta;
};

enum class SplitTag { train, val, test, all };

std::string to_string(SplitTag tag);

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 0;
  SplitTag split = SplitTag::all;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  /// Checks unique ids, labels in range, non-empty text and images.
  void validate() const;
};

/// Reads one Example per line. A first line of the form {"num_classes": K}
/// fixes K; otherwise K = max(label) + 1. Relative image paths resolve
/// against the file's directory. Image files are not opened here.
Dataset load_jsonl(const std::filesystem::path& path);

/// Writes the dataset as JSONL with a num_classes header line. In-memory
/// images are written as PNGs under `image_dir` (relative to the JSONL
/// directory) and referenced by path.
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path,
                 const std::filesystem::path& image_dir = "images");

nlohmann::json example_to_json(const Example& example);
Example example_from_json(const nlohmann::json& record, const std::filesystem::path& base_dir);

struct SplitRatios {
  int train = 8;
  int val = 1;
  int test = 1;
};

/// Seeded shuffle followed by a contiguous cut. Without explicit counts
/// val = floor(N·val/total), test = floor(N·test/total), train gets the rest.
std::array<Dataset, 3> split(const Dataset& dataset, SplitRatios ratios, std::uint64_t seed,
                             std::optional<std::array<std::size_t, 3>> explicit_counts = std::nullopt);

/// "[CLS] text [SEP]" or "[CLS] text [SEP] aspect [SEP]".
std::string format_input(const std::string& text, const std::optional<std::string>& aspect = std::nullopt);

std::vector<std::string> split_whitespace(const std::string& text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kUnk = 3;

  Vocab();
  /// Specials followed by the dataset's words (texts and aspects) in
  /// first-occurrence order.
  static Vocab build(const Dataset& dataset);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int add(const std::string& token);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Whitespace tokens of `format_input(text, aspect)` mapped to ids, cut to
/// `max_len` keeping [CLS] first and [SEP] last.
std::vector<int> encode_tokens(const std::string& text, const std::optional<std::string>& aspect, const Vocab& vocab,
                               int max_len);

struct CollateParams {
  int max_len = 16;
  int image_height = 16;
  int image_width = 16;

  void validate() const;
};

inline constexpr float kImageMean = 0.5f;
inline constexpr float kImageStd = 0.5f;

struct Batch {
  int size = 0;
  int seq_len = 0;
  std::vector<int> token_ids;          // [S, seq_len]
  std::vector<std::uint8_t> text_mask;  // [S, seq_len]
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<float> images;  // [S, C, H, W], standardized
  std::vector<int> labels;    // [S]

  bool operator==(const Batch&) const = default;
};

/// Picks the example's image (uniformly when it carries several), decodes,
/// converts to RGB and resizes. Values are in [0, 1], not yet standardized.
FloatImage load_example_image(const Example& example, const CollateParams& params, Rng& rng);

/// (x - 0.5) / 0.5 per channel.
void standardize(FloatImage& image);

/// Assembles a batch from already prepared texts and [0, 1] images.
Batch assemble_batch(const std::vector<std::vector<int>>& token_rows, std::vector<FloatImage> images,
                     const std::vector<int>& labels, const CollateParams& params);

/// Tokenizes, pads every row to max_len, and loads images. Unreadable images
/// raise an error naming the example id.
Batch collate(const std::vector<const Example*>& examples, const Vocab& vocab, const CollateParams& params, Rng& rng);
Batch collate(const std::vector<Example>& examples, const Vocab& vocab, const CollateParams& params, Rng& rng);

// ---- synthetic corpus -----------------------------------------------------

struct SyntheticSpec {
  int num_classes = 3;
  int num_examples = 1000;
  int evidence_tokens_per_class = 1;
  int noise_tokens = 50;
  /// Noise words per text, before any evidence token is inserted.
  int text_length = 5;
  double p_text = 1.0;
  double p_image = 1.0;
  bool complementary = true;
  int grid = 4;
  int image_size = 16;
  /// Upper bound of the uniform background intensity, in [0, 1].
  double background_noise = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
  int cell_size() const { return image_size / grid; }
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

struct Motif {
  /// cell_size × cell_size, row-major, 1 where the motif colors a pixel.
  std::vector<std::uint8_t> mask;
  std::array<std::uint8_t, 3> color{};
};

/// One distinct motif per class, derived deterministically from the spec.
std::vector<Motif> make_motifs(const SyntheticSpec& spec);

std::string evidence_token(int label, int index);
std::string noise_token(int index);

/// Generates n examples with in-memory RGB images and SyntheticMeta.
Dataset synthesize(const SyntheticSpec& spec);

/// Two-column synonym lines pairing noise words, for the stub augmenter.
std::string synthetic_synonym_table(const SyntheticSpec& spec);

}  // namespace clmlf
