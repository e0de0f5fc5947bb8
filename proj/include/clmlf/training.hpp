#pragma once

// Multi-task optimization (AdamW on L_sc + λ·L_lbcl + λ·L_dbcl), evaluation
// metrics, finite-difference gradient checking and checkpoint files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clmlf/augmentation.hpp"
#include "clmlf/autograd.hpp"
#include "clmlf/data.hpp"
#include "clmlf/losses.hpp"
#include "clmlf/model.hpp"

namespace clmlf {

// ---- optimizer ---------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// PyTorch-style AdamW: bias-corrected moments, decay decoupled from the
/// gradient and applied only to blocks flagged `decay`.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(ParameterSet<T>& params);
  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- configuration -------------------------------------------------------------

/// Learning rate used with pretrained adapters.
inline constexpr double kPretrainedLearningRate = 2e-5;

enum class TextAugmentKind { identity, stub, mt };

struct AugmentationConfig {
  TextAugmentKind text = TextAugmentKind::stub;
  double substitute_prob = 0.5;
  double word_dropout = 0.1;
  /// Empty means the bundled table.
  std::string synonyms;
  std::string mt_endpoint;
  std::string mt_source = "en";
  std::string mt_pivot = "de";
  double mt_timeout = 5.0;
  ImageAugmentPolicy image;

  void validate() const;
  TextAugmenter make_text_augmenter() const;
};

struct TrainConfig {
  int batch_size = 32;
  int eval_batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int epochs = 10;
  std::uint64_t seed = 0;
  /// encoder.vocab_size and num_classes are filled from the data at train time.
  ModelConfig model;
  ContrastiveConfig contrastive;
  AugmentationConfig augmentation;

  void validate() const;
  AdamWConfig adamw() const { return {learning_rate, beta1, beta2, eps, weight_decay}; }
  CollateParams collate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Strict: unknown keys throw ConfigError naming the dotted key path.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// ---- metrics ---------------------------------------------------------------------

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
  bool operator==(const ClassMetrics&) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  /// confusion[gold][pred]
  std::vector<std::vector<long>> confusion;

  bool operator==(const Metrics&) const = default;
};

/// Zero denominators count as 0.
Metrics metrics_from_confusion(const std::vector<std::vector<long>>& confusion);
Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& gold, int num_classes);
nlohmann::json to_json(const Metrics& m);

struct Evaluation {
  Metrics metrics;
  std::vector<int> predictions;
};

/// Argmax of eval-mode logits over the dataset in file order. Multi-image
/// examples use a fixed selection stream, so results are reproducible.
Evaluation evaluate(Model<float>& model, const Vocab& vocab, const Dataset& dataset, int batch_size = 64,
                    const FeatureAdapters* adapters = nullptr);

// ---- training loop ---------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  double loss_sc = 0.0;
  double loss_lbcl = 0.0;
  double loss_dbcl = 0.0;
  double loss_total = 0.0;
  long n_pos_pairs = 0;
  std::size_t augment_warnings = 0;
  std::optional<Metrics> val;
};

struct TrainResult {
  /// Parameters from the epoch with the best validation accuracy (the
  /// final epoch when there is no validation set).
  Model<float> model;
  Vocab vocab;
  TrainConfig config;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  std::string rng_state;
};

struct StepInfo {
  int epoch = 0;
  long step = 0;
  LossBundle losses;
};

using StepCallback = std::function<void(const StepInfo&, const ParameterSet<float>&)>;

/// Shuffled example order of one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Seeds of the independent random streams a run draws from.
enum class Stream : std::uint64_t { init = 1, order = 2, dropout = 3, selection = 4, augment = 5 };
std::uint64_t stream_seed(std::uint64_t seed, Stream stream);

/// Runs the optimization. A non-finite loss aborts with std::runtime_error
/// naming the component, epoch and step.
TrainResult train(TrainConfig config, const Dataset& train_set, const Dataset* val_set = nullptr,
                  const StepCallback& on_step = {});

// ---- gradient check ---------------------------------------------------------------

struct BlockCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  double threshold = 1e-4;
  std::vector<BlockCheck> blocks;

  double max_rel_error() const;
  /// Names of blocks whose max relative error is at or above threshold.
  std::vector<std::string> failing() const;
  bool passed() const { return failing().empty(); }
};

/// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares backward() against central differences for every element of
/// every block. `loss` builds the scalar loss on a graph bound to `params`.
GradCheckReport gradient_check(ParameterSet<double>& params, const std::function<Var(Graph<double>&)>& loss,
                               double eps = 1e-5, double threshold = 1e-4);

// ---- checkpoints -------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  Vocab vocab;
  TrainConfig config;
  std::string rng_state;
};

/// 8-byte magic, uint64 manifest length, JSON manifest, float32 blob; all
/// integers little-endian.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const Vocab& vocab,
                     const TrainConfig& config, const std::string& rng_state = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace clmlf
