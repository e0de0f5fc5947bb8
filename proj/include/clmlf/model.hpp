#pragma once

// The full network: encoders, fusion stack, pooling and classifier head,
// with one forward entry point used by training, evaluation and inspection.

#include <vector>

#include "clmlf/autograd.hpp"
#include "clmlf/data.hpp"
#include "clmlf/encoders.hpp"
#include "clmlf/fusion.hpp"
#include "clmlf/losses.hpp"

namespace clmlf {

struct ModelConfig {
  EncoderConfig encoder;
  MLFConfig mlf;
  int num_classes = 3;
  bool gelu_logits = true;

  void validate() const;
  /// Image tokens in the fused sequence (0 for the text-only variant).
  int image_tokens() const;
};

struct ModelLayout {
  TextEncoderParams text;
  ImageEncoderParams image;
  ImageProjectionParams projection;
  std::vector<EncoderLayerParams> image_layers;
  std::vector<EncoderLayerParams> fusion_layers;
  PoolParams pool;
  ClassifierHead head;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ModelLayout& layout() const { return layout_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  void initialize(Rng& rng) { params_.initialize(rng); }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = params_.all()[i].value;
      out.params().all()[i].value.assign(src.begin(), src.end());
    }
    return out;
  }

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  ModelLayout layout_;
};

template <typename T>
struct ForwardResult {
  Var text_hidden;   // [S, n_t, d_t]
  Var image_map;     // [S, p, p, d_i]; invalid for the text-only variant
  Var image_tokens;  // [S, n_i, d_t]
  Var fused;         // [S, n_t + n_i, d_t]
  FusedLayout layout;
  Var pool_weights;    // [S, n_t + n_i]
  Var representation;  // R, [S, d_t]
  /// Filled when ForwardContext::record_attention is set.
  AttentionRecord<T> image_attention;
  AttentionRecord<T> fusion_attention;
};

/// encode_text -> encode_image -> project_image -> image_transform -> fuse
/// -> attention_pool. `g` must be bound to model.params(). Dropout uses the
/// model's configured rate when ctx.training is set.
template <typename T>
ForwardResult<T> mlf_forward(Graph<T>& g, const Model<T>& model, const Batch& batch, const ForwardContext& ctx,
                             const FeatureAdapters* adapters = nullptr);

/// Eval-mode logits [S, K] for a batch, computed without building gradients.
template <typename T>
Tensor<T> predict_logits(Model<T>& model, const Batch& batch, const FeatureAdapters* adapters = nullptr);

}  // namespace clmlf
