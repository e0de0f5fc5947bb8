#pragma once

// Multi-layer fusion: image tokens from the feature map, an image-only
// transformer, a joint transformer over [text ; image] tokens, and an
// attention pooling layer producing one vector R per sample.

#include <vector>

#include "clmlf/autograd.hpp"
#include "clmlf/ops.hpp"
#include "clmlf/transformer.hpp"

namespace clmlf {

struct MLFConfig {
  int fusion_layers = 3;
  int image_layers = 2;
  int heads = 4;
  int ff = 64;
  /// Hidden width of the pooling scorer; 0 means d_t.
  int pool_hidden = 0;
  double dropout = 0.1;
  /// false gives the text-only baseline: no image path at all.
  bool use_image = true;

  void validate(int d_t) const;
  int pool_width(int d_t) const { return pool_hidden > 0 ? pool_hidden : d_t; }
};

struct ImageProjectionParams {
  LinearParams linear;       // [d_i, d_t]
  ParamId position;          // [n_i, d_t]
};

struct PoolParams {
  LinearParams hidden;  // W1 [d_t, d_h], b1
  LinearParams score;   // W2 [d_h, 1], b2
  LinearParams output;  // W_R [d_t, d_t], b_R
};

template <typename T>
ImageProjectionParams register_image_projection(ParameterSet<T>& params, int d_i, int d_t, int n_i);

template <typename T>
PoolParams register_pool(ParameterSet<T>& params, int d_t, int d_h);

template <typename T>
std::vector<EncoderLayerParams> register_stack(ParameterSet<T>& params, const std::string& prefix, int layers,
                                               int width, int heads, int ff);

/// map[S, p, p, d_i] -> tokens[S, p*p, d_t]: row-major flatten, project,
/// then add the learned positions.
template <typename T>
Var project_image(Graph<T>& g, const ImageProjectionParams& p, Var feature_map);

template <typename T>
Var image_transform(Graph<T>& g, const std::vector<EncoderLayerParams>& layers, Var tokens,
                    const ForwardContext& ctx, AttentionRecord<T>* record = nullptr);

struct FusedLayout {
  int n_t = 0;
  int n_i = 0;
  /// [S, n_t + n_i]: the text mask followed by ones for image tokens.
  ops::Mask mask;
};

FusedLayout fused_layout(const ops::Mask& text_mask, int batch_size, int n_t, int n_i);

/// Concatenates text then image tokens and runs the joint stack. `image`
/// may be invalid, in which case only text tokens are fused.
template <typename T>
Var fuse(Graph<T>& g, const std::vector<EncoderLayerParams>& layers, Var text, Var image,
         const FusedLayout& layout, const ForwardContext& ctx, AttentionRecord<T>* record = nullptr);

struct PoolResult {
  Var weights;         // [S, N]
  Var representation;  // [S, d_t]
};

/// q~ = GELU(f W1 + b1) W2 + b2; q = masked softmax(q~);
/// R = GELU((Σ q f) W_R + b_R). Throws when a row has no unmasked position.
template <typename T>
PoolResult attention_pool(Graph<T>& g, const PoolParams& p, Var fused, const ops::Mask& mask);

}  // namespace clmlf
