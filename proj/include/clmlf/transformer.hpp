#pragma once

// Building blocks shared by the text encoder and the fusion stacks: dense
// layers and the post-norm ("vanilla") transformer encoder layer.

#include <string>
#include <vector>

#include "clmlf/autograd.hpp"
#include "clmlf/ops.hpp"
#include "clmlf/rng.hpp"

namespace clmlf {

struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  /// Required when training with dropout > 0.
  Rng* rng = nullptr;
  /// Keep per-layer attention weights in the forward result.
  bool record_attention = false;

  double effective_dropout() const { return training ? dropout : 0.0; }
};

/// Per-layer attention weights, each [S, heads, n, n].
template <typename T>
struct AttentionRecord {
  std::vector<Tensor<T>> layers;
};

struct LinearParams {
  ParamId weight;
  ParamId bias;
};

template <typename T>
LinearParams register_linear(ParameterSet<T>& params, const std::string& name, int in, int out);

template <typename T>
Var apply_linear(Graph<T>& g, const LinearParams& p, Var x);

struct EncoderLayerParams {
  int heads = 1;
  LinearParams query, key, value, output;
  LinearParams ff_in, ff_out;
  ParamId norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
};

template <typename T>
EncoderLayerParams register_encoder_layer(ParameterSet<T>& params, const std::string& prefix, int width, int heads,
                                          int ff_width);

/// x = LN(x + Drop(MHA(x))); x = LN(x + Drop(W2·GELU(W1·x))).
template <typename T>
Var encoder_layer(Graph<T>& g, const EncoderLayerParams& p, Var x, const ops::Mask& key_mask,
                  const ForwardContext& ctx, Tensor<T>* attention_out = nullptr);

template <typename T>
Var encoder_stack(Graph<T>& g, const std::vector<EncoderLayerParams>& layers, Var x, const ops::Mask& key_mask,
                  const ForwardContext& ctx, AttentionRecord<T>* record = nullptr);

}  // namespace clmlf
