#include "clmlf/transformer.hpp"

#include <stdexcept>

namespace clmlf {

template <typename T>
LinearParams register_linear(ParameterSet<T>& params, const std::string& name, int in, int out) {
  LinearParams p;
  p.weight = params.add(name + ".weight", Shape{in, out}, Init::normal);
  p.bias = params.add(name + ".bias", Shape{out}, Init::zeros);
  return p;
}

template <typename T>
Var apply_linear(Graph<T>& g, const LinearParams& p, Var x) {
  return ops::linear(g, x, g.param(p.weight), g.param(p.bias));
}

template <typename T>
EncoderLayerParams register_encoder_layer(ParameterSet<T>& params, const std::string& prefix, int width, int heads,
                                          int ff_width) {
  if (heads <= 0 || width % heads != 0) {
    throw std::invalid_argument(prefix + ": width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  EncoderLayerParams p;
  p.heads = heads;
  p.query = register_linear(params, prefix + ".attn.query", width, width);
  p.key = register_linear(params, prefix + ".attn.key", width, width);
  p.value = register_linear(params, prefix + ".attn.value", width, width);
  p.output = register_linear(params, prefix + ".attn.output", width, width);
  p.norm1_gamma = params.add(prefix + ".norm1.gamma", Shape{width}, Init::ones);
  p.norm1_beta = params.add(prefix + ".norm1.beta", Shape{width}, Init::zeros);
  p.ff_in = register_linear(params, prefix + ".ff.in", width, ff_width);
  p.ff_out = register_linear(params, prefix + ".ff.out", ff_width, width);
  p.norm2_gamma = params.add(prefix + ".norm2.gamma", Shape{width}, Init::ones);
  p.norm2_beta = params.add(prefix + ".norm2.beta", Shape{width}, Init::zeros);
  return p;
}

namespace {

template <typename T>
Var maybe_dropout(Graph<T>& g, Var x, const ForwardContext& ctx) {
  const double rate = ctx.effective_dropout();
  if (rate <= 0.0) return x;
  if (!ctx.rng) throw std::logic_error("dropout requested without an rng");
  return ops::dropout(g, x, rate, *ctx.rng);
}

}  // namespace

template <typename T>
Var encoder_layer(Graph<T>& g, const EncoderLayerParams& p, Var x, const ops::Mask& key_mask,
                  const ForwardContext& ctx, Tensor<T>* attention_out) {
  const Var q = apply_linear(g, p.query, x);
  const Var k = apply_linear(g, p.key, x);
  const Var v = apply_linear(g, p.value, x);
  const Var attended = ops::attention(g, q, k, v, key_mask, p.heads, attention_out);
  const Var mixed = maybe_dropout(g, apply_linear(g, p.output, attended), ctx);
  x = ops::layer_norm(g, ops::add(g, x, mixed), g.param(p.norm1_gamma), g.param(p.norm1_beta));
  const Var hidden = ops::gelu(g, apply_linear(g, p.ff_in, x));
  const Var ff = maybe_dropout(g, apply_linear(g, p.ff_out, hidden), ctx);
  return ops::layer_norm(g, ops::add(g, x, ff), g.param(p.norm2_gamma), g.param(p.norm2_beta));
}

template <typename T>
Var encoder_stack(Graph<T>& g, const std::vector<EncoderLayerParams>& layers, Var x, const ops::Mask& key_mask,
                  const ForwardContext& ctx, AttentionRecord<T>* record) {
  for (const auto& layer : layers) {
    if (record) {
      Tensor<T> probs;
      x = encoder_layer(g, layer, x, key_mask, ctx, &probs);
      record->layers.push_back(std::move(probs));
    } else {
      x = encoder_layer<T>(g, layer, x, key_mask, ctx, nullptr);
    }
  }
  return x;
}

#define CLMLF_INSTANTIATE(T)                                                                               \
  template LinearParams register_linear<T>(ParameterSet<T>&, const std::string&, int, int);               \
  template Var apply_linear<T>(Graph<T>&, const LinearParams&, Var);                                      \
  template EncoderLayerParams register_encoder_layer<T>(ParameterSet<T>&, const std::string&, int, int, int); \
  template Var encoder_layer<T>(Graph<T>&, const EncoderLayerParams&, Var, const ops::Mask&,              \
                                const ForwardContext&, Tensor<T>*);                                       \
  template Var encoder_stack<T>(Graph<T>&, const std::vector<EncoderLayerParams>&, Var, const ops::Mask&, \
                                const ForwardContext&, AttentionRecord<T>*);

CLMLF_INSTANTIATE(float)
CLMLF_INSTANTIATE(double)

#undef CLMLF_INSTANTIATE

}  // namespace clmlf
