#include "clmlf/fusion.hpp"

#include <stdexcept>
#include <string>

namespace clmlf {

void MLFConfig::validate(int d_t) const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("fusion config: " + m); };
  if (fusion_layers < 1 || fusion_layers > 6) fail("fusion_layers must be in [1, 6]");
  if (use_image && (image_layers < 1 || image_layers > 3)) fail("image_layers must be in [1, 3]");
  if (heads <= 0) fail("heads must be positive");
  if (d_t % heads != 0) fail("d_t " + std::to_string(d_t) + " not divisible by heads " + std::to_string(heads));
  if (ff <= 0) fail("ff must be positive");
  if (pool_hidden < 0) fail("pool_hidden must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

template <typename T>
ImageProjectionParams register_image_projection(ParameterSet<T>& params, int d_i, int d_t, int n_i) {
  ImageProjectionParams p;
  p.linear = register_linear(params, "fusion.image_projection", d_i, d_t);
  p.position = params.add("fusion.image_position", Shape{n_i, d_t}, Init::normal);
  return p;
}

template <typename T>
PoolParams register_pool(ParameterSet<T>& params, int d_t, int d_h) {
  PoolParams p;
  p.hidden = register_linear(params, "pool.hidden", d_t, d_h);
  p.score = register_linear(params, "pool.score", d_h, 1);
  p.output = register_linear(params, "pool.output", d_t, d_t);
  return p;
}

template <typename T>
std::vector<EncoderLayerParams> register_stack(ParameterSet<T>& params, const std::string& prefix, int layers,
                                               int width, int heads, int ff) {
  std::vector<EncoderLayerParams> out;
  for (int l = 0; l < layers; ++l) {
    out.push_back(register_encoder_layer(params, prefix + std::to_string(l), width, heads, ff));
  }
  return out;
}

template <typename T>
Var project_image(Graph<T>& g, const ImageProjectionParams& p, Var feature_map) {
  const Shape& s = g.shape(feature_map);
  if (s.size() != 4 || s[1] != s[2]) {
    throw std::invalid_argument("project_image: expected [S, p, p, d_i], got " + shape_string(s));
  }
  const Var w = g.param(p.linear.weight);
  if (g.shape(w)[0] != s[3]) {
    throw std::invalid_argument("project_image: feature width " + std::to_string(s[3]) +
                                " does not match projection input " + std::to_string(g.shape(w)[0]));
  }
  const Var pos = g.param(p.position);
  const int n_i = s[1] * s[2];
  if (g.shape(pos)[0] != n_i) {
    throw std::invalid_argument("project_image: " + std::to_string(n_i) + " patches but " +
                                std::to_string(g.shape(pos)[0]) + " position rows");
  }
  const Var flat = ops::reshape(g, feature_map, Shape{s[0], n_i, s[3]});
  const Var projected = ops::linear(g, flat, w, g.param(p.linear.bias));
  return ops::add_positions(g, projected, pos);
}

template <typename T>
Var image_transform(Graph<T>& g, const std::vector<EncoderLayerParams>& layers, Var tokens,
                    const ForwardContext& ctx, AttentionRecord<T>* record) {
  const Shape& s = g.shape(tokens);
  const ops::Mask all(static_cast<std::size_t>(s[0]) * s[1], 1);
  return encoder_stack<T>(g, layers, tokens, all, ctx, record);
}

FusedLayout fused_layout(const ops::Mask& text_mask, int batch_size, int n_t, int n_i) {
  if (text_mask.size() != static_cast<std::size_t>(batch_size) * n_t) {
    throw std::invalid_argument("fused_layout: text mask size mismatch");
  }
  FusedLayout out;
  out.n_t = n_t;
  out.n_i = n_i;
  const int n = n_t + n_i;
  out.mask.assign(static_cast<std::size_t>(batch_size) * n, 1);
  for (int s = 0; s < batch_size; ++s)
    for (int t = 0; t < n_t; ++t)
      out.mask[static_cast<std::size_t>(s) * n + t] = text_mask[static_cast<std::size_t>(s) * n_t + t];
  return out;
}

template <typename T>
Var fuse(Graph<T>& g, const std::vector<EncoderLayerParams>& layers, Var text, Var image,
         const FusedLayout& layout, const ForwardContext& ctx, AttentionRecord<T>* record) {
  Var x = text;
  if (image.valid()) {
    if (g.shape(text).back() != g.shape(image).back()) {
      throw std::invalid_argument("fuse: text width " + std::to_string(g.shape(text).back()) +
                                  " does not match image width " + std::to_string(g.shape(image).back()));
    }
    x = ops::concat_tokens(g, text, image);
  }
  if (g.shape(x)[1] != layout.n_t + layout.n_i) {
    throw std::invalid_argument("fuse: sequence length does not match the fused layout");
  }
  return encoder_stack<T>(g, layers, x, layout.mask, ctx, record);
}

template <typename T>
PoolResult attention_pool(Graph<T>& g, const PoolParams& p, Var fused, const ops::Mask& mask) {
  const Shape s = g.shape(fused);
  for (int r = 0; r < s[0]; ++r) {
    bool any = false;
    for (int t = 0; t < s[1]; ++t) any = any || mask[static_cast<std::size_t>(r) * s[1] + t];
    if (!any) throw std::invalid_argument("attention_pool: row " + std::to_string(r) + " is fully masked");
  }
  const Var hidden = ops::gelu(g, apply_linear(g, p.hidden, fused));
  const Var scores = ops::reshape(g, apply_linear(g, p.score, hidden), Shape{s[0], s[1]});
  PoolResult out;
  out.weights = ops::masked_softmax(g, scores, mask);
  const Var pooled = ops::weighted_token_sum(g, out.weights, fused);
  out.representation = ops::gelu(g, apply_linear(g, p.output, pooled));
  return out;
}

#define CLMLF_INSTANTIATE(T)                                                                                  \
  template ImageProjectionParams register_image_projection<T>(ParameterSet<T>&, int, int, int);               \
  template PoolParams register_pool<T>(ParameterSet<T>&, int, int);                                           \
  template std::vector<EncoderLayerParams> register_stack<T>(ParameterSet<T>&, const std::string&, int, int,  \
                                                             int, int);                                       \
  template Var project_image<T>(Graph<T>&, const ImageProjectionParams&, Var);                                \
  template Var image_transform<T>(Graph<T>&, const std::vector<EncoderLayerParams>&, Var,                     \
                                  const ForwardContext&, AttentionRecord<T>*);                                \
  template Var fuse<T>(Graph<T>&, const std::vector<EncoderLayerParams>&, Var, Var, const FusedLayout&,       \
                       const ForwardContext&, AttentionRecord<T>*);                                           \
  template PoolResult attention_pool<T>(Graph<T>&, const PoolParams&, Var, const ops::Mask&);

CLMLF_INSTANTIATE(float)
CLMLF_INSTANTIATE(double)

#undef CLMLF_INSTANTIATE

}  // namespace clmlf
