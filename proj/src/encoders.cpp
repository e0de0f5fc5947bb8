#include "clmlf/encoders.hpp"

#include <stdexcept>

namespace clmlf {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("encoder config: " + message);
}

}  // namespace

void EncoderConfig::validate() const {
  require(vocab_size > 0, "vocab_size must be positive");
  require(d_t > 0, "d_t must be positive");
  require(text_layers >= 0, "text_layers must be non-negative");
  require(text_heads > 0, "text_heads must be positive");
  require(d_t % text_heads == 0,
          "d_t " + std::to_string(d_t) + " not divisible by text_heads " + std::to_string(text_heads));
  require(text_ff > 0, "text_ff must be positive");
  require(max_len >= 2, "max_len must be at least 2");
  require(d_i > 0, "d_i must be positive");
  require(conv_blocks >= 1, "conv_blocks must be at least 1");
  require(image_channels > 0, "image_channels must be positive");
  require(image_size > 0, "image_size must be positive");
  const int stride = 1 << conv_blocks;
  require(image_size % stride == 0, "image_size " + std::to_string(image_size) + " not divisible by total stride " +
                                        std::to_string(stride));
}

int EncoderConfig::feature_grid() const { return image_size >> conv_blocks; }

template <typename T>
TextEncoderParams register_text_encoder(ParameterSet<T>& params, const EncoderConfig& cfg) {
  TextEncoderParams p;
  p.token_embedding = params.add("text.token_embedding", Shape{cfg.vocab_size, cfg.d_t}, Init::normal);
  p.position_embedding = params.add("text.position_embedding", Shape{cfg.max_len, cfg.d_t}, Init::normal);
  for (int l = 0; l < cfg.text_layers; ++l) {
    p.layers.push_back(
        register_encoder_layer(params, "text.layer" + std::to_string(l), cfg.d_t, cfg.text_heads, cfg.text_ff));
  }
  return p;
}

template <typename T>
ImageEncoderParams register_image_encoder(ParameterSet<T>& params, const EncoderConfig& cfg) {
  ImageEncoderParams p;
  int in = cfg.image_channels;
  for (int b = 0; b < cfg.conv_blocks; ++b) {
    const std::string prefix = "image.conv" + std::to_string(b);
    ConvBlockParams block;
    block.weight = params.add(prefix + ".weight", Shape{3, 3, in, cfg.d_i}, Init::normal);
    block.bias = params.add(prefix + ".bias", Shape{cfg.d_i}, Init::zeros);
    p.blocks.push_back(block);
    in = cfg.d_i;
  }
  return p;
}

template <typename T>
Var encode_text(Graph<T>& g, const TextEncoderParams& p, const Batch& batch, const ForwardContext& ctx) {
  const Var table = g.param(p.token_embedding);
  const Var tokens = ops::embedding(g, table, batch.token_ids, Shape{batch.size, batch.seq_len});
  const Var x = ops::add_positions(g, tokens, g.param(p.position_embedding));
  return encoder_stack<T>(g, p.layers, x, batch.text_mask, ctx, nullptr);
}

template <typename T>
Tensor<T> batch_images_nhwc(const Batch& batch) {
  const int S = batch.size, C = batch.channels, H = batch.height, W = batch.width;
  if (batch.images.size() != numel(Shape{S, C, H, W})) {
    throw std::invalid_argument("batch images do not match [S, C, H, W] = " + shape_string(Shape{S, C, H, W}));
  }
  Tensor<T> out(Shape{S, H, W, C});
  for (int s = 0; s < S; ++s)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const std::size_t src = ((static_cast<std::size_t>(s) * C + c) * H + y) * W + x;
          const std::size_t dst = ((static_cast<std::size_t>(s) * H + y) * W + x) * C + c;
          out.data[dst] = static_cast<T>(batch.images[src]);
        }
  return out;
}

template <typename T>
Var encode_image(Graph<T>& g, const ImageEncoderParams& p, const Batch& batch) {
  Var x = g.constant(batch_images_nhwc<T>(batch));
  for (const auto& block : p.blocks) {
    x = ops::gelu(g, ops::conv2d(g, x, g.param(block.weight), g.param(block.bias), 2, 1));
  }
  return x;
}

FeatureMapShape feature_map_shape(const BackboneGeometry& backbone, int height, int width) {
  if (height != width) {
    throw std::invalid_argument(backbone.name + ": expected a square input, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (backbone.total_stride <= 0 || height % backbone.total_stride != 0) {
    throw std::invalid_argument(backbone.name + ": input size " + std::to_string(height) +
                                " not divisible by stride " + std::to_string(backbone.total_stride));
  }
  return {height / backbone.total_stride, backbone.channels};
}

#define CLMLF_INSTANTIATE(T)                                                                            \
  template TextEncoderParams register_text_encoder<T>(ParameterSet<T>&, const EncoderConfig&);          \
  template ImageEncoderParams register_image_encoder<T>(ParameterSet<T>&, const EncoderConfig&);        \
  template Var encode_text<T>(Graph<T>&, const TextEncoderParams&, const Batch&, const ForwardContext&); \
  template Var encode_image<T>(Graph<T>&, const ImageEncoderParams&, const Batch&);                     \
  template Tensor<T> batch_images_nhwc<T>(const Batch&);

CLMLF_INSTANTIATE(float)
CLMLF_INSTANTIATE(double)

#undef CLMLF_INSTANTIATE

}  // namespace clmlf
