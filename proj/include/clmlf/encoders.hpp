#pragma once

// Small trainable encoders producing the text hidden sequence [S, n_t, d_t]
// and the image feature map [S, p, p, d_i], plus the adapter contract that
// lets precomputed (e.g. pretrained) features stand in for either one.

#include <memory>
#include <string>
#include <vector>

#include "clmlf/autograd.hpp"
#include "clmlf/data.hpp"
#include "clmlf/transformer.hpp"

namespace clmlf {

struct EncoderConfig {
  int vocab_size = 0;
  int d_t = 32;
  int text_layers = 1;
  int text_heads = 4;
  int text_ff = 64;
  /// Rows of the positional table; batches may not be longer.
  int max_len = 16;
  int d_i = 32;
  int conv_blocks = 2;
  int image_channels = 3;
  int image_size = 16;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Side length of the feature map after the stride-2 blocks.
  int feature_grid() const;
};

struct TextEncoderParams {
  ParamId token_embedding;
  ParamId position_embedding;
  std::vector<EncoderLayerParams> layers;
};

struct ConvBlockParams {
  ParamId weight;  // [3, 3, C_in, C_out]
  ParamId bias;
};

struct ImageEncoderParams {
  std::vector<ConvBlockParams> blocks;
};

template <typename T>
TextEncoderParams register_text_encoder(ParameterSet<T>& params, const EncoderConfig& cfg);

template <typename T>
ImageEncoderParams register_image_encoder(ParameterSet<T>& params, const EncoderConfig& cfg);

/// Token embedding + learned position + transformer layers. Padded keys are
/// masked in every layer. Ids outside the vocabulary throw.
template <typename T>
Var encode_text(Graph<T>& g, const TextEncoderParams& p, const Batch& batch, const ForwardContext& ctx);

/// Stride-2 3x3 convolution blocks with GELU over the standardized images.
template <typename T>
Var encode_image(Graph<T>& g, const ImageEncoderParams& p, const Batch& batch);

/// Converts the batch's planar [S, C, H, W] pixels to NHWC.
template <typename T>
Tensor<T> batch_images_nhwc(const Batch& batch);

// ---- adapter contract ------------------------------------------------------

/// Spatial arithmetic of a convolutional backbone.
struct BackboneGeometry {
  std::string name;
  int total_stride = 1;
  int channels = 1;
};

/// ResNet-50 up to its last convolutional stage.
inline const BackboneGeometry kResNet50{"resnet50", 32, 2048};

struct FeatureMapShape {
  int grid = 0;
  int channels = 0;
};

/// Throws when the input is not square or not divisible by the stride.
FeatureMapShape feature_map_shape(const BackboneGeometry& backbone, int height, int width);

/// Supplies text features in place of the built-in text encoder. Output
/// must be [S, batch.seq_len, d_t] with index 0 holding the CLS slot.
class TextFeatureAdapter {
 public:
  virtual ~TextFeatureAdapter() = default;
  virtual int width() const = 0;
  virtual Tensor<double> encode(const Batch& batch) const = 0;
};

/// Supplies image features in place of the built-in image encoder. Output
/// must be [S, grid, grid, channels] as given by shape().
class ImageFeatureAdapter {
 public:
  virtual ~ImageFeatureAdapter() = default;
  virtual FeatureMapShape shape(int height, int width) const = 0;
  virtual Tensor<double> encode(const Batch& batch) const = 0;
};

struct FeatureAdapters {
  std::shared_ptr<const TextFeatureAdapter> text;
  std::shared_ptr<const ImageFeatureAdapter> image;
};

}  // namespace clmlf
