#pragma once

// Post-hoc analysis: last-layer fusion attention from text tokens onto image
// patches, heatmap overlays, representation export and a PCA projection.

#include <filesystem>
#include <string>
#include <vector>

#include "clmlf/data.hpp"
#include "clmlf/image_io.hpp"
#include "clmlf/model.hpp"

namespace clmlf {

struct AttentionMap {
  int head = 0;
  int heads = 0;
  int n_t = 0;
  int n_i = 0;
  int grid = 0;
  /// All heads of the last fusion layer, [heads, N, N] with N = n_t + n_i.
  Tensor<float> weights;
  /// Fused-sequence mask (1 = attended position).
  ops::Mask mask;
  /// Rows of `head` restricted to text queries and image keys, [n_t, n_i].
  Tensor<float> text_to_image;

  /// Attention of text token `token` onto the image patches, row-major
  /// grid x grid. Throws std::out_of_range for a bad index.
  std::vector<float> patch_weights(int token) const;
};

/// Runs the model on one example in eval mode and slices the recorded
/// last-layer attention. Needs a model with an image path.
AttentionMap extract_attention(Model<float>& model, const Vocab& vocab, const Example& example, int head = 0,
                               const FeatureAdapters* adapters = nullptr);

/// Min-max normalizes the grid, upsamples it nearest-neighbor to the image
/// size and blends a red heatmap over the image at alpha 0.5.
Image render_overlay(const std::vector<float>& patch_weights, int grid, const Image& image);

/// render_overlay + PNG write; throws when the path is not writable.
void export_overlay(const std::vector<float>& patch_weights, int grid, const Image& image,
                    const std::filesystem::path& path);

struct Embeddings {
  std::vector<std::string> ids;
  std::vector<int> labels;
  /// [N, d_t]
  Tensor<float> values;
};

/// Eval-mode representations R for every example, in dataset order.
Embeddings compute_embeddings(Model<float>& model, const Vocab& vocab, const Dataset& dataset, int batch_size = 64);

/// CSV with header id,label,r0..r{d-1}.
void write_embeddings_csv(const Embeddings& e, const std::filesystem::path& path);
void export_embeddings(Model<float>& model, const Vocab& vocab, const Dataset& dataset,
                       const std::filesystem::path& path, int batch_size = 64);

/// Centers the rows and projects them onto the top two principal
/// directions; each direction's largest-magnitude loading is positive.
/// Needs at least 3 rows and throws on rank-0 input.
Tensor<double> project_2d(const Tensor<double>& rows);

/// CSV with header id,label,x,y.
void write_coordinates_csv(const std::vector<std::string>& ids, const std::vector<int>& labels,
                           const Tensor<double>& coords, const std::filesystem::path& path);

}  // namespace clmlf
