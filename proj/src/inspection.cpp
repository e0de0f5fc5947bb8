#include "clmlf/inspection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace clmlf {

namespace {

constexpr std::uint64_t kInspectionSelectionSeed = 0x696e7370ULL;

CollateParams collate_params(const ModelConfig& mc) {
  CollateParams cp;
  cp.max_len = mc.encoder.max_len;
  cp.image_height = mc.encoder.image_size;
  cp.image_width = mc.encoder.image_size;
  return cp;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return f;
}

}  // namespace

std::vector<float> AttentionMap::patch_weights(int token) const {
  if (token < 0 || token >= n_t) {
    throw std::out_of_range("text token index " + std::to_string(token) + " outside [0, " + std::to_string(n_t) +
                            ")");
  }
  const auto begin = text_to_image.data.begin() + static_cast<std::ptrdiff_t>(token) * n_i;
  return std::vector<float>(begin, begin + n_i);
}

AttentionMap extract_attention(Model<float>& model, const Vocab& vocab, const Example& example, int head,
                               const FeatureAdapters* adapters) {
  const ModelConfig& mc = model.config();
  if (!mc.mlf.use_image) throw std::invalid_argument("extract_attention: model has no image path");
  if (head < 0 || head >= mc.mlf.heads) {
    throw std::out_of_range("head " + std::to_string(head) + " outside [0, " + std::to_string(mc.mlf.heads) + ")");
  }
  Rng selection(kInspectionSelectionSeed);
  const Batch batch = collate(std::vector<const Example*>{&example}, vocab, collate_params(mc), selection);
  Graph<float> g(&model.params(), false);
  ForwardContext ctx;
  ctx.record_attention = true;
  const ForwardResult<float> fr = mlf_forward(g, model, batch, ctx, adapters);

  AttentionMap out;
  out.head = head;
  out.heads = mc.mlf.heads;
  out.n_t = fr.layout.n_t;
  out.n_i = fr.layout.n_i;
  out.grid = mc.encoder.feature_grid();
  out.mask = fr.layout.mask;
  const Tensor<float>& last = fr.fusion_attention.layers.back();  // [1, h, N, N]
  const int N = out.n_t + out.n_i;
  out.weights = Tensor<float>(Shape{out.heads, N, N}, last.data);
  out.text_to_image = Tensor<float>(Shape{out.n_t, out.n_i});
  for (int t = 0; t < out.n_t; ++t)
    for (int p = 0; p < out.n_i; ++p) {
      const std::size_t src = (static_cast<std::size_t>(head) * N + t) * N + out.n_t + p;
      out.text_to_image.data[static_cast<std::size_t>(t) * out.n_i + p] = last.data[src];
    }
  return out;
}

Image render_overlay(const std::vector<float>& patch_weights, int grid, const Image& image) {
  if (grid <= 0 || patch_weights.size() != static_cast<std::size_t>(grid) * grid) {
    throw std::invalid_argument("render_overlay: expected " + std::to_string(grid) + "x" + std::to_string(grid) +
                                " weights, got " + std::to_string(patch_weights.size()));
  }
  for (float w : patch_weights) {
    if (!(w >= 0.0f)) throw std::invalid_argument("render_overlay: weights must be non-negative");
  }
  const auto [lo_it, hi_it] = std::minmax_element(patch_weights.begin(), patch_weights.end());
  const float lo = *lo_it, range = *hi_it - *lo_it;
  const Image rgb = to_rgb(image);
  Image out = rgb;
  for (int y = 0; y < rgb.height; ++y) {
    const int gy = std::min(grid - 1, y * grid / rgb.height);
    for (int x = 0; x < rgb.width; ++x) {
      const int gx = std::min(grid - 1, x * grid / rgb.width);
      const float w = patch_weights[static_cast<std::size_t>(gy) * grid + gx];
      const float norm = range > 0.0f ? (w - lo) / range : 0.0f;
      const float heat[3] = {255.0f * norm, 0.0f, 0.0f};
      for (int c = 0; c < 3; ++c) {
        const float v = 0.5f * static_cast<float>(rgb.at(y, x, c)) + 0.5f * heat[c];
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
      }
    }
  }
  return out;
}

void export_overlay(const std::vector<float>& patch_weights, int grid, const Image& image,
                    const std::filesystem::path& path) {
  write_png(render_overlay(patch_weights, grid, image), path);
}

Embeddings compute_embeddings(Model<float>& model, const Vocab& vocab, const Dataset& dataset, int batch_size) {
  if (dataset.empty()) throw std::invalid_argument("compute_embeddings: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("compute_embeddings: batch_size must be positive");
  const ModelConfig& mc = model.config();
  const CollateParams cp = collate_params(mc);
  Rng selection(kInspectionSelectionSeed);
  Embeddings e;
  const int d = mc.encoder.d_t;
  e.values = Tensor<float>(Shape{static_cast<int>(dataset.size()), d});
  for (std::size_t begin = 0; begin < dataset.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(dataset.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const Example*> examples;
    for (std::size_t i = begin; i < end; ++i) {
      examples.push_back(&dataset.examples[i]);
      e.ids.push_back(dataset.examples[i].id);
      e.labels.push_back(dataset.examples[i].label);
    }
    const Batch batch = collate(examples, vocab, cp, selection);
    Graph<float> g(&model.params(), false);
    const ForwardResult<float> fr = mlf_forward(g, model, batch, ForwardContext{});
    const auto& r = g.value(fr.representation).data;
    std::copy(r.begin(), r.end(), e.values.data.begin() + static_cast<std::ptrdiff_t>(begin) * d);
  }
  return e;
}

void write_embeddings_csv(const Embeddings& e, const std::filesystem::path& path) {
  std::ofstream f = open_output(path);
  const int d = e.values.shape.at(1);
  f << "id,label";
  for (int k = 0; k < d; ++k) f << ",r" << k;
  f << "\n";
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    f << e.ids[i] << "," << e.labels[i];
    for (int k = 0; k < d; ++k) f << "," << format_number(e.values.data[i * static_cast<std::size_t>(d) + k]);
    f << "\n";
  }
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

void export_embeddings(Model<float>& model, const Vocab& vocab, const Dataset& dataset,
                       const std::filesystem::path& path, int batch_size) {
  write_embeddings_csv(compute_embeddings(model, vocab, dataset, batch_size), path);
}

Tensor<double> project_2d(const Tensor<double>& rows) {
  if (rows.rank() != 2) throw std::invalid_argument("project_2d: expected a 2-D array");
  const int n = rows.shape[0], d = rows.shape[1];
  if (n < 3) throw std::invalid_argument("project_2d: need at least 3 rows, got " + std::to_string(n));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat x = Eigen::Map<const RowMat>(rows.data.data(), n, d);
  const RowMat centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("project_2d: eigendecomposition failed");
  const Eigen::VectorXd values = solver.eigenvalues();  // ascending
  const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
  if (values(d - 1) <= 1e-12 * scale * scale) throw std::invalid_argument("project_2d: input has rank 0");

  Eigen::MatrixXd basis(d, 2);
  basis.setZero();
  for (int k = 0; k < std::min(2, d); ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(k) = v;
  }
  const Eigen::MatrixXd proj = centered * basis;
  Tensor<double> out(Shape{n, 2});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 2; ++k) out.data[static_cast<std::size_t>(i) * 2 + k] = proj(i, k);
  return out;
}

void write_coordinates_csv(const std::vector<std::string>& ids, const std::vector<int>& labels,
                           const Tensor<double>& coords, const std::filesystem::path& path) {
  if (ids.size() != labels.size() || coords.rank() != 2 || coords.shape[0] != static_cast<int>(ids.size()) ||
      coords.shape[1] != 2) {
    throw std::invalid_argument("write_coordinates_csv: row count mismatch");
  }
  std::ofstream f = open_output(path);
  f << "id,label,x,y\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    f << ids[i] << "," << labels[i] << "," << format_number(coords.data[2 * i]) << ","
      << format_number(coords.data[2 * i + 1]) << "\n";
  }
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace clmlf
