#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "clmlf/fusion.hpp"
#include "clmlf/model.hpp"
#include "clmlf/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace clmlf;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat affine(const Mat& x, const std::vector<double>& w, const std::vector<double>& b, int out) {
  Mat y(x.size(), std::vector<double>(static_cast<std::size_t>(out)));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (int o = 0; o < out; ++o) {
      double s = b[static_cast<std::size_t>(o)];
      for (std::size_t i = 0; i < x[r].size(); ++i) s += x[r][i] * w[i * static_cast<std::size_t>(out) + static_cast<std::size_t>(o)];
      y[r][static_cast<std::size_t>(o)] = s;
    }
  return y;
}

Mat norm_rows(const Mat& x, const std::vector<double>& gamma, const std::vector<double>& beta) {
  Mat y = x;
  for (auto& row : y) {
    const double n = static_cast<double>(row.size());
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
  }
  return y;
}

Mat add_mats(const Mat& a, const Mat& b) {
  Mat y = a;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t i = 0; i < a[r].size(); ++i) y[r][i] += b[r][i];
  return y;
}

}  // namespace

TEST(ProjectImage, IdentityProjectionFlattensRowMajor) {
  ParameterSet<double> params;
  const auto proj = register_image_projection(params, 3, 3, 4);
  params[proj.linear.weight].value = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  Rng rng(1);
  const Tensor<double> map = testutil::random_tensor(Shape{2, 2, 2, 3}, rng);
  Graph<double> g(&params, false);
  const Var tokens = project_image(g, proj, g.constant(map));
  EXPECT_EQ(g.shape(tokens), (Shape{2, 4, 3}));
  for (std::size_t i = 0; i < map.size(); ++i) EXPECT_DOUBLE_EQ(g.value(tokens).data[i], map.data[i]);
}

TEST(ProjectImage, GradientMatchesFiniteDifferences) {
  ParameterSet<double> params;
  const auto proj = register_image_projection(params, 3, 5, 4);
  const ParamId map = params.add("map", Shape{2, 2, 2, 3}, Init::normal);
  Rng rng(2);
  testutil::randomize(params, rng);
  const Tensor<double> probe = testutil::random_tensor(Shape{2, 4, 5}, rng);
  const auto report = gradient_check(params, [&](Graph<double>& g) {
    const Var t = project_image(g, proj, g.param(map));
    const Var sq = ops::gelu(g, t);
    return ops::sum(g, ops::add(g, sq, g.constant(probe)));
  });
  EXPECT_LT(report.max_rel_error(), 1e-5);
}

TEST(ProjectImage, RejectsNonSquareMap) {
  ParameterSet<double> params;
  const auto proj = register_image_projection(params, 3, 3, 4);
  Graph<double> g(&params, false);
  EXPECT_THROW(project_image(g, proj, g.constant(Tensor<double>(Shape{1, 2, 3, 3}))), std::invalid_argument);
}

TEST(FusedLayout, ConcatenatesTextMaskAndImageOnes) {
  ops::Mask text(5, 1);
  text[4] = 0;
  const FusedLayout layout = fused_layout(text, 1, 5, 49);
  ASSERT_EQ(layout.mask.size(), 54u);
  EXPECT_EQ(layout.mask[4], 0);
  EXPECT_EQ(std::accumulate(layout.mask.begin(), layout.mask.end(), 0), 53);
}

TEST(Fuse, AttentionRowsAreDistributionsAndIgnorePadding) {
  Rng rng(3);
  ParameterSet<double> params;
  const auto layers = register_stack(params, "f", 2, 8, 2, 16);
  testutil::randomize(params, rng);
  const int S = 2, n_t = 5, n_i = 4;
  ops::Mask text(static_cast<std::size_t>(S * n_t), 1);
  text[3] = text[4] = 0;
  text[9] = 0;
  const FusedLayout layout = fused_layout(text, S, n_t, n_i);
  Graph<double> g(&params, false);
  AttentionRecord<double> record;
  const Var out = fuse(g, layers, g.constant(testutil::random_tensor(Shape{S, n_t, 8}, rng)),
                       g.constant(testutil::random_tensor(Shape{S, n_i, 8}, rng)), layout, ForwardContext{}, &record);
  EXPECT_EQ(g.shape(out), (Shape{S, n_t + n_i, 8}));
  ASSERT_EQ(record.layers.size(), 2u);
  const int N = n_t + n_i;
  for (const auto& probs : record.layers) {
    ASSERT_EQ(probs.shape, (Shape{S, 2, N, N}));
    for (int s = 0; s < S; ++s)
      for (int h = 0; h < 2; ++h)
        for (int i = 0; i < N; ++i) {
          double total = 0.0;
          for (int j = 0; j < N; ++j) {
            const double w = probs.data[(((static_cast<std::size_t>(s) * 2 + h) * N + i) * N) + j];
            if (!layout.mask[static_cast<std::size_t>(s * N + j)]) {
              EXPECT_LT(std::abs(w), 1e-12);
            }
            total += w;
          }
          EXPECT_NEAR(total, 1.0, 1e-12);
        }
  }
}

TEST(Fuse, TextOnlyWhenImageInvalid) {
  Rng rng(4);
  ParameterSet<double> params;
  const auto layers = register_stack(params, "f", 1, 4, 1, 8);
  testutil::randomize(params, rng);
  const FusedLayout layout = fused_layout(ops::Mask(3, 1), 1, 3, 0);
  Graph<double> g(&params, false);
  const Var out = fuse(g, layers, g.constant(testutil::random_tensor(Shape{1, 3, 4}, rng)), Var{}, layout,
                       ForwardContext{});
  EXPECT_EQ(g.shape(out), (Shape{1, 3, 4}));
}

TEST(EncoderLayer, MatchesHandComputedSingleHeadLayer) {
  Rng rng(5);
  ParameterSet<double> params;
  const int d = 3, ff = 4;
  const auto layer = register_encoder_layer(params, "l", d, 1, ff);
  testutil::randomize(params, rng);
  const Tensor<double> x = testutil::random_tensor(Shape{1, 2, d}, rng);
  Graph<double> g(&params, false);
  const Var out = encoder_layer<double>(g, layer, g.constant(x), ops::Mask(2, 1), ForwardContext{}, nullptr);

  auto val = [&](ParamId id) { return params[id].value; };
  const Mat xin = testutil::rows_of(Tensor<double>(Shape{2, d}, x.data));
  const Mat q = affine(xin, val(layer.query.weight), val(layer.query.bias), d);
  const Mat k = affine(xin, val(layer.key.weight), val(layer.key.bias), d);
  const Mat v = affine(xin, val(layer.value.weight), val(layer.value.bias), d);
  Mat attended(2, std::vector<double>(d, 0.0));
  for (int i = 0; i < 2; ++i) {
    double s[2], z = 0.0;
    for (int j = 0; j < 2; ++j) {
      s[j] = std::exp(oracle::dot(q[i], k[j]) / std::sqrt(double(d)));
      z += s[j];
    }
    for (int j = 0; j < 2; ++j)
      for (int c = 0; c < d; ++c) attended[i][c] += s[j] / z * v[j][c];
  }
  const Mat mha = affine(attended, val(layer.output.weight), val(layer.output.bias), d);
  const Mat h1 = norm_rows(add_mats(xin, mha), val(layer.norm1_gamma), val(layer.norm1_beta));
  Mat hidden = affine(h1, val(layer.ff_in.weight), val(layer.ff_in.bias), ff);
  for (auto& row : hidden)
    for (auto& h : row) h = oracle::gelu(h);
  const Mat h2 = norm_rows(add_mats(h1, affine(hidden, val(layer.ff_out.weight), val(layer.ff_out.bias), d)),
                           val(layer.norm2_gamma), val(layer.norm2_beta));
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < d; ++c) EXPECT_NEAR(g.value(out).data[static_cast<std::size_t>(i * d + c)], h2[i][c], 1e-8);
}

TEST(EncoderLayer, RejectsIndivisibleHeads) {
  ParameterSet<double> params;
  EXPECT_THROW(register_encoder_layer(params, "l", 6, 4, 8), std::invalid_argument);
}

TEST(AttentionPool, ConstantScoresGiveUniformWeightsOverValidTokens) {
  Rng rng(6);
  ParameterSet<double> params;
  const auto pool = register_pool(params, 4, 4);
  testutil::randomize(params, rng);
  std::fill(params[pool.score.weight].value.begin(), params[pool.score.weight].value.end(), 0.0);
  ops::Mask mask{1, 1, 0, 1, 1, 1, 1, 1};
  Graph<double> g(&params, false);
  const PoolResult r = attention_pool(g, pool, g.constant(testutil::random_tensor(Shape{2, 4, 4}, rng)), mask);
  const auto& w = g.value(r.weights).data;
  for (int j : {0, 1, 3}) EXPECT_NEAR(w[static_cast<std::size_t>(j)], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(w[2], 0.0);
  for (int j = 4; j < 8; ++j) EXPECT_NEAR(w[static_cast<std::size_t>(j)], 0.25, 1e-12);
  EXPECT_EQ(g.shape(r.representation), (Shape{2, 4}));
}

TEST(AttentionPool, MatchesHandComputation) {
  Rng rng(7);
  ParameterSet<double> params;
  const int d = 3, h = 2, N = 4;
  const auto pool = register_pool(params, d, h);
  testutil::randomize(params, rng);
  const Tensor<double> f = testutil::random_tensor(Shape{1, N, d}, rng);
  Graph<double> g(&params, false);
  const PoolResult r = attention_pool(g, pool, g.constant(f), ops::Mask(N, 1));

  auto val = [&](ParamId id) { return params[id].value; };
  const Mat rows = testutil::rows_of(Tensor<double>(Shape{N, d}, f.data));
  Mat hidden = affine(rows, val(pool.hidden.weight), val(pool.hidden.bias), h);
  for (auto& row : hidden)
    for (auto& x : row) x = oracle::gelu(x);
  const Mat score = affine(hidden, val(pool.score.weight), val(pool.score.bias), 1);
  double z = 0.0;
  for (const auto& s : score) z += std::exp(s[0]);
  Mat summed(1, std::vector<double>(d, 0.0));
  for (int j = 0; j < N; ++j) {
    const double q = std::exp(score[j][0]) / z;
    EXPECT_NEAR(g.value(r.weights).data[static_cast<std::size_t>(j)], q, 1e-12);
    for (int c = 0; c < d; ++c) summed[0][c] += q * rows[j][c];
  }
  const Mat out = affine(summed, val(pool.output.weight), val(pool.output.bias), d);
  for (int c = 0; c < d; ++c)
    EXPECT_NEAR(g.value(r.representation).data[static_cast<std::size_t>(c)], oracle::gelu(out[0][c]), 1e-10);
}

TEST(AttentionPool, FullyMaskedRowThrows) {
  ParameterSet<double> params;
  const auto pool = register_pool(params, 2, 2);
  Graph<double> g(&params, false);
  EXPECT_ANY_THROW(attention_pool(g, pool, g.constant(Tensor<double>(Shape{1, 2, 2})), ops::Mask{0, 0}));
}

TEST(MlfForward, ShapesForFullAndTextOnlyModels) {
  Rng rng(8);
  for (bool use_image : {true, false}) {
    ModelConfig cfg = testutil::tiny_config();
    cfg.mlf.use_image = use_image;
    Model<double> model(cfg);
    model.initialize(rng);
    const Batch batch = testutil::random_batch(3, 4, 4, 12, rng, {0, 1, 2});
    Graph<double> g(&model.params(), false);
    ForwardContext ctx;
    ctx.record_attention = true;
    const auto out = mlf_forward(g, model, batch, ctx);
    const int n_i = use_image ? 4 : 0;
    EXPECT_EQ(g.shape(out.text_hidden), (Shape{3, 4, 8}));
    EXPECT_EQ(g.shape(out.fused), (Shape{3, 4 + n_i, 8}));
    EXPECT_EQ(g.shape(out.pool_weights), (Shape{3, 4 + n_i}));
    EXPECT_EQ(g.shape(out.representation), (Shape{3, 8}));
    EXPECT_EQ(out.fusion_attention.layers.size(), 1u);
    EXPECT_EQ(out.image_attention.layers.size(), use_image ? 1u : 0u);
    if (use_image) {
      EXPECT_EQ(g.shape(out.image_map), (Shape{3, 2, 2, 8}));
    }
    for (int s = 0; s < 3; ++s)
      for (int j = 0; j < 4 + n_i; ++j)
        if (!out.layout.mask[static_cast<std::size_t>(s * (4 + n_i) + j)]) {
          EXPECT_EQ(g.value(out.pool_weights).data[static_cast<std::size_t>(s * (4 + n_i) + j)], 0.0);
        }
    EXPECT_EQ(model.params().find("fusion.image_projection.weight").has_value(), use_image);
  }
}

TEST(MlfForward, RejectsOverlongBatch) {
  Rng rng(9);
  Model<double> model(testutil::tiny_config());
  model.initialize(rng);
  const Batch batch = testutil::random_batch(1, 6, 4, 12, rng);
  Graph<double> g(&model.params(), false);
  EXPECT_ANY_THROW(mlf_forward(g, model, batch, ForwardContext{}));
}

TEST(MlfForward, GradientCheckThroughAllLosses) {
  Rng rng(10);
  Model<double> model(testutil::tiny_config());
  model.initialize(rng);
  testutil::randomize(model.params(), rng, 0.3);
  Batch batch = testutil::random_batch(3, 4, 4, 12, rng, {0, 1, 0});
  Batch augmented = testutil::random_batch(3, 4, 4, 12, rng, {1, 0, 0});
  augmented.labels = batch.labels = {0, 1, 0};
  ContrastiveConfig cc;
  cc.tau = 0.5;
  const auto report = gradient_check(model.params(), [&](Graph<double>& g) {
    const auto clean = mlf_forward(g, model, batch, ForwardContext{});
    const auto aug = mlf_forward(g, model, augmented, ForwardContext{});
    const Var sc = classification_loss(g, model.layout().head, clean.representation, batch.labels);
    const Var lbcl = lbcl_loss(g, clean.representation, batch.labels, cc).loss;
    const Var dbcl = dbcl_loss(g, clean.representation, aug.representation, cc);
    return combine_losses(g, sc, lbcl, dbcl, cc);
  });
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}
