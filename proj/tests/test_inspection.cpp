#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "clmlf/inspection.hpp"
#include "test_util.hpp"

using namespace clmlf;

namespace {

constexpr int kTextLen = 10;
constexpr int kSeq = kTextLen + 4;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Dataset small_synthetic(int n, std::uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.num_examples = n;
  spec.image_size = 8;
  spec.grid = 2;
  spec.seed = seed;
  return synthesize(spec);
}

/// tiny_config sized for the 8x8 synthetic images (p = 2, two conv blocks).
ModelConfig inspection_config(const Vocab& vocab) {
  ModelConfig c = testutil::tiny_config(vocab.size(), kTextLen);
  c.encoder.image_size = 8;
  c.encoder.conv_blocks = 2;
  return c;
}

Model<float> initialized(const ModelConfig& config, std::uint64_t seed = 9) {
  Model<float> model(config);
  Rng rng(seed);
  model.initialize(rng);
  return model;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(ExtractAttention, RowsSumToOneAndShapesMatch) {
  const Dataset ds = small_synthetic(4);
  const Vocab vocab = Vocab::build(ds);
  Model<float> model = initialized(inspection_config(vocab));
  for (int head = 0; head < 2; ++head) {
    const AttentionMap map = extract_attention(model, vocab, ds.examples[0], head);
    ASSERT_EQ(map.n_t, kTextLen);
    ASSERT_EQ(map.n_i, 4);
    ASSERT_EQ(map.grid, 2);
    ASSERT_EQ(map.weights.shape, (Shape{2, kSeq, kSeq}));
    ASSERT_EQ(map.text_to_image.shape, (Shape{kTextLen, 4}));
    for (int h = 0; h < 2; ++h)
      for (int i = 0; i < kSeq; ++i) {
        double sum = 0.0;
        for (int j = 0; j < kSeq; ++j) {
          const float w = map.weights.data[static_cast<std::size_t>((h * kSeq + i) * kSeq + j)];
          sum += w;
          if (!map.mask[static_cast<std::size_t>(j)]) {
            EXPECT_LT(w, 1e-12);
          }
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    for (int t = 0; t < kTextLen; ++t) {
      const auto row = map.patch_weights(t);
      ASSERT_EQ(row.size(), 4u);
      for (int p = 0; p < 4; ++p)
        EXPECT_EQ(row[static_cast<std::size_t>(p)],
                  map.weights.data[static_cast<std::size_t>((head * kSeq + t) * kSeq + kTextLen + p)]);
    }
  }
}

TEST(ExtractAttention, ZeroQueryKeyGivesUniformWeights) {
  const Dataset ds = small_synthetic(2);
  const Vocab vocab = Vocab::build(ds);
  Model<float> model = initialized(inspection_config(vocab));
  for (auto& p : model.params().all()) {
    if (p.name.rfind("fusion.joint_layer", 0) == 0 &&
        (p.name.find(".attn.query.") != std::string::npos || p.name.find(".attn.key.") != std::string::npos)) {
      std::fill(p.value.begin(), p.value.end(), 0.0f);
    }
  }
  const AttentionMap map = extract_attention(model, vocab, ds.examples[1]);
  int unmasked = 0;
  for (auto m : map.mask) unmasked += m;
  ASSERT_GT(unmasked, 4);
  ASSERT_LT(unmasked, kSeq);
  for (int i = 0; i < kSeq; ++i)
    for (int j = 0; j < kSeq; ++j) {
      const float w = map.weights.data[static_cast<std::size_t>(i * kSeq + j)];
      EXPECT_NEAR(w, map.mask[static_cast<std::size_t>(j)] ? 1.0 / unmasked : 0.0, 1e-6);
    }
}

TEST(ExtractAttention, Errors) {
  const Dataset ds = small_synthetic(2);
  const Vocab vocab = Vocab::build(ds);
  ModelConfig config = inspection_config(vocab);
  Model<float> model = initialized(config);
  const AttentionMap map = extract_attention(model, vocab, ds.examples[0]);
  EXPECT_THROW(map.patch_weights(-1), std::out_of_range);
  EXPECT_THROW(map.patch_weights(kTextLen), std::out_of_range);
  EXPECT_THROW(extract_attention(model, vocab, ds.examples[0], 2), std::out_of_range);
  config.mlf.use_image = false;
  Model<float> text_only = initialized(config);
  EXPECT_THROW(extract_attention(text_only, vocab, ds.examples[0]), std::invalid_argument);
}

TEST(Overlay, KeepsImageDimensions) {
  const auto dir = testutil::temp_dir("overlay");
  const Image img(20, 12, 3, 40);
  export_overlay({0.1f, 0.2f, 0.3f, 0.4f}, 2, img, dir / "o.png");
  const Image back = read_image(dir / "o.png");
  EXPECT_EQ(back.height, 20);
  EXPECT_EQ(back.width, 12);
  EXPECT_EQ(back.channels, 3);
  EXPECT_THROW(export_overlay({1.0f, 0.0f, 0.0f, 0.0f}, 2, img, dir / "missing" / "o.png"), std::runtime_error);
}

TEST(Overlay, ConcentratedWeightIsReddestRegion) {
  const Image img(32, 32, 3, 100);
  std::vector<float> w(16, 0.0f);
  w[6] = 1.0f;  // row 1, column 2
  const Image out = render_overlay(w, 4, img);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const bool inside = y / 8 == 1 && x / 8 == 2;
      EXPECT_EQ(out.at(y, x, 0), inside ? 178 : 50);
      EXPECT_EQ(out.at(y, x, 1), 50);
    }
}

TEST(Overlay, NearestNeighborGivesConstantBlocks) {
  Image img(32, 32, 3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) img.at(y, x, 0) = static_cast<std::uint8_t>((7 * x + 3 * y) % 256);
  Rng rng(4);
  std::vector<float> w(16);
  for (auto& v : w) v = static_cast<float>(rng.uniform());
  const Image out = render_overlay(w, 4, img);
  // The overlay channel is out - 0.5 * image in red.
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double heat = 2.0 * out.at(y, x, 0) - img.at(y, x, 0);
      const double ref = 2.0 * out.at(y - y % 8, x - x % 8, 0) - img.at(y - y % 8, x - x % 8, 0);
      EXPECT_NEAR(heat, ref, 2.0);
    }
}

TEST(Overlay, ConstantWeightsAndValidation) {
  const Image img(4, 4, 1, 80);
  const Image out = render_overlay(std::vector<float>(4, 0.25f), 2, img);
  EXPECT_EQ(out.channels, 3);
  for (auto v : out.pixels) EXPECT_EQ(v, 40);
  EXPECT_THROW(render_overlay({0.1f, -0.1f, 0.0f, 0.0f}, 2, img), std::invalid_argument);
  EXPECT_THROW(render_overlay({0.1f, 0.1f, 0.0f}, 2, img), std::invalid_argument);
}

TEST(Embeddings, ShapeAndDeterministicExport) {
  const auto dir = testutil::temp_dir("embeddings");
  const Dataset ds = small_synthetic(13);
  const Vocab vocab = Vocab::build(ds);
  Model<float> model = initialized(inspection_config(vocab));
  export_embeddings(model, vocab, ds, dir / "a.csv", 5);
  export_embeddings(model, vocab, ds, dir / "b.csv", 5);
  const std::string a = slurp(dir / "a.csv");
  EXPECT_EQ(a, slurp(dir / "b.csv"));
  const auto lines = lines_of(a);
  ASSERT_EQ(lines.size(), 14u);
  EXPECT_EQ(lines[0], "id,label,r0,r1,r2,r3,r4,r5,r6,r7");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    EXPECT_EQ(std::count(lines[i].begin(), lines[i].end(), ','), 9);
    EXPECT_EQ(lines[i].substr(0, lines[i].find(',')), ds.examples[i - 1].id);
  }
  // Batching does not change the representations.
  const Embeddings one = compute_embeddings(model, vocab, ds, 1);
  const Embeddings all = compute_embeddings(model, vocab, ds, 64);
  for (std::size_t i = 0; i < one.values.data.size(); ++i) EXPECT_NEAR(one.values.data[i], all.values.data[i], 1e-5);
  EXPECT_THROW(compute_embeddings(model, vocab, Dataset{}), std::invalid_argument);
}

TEST(Project2d, RecoversDominantDirections) {
  // Points spread along e0 (large) and e2 (small) in 3-D.
  Tensor<double> rows(Shape{6, 3});
  const double a[6] = {-5, -3, -1, 1, 3, 5};
  const double b[6] = {1, -1, 0, 0, -1, 1};
  for (int i = 0; i < 6; ++i) {
    rows.data[static_cast<std::size_t>(i) * 3 + 0] = a[i] + 10.0;
    rows.data[static_cast<std::size_t>(i) * 3 + 1] = 4.0;
    rows.data[static_cast<std::size_t>(i) * 3 + 2] = b[i];
  }
  const Tensor<double> xy = project_2d(rows);
  ASSERT_EQ(xy.shape, (Shape{6, 2}));
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(xy.data[static_cast<std::size_t>(i) * 2], a[i], 1e-9);
    EXPECT_NEAR(xy.data[static_cast<std::size_t>(i) * 2 + 1], b[i], 1e-9);
  }
}

TEST(Project2d, PreservesPairwiseDistancesOfPlanarData) {
  Rng rng(8);
  Tensor<double> rows(Shape{20, 5});
  const Tensor<double> u = testutil::random_tensor(Shape{2, 5}, rng);
  std::vector<double> s(20), t(20);
  for (int i = 0; i < 20; ++i) {
    s[static_cast<std::size_t>(i)] = rng.normal();
    t[static_cast<std::size_t>(i)] = rng.normal();
    for (int k = 0; k < 5; ++k)
      rows.data[static_cast<std::size_t>(i) * 5 + k] =
          s[static_cast<std::size_t>(i)] * u.data[static_cast<std::size_t>(k)] +
          t[static_cast<std::size_t>(i)] * u.data[static_cast<std::size_t>(5 + k)] + 1.0;
  }
  const Tensor<double> xy = project_2d(rows);
  auto dist = [](const std::vector<double>& v, int d, int i, int j) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
      const double diff = v[static_cast<std::size_t>(i * d + k)] - v[static_cast<std::size_t>(j * d + k)];
      acc += diff * diff;
    }
    return std::sqrt(acc);
  };
  for (int i = 0; i < 20; ++i)
    for (int j = i + 1; j < 20; ++j) EXPECT_NEAR(dist(xy.data, 2, i, j), dist(rows.data, 5, i, j), 1e-9);
}

TEST(Project2d, ErrorsAndCsv) {
  EXPECT_THROW(project_2d(Tensor<double>(Shape{2, 3})), std::invalid_argument);
  EXPECT_THROW(project_2d(Tensor<double>(Shape{4, 3}, 2.5)), std::invalid_argument);
  EXPECT_THROW(project_2d(Tensor<double>(Shape{4})), std::invalid_argument);
  const auto dir = testutil::temp_dir("coords");
  Tensor<double> xy(Shape{2, 2}, {0.5, -1.0, 2.0, 0.25});
  write_coordinates_csv({"a", "b"}, {0, 2}, xy, dir / "c.csv");
  EXPECT_EQ(slurp(dir / "c.csv"), "id,label,x,y\na,0,0.5,-1\nb,2,2,0.25\n");
  EXPECT_THROW(write_coordinates_csv({"a"}, {0}, xy, dir / "d.csv"), std::invalid_argument);
}
