// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clmlf/cli.hpp"
#include "clmlf/inspection.hpp"
#include "clmlf/losses.hpp"
#include "clmlf/ops.hpp"
#include "clmlf/training.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace clmlf;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<int> random_labels(int S, int K, Rng& rng) {
  std::vector<int> y(static_cast<std::size_t>(S));
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::size_t>(K)));
  return y;
}

ContrastiveConfig contrastive(double tau, SelfPairs mode, bool normalize = true) {
  ContrastiveConfig c;
  c.tau = tau;
  c.self_pairs = mode;
  c.normalize = normalize;
  return c;
}

// ---- 1 ------------------------------------------------------------------------

Verdict loss_oracles() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  int instances = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int S = 1 + static_cast<int>(rng.below(8));
    const int d = 1 + static_cast<int>(rng.below(16));
    const double tau = rng.uniform(0.05, 1.0);
    const Tensor<double> r = testutil::random_tensor(Shape{S, d}, rng);
    const Tensor<double> r_aug = testutil::random_tensor(Shape{S, d}, rng);
    const std::vector<int> y = random_labels(S, 1 + static_cast<int>(rng.below(4)), rng);
    for (SelfPairs mode : {SelfPairs::exclude, SelfPairs::include}) {
      const double got = lbcl_value(r, y, contrastive(tau, mode));
      const double want = oracle::lbcl(testutil::rows_of(r), y, tau, true, mode == SelfPairs::include, nullptr);
      worst = std::max(worst, std::abs(got - want));
      ++instances;
    }
    const double got = dbcl_value(r, r_aug, contrastive(tau, SelfPairs::exclude));
    const double want = oracle::dbcl(testutil::rows_of(r), testutil::rows_of(r_aug), tau, true);
    worst = std::max(worst, std::abs(got - want));
    ++instances;
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-6 && elapsed < 10.0, std::to_string(instances) + " instances, max abs error " +
                                              fmt("%.2e", worst) + ", " + fmt("%.2f", elapsed) + " s"};
}

// ---- 2 ------------------------------------------------------------------------

Verdict analytic_values() {
  const auto c1 = contrastive(1.0, SelfPairs::exclude);
  std::vector<std::pair<std::string, double>> errors;
  errors.emplace_back("LBCL ln 2",
                      lbcl_value(Tensor<double>(Shape{3, 2}, {1, 0, 1, 0, 1, 0}), {2, 2, 2}, c1) - std::log(2.0));
  errors.emplace_back("LBCL no positives",
                      lbcl_value(Tensor<double>(Shape{3, 2}, {1, 0, 0, 1, 1, 1}), {0, 1, 2}, c1));
  const Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
  errors.emplace_back("DBCL log(1+e^-1)", dbcl_value(eye, eye, c1) - std::log(1.0 + std::exp(-1.0)));
  const Tensor<double> same(Shape{5, 3}, 0.4);
  errors.emplace_back("DBCL ln S", dbcl_value(same, same, c1) - std::log(5.0));
  errors.emplace_back("CE ln 3", cross_entropy_value(Tensor<double>(Shape{4, 3}, 1.5), {0, 1, 2, 0}) - std::log(3.0));
  Verdict v;
  double worst = 0.0;
  for (const auto& [name, err] : errors) {
    worst = std::max(worst, std::abs(err));
    if (!(std::abs(err) <= 1e-6)) {
      v.pass = false;
      v.detail += name + " off by " + fmt("%.2e", err) + "; ";
    }
  }
  v.detail += "5 values, max abs error " + fmt("%.2e", worst);
  return v;
}

// ---- 3 ------------------------------------------------------------------------

Verdict gradient_verification() {
  const auto t0 = Clock::now();
  Rng rng(303);
  Model<double> model(testutil::tiny_config(12, 4));
  model.initialize(rng);
  testutil::randomize(model.params(), rng, 0.3);
  Batch batch = testutil::random_batch(3, 4, 4, 12, rng, {0, 1, 2});
  Batch augmented = testutil::random_batch(3, 4, 4, 12, rng, {1, 0, 0});
  augmented.labels = batch.labels = {1, 0, 1};
  ContrastiveConfig cc;
  cc.tau = 0.5;
  const GradCheckReport report = gradient_check(model.params(), [&](Graph<double>& g) {
    const auto clean = mlf_forward(g, model, batch, ForwardContext{});
    const auto aug = mlf_forward(g, model, augmented, ForwardContext{});
    const Var sc = classification_loss(g, model.layout().head, clean.representation, batch.labels);
    const Var lbcl = lbcl_loss(g, clean.representation, batch.labels, cc).loss;
    const Var dbcl = dbcl_loss(g, clean.representation, aug.representation, cc);
    return combine_losses(g, sc, lbcl, dbcl, cc);
  });
  const double elapsed = seconds_since(t0);
  Verdict v{report.passed() && elapsed < 60.0, ""};
  for (const auto& name : report.failing()) v.detail += "failing block " + name + "; ";
  v.detail += std::to_string(report.blocks.size()) + " blocks, max rel error " + fmt("%.2e", report.max_rel_error()) +
              ", " + fmt("%.2f", elapsed) + " s";
  return v;
}

// ---- 4 ------------------------------------------------------------------------

Verdict structural_invariants() {
  Rng rng(404);
  std::vector<std::string> problems;
  auto fail = [&](int trial, const std::string& what) {
    if (problems.size() < 5) problems.push_back("case " + std::to_string(trial) + ": " + what);
  };
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig config = testutil::tiny_config(12, 3 + static_cast<int>(rng.below(4)));
    const int n_t = config.encoder.max_len;
    Model<double> model(config);
    model.initialize(rng);
    testutil::randomize(model.params(), rng, 0.5);
    const int S = 2 + static_cast<int>(rng.below(5));
    std::vector<int> pad(static_cast<std::size_t>(S));
    for (auto& p : pad) p = static_cast<int>(rng.below(static_cast<std::size_t>(n_t - 1)));
    const Batch batch = testutil::random_batch(S, n_t, 4, 12, rng, pad);

    Graph<double> g(&model.params(), false);
    ForwardContext ctx;
    ctx.record_attention = true;
    const auto fr = mlf_forward(g, model, batch, ctx);
    const int grid = config.encoder.feature_grid();
    const int n_i = grid * grid, N = n_t + n_i;
    if (fr.layout.n_t != n_t || fr.layout.n_i != n_i || g.shape(fr.fused) != Shape{S, N, config.encoder.d_t})
      fail(trial, "fused length");

    const auto& q = g.value(fr.pool_weights).data;
    for (int s = 0; s < S; ++s) {
      double total = 0.0;
      for (int j = 0; j < N; ++j) {
        const double w = q[static_cast<std::size_t>(s * N + j)];
        total += w;
        if (!fr.layout.mask[static_cast<std::size_t>(s * N + j)] && !(std::abs(w) < 1e-12)) {
          fail(trial, "masked pool weight");
        }
      }
      if (!(std::abs(total - 1.0) <= 1e-6)) fail(trial, "pool weights sum " + fmt("%.9f", total));
    }

    auto check_rows = [&](const Tensor<double>& probs, const std::string& which) {
      const int rows = static_cast<int>(probs.data.size()) / probs.shape.back();
      const int width = probs.shape.back();
      for (int r = 0; r < rows; ++r) {
        double total = 0.0;
        for (int j = 0; j < width; ++j) total += probs.data[static_cast<std::size_t>(r) * width + j];
        if (!(std::abs(total - 1.0) <= 1e-6)) fail(trial, which + " attention row sum " + fmt("%.9f", total));
      }
    };
    for (const auto& layer : fr.fusion_attention.layers) check_rows(layer, "fusion");
    for (const auto& layer : fr.image_attention.layers) check_rows(layer, "image");

    const int d = 2 + static_cast<int>(rng.below(8));
    const Tensor<double> r = testutil::random_tensor(Shape{S, d}, rng);
    const std::vector<int> y = random_labels(S, 3, rng);
    const double tau = rng.uniform(0.05, 1.0);
    for (SelfPairs mode : {SelfPairs::exclude, SelfPairs::include}) {
      const ContrastiveConfig cc = contrastive(tau, mode);
      const double base = lbcl_value(r, y, cc);
      std::vector<int> perm(static_cast<std::size_t>(S));
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm.begin(), perm.end());
      Tensor<double> permuted(Shape{S, d}), scaled(Shape{S, d});
      std::vector<int> y_perm(static_cast<std::size_t>(S));
      for (int s = 0; s < S; ++s) {
        const int src = perm[static_cast<std::size_t>(s)];
        y_perm[static_cast<std::size_t>(s)] = y[static_cast<std::size_t>(src)];
        const double factor = rng.uniform(0.1, 10.0);
        for (int k = 0; k < d; ++k) {
          permuted.data[static_cast<std::size_t>(s * d + k)] = r.data[static_cast<std::size_t>(src * d + k)];
          scaled.data[static_cast<std::size_t>(s * d + k)] = factor * r.data[static_cast<std::size_t>(s * d + k)];
        }
      }
      if (!(std::abs(lbcl_value(permuted, y_perm, cc) - base) <= 1e-8)) fail(trial, "LBCL permutation invariance");
      if (!(std::abs(lbcl_value(scaled, y, cc) - base) <= 1e-8)) fail(trial, "LBCL scaling invariance");
    }
  }
  Verdict v{problems.empty(), ""};
  for (const auto& p : problems) v.detail += p + "; ";
  v.detail += "50 random cases";
  return v;
}

// ---- 5 ------------------------------------------------------------------------

const char* kDeterminismRun = R"([train]
batch_size = 16
epochs = 3
seed = 21

[model]
d_t = 16
text_heads = 2
text_ff = 32
max_len = 8
d_i = 16

[fusion]
fusion_layers = 2
image_layers = 1
heads = 2
ff = 32
dropout = 0.1
)";

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int rc = cli::dispatch(args, out, err);
  if (rc != 0) std::cerr << err.str();
  return rc;
}

Verdict determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::create_directories(dir);
  std::ofstream(dir / "spec.json") << R"({"num_examples": 300, "seed": 7})";
  std::ofstream(dir / "run.toml") << kDeterminismRun;
  if (run_cli({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "data").string()}) != 0)
    return {false, "synth failed"};
  for (const char* name : {"a", "b"}) {
    if (run_cli({"train", "--config", (dir / "run.toml").string(), "--data", (dir / "data").string(), "--out",
                 (dir / name).string()}) != 0)
      return {false, std::string("train run ") + name + " failed"};
  }
  const Checkpoint a = load_checkpoint(dir / "a" / "model.ckpt");
  const Checkpoint b = load_checkpoint(dir / "b" / "model.ckpt");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.model.params().size(); ++i) {
    const auto& x = a.model.params().all()[i].value;
    const auto& y = b.model.params().all()[i].value;
    for (std::size_t k = 0; k < x.size(); ++k) worst = std::max(worst, std::abs(double(x[k]) - double(y[k])));
  }
  const bool same_metrics = slurp(dir / "a" / "metrics.json") == slurp(dir / "b" / "metrics.json");
  return {worst <= 1e-7 && same_metrics, "max parameter difference " + fmt("%.2e", worst) + ", metrics.json " +
                                             (same_metrics ? "byte-identical" : "differs")};
}

// ---- 6 and 7 ----------------------------------------------------------------------

enum class Variant { full, mlf_only, text_only };

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::mlf_only: return "MLF-only";
    case Variant::text_only: return "text-only";
  }
  return "?";
}

TrainConfig ablation_config(Variant variant, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = 12;
  cfg.learning_rate = 1e-3;
  cfg.model.encoder.d_t = 32;
  cfg.model.encoder.d_i = 32;
  cfg.model.encoder.text_layers = 1;
  cfg.model.encoder.max_len = 8;
  cfg.model.mlf.dropout = 0.0;
  if (variant != Variant::full) {
    cfg.contrastive.lambda_lbcl = 0.0;
    cfg.contrastive.lambda_dbcl = 0.0;
  }
  if (variant == Variant::text_only) cfg.model.mlf.use_image = false;
  return cfg;
}

struct AblationOutcome {
  Verdict verdict;
  std::optional<TrainResult> full_model;
};

AblationOutcome synthetic_ablation() {
  SyntheticSpec spec;
  spec.num_examples = 4000;
  spec.seed = 11;
  const auto parts = split(synthesize(spec), SplitRatios{}, 1);
  AblationOutcome outcome;
  double mean[3] = {0.0, 0.0, 0.0};
  double slowest = 0.0;
  std::string runs;
  for (Variant variant : {Variant::full, Variant::mlf_only, Variant::text_only}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto t0 = Clock::now();
      TrainResult result = train(ablation_config(variant, seed), parts[0], &parts[1]);
      const double acc = evaluate(result.model, result.vocab, parts[2]).metrics.accuracy;
      const double elapsed = seconds_since(t0);
      slowest = std::max(slowest, elapsed);
      mean[static_cast<int>(variant)] += acc / 3.0;
      std::cout << "  " << variant_name(variant) << " seed " << seed << ": test accuracy " << fmt("%.4f", acc)
                << " (" << fmt("%.0f", elapsed) << " s)" << std::endl;
      if (variant == Variant::full && seed == 1) outcome.full_model = std::move(result);
    }
  }
  const double full = mean[0], mlf = mean[1], text = mean[2];
  outcome.verdict.pass = full >= mlf && mlf >= text && full - text >= 0.05 && slowest < 600.0;
  outcome.verdict.detail = "mean accuracy full " + fmt("%.4f", full) + " >= MLF-only " + fmt("%.4f", mlf) +
                           " >= text-only " + fmt("%.4f", text) + ", gap " + fmt("%.1f", 100.0 * (full - text)) +
                           " pp, slowest run " + fmt("%.0f", slowest) + " s";
  return outcome;
}

Verdict attention_alignment(TrainResult* full) {
  if (!full) return {false, "no trained model"};
  SyntheticSpec spec;
  spec.num_examples = 300;
  spec.seed = 12;
  spec.complementary = false;
  spec.p_text = 1.0;
  spec.p_image = 1.0;
  const Dataset probes = synthesize(spec);
  double to_motif = 0.0, to_other = 0.0;
  int used = 0;
  for (const Example& ex : probes.examples) {
    if (!ex.meta || ex.meta->motif_cell < 0 || ex.meta->evidence_word < 0) continue;
    const int token = ex.meta->evidence_word + 1;  // after [CLS]
    if (token >= full->config.model.encoder.max_len) continue;
    const AttentionMap map = extract_attention(full->model, full->vocab, ex, 0);
    const std::vector<float> w = map.patch_weights(token);
    const int motif = ex.meta->motif_cell;
    double others = 0.0;
    for (int p = 0; p < map.n_i; ++p)
      if (p != motif) others += w[static_cast<std::size_t>(p)];
    to_motif += w[static_cast<std::size_t>(motif)];
    to_other += others / (map.n_i - 1);
    ++used;
  }
  if (used < 100) return {false, "only " + std::to_string(used) + " usable probe examples"};
  to_motif /= used;
  to_other /= used;
  return {to_motif > to_other, std::to_string(used) + " probes, mean attention to motif patch " +
                                   fmt("%.4f", to_motif) + " vs other patches " + fmt("%.4f", to_other)};
}

// ---- 8 ------------------------------------------------------------------------

Dataset numbered(std::size_t n) {
  Dataset ds;
  ds.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.id = "ex" + std::to_string(i);
    ex.text = "word";
    ex.images.emplace_back(Image(1, 1, 3));
    ex.label = static_cast<int>(i % 2);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Verdict split_fidelity() {
  Verdict v;
  const std::array<std::size_t, 3> published[] = {{3611, 450, 450}, {13624, 1700, 1700}, {19816, 2410, 2409}};
  for (const auto& c : published) {
    const auto parts = split(numbered(c[0] + c[1] + c[2]), SplitRatios{}, 1, c);
    std::ostringstream got;
    got << "(" << parts[0].size() << "," << parts[1].size() << "," << parts[2].size() << ")";
    if (parts[0].size() != c[0] || parts[1].size() != c[1] || parts[2].size() != c[2]) v.pass = false;
    v.detail += got.str() + " ";
  }
  const auto generic = split(numbered(10), SplitRatios{}, 1);
  const bool ok = generic[0].size() == 8 && generic[1].size() == 1 && generic[2].size() == 1;
  v.pass = v.pass && ok;
  v.detail += std::string("N=10 -> ") + std::to_string(generic[0].size()) + "/" + std::to_string(generic[1].size()) +
              "/" + std::to_string(generic[2].size());
  return v;
}

// ---- 9 ------------------------------------------------------------------------

Verdict checkpoint_round_trip(const fs::path& work) {
  SyntheticSpec spec;
  spec.num_examples = 200;
  spec.seed = 31;
  const auto parts = split(synthesize(spec), SplitRatios{}, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.model.encoder.d_t = 16;
  cfg.model.encoder.text_heads = 2;
  cfg.model.mlf.heads = 2;
  cfg.model.mlf.fusion_layers = 1;
  cfg.model.mlf.image_layers = 1;
  TrainResult result = train(cfg, parts[0], &parts[1]);
  const Metrics before = evaluate(result.model, result.vocab, parts[2]).metrics;
  const fs::path path = work / "roundtrip.ckpt";
  save_checkpoint(path, result.model, result.vocab, result.config, result.rng_state);
  Checkpoint loaded = load_checkpoint(path);
  const Metrics after = evaluate(loaded.model, loaded.vocab, parts[2]).metrics;
  const bool same = before == after && to_json(before).dump() == to_json(after).dump();
  return {same, std::string("metrics ") + (same ? "bit-identical" : "differ") + " after reload (accuracy " +
                    fmt("%.4f", after.accuracy) + ")"};
}

}  // namespace

int main() {
  const fs::path work = testutil::temp_dir("acceptance");
  int failures = 0;
  auto report = [&](int n, const std::function<Verdict()>& check) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << std::endl;
  };
  report(1, loss_oracles);
  report(2, analytic_values);
  report(3, gradient_verification);
  report(4, structural_invariants);
  report(5, [&] { return determinism(work); });
  AblationOutcome ablation;
  report(6, [&] {
    ablation = synthetic_ablation();
    return ablation.verdict;
  });
  report(7, [&] { return attention_alignment(ablation.full_model ? &*ablation.full_model : nullptr); });
  report(8, split_fidelity);
  report(9, [&] { return checkpoint_round_trip(work); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
