#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "clmlf/training.hpp"

namespace clmlf {

namespace {

constexpr std::uint64_t kEvalSelectionSeed = 0x6576616cULL;

std::vector<const Example*> gather(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                                   std::size_t end) {
  std::vector<const Example*> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(&ds.examples[order[i]]);
  return out;
}

std::vector<std::vector<float>> snapshot(const ParameterSet<float>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params.all()) out.push_back(p.value);
  return out;
}

void restore(ParameterSet<float>& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) params.all()[i].value = values[i];
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
  return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(stream_seed(seed, Stream::order), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  return order;
}

Evaluation evaluate(Model<float>& model, const Vocab& vocab, const Dataset& dataset, int batch_size,
                    const FeatureAdapters* adapters) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be positive");
  const ModelConfig& mc = model.config();
  CollateParams cp;
  cp.max_len = mc.encoder.max_len;
  cp.image_height = mc.encoder.image_size;
  cp.image_width = mc.encoder.image_size;
  Rng selection(kEvalSelectionSeed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Evaluation ev;
  std::vector<int> gold;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    const Batch batch = collate(gather(dataset, order, begin, end), vocab, cp, selection);
    const Tensor<float> logits = predict_logits(model, batch, adapters);
    const int K = logits.shape[1];
    for (int s = 0; s < batch.size; ++s) {
      const float* row = logits.data.data() + static_cast<std::size_t>(s) * K;
      ev.predictions.push_back(static_cast<int>(std::max_element(row, row + K) - row));
      gold.push_back(batch.labels[static_cast<std::size_t>(s)]);
    }
  }
  ev.metrics = compute_metrics(ev.predictions, gold, mc.num_classes);
  return ev;
}

TrainResult train(TrainConfig config, const Dataset& train_set, const Dataset* val_set, const StepCallback& on_step) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  train_set.validate();
  if (val_set && val_set->empty()) val_set = nullptr;

  Vocab vocab = Vocab::build(train_set);
  config.model.encoder.vocab_size = vocab.size();
  config.model.num_classes = train_set.num_classes;
  config.validate();

  TrainResult result{Model<float>(config.model), vocab, config, {}, 0, {}};
  Model<float>& model = result.model;
  Rng init_rng(stream_seed(config.seed, Stream::init));
  model.initialize(init_rng);
  Rng dropout_rng(stream_seed(config.seed, Stream::dropout));
  Rng selection_rng(stream_seed(config.seed, Stream::selection));
  Rng augment_rng(stream_seed(config.seed, Stream::augment));

  const TextAugmenter text_aug = config.augmentation.make_text_augmenter();
  const ImageAugmentPolicy& policy = config.augmentation.image;
  const ContrastiveConfig& cc = config.contrastive;
  const CollateParams cp = config.collate();
  AdamW<float> optimizer(config.adamw());

  std::vector<std::vector<float>> best_values;
  double best_accuracy = -1.0;
  long step = 0;
  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const std::vector<std::size_t> order = epoch_order(n, config.seed, epoch);
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      const auto examples = gather(train_set, order, begin, end);
      const Rng selection_before = selection_rng;
      const Batch clean = collate(examples, vocab, cp, selection_rng);

      model.params().zero_grad();
      Graph<float> g(&model.params(), true);
      ForwardContext ctx;
      ctx.training = true;
      ctx.rng = &dropout_rng;
      const ForwardResult<float> fr = mlf_forward(g, model, clean, ctx);
      const Var sc = classification_loss(g, model.layout().head, fr.representation, clean.labels);

      Var lbcl, dbcl;
      int n_pos = 0;
      const bool contrastive = clean.size >= 2;
      if (contrastive && cc.lambda_lbcl > 0.0) {
        const LbclResult r = lbcl_loss(g, fr.representation, clean.labels, cc);
        lbcl = r.loss;
        n_pos = r.n_pos_pairs;
      }
      if (contrastive && cc.lambda_dbcl > 0.0) {
        const Batch augmented = augment_batch(examples, text_aug, policy, vocab, cp, selection_before, augment_rng,
                                              &rec.augment_warnings);
        const ForwardResult<float> fa = mlf_forward(g, model, augmented, ctx);
        dbcl = dbcl_loss(g, fr.representation, fa.representation, cc);
      }

      ++step;
      LossBundle bundle;
      try {
        bundle = total_loss(g.scalar(sc), lbcl.valid() ? g.scalar(lbcl) : 0.0, dbcl.valid() ? g.scalar(dbcl) : 0.0,
                            cc, n_pos);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(step) + ": " + e.what());
      }
      g.backward(combine_losses(g, sc, lbcl, dbcl, cc));
      optimizer.step(model.params());

      const double w = static_cast<double>(clean.size);
      rec.loss_sc += bundle.sc * w;
      rec.loss_lbcl += bundle.lbcl * w;
      rec.loss_dbcl += bundle.dbcl * w;
      rec.loss_total += bundle.total * w;
      rec.n_pos_pairs += bundle.n_pos_pairs;
      if (on_step) on_step(StepInfo{epoch, step, bundle}, model.params());
    }
    const double total_w = static_cast<double>(n);
    rec.loss_sc /= total_w;
    rec.loss_lbcl /= total_w;
    rec.loss_dbcl /= total_w;
    rec.loss_total /= total_w;

    if (val_set) {
      rec.val = evaluate(model, vocab, *val_set, config.eval_batch_size).metrics;
      if (rec.val->accuracy > best_accuracy) {
        best_accuracy = rec.val->accuracy;
        best_values = snapshot(model.params());
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(std::move(rec));
  }

  if (!best_values.empty()) {
    restore(model.params(), best_values);
  } else {
    result.best_epoch = config.epochs;
  }
  result.config = config;
  result.rng_state = nlohmann::json{{"dropout", dropout_rng.state()},
                                    {"selection", selection_rng.state()},
                                    {"augment", augment_rng.state()}}
                         .dump();
  return result;
}

}  // namespace clmlf
