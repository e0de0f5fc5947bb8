#include "clmlf/model.hpp"

#include <stdexcept>
#include <string>

namespace clmlf {

void ModelConfig::validate() const {
  encoder.validate();
  mlf.validate(encoder.d_t);
  if (num_classes < 2) throw std::invalid_argument("model config: num_classes must be at least 2");
}

int ModelConfig::image_tokens() const {
  if (!mlf.use_image) return 0;
  const int p = encoder.feature_grid();
  return p * p;
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const EncoderConfig& e = config_.encoder;
  const MLFConfig& m = config_.mlf;
  layout_.text = register_text_encoder(params_, e);
  if (m.use_image) {
    layout_.image = register_image_encoder(params_, e);
    layout_.projection = register_image_projection(params_, e.d_i, e.d_t, config_.image_tokens());
    layout_.image_layers = register_stack(params_, "fusion.image_layer", m.image_layers, e.d_t, m.heads, m.ff);
  }
  layout_.fusion_layers = register_stack(params_, "fusion.joint_layer", m.fusion_layers, e.d_t, m.heads, m.ff);
  layout_.pool = register_pool(params_, e.d_t, m.pool_width(e.d_t));
  layout_.head = register_classifier(params_, e.d_t, config_.num_classes, config_.gelu_logits);
}

namespace {

template <typename T>
Var adapter_constant(Graph<T>& g, const Tensor<double>& t) {
  return g.constant(t.template cast<T>());
}

}  // namespace

template <typename T>
ForwardResult<T> mlf_forward(Graph<T>& g, const Model<T>& model, const Batch& batch, const ForwardContext& ctx,
                             const FeatureAdapters* adapters) {
  const ModelConfig& cfg = model.config();
  const ModelLayout& lay = model.layout();
  if (batch.size <= 0) throw std::invalid_argument("mlf_forward: empty batch");
  if (batch.seq_len > cfg.encoder.max_len) {
    throw std::invalid_argument("mlf_forward: sequence length " + std::to_string(batch.seq_len) +
                                " exceeds max_len " + std::to_string(cfg.encoder.max_len));
  }
  ForwardContext c = ctx;
  c.dropout = cfg.mlf.dropout;

  ForwardResult<T> out;
  if (adapters && adapters->text) {
    if (adapters->text->width() != cfg.encoder.d_t) {
      throw std::invalid_argument("text adapter width " + std::to_string(adapters->text->width()) +
                                  " does not match d_t " + std::to_string(cfg.encoder.d_t));
    }
    out.text_hidden = adapter_constant(g, adapters->text->encode(batch));
    const Shape expect{batch.size, batch.seq_len, cfg.encoder.d_t};
    if (g.shape(out.text_hidden) != expect) {
      throw std::invalid_argument("text adapter produced " + shape_string(g.shape(out.text_hidden)) +
                                  ", expected " + shape_string(expect));
    }
  } else {
    out.text_hidden = encode_text(g, lay.text, batch, c);
  }

  const int n_i = cfg.image_tokens();
  if (cfg.mlf.use_image) {
    if (adapters && adapters->image) {
      const FeatureMapShape fs = adapters->image->shape(batch.height, batch.width);
      const int p = cfg.encoder.feature_grid();
      if (fs.grid != p || fs.channels != cfg.encoder.d_i) {
        throw std::invalid_argument("image adapter emits " + std::to_string(fs.grid) + "x" + std::to_string(fs.grid) +
                                    "x" + std::to_string(fs.channels) + ", model expects " + std::to_string(p) + "x" +
                                    std::to_string(p) + "x" + std::to_string(cfg.encoder.d_i));
      }
      out.image_map = adapter_constant(g, adapters->image->encode(batch));
    } else {
      out.image_map = encode_image(g, lay.image, batch);
    }
    out.image_tokens = project_image(g, lay.projection, out.image_map);
    out.image_tokens = image_transform(g, lay.image_layers, out.image_tokens, c,
                                       ctx.record_attention ? &out.image_attention : nullptr);
  }

  out.layout = fused_layout(batch.text_mask, batch.size, batch.seq_len, n_i);
  out.fused = fuse(g, lay.fusion_layers, out.text_hidden, out.image_tokens, out.layout, c,
                   ctx.record_attention ? &out.fusion_attention : nullptr);
  const PoolResult pooled = attention_pool(g, lay.pool, out.fused, out.layout.mask);
  out.pool_weights = pooled.weights;
  out.representation = pooled.representation;
  return out;
}

template <typename T>
Tensor<T> predict_logits(Model<T>& model, const Batch& batch, const FeatureAdapters* adapters) {
  Graph<T> g(&model.params(), false);
  ForwardContext ctx;
  const ForwardResult<T> fr = mlf_forward(g, model, batch, ctx, adapters);
  return g.value(classifier_logits(g, model.layout().head, fr.representation));
}

template class Model<float>;
template class Model<double>;

#define CLMLF_INSTANTIATE(T)                                                                           \
  template ForwardResult<T> mlf_forward<T>(Graph<T>&, const Model<T>&, const Batch&, const ForwardContext&, \
                                           const FeatureAdapters*);                                    \
  template Tensor<T> predict_logits<T>(Model<T>&, const Batch&, const FeatureAdapters*);

CLMLF_INSTANTIATE(float)
CLMLF_INSTANTIATE(double)

#undef CLMLF_INSTANTIATE

}  // namespace clmlf
