#include "clmlf/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "clmlf/ops.hpp"

namespace clmlf {

template <typename T>
ClassifierHead register_classifier(ParameterSet<T>& params, int d_t, int num_classes, bool apply_gelu) {
  if (num_classes < 2) throw std::invalid_argument("classifier needs at least 2 classes");
  ClassifierHead head;
  head.linear = register_linear(params, "head.classifier", d_t, num_classes);
  head.num_classes = num_classes;
  head.apply_gelu = apply_gelu;
  return head;
}

template <typename T>
Var classifier_logits(Graph<T>& g, const ClassifierHead& head, Var rep) {
  const Var z = apply_linear(g, head.linear, rep);
  return head.apply_gelu ? ops::gelu(g, z) : z;
}

template <typename T>
Var classification_loss(Graph<T>& g, const ClassifierHead& head, Var rep, const std::vector<int>& labels) {
  return ops::cross_entropy(g, classifier_logits(g, head, rep), labels);
}

std::string to_string(SelfPairs mode) { return mode == SelfPairs::exclude ? "exclude" : "include"; }

SelfPairs self_pairs_from_string(const std::string& name) {
  if (name == "exclude") return SelfPairs::exclude;
  if (name == "include") return SelfPairs::include;
  throw std::invalid_argument("self_pairs must be \"exclude\" or \"include\", got \"" + name + "\"");
}

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("contrastive config: tau must be positive");
  if (!(lambda_lbcl >= 0.0) || !(lambda_dbcl >= 0.0)) {
    throw std::invalid_argument("contrastive config: lambdas must be non-negative");
  }
}

namespace {

template <typename T>
Var similarity(Graph<T>& g, Var a, Var b, const ContrastiveConfig& cfg) {
  if (cfg.normalize) {
    const bool same = a.id == b.id;
    a = ops::l2_normalize_rows(g, a);
    b = same ? a : ops::l2_normalize_rows(g, b);
  }
  return ops::scale(g, ops::matmul_nt(g, a, b), static_cast<T>(1.0 / cfg.tau));
}

}  // namespace

template <typename T>
LbclResult lbcl_loss(Graph<T>& g, Var rep, const std::vector<int>& labels, const ContrastiveConfig& cfg) {
  cfg.validate();
  const Shape& s = g.shape(rep);
  if (s.size() != 2) throw std::invalid_argument("lbcl_loss: expected [S, d], got " + shape_string(s));
  const int S = s[0];
  if (static_cast<int>(labels.size()) != S) throw std::invalid_argument("lbcl_loss: label count mismatch");
  const bool exclude = cfg.self_pairs == SelfPairs::exclude;

  std::vector<std::vector<int>> positives(static_cast<std::size_t>(S));
  int anchors = 0;
  LbclResult out;
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      if (exclude && i == j) continue;
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        positives[static_cast<std::size_t>(i)].push_back(j);
      }
    }
    if (!positives[static_cast<std::size_t>(i)].empty()) ++anchors;
    out.n_pos_pairs += static_cast<int>(positives[static_cast<std::size_t>(i)].size());
  }
  if (anchors == 0) {
    out.loss = g.constant(Tensor<T>(Shape{}, T(0)));
    return out;
  }

  ops::Mask mask(static_cast<std::size_t>(S) * S, 1);
  if (exclude)
    for (int i = 0; i < S; ++i) mask[static_cast<std::size_t>(i) * S + i] = 0;

  const Var logits = similarity(g, rep, rep, cfg);
  const Var log_probs = ops::masked_log_softmax(g, logits, mask);
  std::vector<ops::GatherEntry> entries;
  for (int i = 0; i < S; ++i) {
    const auto& p = positives[static_cast<std::size_t>(i)];
    for (int j : p) {
      entries.push_back({i, j, -1.0 / (static_cast<double>(p.size()) * anchors)});
    }
  }
  out.loss = ops::weighted_gather(g, log_probs, entries);
  return out;
}

template <typename T>
Var dbcl_loss(Graph<T>& g, Var rep, Var rep_aug, const ContrastiveConfig& cfg) {
  cfg.validate();
  const Shape& a = g.shape(rep);
  const Shape& b = g.shape(rep_aug);
  if (a.size() != 2 || a != b) {
    throw std::invalid_argument("dbcl_loss: shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  std::vector<int> targets(static_cast<std::size_t>(a[0]));
  for (int i = 0; i < a[0]; ++i) targets[static_cast<std::size_t>(i)] = i;
  return ops::cross_entropy(g, similarity(g, rep, rep_aug, cfg), targets);
}

LossBundle total_loss(double sc, double lbcl, double dbcl, const ContrastiveConfig& cfg, int n_pos_pairs) {
  const std::pair<const char*, double> parts[] = {{"L_sc", sc}, {"L_lbcl", lbcl}, {"L_dbcl", dbcl}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw std::runtime_error(std::string("non-finite loss component ") + name + " = " + std::to_string(value));
    }
  }
  LossBundle b;
  b.sc = sc;
  b.lbcl = lbcl;
  b.dbcl = dbcl;
  b.total = sc + cfg.lambda_lbcl * lbcl + cfg.lambda_dbcl * dbcl;
  b.n_pos_pairs = n_pos_pairs;
  return b;
}

template <typename T>
Var combine_losses(Graph<T>& g, Var sc, Var lbcl, Var dbcl, const ContrastiveConfig& cfg) {
  std::vector<std::pair<Var, T>> terms{{sc, T(1)}};
  if (lbcl.valid()) terms.emplace_back(lbcl, static_cast<T>(cfg.lambda_lbcl));
  if (dbcl.valid()) terms.emplace_back(dbcl, static_cast<T>(cfg.lambda_dbcl));
  return ops::weighted_sum(g, terms);
}

double lbcl_value(const Tensor<double>& rep, const std::vector<int>& labels, const ContrastiveConfig& cfg,
                  int* n_pos_pairs) {
  Graph<double> g(nullptr, false);
  const LbclResult r = lbcl_loss(g, g.constant(rep), labels, cfg);
  if (n_pos_pairs) *n_pos_pairs = r.n_pos_pairs;
  return g.scalar(r.loss);
}

double dbcl_value(const Tensor<double>& rep, const Tensor<double>& rep_aug, const ContrastiveConfig& cfg) {
  Graph<double> g(nullptr, false);
  return g.scalar(dbcl_loss(g, g.constant(rep), g.constant(rep_aug), cfg));
}

double cross_entropy_value(const Tensor<double>& logits, const std::vector<int>& labels) {
  Graph<double> g(nullptr, false);
  return g.scalar(ops::cross_entropy(g, g.constant(logits), labels));
}

#define CLMLF_INSTANTIATE(T)                                                                             \
  template ClassifierHead register_classifier<T>(ParameterSet<T>&, int, int, bool);                      \
  template Var classifier_logits<T>(Graph<T>&, const ClassifierHead&, Var);                              \
  template Var classification_loss<T>(Graph<T>&, const ClassifierHead&, Var, const std::vector<int>&);   \
  template LbclResult lbcl_loss<T>(Graph<T>&, Var, const std::vector<int>&, const ContrastiveConfig&);   \
  template Var dbcl_loss<T>(Graph<T>&, Var, Var, const ContrastiveConfig&);                              \
  template Var combine_losses<T>(Graph<T>&, Var, Var, Var, const ContrastiveConfig&);

CLMLF_INSTANTIATE(float)
CLMLF_INSTANTIATE(double)

#undef CLMLF_INSTANTIATE

}  // namespace clmlf
