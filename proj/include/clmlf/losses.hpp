#pragma once

// Classification, label-based contrastive (LBCL) and data-based contrastive
// (DBCL) objectives, and their weighted total.

#include <string>
#include <vector>

#include "clmlf/autograd.hpp"
#include "clmlf/transformer.hpp"

namespace clmlf {

struct ClassifierHead {
  LinearParams linear;  // W_sc [d_t, K], b_sc [K]
  int num_classes = 0;
  /// logits = GELU(R W_sc + b_sc) when set, plain affine otherwise.
  bool apply_gelu = true;
};

template <typename T>
ClassifierHead register_classifier(ParameterSet<T>& params, int d_t, int num_classes, bool apply_gelu);

template <typename T>
Var classifier_logits(Graph<T>& g, const ClassifierHead& head, Var rep);

/// Mean cross-entropy of the head's logits. Labels outside [0, K) throw.
template <typename T>
Var classification_loss(Graph<T>& g, const ClassifierHead& head, Var rep, const std::vector<int>& labels);

enum class SelfPairs { exclude, include };

std::string to_string(SelfPairs mode);
SelfPairs self_pairs_from_string(const std::string& name);

struct ContrastiveConfig {
  double tau = 0.07;
  bool normalize = true;
  SelfPairs self_pairs = SelfPairs::exclude;
  double lambda_lbcl = 1.0;
  double lambda_dbcl = 1.0;

  void validate() const;
};

struct LbclResult {
  Var loss;
  int n_pos_pairs = 0;
};

/// Supervised contrastive loss over s = R^ R^T / tau. Positives of anchor i
/// are same-label rows (j != i in exclude mode, where self is also dropped
/// from the softmax denominator). Per-anchor term is the negated mean
/// log-probability of its positives; the loss averages anchors that have
/// any. With no positives anywhere the loss is a constant 0.
template <typename T>
LbclResult lbcl_loss(Graph<T>& g, Var rep, const std::vector<int>& labels, const ContrastiveConfig& cfg);

/// Cross-entropy of R^ R^_au^T / tau against targets 0..S-1.
template <typename T>
Var dbcl_loss(Graph<T>& g, Var rep, Var rep_aug, const ContrastiveConfig& cfg);

struct LossBundle {
  double sc = 0.0;
  double lbcl = 0.0;
  double dbcl = 0.0;
  double total = 0.0;
  int n_pos_pairs = 0;
};

/// total = sc + lambda_lbcl * lbcl + lambda_dbcl * dbcl. A non-finite
/// component throws std::runtime_error naming it.
LossBundle total_loss(double sc, double lbcl, double dbcl, const ContrastiveConfig& cfg, int n_pos_pairs = 0);

/// Graph-level weighted sum; invalid `lbcl` / `dbcl` vars are skipped.
template <typename T>
Var combine_losses(Graph<T>& g, Var sc, Var lbcl, Var dbcl, const ContrastiveConfig& cfg);

// ---- value-only conveniences ----------------------------------------------

double lbcl_value(const Tensor<double>& rep, const std::vector<int>& labels, const ContrastiveConfig& cfg,
                  int* n_pos_pairs = nullptr);
double dbcl_value(const Tensor<double>& rep, const Tensor<double>& rep_aug, const ContrastiveConfig& cfg);
/// Cross-entropy of raw logits [S, K].
double cross_entropy_value(const Tensor<double>& logits, const std::vector<int>& labels);

}  // namespace clmlf
