#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph records every operation of one forward pass; backward() walks the
// record in reverse creation order. Parameters live outside the graph in a
// ParameterSet so that a model survives across steps while graphs are
// rebuilt per batch. Everything is templated on the scalar so the same model
// code runs in float (training) and double (gradient verification).

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clmlf/rng.hpp"

namespace clmlf {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0));
  Tensor(Shape s, std::vector<T> values);

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  /// Extent of `axis`; negative axes count from the back.
  int dim(int axis) const;

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

enum class Init { normal, zeros, ones };

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  Init init = Init::normal;
  /// Whether AdamW applies decoupled weight decay to this block.
  bool decay = true;
  std::vector<T> value;
  std::vector<T> grad;
};

struct ParamId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

template <typename T>
class ParameterSet {
 public:
  ParamId add(std::string name, Shape shape, Init init);

  Parameter<T>& operator[](ParamId id) { return params_.at(static_cast<std::size_t>(id.index)); }
  const Parameter<T>& operator[](ParamId id) const { return params_.at(static_cast<std::size_t>(id.index)); }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  std::optional<ParamId> find(const std::string& name) const;
  Parameter<T>& at(const std::string& name);

  void zero_grad();
  /// Truncated normal (±2σ) for Init::normal blocks, constants otherwise.
  void initialize(Rng& rng, double stddev = 0.02);

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) {
      const ParamId id = out.add(p.name, p.shape, p.init);
      auto& q = out[id];
      q.decay = p.decay;
      q.value.assign(p.value.begin(), p.value.end());
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  /// `params` may be null for graphs that only combine constants.
  explicit Graph(ParameterSet<T>* params = nullptr, bool grad_enabled = true);

  Var constant(Tensor<T> value);
  /// Leaf bound to a parameter block; repeated calls return the same node.
  Var param(ParamId id);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape; }
  T scalar(Var v) const;

  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  /// Gradient of the last backward() target with respect to `v`; empty if
  /// no gradient reached it.
  const std::vector<T>& grad(Var v) const { return node(v).grad; }

  /// Accumulates d(loss)/d(param) into the bound ParameterSet's grad buffers.
  void backward(Var loss);

  // ---- op authoring ------------------------------------------------------
  /// Registers an op result. The closure runs during backward() only if the
  /// result requires grad; it reads `out_grad(self)` and accumulates into
  /// `grad_buffer(parent)` for parents that require grad.
  Var emplace(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn);
  const std::vector<T>& out_grad(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }
  std::vector<T>& grad_buffer(Var v);
  const Tensor<T>& value_of(int self) const { return nodes_[static_cast<std::size_t>(self)].value; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
    int param_index = -1;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::deque<Node> nodes_;
  std::vector<int> param_nodes_;
  ParameterSet<T>* params_;
  bool grad_enabled_;
};

}  // namespace clmlf
