#include "clmlf/autograd.hpp"

#include <sstream>
#include <stdexcept>

namespace clmlf {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape s, T fill) : shape(std::move(s)), data(numel(shape), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != numel(shape)) {
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
}

template <typename T>
int Tensor<T>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw std::out_of_range("axis out of range for shape " + shape_string(shape));
  return shape[static_cast<std::size_t>(a)];
}

// ---------------------------------------------------------------------------

template <typename T>
ParamId ParameterSet<T>::add(std::string name, Shape shape, Init init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter<T> p;
  p.name = std::move(name);
  p.shape = std::move(shape);
  p.init = init;
  p.decay = init == Init::normal;
  p.value.assign(numel(p.shape), init == Init::ones ? T(1) : T(0));
  p.grad.assign(p.value.size(), T(0));
  params_.push_back(std::move(p));
  return ParamId{static_cast<int>(params_.size() - 1)};
}

template <typename T>
std::size_t ParameterSet<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::optional<ParamId> ParameterSet<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return ParamId{static_cast<int>(i)};
  }
  return std::nullopt;
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name) {
  const auto id = find(name);
  if (!id) throw std::out_of_range("no parameter named " + name);
  return (*this)[*id];
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
void ParameterSet<T>::initialize(Rng& rng, double stddev) {
  for (auto& p : params_) {
    switch (p.init) {
      case Init::normal:
        for (auto& v : p.value) v = static_cast<T>(rng.truncated_normal(stddev));
        break;
      case Init::zeros:
        std::fill(p.value.begin(), p.value.end(), T(0));
        break;
      case Init::ones:
        std::fill(p.value.begin(), p.value.end(), T(1));
        break;
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Graph<T>::Graph(ParameterSet<T>* params, bool grad_enabled)
    : params_(params), grad_enabled_(grad_enabled) {
  if (params_) param_nodes_.assign(params_->size(), -1);
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("invalid graph variable");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("invalid graph variable");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::param(ParamId id) {
  if (!params_) throw std::logic_error("graph has no parameter set bound");
  if (!id.valid() || static_cast<std::size_t>(id.index) >= params_->size()) {
    throw std::out_of_range("parameter id out of range");
  }
  if (param_nodes_.size() < params_->size()) param_nodes_.resize(params_->size(), -1);
  int& slot = param_nodes_[static_cast<std::size_t>(id.index)];
  if (slot >= 0) return Var{slot};
  const auto& p = (*params_)[id];
  Node n;
  n.value = Tensor<T>(p.shape, p.value);
  n.requires_grad = grad_enabled_;
  n.param_index = id.index;
  nodes_.push_back(std::move(n));
  slot = static_cast<int>(nodes_.size() - 1);
  return Var{slot};
}

template <typename T>
T Graph<T>::scalar(Var v) const {
  const auto& n = node(v);
  if (n.value.size() != 1) throw std::logic_error("scalar() on non-scalar " + shape_string(n.value.shape));
  return n.value.data[0];
}

template <typename T>
Var Graph<T>::emplace(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (Var p : parents) needs = needs || node(p).requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
std::vector<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward() on a graph built without gradients");
  Node& root = node(loss);
  if (root.value.size() != 1) throw std::logic_error("backward() target must be a scalar");
  if (!root.requires_grad) return;
  for (auto& n : nodes_) n.grad.clear();
  root.grad.assign(1, T(1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  if (!params_) return;
  for (const auto& n : nodes_) {
    if (n.param_index < 0 || n.grad.empty()) continue;
    auto& g = (*params_)[ParamId{n.param_index}].grad;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
  }
}

template struct Tensor<float>;
template struct Tensor<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace clmlf
