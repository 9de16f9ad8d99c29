#include <cmath>
#include <stdexcept>

#include "srdd/autodiff.hpp"

namespace srdd {

Parameter& ParamStore::add(std::string name, Tensor init, bool trainable) {
  if (by_name_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->id = static_cast<int>(params_.size());
  p->name = std::move(name);
  p->value = std::move(init);
  p->trainable = trainable;
  by_name_[p->name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

const Tensor& GradientStore::grad(const Parameter& p) const {
  auto it = grads_.find(p.id);
  if (it == grads_.end()) {
    throw std::out_of_range("no gradient recorded for parameter " + p.name);
  }
  return it->second;
}

Tensor& GradientStore::slot(const Parameter& p, const std::vector<int>& shape) {
  auto it = grads_.find(p.id);
  if (it == grads_.end()) {
    it = grads_.emplace(p.id, Tensor(shape)).first;
  }
  return it->second;
}

Value Graph::constant(Tensor t) {
  return make_node(std::move(t), {}, nullptr);
}

Value Graph::param(Parameter& p) {
  Value v = make_node(p.value, {}, nullptr);
  nodes_.back().bound = &p;
  nodes_.back().needs_grad = p.trainable;
  return v;
}

Value Graph::make_node(Tensor out, std::vector<int> inputs,
                       std::function<void(Graph&, Node&)> backward_fn) {
  Node n;
  n.out = std::move(out);
  for (int i : inputs) {
    if (nodes_[static_cast<size_t>(i)].needs_grad) {
      n.needs_grad = true;
      break;
    }
  }
  n.inputs = std::move(inputs);
  n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_slot(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (n.grad.empty()) n.grad = Tensor(n.out.shape());
  return n.grad;
}

void Graph::accumulate_grad(int idx, const Tensor& g) {
  Tensor& slot = grad_slot(idx);
  for (size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

void Graph::backward(Value loss, GradientStore& grads) {
  if (!loss.valid()) throw std::invalid_argument("backward: invalid loss node");
  Node& ln = nodes_[static_cast<size_t>(loss.idx)];
  if (ln.out.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                ln.out.shape_str());
  }
  grad_slot(loss.idx)[0] = 1.0f;

  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty() || !n.needs_grad) continue;  // not on a trainable path
    if (n.backward_fn) n.backward_fn(*this, n);
  }

  // Every trainable parameter bound into the graph gets exactly one entry;
  // disconnected ones get zeros.
  for (Node& n : nodes_) {
    if (n.bound == nullptr || !n.bound->trainable) continue;
    Tensor& slot = grads.slot(*n.bound, n.out.shape());
    if (!n.grad.empty()) {
      for (size_t i = 0; i < slot.size(); ++i) slot[i] += n.grad[i];
    }
  }
}

void adam_step(Parameter& p, const Tensor& grad, AdamState& state, double lr, int64_t t,
               const AdamConfig& cfg) {
  if (state.m.empty()) state.m = Tensor(p.value.shape());
  if (state.v.empty()) state.v = Tensor(p.value.shape());
  if (!state.m.same_shape(p.value) || !grad.same_shape(p.value)) {
    throw std::invalid_argument("adam_step: state/gradient shape mismatch for " + p.name);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < p.value.size(); ++i) {
    double gi = grad[i];
    double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
    double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    double mhat = m / bc1;
    double vhat = v / bc2;
    p.value[i] = static_cast<float>(p.value[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

}  // namespace srdd
