#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "srdd/tensor.hpp"

namespace srdd {

// A named leaf tensor. Trainable parameters are optimized; non-trainable
// entries (batch-norm running stats) are checkpointed but never receive
// gradients.
struct Parameter {
  int id = -1;
  std::string name;
  Tensor value;
  bool trainable = true;
};

class ParamStore {
 public:
  Parameter& add(std::string name, Tensor init, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  size_t count() const { return params_.size(); }
  Parameter& at(size_t i) { return *params_[i]; }
  const Parameter& at(size_t i) const { return *params_[i]; }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, size_t> by_name_;
};

// Gradients keyed by parameter id, one entry per trainable parameter bound
// into the graph that produced them.
class GradientStore {
 public:
  void clear() { grads_.clear(); }
  bool has(const Parameter& p) const { return grads_.count(p.id) != 0; }
  const Tensor& grad(const Parameter& p) const;
  Tensor& slot(const Parameter& p, const std::vector<int>& shape);
  size_t count() const { return grads_.size(); }

 private:
  std::unordered_map<int, Tensor> grads_;
};

// Handle to a node inside a Graph.
struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Forward tape. Ops append nodes in topological order; backward() walks the
// tape in reverse accumulating gradients. Single-writer: one thread builds
// and differentiates a given Graph; distinct Graphs are independent.
class Graph {
 public:
  Value constant(Tensor t);
  Value param(Parameter& p);

  const Tensor& value(Value v) const { return nodes_[static_cast<size_t>(v.idx)].out; }
  size_t node_count() const { return nodes_.size(); }

  // Requires a scalar (single-element) loss node.
  void backward(Value loss, GradientStore& grads);

  struct Node {
    Tensor out;
    Tensor grad;  // allocated lazily during backward
    std::vector<int> inputs;
    std::function<void(Graph&, Node&)> backward_fn;
    Parameter* bound = nullptr;
    bool needs_grad = false;  // true iff a trainable parameter lies below
  };

  Node& node(int idx) { return nodes_[static_cast<size_t>(idx)]; }
  const Node& node(int idx) const { return nodes_[static_cast<size_t>(idx)]; }

  // Whether gradients must be propagated into node idx.
  bool needs(int idx) const { return nodes_[static_cast<size_t>(idx)].needs_grad; }

  // Accumulates g into the grad slot of node idx (allocating zeros first).
  void accumulate_grad(int idx, const Tensor& g);
  Tensor& grad_slot(int idx);

  Value make_node(Tensor out, std::vector<int> inputs,
                  std::function<void(Graph&, Node&)> backward_fn);

 private:
  std::vector<Node> nodes_;
};

// --- Operations ---------------------------------------------------------
// Activations are rank-3 [C,H,W] (one sample) or rank-4 [B,C,H,W]; an op
// returns the same rank it was given unless noted.

// Direct cross-correlation per group plus bias. weight: [C_out, C_in/groups,
// kH, kW]; bias: [C_out] or an invalid Value for none.
Value conv2d(Graph& g, Value input, Value weight, Value bias, int stride, int padding,
             int groups);

Value relu(Graph& g, Value x);
Value tanh_act(Graph& g, Value x);

// Channel softmax at every spatial position, max-subtracted for stability.
Value softmax_channels(Graph& g, Value x);

// Train mode normalizes by batch statistics (batch size >= 2) and updates the
// running stats in place; eval mode normalizes by the running stats.
Value batch_norm(Graph& g, Value x, Value gamma, Value beta, Tensor& running_mean,
                 Tensor& running_var, float momentum, float eps, bool train);

// Channel (c*r^2 + dy*r + dx) at (y, x) -> channel c at (r*y+dy, r*x+dx).
Value pixel_shuffle(Graph& g, Value x, int r);

// out(c, y, x) = in(c, y/s, x/s); gradient sums over each s x s block.
Value upsample_nearest(Graph& g, Value x, int s);

// 2x2 max pooling, stride 2; spatial dims must be even.
Value maxpool2x2(Graph& g, Value x);

Value add(Graph& g, Value a, Value b);
Value mul(Graph& g, Value a, Value b);
Value scale(Graph& g, Value x, float c);

// [.., N, H, W] -> [.., 1, H, W], channels summed in ascending order.
Value sum_channels(Graph& g, Value x);

Value concat_channels(Graph& g, const std::vector<Value>& xs);

// [N,1,1] -> [N,h,w] (or batched); tiles the per-channel scalar spatially.
Value repeat_spatial(Graph& g, Value x, int h, int w);

// [1,C,H,W] -> [B,C,H,W]; gradient sums over the batch.
Value broadcast_batch(Graph& g, Value x, int batch);

Value reshape(Graph& g, Value x, std::vector<int> new_shape);

// Spatial crop/pad on the trailing two dims.
Value crop2d(Graph& g, Value x, int top, int left, int out_h, int out_w);
Value pad2d(Graph& g, Value x, int top, int left, int bottom, int right);

// Copy of frame with patch written at (top, left).
Value replace_region(Graph& g, Value frame, Value patch, int top, int left);

// out channel k = in channel perm[k].
Value permute_channels(Graph& g, Value x, std::vector<int> perm);

// out(0, s*i+dy, s*j+dx) = sum_k M(k,i,j) * atoms(k,dy,dx), k ascending.
// M: [N,h,w] or [B,N,h,w]; atoms: [N,s,s]. Output keeps M's rank.
Value weighted_atom_sum(Graph& g, Value coeff, Value atoms, int s);

// Mean absolute error over all elements; scalar [1] output. The reduction
// accumulates in double, fixed order.
Value l1_loss(Graph& g, Value pred, Value gt);

// Sum of all elements; scalar [1] output, double accumulation.
Value sum_all(Graph& g, Value x);

// --- Adam ----------------------------------------------------------------

struct AdamState {
  Tensor m;
  Tensor v;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update; t is the 1-based step count.
void adam_step(Parameter& p, const Tensor& grad, AdamState& state, double lr, int64_t t,
               const AdamConfig& cfg = {});

}  // namespace srdd
