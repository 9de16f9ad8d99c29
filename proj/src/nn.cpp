#include "srdd/nn.hpp"

#include <cmath>

namespace srdd {

Conv2dLayer Conv2dLayer::make(ParamStore& ps, Rng& rng, const std::string& name, int c_in,
                              int c_out, int k, int pad, int groups, bool bias) {
  Conv2dLayer l;
  l.pad = pad;
  l.groups = groups;
  Tensor w({c_out, c_in / groups, k, k});
  const double fan_in = static_cast<double>(c_in / groups) * k * k;
  const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
  rng.fill_uniform(w, -bound, bound);
  l.w = &ps.add(name + ".weight", std::move(w));
  if (bias) l.b = &ps.add(name + ".bias", Tensor({c_out}));
  return l;
}

Conv2dLayer Conv2dLayer::make_zero(ParamStore& ps, const std::string& name, int c_in, int c_out,
                                   int k, int pad, int groups, bool bias) {
  Conv2dLayer l;
  l.pad = pad;
  l.groups = groups;
  l.w = &ps.add(name + ".weight", Tensor({c_out, c_in / groups, k, k}));
  if (bias) l.b = &ps.add(name + ".bias", Tensor({c_out}));
  return l;
}

Value Conv2dLayer::forward(Graph& g, Value x) const {
  Value wv = g.param(*w);
  Value bv = b ? g.param(*b) : Value{};
  return conv2d(g, x, wv, bv, stride, pad, groups);
}

BatchNorm2dLayer BatchNorm2dLayer::make(ParamStore& ps, const std::string& name, int channels) {
  BatchNorm2dLayer l;
  l.gamma = &ps.add(name + ".gamma", Tensor::full({channels}, 1.0f));
  l.beta = &ps.add(name + ".beta", Tensor({channels}));
  l.running_mean = &ps.add(name + ".running_mean", Tensor({channels}), /*trainable=*/false);
  l.running_var = &ps.add(name + ".running_var", Tensor::full({channels}, 1.0f),
                          /*trainable=*/false);
  return l;
}

Value BatchNorm2dLayer::forward(Graph& g, Value x, bool train) const {
  return batch_norm(g, x, g.param(*gamma), g.param(*beta), running_mean->value,
                    running_var->value, momentum, eps, train);
}

ConvBnRelu ConvBnRelu::make(ParamStore& ps, Rng& rng, const std::string& name, int c_in,
                            int c_out, int k, int pad, bool use_bn) {
  ConvBnRelu l;
  l.conv = Conv2dLayer::make(ps, rng, name, c_in, c_out, k, pad);
  if (use_bn) l.bn = BatchNorm2dLayer::make(ps, name + ".bn", c_out);
  return l;
}

Value ConvBnRelu::forward(Graph& g, Value x, bool train) const {
  Value v = conv.forward(g, x);
  if (bn) v = bn->forward(g, v, train);
  return relu(g, v);
}

}  // namespace srdd
