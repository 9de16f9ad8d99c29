#pragma once

#include <optional>
#include <string>

#include "srdd/autodiff.hpp"

namespace srdd {

// Kaiming-uniform fan-in init for conv weights; biases start at zero.
struct Conv2dLayer {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
  int stride = 1;
  int pad = 0;
  int groups = 1;

  static Conv2dLayer make(ParamStore& ps, Rng& rng, const std::string& name, int c_in, int c_out,
                          int k, int pad, int groups = 1, bool bias = true);
  // Variant with zero-filled weights (used where a layer must start as a
  // configured identity or no-op).
  static Conv2dLayer make_zero(ParamStore& ps, const std::string& name, int c_in, int c_out,
                               int k, int pad, int groups = 1, bool bias = true);

  Value forward(Graph& g, Value x) const;
};

struct BatchNorm2dLayer {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  float momentum = 0.1f;
  float eps = 1e-5f;

  static BatchNorm2dLayer make(ParamStore& ps, const std::string& name, int channels);

  Value forward(Graph& g, Value x, bool train) const;
};

// conv -> [batch norm] -> ReLU; the norm is dropped when the model's
// batch-norm ablation flag is off.
struct ConvBnRelu {
  Conv2dLayer conv;
  std::optional<BatchNorm2dLayer> bn;

  static ConvBnRelu make(ParamStore& ps, Rng& rng, const std::string& name, int c_in, int c_out,
                         int k, int pad, bool use_bn);

  Value forward(Graph& g, Value x, bool train) const;
};

}  // namespace srdd
