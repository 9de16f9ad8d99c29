#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "srdd/autodiff.hpp"
#include "srdd/tensor.hpp"

namespace srdd::testutil {

// Direct nested-loop cross-correlation, the reference semantics for conv2d.
// Per output element the accumulation runs bias-first then ascending
// (ci, ky, kx), which conv2d must reproduce bit for bit.
inline Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor* bias, int stride,
                            int pad, int groups) {
  const int H = x.dim(1), W = x.dim(2);
  const int c_out = w.dim(0), c_ig = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int c_og = c_out / groups;
  const int ho = (H + 2 * pad - kh) / stride + 1;
  const int wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out({c_out, ho, wo});
  for (int grp = 0; grp < groups; ++grp) {
    for (int oc = 0; oc < c_og; ++oc) {
      const int co = grp * c_og + oc;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          float acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0f;
          for (int ci = 0; ci < c_ig; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w.at(co, ci, ky, kx) * x.at(grp * c_ig + ci, iy, ix);
              }
            }
          }
          out.at(co, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

// Builds the op output (any shape) from leaf Values in graph g.
using BuildFn = std::function<Value(Graph&, const std::vector<Value>&)>;

struct FdReport {
  double max_rel_error = 0.0;
  size_t checked = 0;
};

// Central-finite-difference gradient check against the probe loss
// L = sum(mask * output). The analytic side runs through backward(); the
// numeric side reads the f32 op output but reduces in double, so the
// comparison is not polluted by a float32 loss readout. Errors are
// normalized per leaf by the largest gradient magnitude seen for that leaf.
inline FdReport fd_check(const BuildFn& build, std::vector<Tensor> leaves, double h = 1e-3) {
  // Probe the output shape and fix a mask bounded away from zero.
  Tensor mask;
  {
    Graph g;
    std::vector<Value> vs;
    for (const Tensor& t : leaves) vs.push_back(g.constant(t));
    const Tensor& out = g.value(build(g, vs));
    mask = Tensor(out.shape());
    Rng mrng(0xfd);
    for (size_t i = 0; i < mask.size(); ++i) {
      const double m = mrng.uniform(0.25, 1.0);
      mask[i] = static_cast<float>(mrng.uniform() < 0.5 ? -m : m);
    }
  }

  auto numeric_loss = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<Value> vs;
    for (const Tensor& t : xs) vs.push_back(g.constant(t));
    const Tensor& out = g.value(build(g, vs));
    double acc = 0.0;
    for (size_t i = 0; i < out.size(); ++i) acc += static_cast<double>(mask[i]) * out[i];
    return acc;
  };

  // Analytic gradients of the same probe loss.
  ParamStore ps;
  std::vector<Parameter*> params;
  for (size_t i = 0; i < leaves.size(); ++i) {
    params.push_back(&ps.add("leaf" + std::to_string(i), leaves[i]));
  }
  Graph g;
  std::vector<Value> vs;
  for (Parameter* p : params) vs.push_back(g.param(*p));
  Value loss = sum_all(g, mul(g, build(g, vs), g.constant(mask)));
  GradientStore grads;
  g.backward(loss, grads);

  FdReport rep;
  for (size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& an = grads.grad(*params[li]);
    std::vector<double> fd(leaves[li].size());
    for (size_t i = 0; i < leaves[li].size(); ++i) {
      const float orig = leaves[li][i];
      leaves[li][i] = static_cast<float>(orig + h);
      const double fp = numeric_loss(leaves);
      leaves[li][i] = static_cast<float>(orig - h);
      const double fm = numeric_loss(leaves);
      leaves[li][i] = orig;
      fd[i] = (fp - fm) / (2.0 * h);
      ++rep.checked;
    }
    double scale = 1e-6;
    for (size_t i = 0; i < fd.size(); ++i) {
      scale = std::max({scale, std::abs(fd[i]), std::abs(static_cast<double>(an[i]))});
    }
    for (size_t i = 0; i < fd.size(); ++i) {
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(fd[i] - an[i]) / scale);
    }
  }
  return rep;
}

// Same comparison for an op that is itself a scalar loss; the numeric side
// uses a caller-provided double-precision reference of the loss formula.
inline FdReport fd_check_scalar(const BuildFn& build,
                                const std::function<double(const std::vector<Tensor>&)>& ref,
                                std::vector<Tensor> leaves, double h = 1e-3) {
  ParamStore ps;
  std::vector<Parameter*> params;
  for (size_t i = 0; i < leaves.size(); ++i) {
    params.push_back(&ps.add("leaf" + std::to_string(i), leaves[i]));
  }
  Graph g;
  std::vector<Value> vs;
  for (Parameter* p : params) vs.push_back(g.param(*p));
  Value loss = build(g, vs);
  GradientStore grads;
  g.backward(loss, grads);

  FdReport rep;
  for (size_t li = 0; li < leaves.size(); ++li) {
    const Tensor& an = grads.grad(*params[li]);
    std::vector<double> fd(leaves[li].size());
    for (size_t i = 0; i < leaves[li].size(); ++i) {
      const float orig = leaves[li][i];
      leaves[li][i] = static_cast<float>(orig + h);
      const double fp = ref(leaves);
      leaves[li][i] = static_cast<float>(orig - h);
      const double fm = ref(leaves);
      leaves[li][i] = orig;
      fd[i] = (fp - fm) / (2.0 * h);
      ++rep.checked;
    }
    double scale = 1e-6;
    for (size_t i = 0; i < fd.size(); ++i) {
      scale = std::max({scale, std::abs(fd[i]), std::abs(static_cast<double>(an[i]))});
    }
    for (size_t i = 0; i < fd.size(); ++i) {
      rep.max_rel_error = std::max(rep.max_rel_error, std::abs(fd[i] - an[i]) / scale);
    }
  }
  return rep;
}

inline Tensor random_tensor(Rng& rng, std::vector<int> shape, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t(std::move(shape));
  rng.fill_uniform(t, lo, hi);
  return t;
}

// True when fn throws std::invalid_argument (or a subclass of
// std::runtime_error) whose message contains the given fragment.
template <typename Fn>
bool throws_with(Fn&& fn, const std::string& fragment) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(fragment) != std::string::npos;
  }
  return false;
}

}  // namespace srdd::testutil
