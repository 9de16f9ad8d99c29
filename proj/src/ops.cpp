#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "srdd/autodiff.hpp"

namespace srdd {

namespace {

// Activation dims; rank-3 tensors are a single unbatched sample.
struct Act {
  int b, c, h, w;
  bool batched;
};

Act act_dims(const Tensor& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw std::invalid_argument(std::string(op) + ": expected rank-3 or rank-4 activation, got " +
                              t.shape_str());
}

std::vector<int> act_shape(const Act& a, int c, int h, int w) {
  if (a.batched) return {a.b, c, h, w};
  return {c, h, w};
}

size_t plane_size(const Act& a) { return static_cast<size_t>(a.h) * a.w; }

// C[i][j] += sum_k A[i][k] * B[k][j]; per-element accumulation runs in
// ascending k, matching a direct nested-loop reduction bit for bit.
void matmul_acc(const float* A, const float* B, float* C, int I, int K, int J) {
  for (int i = 0; i < I; ++i) {
    const float* arow = A + static_cast<size_t>(i) * K;
    float* crow = C + static_cast<size_t>(i) * J;
    for (int k = 0; k < K; ++k) {
      const float a = arow[k];
      const float* brow = B + static_cast<size_t>(k) * J;
      for (int j = 0; j < J; ++j) crow[j] += a * brow[j];
    }
  }
}

// Dot product with a fixed 8-lane partial-sum pattern: deterministic and
// vectorizable. Used only on gradient paths, which are not order-pinned.
float dot_fixed(const float* a, const float* b, int n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  const int n8 = n & ~7;
  for (int j = 0; j < n8; j += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  }
  float tail = 0.0f;
  for (int j = n8; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) +
         tail;
}

// col[(c*kH+ky)*kW+kx][oy*Wo+ox] = padded input at the tap position.
void im2col(const float* src, int C, int H, int W, int kH, int kW, int stride, int pad, int Ho,
            int Wo, float* col) {
  const size_t P = static_cast<size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kH; ++ky) {
      for (int kx = 0; kx < kW; ++kx) {
        float* dst = col + ((static_cast<size_t>(c) * kH + ky) * kW + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* drow = dst + static_cast<size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::memset(drow, 0, sizeof(float) * static_cast<size_t>(Wo));
            continue;
          }
          const float* srow = src + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add of a column buffer back into the (unpadded) input gradient.
void col2im_acc(const float* col, int C, int H, int W, int kH, int kW, int stride, int pad,
                int Ho, int Wo, float* dst) {
  const size_t P = static_cast<size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kH; ++ky) {
      for (int kx = 0; kx < kW; ++kx) {
        const float* srcrow = col + ((static_cast<size_t>(c) * kH + ky) * kW + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          float* drow = dst + (static_cast<size_t>(c) * H + iy) * W;
          const float* s = srcrow + static_cast<size_t>(oy) * Wo;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) drow[ix] += s[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Value conv2d(Graph& g, Value input, Value weight, Value bias, int stride, int padding,
             int groups) {
  const Tensor& x = g.value(input);
  const Tensor& w = g.value(weight);
  const Act a = act_dims(x, "conv2d");
  check_shape(w.rank() == 4, "conv2d: weight must be rank-4, got " + w.shape_str());
  check_shape(stride >= 1 && padding >= 0 && groups >= 1, "conv2d: bad stride/padding/groups");

  const int c_out = w.dim(0);
  const int kh = w.dim(2);
  const int kw = w.dim(3);
  check_shape(a.c % groups == 0, "conv2d: input channels " + std::to_string(a.c) +
                                     " not divisible by groups " + std::to_string(groups));
  check_shape(c_out % groups == 0, "conv2d: output channels " + std::to_string(c_out) +
                                       " not divisible by groups " + std::to_string(groups));
  const int c_ig = a.c / groups;
  const int c_og = c_out / groups;
  check_shape(w.dim(1) == c_ig, "conv2d: weight dim 1 is " + std::to_string(w.dim(1)) +
                                    ", expected in_channels/groups = " + std::to_string(c_ig));
  check_shape(a.h + 2 * padding >= kh, "conv2d: height " + std::to_string(a.h) +
                                           " too small for kernel " + std::to_string(kh));
  check_shape(a.w + 2 * padding >= kw, "conv2d: width " + std::to_string(a.w) +
                                           " too small for kernel " + std::to_string(kw));

  const bool has_bias = bias.valid();
  if (has_bias) {
    const Tensor& bt = g.value(bias);
    check_shape(bt.rank() == 1 && bt.dim(0) == c_out,
                "conv2d: bias must be [" + std::to_string(c_out) + "], got " + bt.shape_str());
  }

  const int ho = (a.h + 2 * padding - kh) / stride + 1;
  const int wo = (a.w + 2 * padding - kw) / stride + 1;
  const size_t P = static_cast<size_t>(ho) * wo;
  const int K = c_ig * kh * kw;

  Tensor out(act_shape(a, c_out, ho, wo));
  std::vector<float> col(static_cast<size_t>(K) * P);
  const float* bptr = has_bias ? g.value(bias).data() : nullptr;

  for (int b = 0; b < a.b; ++b) {
    for (int grp = 0; grp < groups; ++grp) {
      const float* src =
          x.data() + (static_cast<size_t>(b) * a.c + static_cast<size_t>(grp) * c_ig) *
                         plane_size(a);
      im2col(src, c_ig, a.h, a.w, kh, kw, stride, padding, ho, wo, col.data());
      float* dst = out.data() + (static_cast<size_t>(b) * c_out + static_cast<size_t>(grp) * c_og) * P;
      for (int i = 0; i < c_og; ++i) {
        const float bv = has_bias ? bptr[grp * c_og + i] : 0.0f;
        float* row = dst + static_cast<size_t>(i) * P;
        for (size_t j = 0; j < P; ++j) row[j] = bv;
      }
      matmul_acc(w.data() + static_cast<size_t>(grp) * c_og * K, col.data(), dst, c_og, K,
                 static_cast<int>(P));
    }
  }

  std::vector<int> ins = {input.idx, weight.idx};
  if (has_bias) ins.push_back(bias.idx);

  auto bw = [a, stride, padding, groups, c_out, c_ig, c_og, kh, kw, ho, wo, has_bias](
                Graph& gg, Graph::Node& n) {
    const int in_idx = n.inputs[0];
    const int w_idx = n.inputs[1];
    const Tensor& xx = gg.node(in_idx).out;
    const Tensor& ww = gg.node(w_idx).out;
    const size_t P = static_cast<size_t>(ho) * wo;
    const int K = c_ig * kh * kw;
    const bool need_x = gg.needs(in_idx);
    const bool need_w = gg.needs(w_idx);
    const bool need_b = has_bias && gg.needs(n.inputs[2]);

    std::vector<float> col(static_cast<size_t>(K) * P);
    std::vector<float> dcol(static_cast<size_t>(K) * P);

    for (int b = 0; b < a.b; ++b) {
      for (int grp = 0; grp < groups; ++grp) {
        const float* up =
            n.grad.data() + (static_cast<size_t>(b) * c_out + static_cast<size_t>(grp) * c_og) * P;
        if (need_w || need_x) {
          // weight gradient needs the input columns; recomputing them here
          // avoids retaining B*groups buffers from the forward pass
          if (need_w) {
            const float* src = xx.data() + (static_cast<size_t>(b) * a.c +
                                            static_cast<size_t>(grp) * c_ig) *
                                               plane_size(a);
            im2col(src, c_ig, a.h, a.w, kh, kw, stride, padding, ho, wo, col.data());
            float* dw = gg.grad_slot(w_idx).data() + static_cast<size_t>(grp) * c_og * K;
            for (int i = 0; i < c_og; ++i) {
              const float* urow = up + static_cast<size_t>(i) * P;
              float* dwrow = dw + static_cast<size_t>(i) * K;
              for (int k = 0; k < K; ++k) {
                dwrow[k] += dot_fixed(urow, col.data() + static_cast<size_t>(k) * P,
                                      static_cast<int>(P));
              }
            }
          }
          if (need_x) {
            std::fill(dcol.begin(), dcol.end(), 0.0f);
            for (int i = 0; i < c_og; ++i) {
              const float* wrow =
                  ww.data() + (static_cast<size_t>(grp) * c_og + i) * static_cast<size_t>(K);
              const float* urow = up + static_cast<size_t>(i) * P;
              for (int k = 0; k < K; ++k) {
                const float wv = wrow[k];
                float* drow = dcol.data() + static_cast<size_t>(k) * P;
                for (size_t j = 0; j < P; ++j) drow[j] += wv * urow[j];
              }
            }
            float* dx = gg.grad_slot(in_idx).data() +
                        (static_cast<size_t>(b) * a.c + static_cast<size_t>(grp) * c_ig) *
                            plane_size(a);
            col2im_acc(dcol.data(), c_ig, a.h, a.w, kh, kw, stride, padding, ho, wo, dx);
          }
        }
        if (need_b) {
          float* db = gg.grad_slot(n.inputs[2]).data();
          const float* ones = nullptr;
          (void)ones;
          for (int i = 0; i < c_og; ++i) {
            const float* urow = up + static_cast<size_t>(i) * P;
            float s = 0.0f;
            float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            const size_t n8 = P & ~static_cast<size_t>(7);
            for (size_t j = 0; j < n8; j += 8) {
              for (size_t l = 0; l < 8; ++l) acc[l] += urow[j + l];
            }
            for (size_t j = n8; j < P; ++j) s += urow[j];
            s += ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                 ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            db[grp * c_og + i] += s;
          }
        }
      }
    }
  };

  return g.make_node(std::move(out), std::move(ins), std::move(bw));
}

Value relu(Graph& g, Value x) {
  const Tensor& xt = g.value(x);
  Tensor out(xt.shape());
  for (size_t i = 0; i < xt.size(); ++i) out[i] = xt[i] > 0.0f ? xt[i] : 0.0f;
  return g.make_node(std::move(out), {x.idx}, [](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    const Tensor& xx = gg.node(in).out;
    Tensor& dx = gg.grad_slot(in);
    for (size_t i = 0; i < xx.size(); ++i) {
      if (xx[i] > 0.0f) dx[i] += n.grad[i];
    }
  });
}

Value tanh_act(Graph& g, Value x) {
  const Tensor& xt = g.value(x);
  Tensor out(xt.shape());
  for (size_t i = 0; i < xt.size(); ++i) out[i] = std::tanh(xt[i]);
  return g.make_node(std::move(out), {x.idx}, [](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    for (size_t i = 0; i < n.out.size(); ++i) {
      dx[i] += n.grad[i] * (1.0f - n.out[i] * n.out[i]);
    }
  });
}

Value softmax_channels(Graph& g, Value x) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "softmax_channels");
  Tensor out(xt.shape());
  const size_t hw = plane_size(a);
  for (int b = 0; b < a.b; ++b) {
    const float* xb = xt.data() + static_cast<size_t>(b) * a.c * hw;
    float* ob = out.data() + static_cast<size_t>(b) * a.c * hw;
    for (size_t p = 0; p < hw; ++p) {
      float m = xb[p];
      for (int c = 1; c < a.c; ++c) m = std::max(m, xb[static_cast<size_t>(c) * hw + p]);
      double sum = 0.0;
      for (int c = 0; c < a.c; ++c) {
        const float e = std::exp(xb[static_cast<size_t>(c) * hw + p] - m);
        ob[static_cast<size_t>(c) * hw + p] = e;
        sum += e;
      }
      const float inv = static_cast<float>(1.0 / sum);
      for (int c = 0; c < a.c; ++c) ob[static_cast<size_t>(c) * hw + p] *= inv;
    }
  }
  return g.make_node(std::move(out), {x.idx}, [a](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = plane_size(a);
    for (int b = 0; b < a.b; ++b) {
      const float* s = n.out.data() + static_cast<size_t>(b) * a.c * hw;
      const float* up = n.grad.data() + static_cast<size_t>(b) * a.c * hw;
      float* d = dx.data() + static_cast<size_t>(b) * a.c * hw;
      for (size_t p = 0; p < hw; ++p) {
        double dot = 0.0;
        for (int c = 0; c < a.c; ++c) {
          const size_t i = static_cast<size_t>(c) * hw + p;
          dot += static_cast<double>(up[i]) * s[i];
        }
        for (int c = 0; c < a.c; ++c) {
          const size_t i = static_cast<size_t>(c) * hw + p;
          d[i] += s[i] * (up[i] - static_cast<float>(dot));
        }
      }
    }
  });
}

Value batch_norm(Graph& g, Value x, Value gamma, Value beta, Tensor& running_mean,
                 Tensor& running_var, float momentum, float eps, bool train) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "batch_norm");
  const Tensor& gt = g.value(gamma);
  check_shape(gt.rank() == 1 && gt.dim(0) == a.c,
              "batch_norm: gamma shape " + gt.shape_str() + " does not match channels " +
                  std::to_string(a.c));
  check_shape(running_mean.size() == static_cast<size_t>(a.c) &&
                  running_var.size() == static_cast<size_t>(a.c),
              "batch_norm: running stats length mismatch");
  if (train) {
    check_shape(a.b >= 2, "batch_norm: train mode requires batch size >= 2, got " +
                              std::to_string(a.b));
  }

  const size_t hw = plane_size(a);
  const size_t m = static_cast<size_t>(a.b) * hw;  // samples per channel
  const float* gp = gt.data();
  const float* bp = g.value(beta).data();

  std::vector<float> mean(static_cast<size_t>(a.c));
  std::vector<float> inv_std(static_cast<size_t>(a.c));
  Tensor out(xt.shape());

  for (int c = 0; c < a.c; ++c) {
    float mu, var;
    if (train) {
      double s = 0.0;
      for (int b = 0; b < a.b; ++b) {
        const float* p = xt.data() + (static_cast<size_t>(b) * a.c + c) * hw;
        for (size_t i = 0; i < hw; ++i) s += p[i];
      }
      mu = static_cast<float>(s / static_cast<double>(m));
      double v = 0.0;
      for (int b = 0; b < a.b; ++b) {
        const float* p = xt.data() + (static_cast<size_t>(b) * a.c + c) * hw;
        for (size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      var = static_cast<float>(v / static_cast<double>(m));
      // Unbiased variance feeds the running estimate.
      const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : 0.0;
      running_mean[static_cast<size_t>(c)] =
          (1.0f - momentum) * running_mean[static_cast<size_t>(c)] + momentum * mu;
      running_var[static_cast<size_t>(c)] =
          (1.0f - momentum) * running_var[static_cast<size_t>(c)] +
          momentum * static_cast<float>(unbiased);
    } else {
      mu = running_mean[static_cast<size_t>(c)];
      var = running_var[static_cast<size_t>(c)];
    }
    mean[static_cast<size_t>(c)] = mu;
    inv_std[static_cast<size_t>(c)] = 1.0f / std::sqrt(var + eps);
    const float k = gp[c] * inv_std[static_cast<size_t>(c)];
    const float shift = bp[c] - k * mu;
    for (int b = 0; b < a.b; ++b) {
      const float* p = xt.data() + (static_cast<size_t>(b) * a.c + c) * hw;
      float* o = out.data() + (static_cast<size_t>(b) * a.c + c) * hw;
      for (size_t i = 0; i < hw; ++i) o[i] = k * p[i] + shift;
    }
  }

  auto bw = [a, train, mean = std::move(mean), inv_std = std::move(inv_std)](
                Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    const int gi = n.inputs[1];
    const int bi = n.inputs[2];
    const Tensor& xx = gg.node(in).out;
    const float* gp = gg.node(gi).out.data();
    const size_t hw = plane_size(a);
    const double m = static_cast<double>(a.b) * hw;
    const bool need_x = gg.needs(in);
    const bool need_g = gg.needs(gi);
    const bool need_b = gg.needs(bi);
    if (!need_x && !need_g && !need_b) return;

    for (int c = 0; c < a.c; ++c) {
      const float mu = mean[static_cast<size_t>(c)];
      const float istd = inv_std[static_cast<size_t>(c)];
      double sum_up = 0.0, sum_up_xhat = 0.0;
      for (int b = 0; b < a.b; ++b) {
        const float* up = n.grad.data() + (static_cast<size_t>(b) * a.c + c) * hw;
        const float* xp = xx.data() + (static_cast<size_t>(b) * a.c + c) * hw;
        for (size_t i = 0; i < hw; ++i) {
          sum_up += up[i];
          sum_up_xhat += static_cast<double>(up[i]) * ((xp[i] - mu) * istd);
        }
      }
      if (need_g) gg.grad_slot(gi)[static_cast<size_t>(c)] += static_cast<float>(sum_up_xhat);
      if (need_b) gg.grad_slot(bi)[static_cast<size_t>(c)] += static_cast<float>(sum_up);
      if (!need_x) continue;
      Tensor& dx = gg.grad_slot(in);
      if (train) {
        // dx = (gamma*istd/m) * (m*up - sum(up) - xhat * sum(up*xhat))
        const float k = gp[c] * istd / static_cast<float>(m);
        for (int b = 0; b < a.b; ++b) {
          const float* up = n.grad.data() + (static_cast<size_t>(b) * a.c + c) * hw;
          const float* xp = xx.data() + (static_cast<size_t>(b) * a.c + c) * hw;
          float* d = dx.data() + (static_cast<size_t>(b) * a.c + c) * hw;
          for (size_t i = 0; i < hw; ++i) {
            const float xhat = (xp[i] - mu) * istd;
            d[i] += k * (static_cast<float>(m) * up[i] - static_cast<float>(sum_up) -
                         xhat * static_cast<float>(sum_up_xhat));
          }
        }
      } else {
        const float k = gp[c] * istd;
        for (int b = 0; b < a.b; ++b) {
          const float* up = n.grad.data() + (static_cast<size_t>(b) * a.c + c) * hw;
          float* d = dx.data() + (static_cast<size_t>(b) * a.c + c) * hw;
          for (size_t i = 0; i < hw; ++i) d[i] += k * up[i];
        }
      }
    }
  };

  return g.make_node(std::move(out), {x.idx, gamma.idx, beta.idx}, std::move(bw));
}

Value pixel_shuffle(Graph& g, Value x, int r) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "pixel_shuffle");
  check_shape(r >= 1, "pixel_shuffle: r must be >= 1");
  check_shape(a.c % (r * r) == 0, "pixel_shuffle: channels " + std::to_string(a.c) +
                                      " not divisible by r^2 = " + std::to_string(r * r));
  const int co = a.c / (r * r);
  Tensor out(act_shape(a, co, a.h * r, a.w * r));
  const size_t hw = plane_size(a);
  const size_t ohw = hw * static_cast<size_t>(r) * r;
  for (int b = 0; b < a.b; ++b) {
    for (int c = 0; c < co; ++c) {
      float* dst = out.data() + (static_cast<size_t>(b) * co + c) * ohw;
      for (int dy = 0; dy < r; ++dy) {
        for (int dx = 0; dx < r; ++dx) {
          const float* src =
              xt.data() + (static_cast<size_t>(b) * a.c + (c * r + dy) * r + dx) * hw;
          for (int y = 0; y < a.h; ++y) {
            float* drow = dst + (static_cast<size_t>(y) * r + dy) * (a.w * r) + dx;
            const float* srow = src + static_cast<size_t>(y) * a.w;
            for (int xx = 0; xx < a.w; ++xx) drow[static_cast<size_t>(xx) * r] = srow[xx];
          }
        }
      }
    }
  }
  return g.make_node(std::move(out), {x.idx}, [a, r, co](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = plane_size(a);
    const size_t ohw = hw * static_cast<size_t>(r) * r;
    for (int b = 0; b < a.b; ++b) {
      for (int c = 0; c < co; ++c) {
        const float* up = n.grad.data() + (static_cast<size_t>(b) * co + c) * ohw;
        for (int dy = 0; dy < r; ++dy) {
          for (int dx2 = 0; dx2 < r; ++dx2) {
            float* d = dx.data() + (static_cast<size_t>(b) * a.c + (c * r + dy) * r + dx2) * hw;
            for (int y = 0; y < a.h; ++y) {
              const float* urow = up + (static_cast<size_t>(y) * r + dy) * (a.w * r) + dx2;
              float* drow = d + static_cast<size_t>(y) * a.w;
              for (int xx = 0; xx < a.w; ++xx) drow[xx] += urow[static_cast<size_t>(xx) * r];
            }
          }
        }
      }
    }
  });
}

Value upsample_nearest(Graph& g, Value x, int s) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "upsample_nearest");
  check_shape(s >= 1, "upsample_nearest: scale must be >= 1");
  Tensor out(act_shape(a, a.c, a.h * s, a.w * s));
  const size_t hw = plane_size(a);
  const size_t ohw = hw * static_cast<size_t>(s) * s;
  const size_t bc = static_cast<size_t>(a.b) * a.c;
  for (size_t p = 0; p < bc; ++p) {
    const float* src = xt.data() + p * hw;
    float* dst = out.data() + p * ohw;
    for (int y = 0; y < a.h * s; ++y) {
      const float* srow = src + static_cast<size_t>(y / s) * a.w;
      float* drow = dst + static_cast<size_t>(y) * (a.w * s);
      for (int xx = 0; xx < a.w * s; ++xx) drow[xx] = srow[xx / s];
    }
  }
  return g.make_node(std::move(out), {x.idx}, [a, s](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = plane_size(a);
    const size_t ohw = hw * static_cast<size_t>(s) * s;
    const size_t bc = static_cast<size_t>(a.b) * a.c;
    for (size_t p = 0; p < bc; ++p) {
      const float* up = n.grad.data() + p * ohw;
      float* d = dx.data() + p * hw;
      for (int y = 0; y < a.h * s; ++y) {
        const float* urow = up + static_cast<size_t>(y) * (a.w * s);
        float* drow = d + static_cast<size_t>(y / s) * a.w;
        for (int xx = 0; xx < a.w * s; ++xx) drow[xx / s] += urow[xx];
      }
    }
  });
}

Value maxpool2x2(Graph& g, Value x) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "maxpool2x2");
  check_shape(a.h % 2 == 0 && a.w % 2 == 0,
              "maxpool2x2: spatial dims must be even, got " + xt.shape_str());
  const int ho = a.h / 2, wo = a.w / 2;
  Tensor out(act_shape(a, a.c, ho, wo));
  auto argmax = std::make_shared<std::vector<int>>(out.size());
  const size_t hw = plane_size(a);
  const size_t ohw = static_cast<size_t>(ho) * wo;
  const size_t bc = static_cast<size_t>(a.b) * a.c;
  for (size_t p = 0; p < bc; ++p) {
    const float* src = xt.data() + p * hw;
    float* dst = out.data() + p * ohw;
    int* am = argmax->data() + p * ohw;
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        // ties resolve to the earliest index, keeping backward deterministic
        int best = (2 * y) * a.w + 2 * xx;
        float bv = src[best];
        const int cand[3] = {(2 * y) * a.w + 2 * xx + 1, (2 * y + 1) * a.w + 2 * xx,
                             (2 * y + 1) * a.w + 2 * xx + 1};
        for (int ci = 0; ci < 3; ++ci) {
          if (src[cand[ci]] > bv) {
            bv = src[cand[ci]];
            best = cand[ci];
          }
        }
        dst[static_cast<size_t>(y) * wo + xx] = bv;
        am[static_cast<size_t>(y) * wo + xx] = best;
      }
    }
  }
  return g.make_node(std::move(out), {x.idx}, [a, ho, wo, argmax](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = plane_size(a);
    const size_t ohw = static_cast<size_t>(ho) * wo;
    const size_t bc = static_cast<size_t>(a.b) * a.c;
    for (size_t p = 0; p < bc; ++p) {
      const float* up = n.grad.data() + p * ohw;
      float* d = dx.data() + p * hw;
      const int* am = argmax->data() + p * ohw;
      for (size_t i = 0; i < ohw; ++i) d[am[i]] += up[i];
    }
  });
}

Value add(Graph& g, Value av, Value bv) {
  const Tensor& at = g.value(av);
  const Tensor& bt = g.value(bv);
  check_shape(at.same_shape(bt),
              "add: shape mismatch " + at.shape_str() + " vs " + bt.shape_str());
  Tensor out(at.shape());
  for (size_t i = 0; i < at.size(); ++i) out[i] = at[i] + bt[i];
  return g.make_node(std::move(out), {av.idx, bv.idx}, [](Graph& gg, Graph::Node& n) {
    for (int k = 0; k < 2; ++k) {
      const int in = n.inputs[static_cast<size_t>(k)];
      if (!gg.needs(in)) continue;
      gg.accumulate_grad(in, n.grad);
    }
  });
}

Value mul(Graph& g, Value av, Value bv) {
  const Tensor& at = g.value(av);
  const Tensor& bt = g.value(bv);
  check_shape(at.same_shape(bt),
              "mul: shape mismatch " + at.shape_str() + " vs " + bt.shape_str());
  Tensor out(at.shape());
  for (size_t i = 0; i < at.size(); ++i) out[i] = at[i] * bt[i];
  return g.make_node(std::move(out), {av.idx, bv.idx}, [](Graph& gg, Graph::Node& n) {
    const int ia = n.inputs[0], ib = n.inputs[1];
    const Tensor& ta = gg.node(ia).out;
    const Tensor& tb = gg.node(ib).out;
    if (gg.needs(ia)) {
      Tensor& da = gg.grad_slot(ia);
      for (size_t i = 0; i < da.size(); ++i) da[i] += n.grad[i] * tb[i];
    }
    if (gg.needs(ib)) {
      Tensor& db = gg.grad_slot(ib);
      for (size_t i = 0; i < db.size(); ++i) db[i] += n.grad[i] * ta[i];
    }
  });
}

Value scale(Graph& g, Value x, float c) {
  const Tensor& xt = g.value(x);
  Tensor out(xt.shape());
  for (size_t i = 0; i < xt.size(); ++i) out[i] = xt[i] * c;
  return g.make_node(std::move(out), {x.idx}, [c](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i] * c;
  });
}

Value sum_channels(Graph& g, Value x) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "sum_channels");
  Tensor out(act_shape(a, 1, a.h, a.w));
  const size_t hw = plane_size(a);
  for (int b = 0; b < a.b; ++b) {
    float* dst = out.data() + static_cast<size_t>(b) * hw;
    for (int c = 0; c < a.c; ++c) {
      const float* src = xt.data() + (static_cast<size_t>(b) * a.c + c) * hw;
      for (size_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  }
  return g.make_node(std::move(out), {x.idx}, [a](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = plane_size(a);
    for (int b = 0; b < a.b; ++b) {
      const float* up = n.grad.data() + static_cast<size_t>(b) * hw;
      for (int c = 0; c < a.c; ++c) {
        float* d = dx.data() + (static_cast<size_t>(b) * a.c + c) * hw;
        for (size_t i = 0; i < hw; ++i) d[i] += up[i];
      }
    }
  });
}

Value concat_channels(Graph& g, const std::vector<Value>& xs) {
  check_shape(!xs.empty(), "concat_channels: empty input list");
  const Act a0 = act_dims(g.value(xs[0]), "concat_channels");
  int c_total = 0;
  std::vector<int> ins;
  ins.reserve(xs.size());
  for (const Value& v : xs) {
    const Act ai = act_dims(g.value(v), "concat_channels");
    check_shape(ai.b == a0.b && ai.h == a0.h && ai.w == a0.w && ai.batched == a0.batched,
                "concat_channels: incompatible shape " + g.value(v).shape_str() + " vs " +
                    g.value(xs[0]).shape_str());
    c_total += ai.c;
    ins.push_back(v.idx);
  }
  Tensor out(act_shape(a0, c_total, a0.h, a0.w));
  const size_t hw = plane_size(a0);
  for (int b = 0; b < a0.b; ++b) {
    size_t coff = 0;
    for (const Value& v : xs) {
      const Tensor& t = g.value(v);
      const int ci = act_dims(t, "concat_channels").c;
      std::memcpy(out.data() + (static_cast<size_t>(b) * c_total + coff) * hw,
                  t.data() + static_cast<size_t>(b) * ci * hw,
                  static_cast<size_t>(ci) * hw * sizeof(float));
      coff += static_cast<size_t>(ci);
    }
  }
  return g.make_node(std::move(out), std::move(ins), [a0, c_total](Graph& gg, Graph::Node& n) {
    const size_t hw = plane_size(a0);
    for (int b = 0; b < a0.b; ++b) {
      size_t coff = 0;
      for (int ii : n.inputs) {
        const int ci = act_dims(gg.node(ii).out, "concat_channels").c;
        if (gg.needs(ii)) {
          Tensor& d = gg.grad_slot(ii);
          const float* up = n.grad.data() + (static_cast<size_t>(b) * c_total + coff) * hw;
          float* dp = d.data() + static_cast<size_t>(b) * ci * hw;
          for (size_t i = 0; i < static_cast<size_t>(ci) * hw; ++i) dp[i] += up[i];
        }
        coff += static_cast<size_t>(ci);
      }
    }
  });
}

Value repeat_spatial(Graph& g, Value x, int h, int w) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "repeat_spatial");
  check_shape(a.h == 1 && a.w == 1,
              "repeat_spatial: input spatial dims must be 1x1, got " + xt.shape_str());
  Tensor out(act_shape(a, a.c, h, w));
  const size_t hw = static_cast<size_t>(h) * w;
  const size_t bc = static_cast<size_t>(a.b) * a.c;
  for (size_t p = 0; p < bc; ++p) {
    const float v = xt[p];
    float* dst = out.data() + p * hw;
    for (size_t i = 0; i < hw; ++i) dst[i] = v;
  }
  return g.make_node(std::move(out), {x.idx}, [a, h, w](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = static_cast<size_t>(h) * w;
    const size_t bc = static_cast<size_t>(a.b) * a.c;
    for (size_t p = 0; p < bc; ++p) {
      const float* up = n.grad.data() + p * hw;
      double s = 0.0;
      for (size_t i = 0; i < hw; ++i) s += up[i];
      dx[p] += static_cast<float>(s);
    }
  });
}

Value broadcast_batch(Graph& g, Value x, int batch) {
  const Tensor& xt = g.value(x);
  check_shape(xt.rank() == 4 && xt.dim(0) == 1,
              "broadcast_batch: expected [1,C,H,W], got " + xt.shape_str());
  check_shape(batch >= 1, "broadcast_batch: batch must be >= 1");
  const size_t chw = xt.size();
  Tensor out({batch, xt.dim(1), xt.dim(2), xt.dim(3)});
  for (int b = 0; b < batch; ++b) {
    std::memcpy(out.data() + static_cast<size_t>(b) * chw, xt.data(), chw * sizeof(float));
  }
  return g.make_node(std::move(out), {x.idx}, [batch, chw](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    for (int b = 0; b < batch; ++b) {
      const float* up = n.grad.data() + static_cast<size_t>(b) * chw;
      for (size_t i = 0; i < chw; ++i) dx[i] += up[i];
    }
  });
}

Value reshape(Graph& g, Value x, std::vector<int> new_shape) {
  const Tensor& xt = g.value(x);
  check_shape(shape_numel(new_shape) == xt.size(),
              "reshape: element count mismatch " + xt.shape_str() + " -> " +
                  shape_to_string(new_shape));
  Tensor out(std::move(new_shape));
  std::memcpy(out.data(), xt.data(), xt.size() * sizeof(float));
  return g.make_node(std::move(out), {x.idx}, [](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += n.grad[i];
  });
}

Value crop2d(Graph& g, Value x, int top, int left, int out_h, int out_w) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "crop2d");
  check_shape(top >= 0 && left >= 0 && out_h >= 1 && out_w >= 1 && top + out_h <= a.h &&
                  left + out_w <= a.w,
              "crop2d: window (" + std::to_string(top) + "," + std::to_string(left) + "," +
                  std::to_string(out_h) + "," + std::to_string(out_w) + ") out of bounds for " +
                  xt.shape_str());
  Tensor out(act_shape(a, a.c, out_h, out_w));
  const size_t hw = plane_size(a);
  const size_t bc = static_cast<size_t>(a.b) * a.c;
  for (size_t p = 0; p < bc; ++p) {
    const float* src = xt.data() + p * hw;
    float* dst = out.data() + p * static_cast<size_t>(out_h) * out_w;
    for (int y = 0; y < out_h; ++y) {
      std::memcpy(dst + static_cast<size_t>(y) * out_w,
                  src + static_cast<size_t>(top + y) * a.w + left,
                  static_cast<size_t>(out_w) * sizeof(float));
    }
  }
  return g.make_node(std::move(out), {x.idx},
                     [a, top, left, out_h, out_w](Graph& gg, Graph::Node& n) {
                       const int in = n.inputs[0];
                       if (!gg.needs(in)) return;
                       Tensor& dx = gg.grad_slot(in);
                       const size_t hw = plane_size(a);
                       const size_t bc = static_cast<size_t>(a.b) * a.c;
                       for (size_t p = 0; p < bc; ++p) {
                         const float* up = n.grad.data() + p * static_cast<size_t>(out_h) * out_w;
                         float* d = dx.data() + p * hw;
                         for (int y = 0; y < out_h; ++y) {
                           float* drow = d + static_cast<size_t>(top + y) * a.w + left;
                           const float* urow = up + static_cast<size_t>(y) * out_w;
                           for (int xx = 0; xx < out_w; ++xx) drow[xx] += urow[xx];
                         }
                       }
                     });
}

Value pad2d(Graph& g, Value x, int top, int left, int bottom, int right) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "pad2d");
  check_shape(top >= 0 && left >= 0 && bottom >= 0 && right >= 0, "pad2d: negative padding");
  const int ho = a.h + top + bottom;
  const int wo = a.w + left + right;
  Tensor out(act_shape(a, a.c, ho, wo));
  const size_t hw = plane_size(a);
  const size_t ohw = static_cast<size_t>(ho) * wo;
  const size_t bc = static_cast<size_t>(a.b) * a.c;
  for (size_t p = 0; p < bc; ++p) {
    const float* src = xt.data() + p * hw;
    float* dst = out.data() + p * ohw;
    for (int y = 0; y < a.h; ++y) {
      std::memcpy(dst + static_cast<size_t>(top + y) * wo + left,
                  src + static_cast<size_t>(y) * a.w, static_cast<size_t>(a.w) * sizeof(float));
    }
  }
  return g.make_node(std::move(out), {x.idx}, [a, top, left, ho, wo](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const size_t hw = plane_size(a);
    const size_t ohw = static_cast<size_t>(ho) * wo;
    const size_t bc = static_cast<size_t>(a.b) * a.c;
    for (size_t p = 0; p < bc; ++p) {
      const float* up = n.grad.data() + p * ohw;
      float* d = dx.data() + p * hw;
      for (int y = 0; y < a.h; ++y) {
        const float* urow = up + static_cast<size_t>(top + y) * wo + left;
        float* drow = d + static_cast<size_t>(y) * a.w;
        for (int xx = 0; xx < a.w; ++xx) drow[xx] += urow[xx];
      }
    }
  });
}

Value replace_region(Graph& g, Value frame, Value patch, int top, int left) {
  const Tensor& ft = g.value(frame);
  const Tensor& pt = g.value(patch);
  const Act af = act_dims(ft, "replace_region");
  const Act ap = act_dims(pt, "replace_region");
  check_shape(af.b == ap.b && af.c == ap.c && af.batched == ap.batched,
              "replace_region: batch/channel mismatch " + ft.shape_str() + " vs " +
                  pt.shape_str());
  check_shape(top >= 0 && left >= 0 && top + ap.h <= af.h && left + ap.w <= af.w,
              "replace_region: patch " + pt.shape_str() + " at (" + std::to_string(top) + "," +
                  std::to_string(left) + ") exceeds frame " + ft.shape_str());
  Tensor out = ft;
  const size_t fhw = plane_size(af);
  const size_t phw = plane_size(ap);
  const size_t bc = static_cast<size_t>(af.b) * af.c;
  for (size_t p = 0; p < bc; ++p) {
    const float* src = pt.data() + p * phw;
    float* dst = out.data() + p * fhw;
    for (int y = 0; y < ap.h; ++y) {
      std::memcpy(dst + static_cast<size_t>(top + y) * af.w + left,
                  src + static_cast<size_t>(y) * ap.w, static_cast<size_t>(ap.w) * sizeof(float));
    }
  }
  return g.make_node(std::move(out), {frame.idx, patch.idx},
                     [af, ap, top, left](Graph& gg, Graph::Node& n) {
                       const int fi = n.inputs[0], pi = n.inputs[1];
                       const size_t fhw = plane_size(af);
                       const size_t phw = plane_size(ap);
                       const size_t bc = static_cast<size_t>(af.b) * af.c;
                       if (gg.needs(fi)) {
                         Tensor& df = gg.grad_slot(fi);
                         for (size_t p = 0; p < bc; ++p) {
                           const float* up = n.grad.data() + p * fhw;
                           float* d = df.data() + p * fhw;
                           for (int y = 0; y < af.h; ++y) {
                             for (int xx = 0; xx < af.w; ++xx) {
                               const bool inside = y >= top && y < top + ap.h && xx >= left &&
                                                   xx < left + ap.w;
                               if (!inside) d[static_cast<size_t>(y) * af.w + xx] +=
                                   up[static_cast<size_t>(y) * af.w + xx];
                             }
                           }
                         }
                       }
                       if (gg.needs(pi)) {
                         Tensor& dp = gg.grad_slot(pi);
                         for (size_t p = 0; p < bc; ++p) {
                           const float* up = n.grad.data() + p * fhw;
                           float* d = dp.data() + p * phw;
                           for (int y = 0; y < ap.h; ++y) {
                             const float* urow = up + static_cast<size_t>(top + y) * af.w + left;
                             float* drow = d + static_cast<size_t>(y) * ap.w;
                             for (int xx = 0; xx < ap.w; ++xx) drow[xx] += urow[xx];
                           }
                         }
                       }
                     });
}

Value permute_channels(Graph& g, Value x, std::vector<int> perm) {
  const Tensor& xt = g.value(x);
  const Act a = act_dims(xt, "permute_channels");
  check_shape(static_cast<int>(perm.size()) == a.c,
              "permute_channels: permutation size " + std::to_string(perm.size()) +
                  " does not match channels " + std::to_string(a.c));
  std::vector<bool> seen(static_cast<size_t>(a.c), false);
  for (int p : perm) {
    check_shape(p >= 0 && p < a.c && !seen[static_cast<size_t>(p)],
                "permute_channels: not a permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Tensor out(xt.shape());
  const size_t hw = plane_size(a);
  for (int b = 0; b < a.b; ++b) {
    for (int c = 0; c < a.c; ++c) {
      std::memcpy(out.data() + (static_cast<size_t>(b) * a.c + c) * hw,
                  xt.data() + (static_cast<size_t>(b) * a.c + perm[static_cast<size_t>(c)]) * hw,
                  hw * sizeof(float));
    }
  }
  return g.make_node(std::move(out), {x.idx},
                     [a, perm = std::move(perm)](Graph& gg, Graph::Node& n) {
                       const int in = n.inputs[0];
                       if (!gg.needs(in)) return;
                       Tensor& dx = gg.grad_slot(in);
                       const size_t hw = plane_size(a);
                       for (int b = 0; b < a.b; ++b) {
                         for (int c = 0; c < a.c; ++c) {
                           const float* up = n.grad.data() + (static_cast<size_t>(b) * a.c + c) * hw;
                           float* d = dx.data() +
                                      (static_cast<size_t>(b) * a.c + perm[static_cast<size_t>(c)]) *
                                          hw;
                           for (size_t i = 0; i < hw; ++i) d[i] += up[i];
                         }
                       }
                     });
}

Value weighted_atom_sum(Graph& g, Value coeff, Value atoms, int s) {
  const Tensor& mt = g.value(coeff);
  const Tensor& dt = g.value(atoms);
  const Act a = act_dims(mt, "weighted_atom_sum");
  check_shape(dt.rank() == 3, "weighted_atom_sum: atoms must be rank-3 [N,s,s], got " +
                                  dt.shape_str());
  check_shape(dt.dim(0) == a.c, "weighted_atom_sum: coefficient channels " +
                                    std::to_string(a.c) + " != atom count " +
                                    std::to_string(dt.dim(0)));
  check_shape(dt.dim(1) == s && dt.dim(2) == s,
              "weighted_atom_sum: atoms must be " + std::to_string(s) + "x" + std::to_string(s) +
                  ", got " + dt.shape_str());
  const int N = a.c;
  Tensor out(act_shape(a, 1, a.h * s, a.w * s));
  const size_t hw = plane_size(a);
  const size_t ohw = hw * static_cast<size_t>(s) * s;
  const int sw = a.w * s;
  for (int b = 0; b < a.b; ++b) {
    const float* mb = mt.data() + static_cast<size_t>(b) * N * hw;
    float* ob = out.data() + static_cast<size_t>(b) * ohw;
    for (int i = 0; i < a.h; ++i) {
      for (int j = 0; j < a.w; ++j) {
        for (int k = 0; k < N; ++k) {
          const float m = mb[static_cast<size_t>(k) * hw + static_cast<size_t>(i) * a.w + j];
          const float* atom = dt.data() + static_cast<size_t>(k) * s * s;
          for (int dy = 0; dy < s; ++dy) {
            float* orow = ob + static_cast<size_t>(s * i + dy) * sw + static_cast<size_t>(s) * j;
            const float* arow = atom + static_cast<size_t>(dy) * s;
            for (int dx = 0; dx < s; ++dx) orow[dx] += m * arow[dx];
          }
        }
      }
    }
  }
  return g.make_node(std::move(out), {coeff.idx, atoms.idx},
                     [a, s, N](Graph& gg, Graph::Node& n) {
                       const int mi = n.inputs[0], di = n.inputs[1];
                       const Tensor& mt = gg.node(mi).out;
                       const Tensor& dt = gg.node(di).out;
                       const size_t hw = plane_size(a);
                       const size_t ohw = hw * static_cast<size_t>(s) * s;
                       const int sw = a.w * s;
                       const bool need_m = gg.needs(mi);
                       const bool need_d = gg.needs(di);
                       for (int b = 0; b < a.b; ++b) {
                         const float* up = n.grad.data() + static_cast<size_t>(b) * ohw;
                         const float* mb = mt.data() + static_cast<size_t>(b) * N * hw;
                         for (int i = 0; i < a.h; ++i) {
                           for (int j = 0; j < a.w; ++j) {
                             for (int k = 0; k < N; ++k) {
                               const float* atom = dt.data() + static_cast<size_t>(k) * s * s;
                               const size_t midx = static_cast<size_t>(k) * hw +
                                                   static_cast<size_t>(i) * a.w + j;
                               if (need_m) {
                                 float acc = 0.0f;
                                 for (int dy = 0; dy < s; ++dy) {
                                   const float* urow = up + static_cast<size_t>(s * i + dy) * sw +
                                                       static_cast<size_t>(s) * j;
                                   const float* arow = atom + static_cast<size_t>(dy) * s;
                                   for (int dx = 0; dx < s; ++dx) acc += urow[dx] * arow[dx];
                                 }
                                 gg.grad_slot(mi)[static_cast<size_t>(b) * N * hw + midx] += acc;
                               }
                               if (need_d) {
                                 const float m = mb[midx];
                                 float* datom = gg.grad_slot(di).data() +
                                                static_cast<size_t>(k) * s * s;
                                 for (int dy = 0; dy < s; ++dy) {
                                   const float* urow = up + static_cast<size_t>(s * i + dy) * sw +
                                                       static_cast<size_t>(s) * j;
                                   float* darow = datom + static_cast<size_t>(dy) * s;
                                   for (int dx = 0; dx < s; ++dx) darow[dx] += m * urow[dx];
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

Value sum_all(Graph& g, Value x) {
  const Tensor& xt = g.value(x);
  double acc = 0.0;
  for (size_t i = 0; i < xt.size(); ++i) acc += xt[i];
  Tensor out({1}, {static_cast<float>(acc)});
  return g.make_node(std::move(out), {x.idx}, [](Graph& gg, Graph::Node& n) {
    const int in = n.inputs[0];
    if (!gg.needs(in)) return;
    Tensor& dx = gg.grad_slot(in);
    const float up = n.grad[0];
    for (size_t i = 0; i < dx.size(); ++i) dx[i] += up;
  });
}

Value l1_loss(Graph& g, Value pred, Value gt) {
  const Tensor& pt = g.value(pred);
  const Tensor& tt = g.value(gt);
  check_shape(pt.same_shape(tt),
              "l1_loss: shape mismatch " + pt.shape_str() + " vs " + tt.shape_str());
  double acc = 0.0;
  for (size_t i = 0; i < pt.size(); ++i) acc += std::abs(static_cast<double>(pt[i]) - tt[i]);
  const double inv_n = 1.0 / static_cast<double>(pt.size());
  Tensor out({1}, {static_cast<float>(acc * inv_n)});
  return g.make_node(std::move(out), {pred.idx, gt.idx}, [inv_n](Graph& gg, Graph::Node& n) {
    const int pi = n.inputs[0], ti = n.inputs[1];
    const Tensor& pt = gg.node(pi).out;
    const Tensor& tt = gg.node(ti).out;
    const float up = n.grad[0];
    const float k = static_cast<float>(inv_n) * up;
    if (gg.needs(pi)) {
      Tensor& dp = gg.grad_slot(pi);
      for (size_t i = 0; i < pt.size(); ++i) {
        const float d = pt[i] - tt[i];
        dp[i] += d > 0.0f ? k : (d < 0.0f ? -k : 0.0f);
      }
    }
    if (gg.needs(ti)) {
      Tensor& dt2 = gg.grad_slot(ti);
      for (size_t i = 0; i < pt.size(); ++i) {
        const float d = pt[i] - tt[i];
        dt2[i] += d > 0.0f ? -k : (d < 0.0f ? k : 0.0f);
      }
    }
  });
}

}  // namespace srdd
