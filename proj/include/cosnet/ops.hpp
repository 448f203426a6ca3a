#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cosnet/tensor.hpp"

namespace cosnet {

// --- convolution ------------------------------------------------------------

struct ConvParams {
  std::size_t out_channels = 1;
  std::size_t in_channels = 1;
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;
  std::size_t groups = 1;
  bool has_bias = false;

  Window window() const { return {kh, kw, sh, sw, ph, pw}; }
  Shape weight_shape() const { return {out_channels, in_channels / groups, kh, kw}; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }

  void validate() const {
    if (out_channels == 0 || in_channels == 0 || groups == 0 || kh == 0 || kw == 0)
      throw invalid_config("conv: channels, groups and kernel must be positive");
    if (in_channels % groups != 0 || out_channels % groups != 0)
      throw invalid_config("conv: in_channels " + std::to_string(in_channels) + " and out_channels " +
                           std::to_string(out_channels) + " must be divisible by groups " +
                           std::to_string(groups));
    if (sh == 0 || sw == 0) throw invalid_config("conv: stride must be positive");
  }

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

/// Square k x k convolution helper; "same" padding when pad is omitted.
inline ConvParams conv_params(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                              std::size_t groups = 1, std::optional<std::size_t> pad = std::nullopt,
                              bool bias = false) {
  std::size_t p = pad.value_or((k - 1) / 2);
  return ConvParams{out, in, k, k, stride, stride, p, p, groups, bias};
}

inline Shape conv_output_shape(const Shape& in, const ConvParams& p) {
  return {in.n, p.out_channels, window_out_dim(in.h, p.kh, p.sh, p.ph), window_out_dim(in.w, p.kw, p.sw, p.pw)};
}

namespace detail {
inline void check_conv_inputs(const Shape& in, const Shape& weight, const ConvParams& p) {
  p.validate();
  if (in.c != p.in_channels)
    throw invalid_config("conv: input has " + std::to_string(in.c) + " channels, expected " +
                         std::to_string(p.in_channels));
  if (weight != p.weight_shape())
    throw invalid_config("conv: weight shape " + weight.str() + " expected " + p.weight_shape().str());
}
}  // namespace detail

/// Grouped convolution via im2col + GEMM. Group g reads input channels
/// [g*in/groups, (g+1)*in/groups) and writes output channels of the same slot.
template <typename T>
basic_tensor<T> conv2d_forward(const basic_tensor<T>& input, const basic_tensor<T>& weight,
                               std::span<const T> bias, const ConvParams& p) {
  detail::check_conv_inputs(input.shape(), weight.shape(), p);
  if (p.has_bias && bias.size() != p.out_channels) throw invalid_config("conv: bias length mismatch");
  const Shape os = conv_output_shape(input.shape(), p);
  basic_tensor<T> out(os);
  const Window win = p.window();
  const std::size_t cin_g = p.in_per_group();
  const std::size_t cout_g = p.out_per_group();
  const std::size_t kdim = cin_g * p.kh * p.kw;
  const std::size_t hw = os.plane();
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t g = 0; g < p.groups; ++g) {
      auto cols = im2col(input, n, g * cin_g, (g + 1) * cin_g, win);
      const T* wg = weight.data().data() + g * cout_g * kdim;
      gemm(wg, cols.data.data(), out.plane(n, g * cout_g), cout_g, kdim, hw);
    }
    if (p.has_bias) {
      for (std::size_t c = 0; c < os.c; ++c) {
        T* dst = out.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] += bias[c];
      }
    }
  }
  return out;
}

template <typename T>
basic_tensor<T> conv2d_forward(const basic_tensor<T>& input, const basic_tensor<T>& weight, const ConvParams& p) {
  if (p.has_bias) throw invalid_config("conv: bias expected");
  return conv2d_forward(input, weight, std::span<const T>{}, p);
}

template <typename T>
struct ConvGrads {
  basic_tensor<T> input;
  basic_tensor<T> weight;
  std::optional<std::vector<T>> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const basic_tensor<T>& grad_out, const basic_tensor<T>& input,
                             const basic_tensor<T>& weight, const ConvParams& p) {
  detail::check_conv_inputs(input.shape(), weight.shape(), p);
  const Shape os = conv_output_shape(input.shape(), p);
  if (grad_out.shape() != os)
    throw invalid_shape("conv backward: grad_out " + grad_out.shape().str() + " expected " + os.str());
  ConvGrads<T> g{basic_tensor<T>(input.shape()), basic_tensor<T>(weight.shape()), std::nullopt};
  const Window win = p.window();
  const std::size_t cin_g = p.in_per_group();
  const std::size_t cout_g = p.out_per_group();
  const std::size_t kdim = cin_g * p.kh * p.kw;
  const std::size_t hw = os.plane();
  basic_matrix<T> dcols(kdim, hw);
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t grp = 0; grp < p.groups; ++grp) {
      auto cols = im2col(input, n, grp * cin_g, (grp + 1) * cin_g, win);
      const T* dy = grad_out.plane(n, grp * cout_g);
      const T* wg = weight.data().data() + grp * cout_g * kdim;
      T* dw = g.weight.data().data() + grp * cout_g * kdim;
      gemm_abt_add(dy, cols.data.data(), dw, cout_g, hw, kdim);
      gemm_atb(wg, dy, dcols.data.data(), cout_g, kdim, hw);
      col2im_add(dcols, g.input, n, grp * cin_g, (grp + 1) * cin_g, win);
    }
  }
  if (p.has_bias) {
    std::vector<T> db(p.out_channels, T(0));
    for (std::size_t n = 0; n < os.n; ++n)
      for (std::size_t c = 0; c < os.c; ++c) {
        const T* src = grad_out.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) db[c] += src[i];
      }
    g.bias = std::move(db);
  }
  return g;
}

// --- channel structure --------------------------------------------------------

/// Tiles the channel block m times: output block j is a copy of the input.
template <typename T>
basic_tensor<T> input_replicate(const basic_tensor<T>& input, std::size_t m) {
  if (m == 0) throw invalid_config("input_replicate: m must be >= 1");
  const Shape& s = input.shape();
  basic_tensor<T> out({s.n, s.c * m, s.h, s.w});
  const std::size_t block = s.sample();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = input.plane(n, 0);
    for (std::size_t j = 0; j < m; ++j) std::copy(src, src + block, out.plane(n, j * s.c));
  }
  return out;
}

/// Sum of the m channel blocks; the adjoint of input_replicate.
template <typename T>
basic_tensor<T> channel_block_sum(const basic_tensor<T>& input, std::size_t m) {
  const Shape& s = input.shape();
  if (m == 0 || s.c % m != 0)
    throw invalid_shape("channel_block_sum: " + std::to_string(s.c) + " channels not divisible by " +
                        std::to_string(m));
  const std::size_t c = s.c / m;
  basic_tensor<T> out({s.n, c, s.h, s.w});
  const std::size_t block = c * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    T* dst = out.plane(n, 0);
    for (std::size_t j = 0; j < m; ++j) {
      const T* src = input.plane(n, j * c);
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  }
  return out;
}

template <typename T>
basic_tensor<T> input_replicate_backward(const basic_tensor<T>& grad_out, std::size_t m) {
  return channel_block_sum(grad_out, m);
}

template <typename T>
basic_tensor<T> channel_block_sum_backward(const basic_tensor<T>& grad_out, std::size_t m) {
  return input_replicate(grad_out, m);
}

template <typename T>
basic_tensor<T> channel_concat(std::span<const basic_tensor<T>* const> inputs) {
  if (inputs.empty()) throw invalid_shape("channel_concat: no inputs");
  const Shape& s0 = inputs.front()->shape();
  std::size_t c = 0;
  for (const auto* t : inputs) {
    const Shape& s = t->shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw invalid_shape("channel_concat: " + s.str() + " incompatible with " + s0.str());
    c += s.c;
  }
  basic_tensor<T> out({s0.n, c, s0.h, s0.w});
  for (std::size_t n = 0; n < s0.n; ++n) {
    std::size_t offset = 0;
    for (const auto* t : inputs) {
      const std::size_t block = t->shape().sample();
      const T* src = t->plane(n, 0);
      std::copy(src, src + block, out.plane(n, offset));
      offset += t->shape().c;
    }
  }
  return out;
}

template <typename T>
basic_tensor<T> channel_concat(const std::vector<basic_tensor<T>>& inputs) {
  std::vector<const basic_tensor<T>*> ptrs;
  for (const auto& t : inputs) ptrs.push_back(&t);
  return channel_concat<T>(std::span<const basic_tensor<T>* const>(ptrs));
}

/// Copy of channels [begin, end).
template <typename T>
basic_tensor<T> channel_slice(const basic_tensor<T>& input, std::size_t begin, std::size_t end) {
  const Shape& s = input.shape();
  if (begin >= end || end > s.c)
    throw invalid_shape("channel_slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") outside " + std::to_string(s.c) + " channels");
  basic_tensor<T> out({s.n, end - begin, s.h, s.w});
  const std::size_t block = (end - begin) * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = input.plane(n, begin);
    std::copy(src, src + block, out.plane(n, 0));
  }
  return out;
}

/// Adds grad (channels [begin, end) of a tensor shaped like `into`) into `into`.
template <typename T>
void channel_slice_backward_add(basic_tensor<T>& into, const basic_tensor<T>& grad, std::size_t begin) {
  const Shape& s = into.shape();
  const Shape& g = grad.shape();
  if (g.n != s.n || g.h != s.h || g.w != s.w || begin + g.c > s.c)
    throw invalid_shape("channel_slice backward: incompatible grad " + g.str());
  const std::size_t block = g.sample();
  for (std::size_t n = 0; n < s.n; ++n) {
    T* dst = into.plane(n, begin);
    const T* src = grad.plane(n, 0);
    for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
  }
}

template <typename T>
std::vector<basic_tensor<T>> channel_split(const basic_tensor<T>& input, std::span<const std::size_t> sizes) {
  std::vector<basic_tensor<T>> out;
  std::size_t begin = 0;
  for (std::size_t c : sizes) {
    out.push_back(channel_slice(input, begin, begin + c));
    begin += c;
  }
  if (begin != input.shape().c) throw invalid_shape("channel_split: sizes do not cover all channels");
  return out;
}

// --- pooling ------------------------------------------------------------------

enum class PoolKind { max, avg };

inline Shape pool_output_shape(const Shape& in, const Window& w) {
  return {in.n, in.c, window_out_dim(in.h, w.kh, w.sh, w.ph), window_out_dim(in.w, w.kw, w.sw, w.pw)};
}

/// Max ignores padded positions; avg divides by kh*kw (padded zeros count).
template <typename T>
basic_tensor<T> pool2d(const basic_tensor<T>& input, PoolKind kind, const Window& win) {
  const Shape& s = input.shape();
  const Shape os = pool_output_shape(s, win);
  basic_tensor<T> out(os);
  const T inv = T(1) / static_cast<T>(win.kh * win.kw);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          T acc = kind == PoolKind::max ? -std::numeric_limits<T>::infinity() : T(0);
          for (std::size_t ki = 0; ki < win.kh; ++ki) {
            long long iy = static_cast<long long>(oy * win.sh + ki) - static_cast<long long>(win.ph);
            if (iy < 0 || iy >= static_cast<long long>(s.h)) continue;
            for (std::size_t kj = 0; kj < win.kw; ++kj) {
              long long ix = static_cast<long long>(ox * win.sw + kj) - static_cast<long long>(win.pw);
              if (ix < 0 || ix >= static_cast<long long>(s.w)) continue;
              T v = src[iy * static_cast<long long>(s.w) + ix];
              if (kind == PoolKind::max) {
                if (v > acc) acc = v;
              } else {
                acc += v;
              }
            }
          }
          dst[oy * os.w + ox] = kind == PoolKind::max ? acc : acc * inv;
        }
    }
  return out;
}

/// Max routes the gradient to the first maximal element in window scan order.
template <typename T>
basic_tensor<T> pool2d_backward(const basic_tensor<T>& grad_out, const basic_tensor<T>& input, PoolKind kind,
                                const Window& win) {
  const Shape& s = input.shape();
  const Shape os = pool_output_shape(s, win);
  if (grad_out.shape() != os) throw invalid_shape("pool backward: grad_out " + grad_out.shape().str());
  basic_tensor<T> gin(s);
  const T inv = T(1) / static_cast<T>(win.kh * win.kw);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      const T* dy = grad_out.plane(n, c);
      T* dx = gin.plane(n, c);
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const T g = dy[oy * os.w + ox];
          long long best = -1;
          T best_v = -std::numeric_limits<T>::infinity();
          for (std::size_t ki = 0; ki < win.kh; ++ki) {
            long long iy = static_cast<long long>(oy * win.sh + ki) - static_cast<long long>(win.ph);
            if (iy < 0 || iy >= static_cast<long long>(s.h)) continue;
            for (std::size_t kj = 0; kj < win.kw; ++kj) {
              long long ix = static_cast<long long>(ox * win.sw + kj) - static_cast<long long>(win.pw);
              if (ix < 0 || ix >= static_cast<long long>(s.w)) continue;
              long long at = iy * static_cast<long long>(s.w) + ix;
              if (kind == PoolKind::avg) {
                dx[at] += g * inv;
              } else if (src[at] > best_v) {
                best_v = src[at];
                best = at;
              }
            }
          }
          if (kind == PoolKind::max && best >= 0) dx[best] += g;
        }
    }
  return gin;
}

template <typename T>
basic_tensor<T> global_avg_pool(const basic_tensor<T>& input) {
  const Shape& s = input.shape();
  basic_tensor<T> out({s.n, s.c, 1, 1});
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = input.plane(n, c);
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      out.at(n, c, 0, 0) = acc / static_cast<T>(hw);
    }
  return out;
}

template <typename T>
basic_tensor<T> global_avg_pool_backward(const basic_tensor<T>& grad_out, const Shape& input_shape) {
  basic_tensor<T> gin(input_shape);
  const std::size_t hw = input_shape.plane();
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      T g = grad_out.at(n, c, 0, 0) / static_cast<T>(hw);
      T* dst = gin.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = g;
    }
  return gin;
}

// --- batch normalization ---------------------------------------------------------

enum class Mode { train, eval };

template <typename T>
struct BatchNormState {
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  Mode mode = Mode::train;

  static BatchNormState identity(std::size_t channels) {
    return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)), std::vector<T>(channels, T(0)),
            std::vector<T>(channels, T(1))};
  }
  std::size_t channels() const { return gamma.size(); }
};

/// What a train-mode forward keeps for backward.
template <typename T>
struct BatchNormCache {
  basic_tensor<T> x_hat;
  std::vector<T> inv_std;
  Mode mode = Mode::train;
};

template <typename T>
struct BatchNormResult {
  basic_tensor<T> output;
  BatchNormCache<T> cache;
  std::vector<T> new_running_mean, new_running_var;
};

/// Train mode normalizes with biased batch statistics over (n, h, w) and
/// blends the unbiased variance into the running estimate.
template <typename T>
BatchNormResult<T> batchnorm2d_forward(const basic_tensor<T>& input, const BatchNormState<T>& st) {
  const Shape& s = input.shape();
  const std::size_t C = st.gamma.size();
  if (s.c != C || st.beta.size() != C || st.running_mean.size() != C || st.running_var.size() != C)
    throw invalid_shape("batchnorm: input has " + std::to_string(s.c) + " channels, state has " +
                        std::to_string(C));
  if (!(st.epsilon > T(0))) throw invalid_config("batchnorm: epsilon must be positive");
  BatchNormResult<T> r{basic_tensor<T>(s), {basic_tensor<T>(s), std::vector<T>(C), st.mode}, st.running_mean,
                       st.running_var};
  const std::size_t hw = s.plane();
  const std::size_t count = s.n * hw;
  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (st.mode == Mode::train) {
      T acc = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = input.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      }
      mean = acc / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* src = input.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          T d = src[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(count);
      T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      r.new_running_mean[c] = (T(1) - st.momentum) * st.running_mean[c] + st.momentum * mean;
      r.new_running_var[c] = (T(1) - st.momentum) * st.running_var[c] + st.momentum * unbiased;
    } else {
      mean = st.running_mean[c];
      var = st.running_var[c];
    }
    const T inv = T(1) / std::sqrt(var + st.epsilon);
    r.cache.inv_std[c] = inv;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = input.plane(n, c);
      T* xh = r.cache.x_hat.plane(n, c);
      T* dst = r.output.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (src[i] - mean) * inv;
        dst[i] = st.gamma[c] * xh[i] + st.beta[c];
      }
    }
  }
  return r;
}

template <typename T>
struct BatchNormGrads {
  basic_tensor<T> input;
  std::vector<T> gamma, beta;
};

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const basic_tensor<T>& grad_out, const BatchNormCache<T>& cache,
                                       std::span<const T> gamma) {
  const Shape& s = grad_out.shape();
  if (cache.x_hat.shape() != s) throw invalid_shape("batchnorm backward: grad_out " + s.str());
  const std::size_t C = s.c;
  const std::size_t hw = s.plane();
  const T count = static_cast<T>(s.n * hw);
  BatchNormGrads<T> g{basic_tensor<T>(s), std::vector<T>(C, T(0)), std::vector<T>(C, T(0))};
  for (std::size_t c = 0; c < C; ++c) {
    T sum_dy = T(0), sum_dy_xh = T(0);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy[i];
        sum_dy_xh += dy[i] * xh[i];
      }
    }
    g.beta[c] = sum_dy;
    g.gamma[c] = sum_dy_xh;
    const T k = gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      T* dx = g.input.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        if (cache.mode == Mode::train)
          dx[i] = k * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count);
        else
          dx[i] = k * dy[i];
      }
    }
  }
  return g;
}

// --- activation ---------------------------------------------------------------

template <typename T>
basic_tensor<T> relu(const basic_tensor<T>& input) {
  basic_tensor<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

/// Subgradient at exactly 0 is 0.
template <typename T>
basic_tensor<T> relu_backward(const basic_tensor<T>& grad_out, const basic_tensor<T>& input) {
  if (grad_out.shape() != input.shape()) throw invalid_shape("relu backward: shape mismatch");
  basic_tensor<T> g(input.shape());
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

// --- classifier head ------------------------------------------------------------

/// input n x c x 1 x 1, weight (out, c, 1, 1), bias of length out.
template <typename T>
basic_tensor<T> linear_forward(const basic_tensor<T>& input, const basic_tensor<T>& weight, std::span<const T> bias) {
  const Shape& s = input.shape();
  const Shape& ws = weight.shape();
  const std::size_t in = s.sample();
  if (ws.c * ws.h * ws.w != in || (!bias.empty() && bias.size() != ws.n))
    throw invalid_shape("linear: input " + s.str() + " incompatible with weight " + ws.str());
  basic_tensor<T> out({s.n, ws.n, 1, 1});
  gemm_abt_add(input.data().data(), weight.data().data(), out.data().data(), s.n, in, ws.n);
  if (!bias.empty())
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t o = 0; o < ws.n; ++o) out.at(n, o, 0, 0) += bias[o];
  return out;
}

template <typename T>
struct LinearGrads {
  basic_tensor<T> input;
  basic_tensor<T> weight;
  std::vector<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const basic_tensor<T>& grad_out, const basic_tensor<T>& input,
                               const basic_tensor<T>& weight) {
  const Shape& s = input.shape();
  const Shape& ws = weight.shape();
  const std::size_t in = s.sample();
  if (grad_out.shape() != Shape{s.n, ws.n, 1, 1}) throw invalid_shape("linear backward: grad_out mismatch");
  LinearGrads<T> g{basic_tensor<T>(s), basic_tensor<T>(ws), std::vector<T>(ws.n, T(0))};
  // dx[n x in] = dy[n x out] * W[out x in]
  gemm(grad_out.data().data(), weight.data().data(), g.input.data().data(), s.n, ws.n, in);
  // dW[out x in] = dy^T x
  gemm_atb(grad_out.data().data(), input.data().data(), g.weight.data().data(), s.n, ws.n, in);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o) g.bias[o] += grad_out.at(n, o, 0, 0);
  return g;
}

template <typename T>
struct LossResult {
  T loss;
  basic_tensor<T> grad;
};

/// Mean negative log-likelihood of a max-subtracted softmax.
template <typename T>
LossResult<T> softmax_cross_entropy(const basic_tensor<T>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  const std::size_t k = s.sample();
  if (labels.size() != s.n) throw invalid_shape("softmax_cross_entropy: label count mismatch");
  LossResult<T> r{T(0), basic_tensor<T>(s)};
  const T inv_n = T(1) / static_cast<T>(s.n);
  for (std::size_t n = 0; n < s.n; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= k)
      throw invalid_label("label " + std::to_string(labels[n]) + " outside [0, " + std::to_string(k) + ")");
    const T* z = logits.plane(n, 0);
    T* g = r.grad.plane(n, 0);
    T zmax = *std::max_element(z, z + k);
    T denom = T(0);
    for (std::size_t i = 0; i < k; ++i) denom += std::exp(z[i] - zmax);
    const T log_denom = std::log(denom);
    r.loss += -(z[labels[n]] - zmax - log_denom);
    for (std::size_t i = 0; i < k; ++i) {
      T p = std::exp(z[i] - zmax - log_denom);
      g[i] = (p - (static_cast<std::size_t>(labels[n]) == i ? T(1) : T(0))) * inv_n;
    }
  }
  r.loss *= inv_n;
  return r;
}

}  // namespace cosnet
