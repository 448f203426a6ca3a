#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cosnet/errors.hpp"

namespace cosnet {

/// NCHW extents. All dimensions of a valid shape are >= 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t sample() const noexcept { return c * h * w; }
  constexpr bool valid() const noexcept { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

inline void require_valid(const Shape& s) {
  if (!s.valid()) throw invalid_shape("invalid shape " + s.str() + ": all dims must be >= 1");
}

/// Seeded generator. Uniform and normal transforms are written out here
/// rather than taken from <random> distributions so a seed reproduces the
/// same bits on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (cached_) {
      double v = *cached_;
      cached_.reset();
      return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    return r * std::cos(theta);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t next() { return engine_(); }

  /// Fisher-Yates with this generator.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(engine_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> cached_;
};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace fill {
struct zeros {};
struct ones {};
struct constant {
  double value;
};
struct uniform {
  std::uint64_t seed;
  double lo = 0.0;
  double hi = 1.0;
};
struct normal {
  std::uint64_t seed;
  double mean = 0.0;
  double stddev = 1.0;
};
}  // namespace fill

using Fill = std::variant<fill::zeros, fill::ones, fill::constant, fill::uniform, fill::normal>;

/// Dense NCHW tensor, contiguous, n-major.
template <typename T>
class basic_tensor {
 public:
  using value_type = T;

  basic_tensor() : shape_{}, data_(1, T(0)) {}

  explicit basic_tensor(Shape shape, T value = T(0)) : shape_(shape) {
    require_valid(shape_);
    data_.assign(shape_.numel(), value);
  }

  basic_tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require_valid(shape_);
    if (data_.size() != shape_.numel())
      throw invalid_shape("data size " + std::to_string(data_.size()) + " does not match shape " +
                          shape_.str());
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Pointer to the (n, c) plane.
  T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + index(n, c, 0, 0); }
  const T* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + index(n, c, 0, 0);
  }

  template <typename U>
  basic_tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return basic_tensor<U>(shape_, std::move(out));
  }

  basic_tensor reshaped(Shape s) const { return basic_tensor(s, data_); }

  friend bool operator==(const basic_tensor& a, const basic_tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = basic_tensor<float>;
using Tensor64 = basic_tensor<double>;

/// Row-major dense matrix used as the im2col / GEMM operand.
template <typename T>
struct basic_matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  basic_matrix() = default;
  basic_matrix(std::size_t r, std::size_t c, T v = T(0)) : rows(r), cols(c), data(r * c, v) {
    if (r == 0 || c == 0) throw invalid_shape("matrix dims must be positive");
  }
  basic_matrix(std::size_t r, std::size_t c, std::vector<T> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (r == 0 || c == 0) throw invalid_shape("matrix dims must be positive");
    if (data.size() != r * c) throw invalid_shape("matrix data size mismatch");
  }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
  friend bool operator==(const basic_matrix&, const basic_matrix&) = default;
};

using Matrix = basic_matrix<float>;

template <typename T>
basic_tensor<T> tensor_create(Shape shape, const Fill& how) {
  require_valid(shape);
  basic_tensor<T> t(shape);
  auto d = t.data();
  std::visit(
      [&](const auto& f) {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, fill::zeros>) {
        } else if constexpr (std::is_same_v<F, fill::ones>) {
          std::fill(d.begin(), d.end(), T(1));
        } else if constexpr (std::is_same_v<F, fill::constant>) {
          std::fill(d.begin(), d.end(), static_cast<T>(f.value));
        } else if constexpr (std::is_same_v<F, fill::uniform>) {
          Rng rng(f.seed);
          for (auto& v : d) v = static_cast<T>(rng.uniform(f.lo, f.hi));
        } else {
          Rng rng(f.seed);
          for (auto& v : d) v = static_cast<T>(rng.normal(f.mean, f.stddev));
        }
      },
      how);
  return t;
}

inline Tensor tensor_create(Shape shape, const Fill& how) { return tensor_create<float>(shape, how); }

// --- geometry ---------------------------------------------------------------

struct Window {
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;
  friend constexpr bool operator==(const Window&, const Window&) = default;
};

/// floor((in + 2*pad - k) / stride) + 1; throws when that is < 1.
inline std::size_t window_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw invalid_geometry("stride must be positive");
  if (k == 0) throw invalid_geometry("kernel extent must be positive");
  long long span = static_cast<long long>(in) + 2 * static_cast<long long>(pad) - static_cast<long long>(k);
  if (span < 0)
    throw invalid_geometry("kernel " + std::to_string(k) + " does not fit input " + std::to_string(in) +
                           " with pad " + std::to_string(pad));
  return static_cast<std::size_t>(span) / stride + 1;
}

/// im2col over one sample and a channel range [c_begin, c_end).
/// rows = (c_end-c_begin)*kh*kw ordered channel, kernel-row, kernel-col;
/// cols = H_out*W_out in row-major output order.
template <typename T>
basic_matrix<T> im2col(const basic_tensor<T>& input, std::size_t sample, std::size_t c_begin,
                       std::size_t c_end, const Window& win) {
  const Shape& s = input.shape();
  if (sample >= s.n || c_begin >= c_end || c_end > s.c) throw invalid_shape("im2col: bad sample/channel range");
  const std::size_t ho = window_out_dim(s.h, win.kh, win.sh, win.ph);
  const std::size_t wo = window_out_dim(s.w, win.kw, win.sw, win.pw);
  const std::size_t channels = c_end - c_begin;
  basic_matrix<T> out(channels * win.kh * win.kw, ho * wo);
  T* dst = out.data.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = input.plane(sample, c_begin + c);
    for (std::size_t ki = 0; ki < win.kh; ++ki) {
      for (std::size_t kj = 0; kj < win.kw; ++kj) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long long iy = static_cast<long long>(oy * win.sh + ki) - static_cast<long long>(win.ph);
          if (iy < 0 || iy >= static_cast<long long>(s.h)) {
            std::fill(dst, dst + wo, T(0));
            dst += wo;
            continue;
          }
          const T* row = src + static_cast<std::size_t>(iy) * s.w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long long ix = static_cast<long long>(ox * win.sw + kj) - static_cast<long long>(win.pw);
            *dst++ = (ix < 0 || ix >= static_cast<long long>(s.w)) ? T(0) : row[ix];
          }
        }
      }
    }
  }
  return out;
}

/// Single-sample im2col over all channels.
template <typename T>
basic_matrix<T> im2col(const basic_tensor<T>& input, const Window& win) {
  if (input.shape().n != 1) throw invalid_shape("im2col expects n = 1; loop over samples");
  return im2col(input, 0, 0, input.shape().c, win);
}

/// Adjoint of im2col: scatter-adds columns back into grad (one sample, channel range).
template <typename T>
void col2im_add(const basic_matrix<T>& cols, basic_tensor<T>& grad, std::size_t sample,
                std::size_t c_begin, std::size_t c_end, const Window& win) {
  const Shape& s = grad.shape();
  const std::size_t ho = window_out_dim(s.h, win.kh, win.sh, win.ph);
  const std::size_t wo = window_out_dim(s.w, win.kw, win.sw, win.pw);
  const T* src = cols.data.data();
  for (std::size_t c = 0; c < c_end - c_begin; ++c) {
    T* dst = grad.plane(sample, c_begin + c);
    for (std::size_t ki = 0; ki < win.kh; ++ki) {
      for (std::size_t kj = 0; kj < win.kw; ++kj) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long long iy = static_cast<long long>(oy * win.sh + ki) - static_cast<long long>(win.ph);
          if (iy < 0 || iy >= static_cast<long long>(s.h)) {
            src += wo;
            continue;
          }
          T* row = dst + static_cast<std::size_t>(iy) * s.w;
          for (std::size_t ox = 0; ox < wo; ++ox, ++src) {
            const long long ix = static_cast<long long>(ox * win.sw + kj) - static_cast<long long>(win.pw);
            if (ix >= 0 && ix < static_cast<long long>(s.w)) row[ix] += *src;
          }
        }
      }
    }
  }
}

// --- GEMM ---------------------------------------------------------------------
//
// All products accumulate sequentially over the inner dimension in T, so
// every output element equals ((0 + a0*b0) + a1*b1) + ... regardless of
// blocking. Results are bit-reproducible run to run.

/// c[m x n] = a[m x k] * b[k x n], raw row-major buffers.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// c[m x n] += a[m x k] * b[n x k]^T.
template <typename T>
void gemm_abt_add(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

/// c[k x n] = a[m x k]^T * b[m x n].
template <typename T>
void gemm_atb(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + k * n, T(0));
  for (std::size_t p = 0; p < m; ++p) {
    const T* ap = a + p * k;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < k; ++i) {
      const T av = ap[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
basic_matrix<T> matmul(const basic_matrix<T>& a, const basic_matrix<T>& b) {
  if (a.cols != b.rows)
    throw invalid_shape("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " * " +
                        std::to_string(b.rows) + "x" + std::to_string(b.cols));
  basic_matrix<T> c(a.rows, b.cols);
  gemm(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
  return c;
}

// --- elementwise --------------------------------------------------------------

enum class ew_op { add, sub, mul, scale };

template <typename T>
basic_tensor<T> elementwise(ew_op op, const basic_tensor<T>& a, const basic_tensor<T>* b = nullptr,
                            T scale_by = T(1)) {
  if (op == ew_op::scale) {
    basic_tensor<T> out = a;
    for (auto& v : out.data()) v *= scale_by;
    return out;
  }
  if (b == nullptr) throw invalid_shape("binary elementwise op needs two operands");
  if (a.shape() != b->shape())
    throw invalid_shape("elementwise shape mismatch " + a.shape().str() + " vs " + b->shape().str());
  basic_tensor<T> out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b->data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    switch (op) {
      case ew_op::add: o[i] = x[i] + y[i]; break;
      case ew_op::sub: o[i] = x[i] - y[i]; break;
      case ew_op::mul: o[i] = x[i] * y[i]; break;
      case ew_op::scale: break;
    }
  }
  return out;
}

template <typename T>
basic_tensor<T> add(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return elementwise(ew_op::add, a, &b);
}
template <typename T>
basic_tensor<T> sub(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return elementwise(ew_op::sub, a, &b);
}
template <typename T>
basic_tensor<T> mul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return elementwise(ew_op::mul, a, &b);
}
template <typename T>
basic_tensor<T> scale(const basic_tensor<T>& a, T v) {
  return elementwise(ew_op::scale, a, static_cast<const basic_tensor<T>*>(nullptr), v);
}

/// In-place a += b.
template <typename T>
void accumulate(basic_tensor<T>& a, const basic_tensor<T>& b) {
  if (a.shape() != b.shape())
    throw invalid_shape("accumulate shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

template <typename T>
double max_abs_diff(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  if (a.shape() != b.shape()) throw invalid_shape("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool all_finite(const basic_tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace cosnet
