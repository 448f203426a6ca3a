// Independent reference implementations shared by the test suites. Nothing
// here calls into the library's kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "cosnet/cosnet.hpp"

namespace oracle {

using cosnet::Shape;
using cosnet::Tensor64;

/// Central differences of `loss` with respect to every element of `param`.
inline std::vector<double> numeric_grad(std::vector<double>& param, const std::function<double()>& loss,
                                        double eps = 1e-3) {
  std::vector<double> g(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double orig = param[i];
    param[i] = orig + eps;
    const double up = loss();
    param[i] = orig - eps;
    const double down = loss();
    param[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double rel_error(double a, double n, double floor = 1.0) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

template <typename A, typename B>
double max_rel_error(const A& analytic, const B& numeric, double floor = 1.0) {
  double e = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) e = std::max(e, rel_error(analytic[i], numeric[i], floor));
  return e;
}

/// Weighted-sum loss `sum(r .* y)` so every output element carries a distinct gradient.
inline double dot(const Tensor64& y, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += y[i] * r[i];
  return s;
}

inline std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  cosnet::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor64 from(const Shape& s, std::vector<double> v) { return Tensor64(s, std::move(v)); }

/// Direct nested-loop grouped convolution with zero padding.
template <typename T>
cosnet::basic_tensor<T> conv(const cosnet::basic_tensor<T>& x, const cosnet::basic_tensor<T>& w,
                             const cosnet::ConvParams& p, const std::vector<T>* bias = nullptr) {
  const Shape& s = x.shape();
  const long ho = (static_cast<long>(s.h) + 2 * static_cast<long>(p.ph) - static_cast<long>(p.kh)) /
                      static_cast<long>(p.sh) + 1;
  const long wo = (static_cast<long>(s.w) + 2 * static_cast<long>(p.pw) - static_cast<long>(p.kw)) /
                      static_cast<long>(p.sw) + 1;
  cosnet::basic_tensor<T> y({s.n, p.out_channels, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  const std::size_t cin_g = p.in_channels / p.groups, cout_g = p.out_channels / p.groups;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < p.out_channels; ++o) {
      const std::size_t g = o / cout_g;
      for (long oy = 0; oy < ho; ++oy)
        for (long ox = 0; ox < wo; ++ox) {
          double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
          for (std::size_t ci = 0; ci < cin_g; ++ci)
            for (std::size_t ky = 0; ky < p.kh; ++ky)
              for (std::size_t kx = 0; kx < p.kw; ++kx) {
                const long iy = oy * static_cast<long>(p.sh) + static_cast<long>(ky) - static_cast<long>(p.ph);
                const long ix = ox * static_cast<long>(p.sw) + static_cast<long>(kx) - static_cast<long>(p.pw);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
                acc += static_cast<double>(x.at(n, g * cin_g + ci, static_cast<std::size_t>(iy),
                                                static_cast<std::size_t>(ix))) *
                       static_cast<double>(w.at(o, ci, ky, kx));
              }
          y.at(n, o, static_cast<std::size_t>(oy), static_cast<std::size_t>(ox)) = static_cast<T>(acc);
        }
    }
  return y;
}

}  // namespace oracle
