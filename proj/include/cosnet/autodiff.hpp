#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cosnet/graph.hpp"
#include "cosnet/ops.hpp"

namespace cosnet {

/// Activations cached by a forward pass. Only train-mode passes keep a
/// complete tape; eval-mode passes free activations after their last use.
template <typename T>
struct Tape {
  Mode mode = Mode::eval;
  std::vector<std::optional<basic_tensor<T>>> values;
  std::map<int, BatchNormCache<T>> bn;
};

template <typename T>
struct RunningStats {
  std::vector<T> mean, var;
};

template <typename T>
struct ForwardResult {
  basic_tensor<T> output;
  Tape<T> tape;
  /// New BN running statistics per bn node (train mode only).
  std::map<int, RunningStats<T>> running_stats;
};

namespace detail {

template <typename T>
std::vector<T> to_vec(const basic_tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
BatchNormState<T> bn_state(const LayerNode& node, const basic_weight_table<T>& w, Mode mode) {
  const auto& cfg = node.bn();
  BatchNormState<T> st{to_vec(w.get(node.id, "gamma")), to_vec(w.get(node.id, "beta")),
                       to_vec(w.get(node.id, "running_mean")), to_vec(w.get(node.id, "running_var"))};
  st.momentum = static_cast<T>(cfg.momentum);
  st.epsilon = static_cast<T>(cfg.epsilon);
  st.mode = mode;
  return st;
}

template <typename T>
std::span<const T> bias_of(const LayerNode& node, const basic_weight_table<T>& w) {
  if (node.kind == NodeKind::conv && !node.conv().has_bias) return {};
  return w.get(node.id, "bias").data();
}

}  // namespace detail

/// Evaluates the graph in id (topological) order.
template <typename T>
ForwardResult<T> graph_forward(const Graph& g, const basic_weight_table<T>& w, const basic_tensor<T>& input, Mode mode) {
  {
    const Shape& s = input.shape();
    const Shape& d = g.input_shape();
    if (s.c != d.c || s.h != d.h || s.w != d.w)
      throw graph_invalid("input " + s.str() + " does not match declared input 1x" + std::to_string(d.c) + "x" +
                          std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  ForwardResult<T> r;
  r.tape.mode = mode;
  auto& vals = r.tape.values;
  vals.assign(g.size(), std::nullopt);

  std::vector<int> remaining(g.size(), 0);
  for (const auto& n : g.nodes())
    for (int in : n.inputs) ++remaining[static_cast<std::size_t>(in)];

  auto value = [&](const LayerNode& node, std::size_t i) -> const basic_tensor<T>& {
    const int id = node.inputs.at(i);
    const auto& v = vals[static_cast<std::size_t>(id)];
    if (!v) throw graph_invalid("node '" + node.name + "' read unevaluated predecessor " + std::to_string(id));
    return *v;
  };

  for (const auto& node : g.nodes()) {
    basic_tensor<T> out;
    try {
      switch (node.kind) {
        case NodeKind::input: out = input; break;
        case NodeKind::conv:
          out = conv2d_forward(value(node, 0), w.get(node.id, "weight"), detail::bias_of(node, w), node.conv());
          break;
        case NodeKind::bn: {
          auto res = batchnorm2d_forward(value(node, 0), detail::bn_state(node, w, mode));
          out = std::move(res.output);
          if (mode == Mode::train) {
            r.tape.bn.emplace(node.id, std::move(res.cache));
            r.running_stats.emplace(node.id, RunningStats<T>{std::move(res.new_running_mean), std::move(res.new_running_var)});
          }
          break;
        }
        case NodeKind::relu: out = relu(value(node, 0)); break;
        case NodeKind::pool_max: out = pool2d(value(node, 0), PoolKind::max, node.pool().window); break;
        case NodeKind::pool_avg: out = pool2d(value(node, 0), PoolKind::avg, node.pool().window); break;
        case NodeKind::gap: out = global_avg_pool(value(node, 0)); break;
        case NodeKind::linear:
          out = linear_forward(value(node, 0), w.get(node.id, "weight"), detail::bias_of(node, w));
          break;
        case NodeKind::ir: out = input_replicate(value(node, 0), std::get<ReplicateConfig>(node.config).m); break;
        case NodeKind::block_sum:
          out = channel_block_sum(value(node, 0), std::get<BlockSumConfig>(node.config).m);
          break;
        case NodeKind::slice: {
          const auto& s = std::get<SliceConfig>(node.config);
          out = channel_slice(value(node, 0), s.begin, s.end);
          break;
        }
        case NodeKind::concat: {
          std::vector<const basic_tensor<T>*> parts;
          for (std::size_t i = 0; i < node.inputs.size(); ++i) parts.push_back(&value(node, i));
          out = channel_concat<T>(std::span<const basic_tensor<T>* const>(parts));
          break;
        }
        case NodeKind::add: {
          out = value(node, 0);
          for (std::size_t i = 1; i < node.inputs.size(); ++i) accumulate(out, value(node, i));
          break;
        }
        case NodeKind::output: out = value(node, 0); break;
      }
    } catch (const graph_invalid&) {
      throw;
    } catch (const error& e) {
      throw graph_invalid("node " + std::to_string(node.id) + " '" + node.name + "': " + e.what());
    }
    vals[static_cast<std::size_t>(node.id)] = std::move(out);
    if (mode == Mode::eval) {
      for (int in : node.inputs)
        if (--remaining[static_cast<std::size_t>(in)] == 0) vals[static_cast<std::size_t>(in)].reset();
    }
  }
  r.output = *vals[static_cast<std::size_t>(g.output_id())];
  if (mode == Mode::eval) vals.clear();
  return r;
}

template <typename T>
struct Gradients {
  /// Same keys as the weight table, parameters only (no running stats).
  basic_weight_table<T> weights;
  basic_tensor<T> input;
};

/// Reverse pass over a train-mode tape. Fan-out gradients are summed.
template <typename T>
Gradients<T> graph_backward(const Graph& g, const basic_weight_table<T>& w, const Tape<T>& tape,
                            const basic_tensor<T>& grad_output) {
  if (tape.mode != Mode::train || tape.values.size() != g.size())
    throw missing_tape("graph_backward needs the tape of a train-mode forward");
  const auto& vals = tape.values;
  auto value = [&](int id) -> const basic_tensor<T>& { return *vals[static_cast<std::size_t>(id)]; };
  if (grad_output.shape() != value(g.output_id()).shape())
    throw invalid_shape("grad_output " + grad_output.shape().str() + " expected " + value(g.output_id()).shape().str());

  std::vector<std::optional<basic_tensor<T>>> grads(g.size());
  auto push = [&](int id, basic_tensor<T> gr) {
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (slot)
      accumulate(*slot, gr);
    else
      slot = std::move(gr);
  };
  grads[static_cast<std::size_t>(g.output_id())] = grad_output;

  Gradients<T> out;
  const auto& nodes = g.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const LayerNode& node = *it;
    auto& slot = grads[static_cast<std::size_t>(node.id)];
    if (!slot) {
      // Unreached node: parameters still get (zero) gradients.
      if (node.kind == NodeKind::conv || node.kind == NodeKind::linear || node.kind == NodeKind::bn)
        slot = basic_tensor<T>(value(node.id).shape());
      else
        continue;
    }
    const basic_tensor<T>& gy = *slot;
    switch (node.kind) {
      case NodeKind::input: out.input = gy; break;
      case NodeKind::output: push(node.inputs[0], gy); break;
      case NodeKind::conv: {
        const auto& p = node.conv();
        auto cg = conv2d_backward(gy, value(node.inputs[0]), w.get(node.id, "weight"), p);
        out.weights.entries[node.id].emplace("weight", std::move(cg.weight));
        if (cg.bias) out.weights.entries[node.id].emplace("bias", basic_tensor<T>({p.out_channels, 1, 1, 1}, std::move(*cg.bias)));
        push(node.inputs[0], std::move(cg.input));
        break;
      }
      case NodeKind::bn: {
        auto bg = batchnorm2d_backward(gy, tape.bn.at(node.id), w.get(node.id, "gamma").data());
        const std::size_t c = bg.gamma.size();
        out.weights.entries[node.id].emplace("gamma", basic_tensor<T>({c, 1, 1, 1}, std::move(bg.gamma)));
        out.weights.entries[node.id].emplace("beta", basic_tensor<T>({c, 1, 1, 1}, std::move(bg.beta)));
        push(node.inputs[0], std::move(bg.input));
        break;
      }
      case NodeKind::relu: push(node.inputs[0], relu_backward(gy, value(node.inputs[0]))); break;
      case NodeKind::pool_max:
        push(node.inputs[0], pool2d_backward(gy, value(node.inputs[0]), PoolKind::max, node.pool().window));
        break;
      case NodeKind::pool_avg:
        push(node.inputs[0], pool2d_backward(gy, value(node.inputs[0]), PoolKind::avg, node.pool().window));
        break;
      case NodeKind::gap: push(node.inputs[0], global_avg_pool_backward(gy, value(node.inputs[0]).shape())); break;
      case NodeKind::linear: {
        auto lg = linear_backward(gy, value(node.inputs[0]), w.get(node.id, "weight"));
        const std::size_t o = lg.bias.size();
        out.weights.entries[node.id].emplace("weight", std::move(lg.weight));
        out.weights.entries[node.id].emplace("bias", basic_tensor<T>({o, 1, 1, 1}, std::move(lg.bias)));
        push(node.inputs[0], std::move(lg.input));
        break;
      }
      case NodeKind::ir:
        push(node.inputs[0], input_replicate_backward(gy, std::get<ReplicateConfig>(node.config).m));
        break;
      case NodeKind::block_sum:
        push(node.inputs[0], channel_block_sum_backward(gy, std::get<BlockSumConfig>(node.config).m));
        break;
      case NodeKind::slice: {
        basic_tensor<T> gin(value(node.inputs[0]).shape());
        channel_slice_backward_add(gin, gy, std::get<SliceConfig>(node.config).begin);
        push(node.inputs[0], std::move(gin));
        break;
      }
      case NodeKind::concat: {
        std::size_t begin = 0;
        for (int in : node.inputs) {
          const std::size_t c = value(in).shape().c;
          push(in, channel_slice(gy, begin, begin + c));
          begin += c;
        }
        break;
      }
      case NodeKind::add:
        for (int in : node.inputs) push(in, gy);
        break;
    }
    slot.reset();
  }
  return out;
}

// --- finite-difference check -------------------------------------------------------

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-3;
  std::uint64_t seed = 0;
  std::size_t max_params = 10000;
  /// Scale below which errors are compared absolutely: err = |a-n| / max(|a|, |n|, floor).
  double floor = 1.0;
  /// Randomize BN gamma/beta around their init so the check covers the affine path.
  bool randomize_bn = true;
  /// Skip elements whose +-eps evaluations flip the sign of any ReLU input.
  bool skip_kinks = true;
};

struct GradCheckReport {
  std::map<std::string, double> param_errors;  // "node.param" -> max error
  double input_error = 0.0;
  double max_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // elements whose difference straddled a ReLU kink
  double eps = 0.0;
  double tol = 0.0;
  bool pass = false;
};

using BackwardFn = std::function<Gradients<double>(const Graph&, const basic_weight_table<double>&,
                                                   const Tape<double>&, const Tensor64&)>;

inline double scalar_sum(const Tensor64& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

namespace detail {

/// Sign pattern of every ReLU input of a train-mode tape.
inline std::vector<bool> relu_pattern(const Graph& g, const Tape<double>& tape) {
  std::vector<bool> out;
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::relu) continue;
    for (double v : tape.values[static_cast<std::size_t>(n.inputs[0])]->data()) out.push_back(v > 0.0);
  }
  return out;
}

}  // namespace detail

/// Central differences of sum(outputs) in 64-bit against the analytic
/// reverse pass, per element, for every parameter and the input. BN runs
/// in train mode, so the input batch should hold at least two samples.
inline GradCheckReport grad_check(const Graph& g, const Shape& input_shape, const GradCheckOptions& opt = {},
                                  BackwardFn backward = nullptr) {
  std::size_t params = 0;
  for (const auto& [id, m] : g.weights().entries)
    for (const auto& [name, t] : m)
      if (!WeightTable::is_buffer(name)) params += t.numel();
  if (params > opt.max_params)
    throw too_large("grad_check: " + std::to_string(params) + " parameters exceeds guard " +
                    std::to_string(opt.max_params));
  if (!backward) backward = [](const Graph& gg, const basic_weight_table<double>& ww, const Tape<double>& tt,
                               const Tensor64& go) { return graph_backward(gg, ww, tt, go); };

  basic_weight_table<double> w = g.weights().cast<double>();
  if (opt.randomize_bn) {
    Rng rng(derive_seed(opt.seed, 0xB4));
    for (const auto& node : g.nodes()) {
      if (node.kind != NodeKind::bn) continue;
      for (auto& v : w.get(node.id, "gamma").data()) v = rng.uniform(0.5, 1.5);
      for (auto& v : w.get(node.id, "beta").data()) v = rng.uniform(-0.5, 0.5);
    }
  }
  Tensor64 x = tensor_create<double>(input_shape, fill::normal{derive_seed(opt.seed, 0x1), 0.0, 1.0});

  auto fwd = graph_forward(g, w, x, Mode::train);
  const std::vector<bool> base = opt.skip_kinks ? detail::relu_pattern(g, fwd.tape) : std::vector<bool>{};
  Tensor64 ones(fwd.output.shape(), 1.0);
  Gradients<double> analytic = backward(g, w, fwd.tape, ones);

  GradCheckReport rep;
  rep.eps = opt.eps;
  rep.tol = opt.tol;

  // Returns the loss, or nullopt when the evaluation crossed a kink.
  auto loss = [&]() -> std::optional<double> {
    auto r = graph_forward(g, w, x, Mode::train);
    if (opt.skip_kinks && detail::relu_pattern(g, r.tape) != base) return std::nullopt;
    return scalar_sum(r.output);
  };
  // Max error over the elements of `t`, against analytic gradient `a`.
  auto check = [&](basic_tensor<double>& t, const Tensor64* a) {
    double worst = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t[i] = orig + opt.eps;
      const auto up = loss();
      t[i] = orig - opt.eps;
      const auto down = up ? loss() : std::nullopt;
      t[i] = orig;
      if (!up || !down) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (*up - *down) / (2.0 * opt.eps);
      const double an = a ? (*a)[i] : 0.0;
      worst = std::max(worst, std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), opt.floor}));
      ++rep.checked;
    }
    return worst;
  };
  auto note = [&](const std::string& key, double e) {
    if (rep.worst.empty() || e > rep.max_error) {
      rep.max_error = e;
      rep.worst = key;
    }
  };

  for (auto& [id, m] : w.entries) {
    for (auto& [name, t] : m) {
      if (WeightTable::is_buffer(name)) continue;
      const std::string key = g.node(id).name + "." + name;
      const double e = check(t, analytic.weights.has(id, name) ? &analytic.weights.get(id, name) : nullptr);
      rep.param_errors[key] = e;
      note(key, e);
    }
  }
  rep.input_error = check(x, &analytic.input);
  note("input", rep.input_error);
  rep.pass = rep.max_error <= opt.tol;
  return rep;
}

}  // namespace cosnet
