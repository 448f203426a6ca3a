#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cosnet/arch.hpp"
#include "cosnet/autodiff.hpp"
#include "cosnet/graph.hpp"

namespace cosnet {

enum class PlanMode { batched, unrolled };

inline const char* to_string(PlanMode m) { return m == PlanMode::batched ? "batched" : "unrolled"; }

struct PlanStep {
  int node = 0;
  std::string op;
};

/// A plan-graph tensor backed by a contiguous element range of a tensor
/// in the source (batched) weight table.
struct WeightView {
  int node = 0;
  std::string param;
  int source = 0;
  std::size_t offset = 0;
  std::size_t count = 0;
};

struct ExecutionPlan {
  PlanMode mode = PlanMode::batched;
  Graph graph;
  std::vector<PlanStep> steps;
  /// Output buffer id per step; buffers are reused once their tensor is dead.
  std::vector<int> buffers;
  int buffer_count = 0;
  std::vector<WeightView> views;

  std::size_t conv_steps() const {
    std::size_t n = 0;
    for (const auto& s : steps)
      if (graph.node(s.node).kind == NodeKind::conv) ++n;
    return n;
  }
};

namespace detail {

inline void assign_buffers(ExecutionPlan& p) {
  const Graph& g = p.graph;
  std::vector<int> remaining(g.size(), 0);
  for (const auto& n : g.nodes())
    for (int in : n.inputs) ++remaining[static_cast<std::size_t>(in)];
  std::vector<int> buf(g.size(), -1);
  std::vector<int> free_list;
  for (const auto& n : g.nodes()) {
    int b;
    if (!free_list.empty()) {
      b = free_list.back();
      free_list.pop_back();
    } else {
      b = p.buffer_count++;
    }
    buf[static_cast<std::size_t>(n.id)] = b;
    for (int in : n.inputs)
      if (--remaining[static_cast<std::size_t>(in)] == 0) free_list.push_back(buf[static_cast<std::size_t>(in)]);
  }
  p.buffers = std::move(buf);
}

inline void add_full_views(ExecutionPlan& p, const Graph& src, int src_id, int dst_id) {
  auto it = src.weights().entries.find(src_id);
  if (it == src.weights().entries.end()) return;
  for (const auto& [name, t] : it->second) p.views.push_back({dst_id, name, src_id, 0, t.numel()});
}

}  // namespace detail

/// Batched keeps the graph as built. Unrolled replaces every grouped column
/// or pair-fusion conv by one conv per group on a channel slice, followed by
/// a concat; BN and everything after it are unchanged.
inline ExecutionPlan plan(const Graph& g, PlanMode mode) {
  ExecutionPlan p;
  p.mode = mode;
  GraphBuilder b(g.name());
  std::vector<int> map(g.size(), -1);
  const Shape& is = g.input_shape();
  for (const auto& n : g.nodes()) {
    std::vector<int> ins;
    for (int in : n.inputs) ins.push_back(map[static_cast<std::size_t>(in)]);
    int id;
    if (n.kind == NodeKind::input) {
      id = b.input(is.c, is.h, is.w, n.name);
    } else if (n.kind == NodeKind::output) {
      continue;
    } else if (mode == PlanMode::unrolled && n.kind == NodeKind::conv && n.conv().groups > 1) {
      if (n.role != NodeRole::column_level && n.role != NodeRole::pair_fusion)
        throw plan_error("cannot unroll grouped conv '" + n.name + "' (node " + std::to_string(n.id) +
                         "): not a column level or pair fusion");
      const ConvParams& cp = n.conv();
      const std::size_t G = cp.groups;
      const std::size_t cin = cp.in_per_group();
      const std::size_t cout = cp.out_per_group();
      const std::size_t per_group = cout * cin * cp.kh * cp.kw;
      ConvParams single = cp;
      single.in_channels = cin;
      single.out_channels = cout;
      single.groups = 1;
      LayerNode proto = n;
      proto.config = single;
      std::vector<int> outs;
      for (std::size_t gi = 0; gi < G; ++gi) {
        const std::string cname = n.name + ".c" + std::to_string(gi);
        int x = b.slice(ins[0], gi * cin, (gi + 1) * cin, cname + ".in", n.role);
        int y = b.copy(proto, {x}, cname);
        p.views.push_back({y, "weight", n.id, gi * per_group, per_group});
        if (cp.has_bias) p.views.push_back({y, "bias", n.id, gi * cout, cout});
        outs.push_back(y);
      }
      id = b.concat(outs, n.name + ".cat", n.role);
    } else {
      id = b.copy(n, ins, n.name);
      detail::add_full_views(p, g, n.id, id);
    }
    map[static_cast<std::size_t>(n.id)] = id;
  }
  const int out_src = g.node(g.output_id()).inputs.at(0);
  p.graph = b.finish(map[static_cast<std::size_t>(out_src)], 0, WeightInit::zeros);
  for (const auto& n : p.graph.nodes()) {
    std::string op = to_string(n.kind);
    const std::string cfg = describe_config(n);
    if (!cfg.empty()) op += " " + cfg;
    p.steps.push_back({n.id, std::move(op)});
  }
  detail::assign_buffers(p);
  return p;
}

/// Weight table for the plan graph, sliced out of the batched table.
template <typename T>
basic_weight_table<T> materialize_weights(const ExecutionPlan& p, const basic_weight_table<T>& batched) {
  basic_weight_table<T> out;
  for (const auto& v : p.views) {
    const auto& src = batched.get(v.source, v.param);
    if (v.offset + v.count > src.numel())
      throw invalid_shape("weight view of node " + std::to_string(v.node) + " exceeds its source tensor");
    const Shape target = p.graph.weights().get(v.node, v.param).shape();
    if (target.numel() != v.count) throw invalid_shape("weight view size does not match plan tensor " + v.param);
    std::vector<T> data(src.data().begin() + static_cast<std::ptrdiff_t>(v.offset),
                        src.data().begin() + static_cast<std::ptrdiff_t>(v.offset + v.count));
    out.entries[v.node].emplace(v.param, basic_tensor<T>(target, std::move(data)));
  }
  return out;
}

/// Inverse of materialize_weights: writes plan tensors back into batched layout.
template <typename T>
basic_weight_table<T> reassemble_weights(const ExecutionPlan& p, const basic_weight_table<T>& plan_weights,
                                         const Graph& batched_graph) {
  basic_weight_table<T> out;
  for (const auto& [id, m] : batched_graph.weights().entries)
    for (const auto& [name, t] : m) out.entries[id].emplace(name, basic_tensor<T>(t.shape()));
  for (const auto& v : p.views) {
    const auto& src = plan_weights.get(v.node, v.param);
    auto dst = out.get(v.source, v.param).data();
    std::copy(src.data().begin(), src.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(v.offset));
  }
  return out;
}

/// True when the views of each source tensor tile it exactly (no overlap, no gap).
inline bool views_partition(const ExecutionPlan& p, const Graph& batched_graph) {
  std::map<std::pair<int, std::string>, std::vector<std::pair<std::size_t, std::size_t>>> ranges;
  for (const auto& v : p.views) ranges[{v.source, v.param}].emplace_back(v.offset, v.count);
  for (const auto& [id, m] : batched_graph.weights().entries) {
    for (const auto& [name, t] : m) {
      auto it = ranges.find({id, name});
      if (it == ranges.end()) return false;
      auto r = it->second;
      std::sort(r.begin(), r.end());
      std::size_t next = 0;
      for (const auto& [off, cnt] : r) {
        if (off != next || cnt == 0) return false;
        next = off + cnt;
      }
      if (next != t.numel()) return false;
    }
  }
  return ranges.size() == [&] {
    std::size_t n = 0;
    for (const auto& [id, m] : batched_graph.weights().entries) n += m.size();
    return n;
  }();
}

template <typename T>
basic_tensor<T> execute(const ExecutionPlan& p, const basic_tensor<T>& input, const basic_weight_table<T>& batched,
                        Mode mode = Mode::eval) {
  return graph_forward(p.graph, materialize_weights(p, batched), input, mode).output;
}

// --- equivalence ---------------------------------------------------------------------

struct TrialResult {
  std::uint64_t seed = 0;
  std::size_t columns = 0, kernels = 0, depth = 0;
  double max_abs_diff = 0;
  bool pass = false;
};

struct EquivalenceReport {
  std::vector<TrialResult> trials;
  double tol = 0;
  bool pass = false;
  double max_abs_diff() const {
    double m = 0;
    for (const auto& t : trials) m = std::max(m, t.max_abs_diff);
    return m;
  }
};

/// Weights with randomized BN affine and running statistics.
inline WeightTable randomized_weights(const Graph& g, std::uint64_t seed) {
  WeightTable w = init_weights(g, seed);
  Rng rng(derive_seed(seed, 0xE0));
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::bn) continue;
    for (auto& v : w.get(n.id, "gamma").data()) v = static_cast<float>(rng.uniform(0.5, 1.5));
    for (auto& v : w.get(n.id, "beta").data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : w.get(n.id, "running_mean").data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : w.get(n.id, "running_var").data()) v = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  return w;
}

inline TrialResult equivalence_trial(const UnitConfig& cfg, std::size_t res, std::uint64_t seed, double tol) {
  const Graph g = build_unit_graph(cfg, res, seed);
  const WeightTable w = randomized_weights(g, seed);
  const Tensor x = tensor_create(Shape{1, cfg.in_channels, res, res}, fill::normal{derive_seed(seed, 0xA1), 0.0, 1.0});
  const auto pb = plan(g, PlanMode::batched);
  const auto pu = plan(g, PlanMode::unrolled);
  const Tensor yb = execute(pb, x, w);
  const Tensor yu = execute(pu, x, w);
  TrialResult t{seed, cfg.columns, cfg.kernels, cfg.depth, max_abs_diff(yb, yu), false};
  t.pass = t.max_abs_diff <= tol;
  return t;
}

/// Runs `trials` randomized trials of one unit configuration.
inline EquivalenceReport equivalence_check(const UnitConfig& cfg, std::size_t trials, std::uint64_t seed, double tol,
                                           std::size_t res = 32) {
  EquivalenceReport r;
  r.tol = tol;
  for (std::size_t i = 0; i < trials; ++i) r.trials.push_back(equivalence_trial(cfg, res, derive_seed(seed, i), tol));
  r.pass = std::all_of(r.trials.begin(), r.trials.end(), [](const TrialResult& t) { return t.pass; });
  return r;
}

/// Trials over the first unit of a variant.
inline EquivalenceReport equivalence_check(const VariantSpec& spec, std::size_t trials, std::uint64_t seed, double tol,
                                           std::size_t res = 32) {
  if (spec.family != Family::cosnet) throw invalid_config("equivalence check needs a CoSNet variant");
  spec.validate();
  return equivalence_check(spec.unit(0), trials, seed, tol, res);
}

// --- bench ---------------------------------------------------------------------------

struct BenchStats {
  std::size_t iters = 0;
  std::size_t warmup = 0;
  double mean_ms = 0, p50_ms = 0, p95_ms = 0;
  std::vector<double> samples_ms;
};

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  // Nearest rank.
  std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

inline BenchStats bench(const ExecutionPlan& p, const WeightTable& batched, const Shape& input_shape,
                        std::size_t warmup, std::size_t iters, std::uint64_t seed = 0) {
  if (iters == 0) throw invalid_config("bench: iters must be >= 1");
  const Tensor x = tensor_create(input_shape, fill::normal{seed, 0.0, 1.0});
  const WeightTable w = materialize_weights(p, batched);
  BenchStats st;
  st.iters = iters;
  st.warmup = warmup;
  for (std::size_t i = 0; i < warmup + iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto y = graph_forward(p.graph, w, x, Mode::eval);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup) st.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double sum = 0;
  for (double s : st.samples_ms) sum += s;
  st.mean_ms = sum / static_cast<double>(iters);
  st.p50_ms = iters == 1 ? st.mean_ms : percentile(st.samples_ms, 0.5);
  st.p95_ms = iters == 1 ? st.mean_ms : percentile(st.samples_ms, 0.95);
  return st;
}

}  // namespace cosnet
