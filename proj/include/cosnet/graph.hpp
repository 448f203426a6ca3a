#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cosnet/ops.hpp"
#include "cosnet/tensor.hpp"

namespace cosnet {

enum class NodeKind {
  input,
  conv,
  bn,
  relu,
  pool_max,
  pool_avg,
  gap,
  linear,
  ir,
  concat,
  block_sum,
  slice,
  add,
  output,
};

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::input: return "input";
    case NodeKind::conv: return "conv";
    case NodeKind::bn: return "bn";
    case NodeKind::relu: return "relu";
    case NodeKind::pool_max: return "pool_max";
    case NodeKind::pool_avg: return "pool_avg";
    case NodeKind::gap: return "gap";
    case NodeKind::linear: return "linear";
    case NodeKind::ir: return "ir";
    case NodeKind::concat: return "concat";
    case NodeKind::block_sum: return "block_sum";
    case NodeKind::slice: return "slice";
    case NodeKind::add: return "add";
    case NodeKind::output: return "output";
  }
  return "?";
}

/// Structural role of a node inside a built architecture. Used by the
/// planner (which grouped convs may be unrolled) and by describe.
enum class NodeRole {
  none,
  stem,
  squeeze,       // L_s
  column_level,  // one level of the M columns, realized as a grouped conv
  pair_fusion,   // PFF 1x1 between adjacent column pairs
  fuse,          // L_f
  projection,    // L_p and its pooling
  shallow_skip,
  head,
};

inline const char* to_string(NodeRole r) {
  switch (r) {
    case NodeRole::none: return "";
    case NodeRole::stem: return "stem";
    case NodeRole::squeeze: return "squeeze";
    case NodeRole::column_level: return "column";
    case NodeRole::pair_fusion: return "pair-fusion";
    case NodeRole::fuse: return "fuse";
    case NodeRole::projection: return "projection";
    case NodeRole::shallow_skip: return "shallow-skip";
    case NodeRole::head: return "head";
  }
  return "?";
}

struct BnConfig {
  std::size_t channels = 1;
  double momentum = 0.1;
  double epsilon = 1e-5;
};
struct PoolConfig {
  Window window;
};
struct LinearConfig {
  std::size_t in = 1;
  std::size_t out = 1;
};
struct ReplicateConfig {
  std::size_t m = 1;
};
struct BlockSumConfig {
  std::size_t m = 1;
};
struct SliceConfig {
  std::size_t begin = 0;
  std::size_t end = 1;
};

using NodeConfig =
    std::variant<std::monostate, ConvParams, BnConfig, PoolConfig, LinearConfig, ReplicateConfig, BlockSumConfig, SliceConfig>;

struct LayerNode {
  int id = 0;
  NodeKind kind = NodeKind::input;
  NodeConfig config;
  std::vector<int> inputs;
  std::string name;
  NodeRole role = NodeRole::none;

  const ConvParams& conv() const { return std::get<ConvParams>(config); }
  const BnConfig& bn() const { return std::get<BnConfig>(config); }
  const PoolConfig& pool() const { return std::get<PoolConfig>(config); }
  const LinearConfig& linear() const { return std::get<LinearConfig>(config); }
  bool weighted() const { return kind == NodeKind::conv || kind == NodeKind::linear; }
};

/// Named parameter tensors per node id. Names starting with "running_" are
/// buffers (BN statistics) and are not trainable parameters.
template <typename T>
struct basic_weight_table {
  std::map<int, std::map<std::string, basic_tensor<T>>> entries;

  static bool is_buffer(const std::string& name) { return name.rfind("running_", 0) == 0; }

  const basic_tensor<T>& get(int node, const std::string& name) const {
    auto it = entries.find(node);
    if (it == entries.end()) throw graph_invalid("no weights for node " + std::to_string(node));
    auto jt = it->second.find(name);
    if (jt == it->second.end()) throw graph_invalid("node " + std::to_string(node) + " has no tensor '" + name + "'");
    return jt->second;
  }
  basic_tensor<T>& get(int node, const std::string& name) {
    return const_cast<basic_tensor<T>&>(std::as_const(*this).get(node, name));
  }
  bool has(int node, const std::string& name) const {
    auto it = entries.find(node);
    return it != entries.end() && it->second.count(name) != 0;
  }

  template <typename U>
  basic_weight_table<U> cast() const {
    basic_weight_table<U> out;
    for (const auto& [id, m] : entries)
      for (const auto& [name, t] : m) out.entries[id].emplace(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const basic_weight_table&, const basic_weight_table&) = default;
};

using WeightTable = basic_weight_table<float>;

/// Immutable static computation graph. Node ids equal their index and every
/// edge points from a lower id to a higher one, so id order is a topological order.
class Graph {
 public:
  Graph() = default;

  const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
  const LayerNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return nodes_.size(); }
  int input_id() const noexcept { return input_id_; }
  int output_id() const noexcept { return output_id_; }
  /// Declared per-sample input extents (n is free).
  const Shape& input_shape() const noexcept { return input_shape_; }
  const WeightTable& weights() const noexcept { return weights_; }
  const std::string& name() const noexcept { return name_; }

  /// Consumers of each node, in id order.
  std::vector<std::vector<int>> consumers() const {
    std::vector<std::vector<int>> out(nodes_.size());
    for (const auto& n : nodes_)
      for (int in : n.inputs) out[static_cast<std::size_t>(in)].push_back(n.id);
    return out;
  }

  int find(const std::string& name) const {
    for (const auto& n : nodes_)
      if (n.name == name) return n.id;
    return -1;
  }

 private:
  friend class GraphBuilder;
  std::vector<LayerNode> nodes_;
  int input_id_ = -1;
  int output_id_ = -1;
  Shape input_shape_{};
  WeightTable weights_;
  std::string name_;
};

/// Output shape of one node given the shapes of all earlier nodes.
/// Throws graph_invalid naming the node when its shape cannot be derived.
inline Shape infer_node_shape(const LayerNode& node, const std::vector<Shape>& shapes, const Shape& input,
                              const Shape& declared) {
  auto in = [&](std::size_t i) -> const Shape& { return shapes[static_cast<std::size_t>(node.inputs.at(i))]; };
  try {
    switch (node.kind) {
      case NodeKind::input:
        if (input.c != declared.c)
          throw invalid_shape("input has " + std::to_string(input.c) + " channels, graph expects " +
                              std::to_string(declared.c));
        return input;
      case NodeKind::conv: {
        const auto& p = node.conv();
        p.validate();
        if (in(0).c != p.in_channels)
          throw invalid_config("expects " + std::to_string(p.in_channels) + " input channels, got " +
                               std::to_string(in(0).c));
        return conv_output_shape(in(0), p);
      }
      case NodeKind::bn:
        if (in(0).c != node.bn().channels) throw invalid_shape("channel mismatch");
        return in(0);
      case NodeKind::relu:
      case NodeKind::output:
        return in(0);
      case NodeKind::pool_max:
      case NodeKind::pool_avg:
        return pool_output_shape(in(0), node.pool().window);
      case NodeKind::gap:
        return {in(0).n, in(0).c, 1, 1};
      case NodeKind::linear: {
        const auto& l = node.linear();
        if (in(0).sample() != l.in) throw invalid_shape("expects " + std::to_string(l.in) + " features");
        return {in(0).n, l.out, 1, 1};
      }
      case NodeKind::ir:
        return {in(0).n, in(0).c * std::get<ReplicateConfig>(node.config).m, in(0).h, in(0).w};
      case NodeKind::block_sum: {
        auto m = std::get<BlockSumConfig>(node.config).m;
        if (in(0).c % m != 0) throw invalid_shape("channels not divisible by " + std::to_string(m));
        return {in(0).n, in(0).c / m, in(0).h, in(0).w};
      }
      case NodeKind::slice: {
        const auto& s = std::get<SliceConfig>(node.config);
        if (s.begin >= s.end || s.end > in(0).c) throw invalid_shape("slice range outside input channels");
        return {in(0).n, s.end - s.begin, in(0).h, in(0).w};
      }
      case NodeKind::concat: {
        Shape s = in(0);
        s.c = 0;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
          const Shape& t = in(i);
          if (t.n != s.n || t.h != s.h || t.w != s.w) throw invalid_shape("concat inputs disagree: " + t.str());
          s.c += t.c;
        }
        return s;
      }
      case NodeKind::add:
        for (std::size_t i = 1; i < node.inputs.size(); ++i)
          if (in(i) != in(0)) throw invalid_shape("add operands " + in(0).str() + " vs " + in(i).str());
        return in(0);
    }
  } catch (const graph_invalid&) {
    throw;
  } catch (const error& e) {
    throw graph_invalid("node " + std::to_string(node.id) + " '" + node.name + "' (" + to_string(node.kind) +
                        "): " + e.what());
  }
  throw graph_invalid("node " + std::to_string(node.id) + ": unknown kind");
}

/// Shapes of every node for the given input batch shape.
inline std::vector<Shape> infer_shapes(const Graph& g, const Shape& input) {
  std::vector<Shape> shapes(g.size());
  for (const auto& node : g.nodes()) shapes[static_cast<std::size_t>(node.id)] = infer_node_shape(node, shapes, input, g.input_shape());
  return shapes;
}

inline std::vector<Shape> infer_shapes(const Graph& g) { return infer_shapes(g, g.input_shape()); }

inline Shape input_shape_at(const Graph& g, std::size_t resolution, std::size_t batch = 1) {
  return {batch, g.input_shape().c, resolution, resolution};
}

/// seeded: conv/linear weights ~ N(0, 2/fan_in). zeros: same tensors, zero
/// weights; enough for static analysis and much cheaper at ImageNet widths.
enum class WeightInit { seeded, zeros };

/// Conv/linear weights per `init`, biases 0, BN gamma 1, beta 0, running
/// stats (0, 1). Each node draws from its own stream so adding a node does
/// not perturb the others.
inline WeightTable init_weights(const Graph& g, std::uint64_t seed, WeightInit init = WeightInit::seeded) {
  WeightTable t;
  for (const auto& node : g.nodes()) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(node.id));
    if (node.kind == NodeKind::conv) {
      const auto& p = node.conv();
      const double fan_in = static_cast<double>(p.in_per_group() * p.kh * p.kw);
      t.entries[node.id].emplace("weight", init == WeightInit::zeros
                                               ? Tensor(p.weight_shape())
                                               : tensor_create(p.weight_shape(), fill::normal{s, 0.0, std::sqrt(2.0 / fan_in)}));
      if (p.has_bias) t.entries[node.id].emplace("bias", Tensor({p.out_channels, 1, 1, 1}));
    } else if (node.kind == NodeKind::linear) {
      const auto& l = node.linear();
      const Shape ws{l.out, l.in, 1, 1};
      t.entries[node.id].emplace("weight", init == WeightInit::zeros
                                               ? Tensor(ws)
                                               : tensor_create(ws, fill::normal{s, 0.0, std::sqrt(2.0 / static_cast<double>(l.in))}));
      t.entries[node.id].emplace("bias", Tensor({l.out, 1, 1, 1}));
    } else if (node.kind == NodeKind::bn) {
      const std::size_t c = node.bn().channels;
      auto& m = t.entries[node.id];
      m.emplace("gamma", Tensor({c, 1, 1, 1}, 1.0f));
      m.emplace("beta", Tensor({c, 1, 1, 1}, 0.0f));
      m.emplace("running_mean", Tensor({c, 1, 1, 1}, 0.0f));
      m.emplace("running_var", Tensor({c, 1, 1, 1}, 1.0f));
    }
  }
  return t;
}

class GraphBuilder {
 public:
  explicit GraphBuilder(std::string name = {}) { g_.name_ = std::move(name); }

  int input(std::size_t c, std::size_t h, std::size_t w, std::string name = "input") {
    if (g_.input_id_ >= 0) throw graph_invalid("graph already has an input");
    g_.input_shape_ = {1, c, h, w};
    require_valid(g_.input_shape_);
    g_.input_id_ = push(NodeKind::input, std::monostate{}, {}, std::move(name), NodeRole::none);
    return g_.input_id_;
  }

  int conv(int x, const ConvParams& p, std::string name, NodeRole role = NodeRole::none) {
    p.validate();
    return push(NodeKind::conv, p, {x}, std::move(name), role);
  }
  int bn(int x, std::size_t channels, std::string name, NodeRole role = NodeRole::none) {
    return push(NodeKind::bn, BnConfig{channels}, {x}, std::move(name), role);
  }
  int relu(int x, std::string name, NodeRole role = NodeRole::none) {
    return push(NodeKind::relu, std::monostate{}, {x}, std::move(name), role);
  }
  int pool(int x, PoolKind kind, const Window& w, std::string name, NodeRole role = NodeRole::none) {
    return push(kind == PoolKind::max ? NodeKind::pool_max : NodeKind::pool_avg, PoolConfig{w}, {x},
                std::move(name), role);
  }
  int gap(int x, std::string name, NodeRole role = NodeRole::none) {
    return push(NodeKind::gap, std::monostate{}, {x}, std::move(name), role);
  }
  int linear(int x, std::size_t in, std::size_t out, std::string name, NodeRole role = NodeRole::none) {
    return push(NodeKind::linear, LinearConfig{in, out}, {x}, std::move(name), role);
  }
  int replicate(int x, std::size_t m, std::string name, NodeRole role = NodeRole::none) {
    if (m == 0) throw invalid_config("replicate factor must be >= 1");
    return push(NodeKind::ir, ReplicateConfig{m}, {x}, std::move(name), role);
  }
  int block_sum(int x, std::size_t m, std::string name, NodeRole role = NodeRole::none) {
    if (m == 0) throw invalid_config("block_sum factor must be >= 1");
    return push(NodeKind::block_sum, BlockSumConfig{m}, {x}, std::move(name), role);
  }
  int slice(int x, std::size_t begin, std::size_t end, std::string name, NodeRole role = NodeRole::none) {
    return push(NodeKind::slice, SliceConfig{begin, end}, {x}, std::move(name), role);
  }
  int concat(std::vector<int> xs, std::string name, NodeRole role = NodeRole::none) {
    if (xs.size() < 2) throw graph_invalid("concat '" + name + "' needs at least two inputs");
    return push(NodeKind::concat, std::monostate{}, std::move(xs), std::move(name), role);
  }
  int add(std::vector<int> xs, std::string name, NodeRole role = NodeRole::none) {
    if (xs.size() < 2) throw graph_invalid("add '" + name + "' needs at least two inputs");
    return push(NodeKind::add, std::monostate{}, std::move(xs), std::move(name), role);
  }

  /// Seals the graph: marks the output, checks shapes, instantiates weights.
  Graph finish(int out, std::uint64_t weight_seed = 0, WeightInit init = WeightInit::seeded) {
    if (g_.input_id_ < 0) throw graph_invalid("graph has no input");
    g_.output_id_ = push(NodeKind::output, std::monostate{}, {out}, "output", NodeRole::none);
    g_.weights_ = init_weights(g_, weight_seed, init);
    return std::move(g_);
  }

  /// Appends a copy of `proto` (any kind but input/output) wired to `inputs`.
  int copy(const LayerNode& proto, std::vector<int> inputs, std::string name) {
    if (proto.kind == NodeKind::input || proto.kind == NodeKind::output)
      throw graph_invalid("copy: input/output nodes are created by input() and finish()");
    if (proto.kind == NodeKind::conv) proto.conv().validate();
    return push(proto.kind, proto.config, std::move(inputs), std::move(name), proto.role);
  }

  std::size_t size() const { return g_.nodes_.size(); }
  const LayerNode& node(int id) const { return g_.node(id); }

  /// Shape (n = 1, declared input size) of a node built so far.
  const Shape& shape(int id) const { return shapes_.at(static_cast<std::size_t>(id)); }
  std::size_t channels(int id) const { return shape(id).c; }

 private:
  int push(NodeKind kind, NodeConfig cfg, std::vector<int> inputs, std::string name, NodeRole role) {
    const int id = static_cast<int>(g_.nodes_.size());
    for (int in : inputs)
      if (in < 0 || in >= id)
        throw graph_invalid("node '" + name + "' references unknown predecessor " + std::to_string(in));
    if (kind != NodeKind::input && inputs.empty()) throw graph_invalid("node '" + name + "' has no predecessor");
    g_.nodes_.push_back(LayerNode{id, kind, std::move(cfg), std::move(inputs), std::move(name), role});
    shapes_.push_back(infer_node_shape(g_.nodes_.back(), shapes_, g_.input_shape_, g_.input_shape_));
    return id;
  }

  Graph g_;
  std::vector<Shape> shapes_;
};

/// Generic "key=value" rendering of a node's configuration.
inline std::string describe_config(const LayerNode& n) {
  std::ostringstream os;
  std::visit(
      [&](const auto& c) {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, ConvParams>) {
          os << c.in_channels << "->" << c.out_channels << " k" << c.kh << "x" << c.kw << " s" << c.sh << " p" << c.ph;
          if (c.groups > 1) os << " g" << c.groups;
          if (c.has_bias) os << " bias";
        } else if constexpr (std::is_same_v<C, BnConfig>) {
          os << "c" << c.channels;
        } else if constexpr (std::is_same_v<C, PoolConfig>) {
          os << "k" << c.window.kh << "x" << c.window.kw << " s" << c.window.sh << " p" << c.window.ph;
        } else if constexpr (std::is_same_v<C, LinearConfig>) {
          os << c.in << "->" << c.out;
        } else if constexpr (std::is_same_v<C, ReplicateConfig> || std::is_same_v<C, BlockSumConfig>) {
          os << "m" << c.m;
        } else if constexpr (std::is_same_v<C, SliceConfig>) {
          os << "[" << c.begin << "," << c.end << ")";
        }
      },
      n.config);
  return os.str();
}

/// Text rendering of every node in topological order with its output shape.
inline std::string render_graph(const Graph& g, std::size_t resolution = 0) {
  const Shape in = resolution ? input_shape_at(g, resolution) : g.input_shape();
  const auto shapes = infer_shapes(g, in);
  std::ostringstream os;
  for (const auto& n : g.nodes()) {
    os << std::setw(4) << n.id << "  " << std::left << std::setw(28) << n.name << std::setw(10) << to_string(n.kind)
       << std::setw(26) << describe_config(n) << std::right;
    os << " <-";
    if (n.inputs.empty()) os << " -";
    for (int i : n.inputs) os << ' ' << i;
    os << "  => " << shapes[static_cast<std::size_t>(n.id)].str();
    if (n.role != NodeRole::none) os << "  [" << to_string(n.role) << "]";
    os << '\n';
  }
  return os.str();
}

}  // namespace cosnet
