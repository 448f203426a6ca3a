#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cosnet/graph.hpp"

namespace cosnet {

enum class Fusion { concat, block_sum };
enum class FirstLevelInput { squeezed, pre_narrowed };
/// What PFF does with the unpaired last column when M is odd.
enum class PffOdd { reject, passthrough_last };

inline const char* to_string(Fusion f) { return f == Fusion::concat ? "concat" : "block_sum"; }
inline const char* to_string(FirstLevelInput f) {
  return f == FirstLevelInput::squeezed ? "squeezed" : "pre_narrowed";
}
inline const char* to_string(PffOdd p) { return p == PffOdd::reject ? "reject" : "passthrough_last"; }

struct UnitConfig {
  std::size_t in_channels = 64;
  std::size_t squeeze = 64;  // S
  std::size_t columns = 1;   // M
  std::size_t kernels = 16;  // N
  std::size_t depth = 3;     // l
  std::size_t expand = 256;  // P
  std::size_t kernel_size = 3;
  bool downsample = true;
  bool pff = false;
  bool shallow_proj = true;
  bool deep_proj = true;
  bool deep_proj_pooling = true;
  Fusion fusion = Fusion::block_sum;
  FirstLevelInput first_level = FirstLevelInput::squeezed;
  PffOdd pff_odd = PffOdd::reject;
  /// Levels spanned by one shallow skip (2 = consecutive pairs).
  std::size_t shallow_span = 2;

  void validate() const {
    if (in_channels == 0 || squeeze == 0 || columns == 0 || kernels == 0 || depth == 0 || expand == 0)
      throw invalid_config("unit: channel counts, M, N and l must be positive");
    if (kernel_size < 3 || kernel_size % 2 == 0)
      throw invalid_config("unit: kernel size must be odd and >= 3, got " + std::to_string(kernel_size));
    if (shallow_span < 2) throw invalid_config("unit: shallow span must be >= 2");
    if (pff) {
      if (columns < 2) throw invalid_config("unit: PFF needs at least two columns");
      if (columns % 2 != 0 && pff_odd == PffOdd::reject)
        throw invalid_config("unit: PFF needs an even column count, got M=" + std::to_string(columns));
    }
  }

  /// Channels entering column level 1 per column.
  std::size_t level1_in() const { return first_level == FirstLevelInput::squeezed ? squeeze : kernels; }
  /// Channels entering L_f.
  std::size_t fuse_in() const { return fusion == Fusion::concat ? columns * kernels : kernels; }
};

namespace detail {

inline int conv_bn(GraphBuilder& b, int x, const ConvParams& p, const std::string& name, NodeRole role,
                   bool relu) {
  int y = b.conv(x, p, name, role);
  y = b.bn(y, p.out_channels, name + ".bn", role);
  if (relu) y = b.relu(y, name + ".relu", role);
  return y;
}

/// One PFF level: adjacent column pairs fused by a grouped 1x1 conv.
inline int pair_fusion(GraphBuilder& b, int x, const UnitConfig& cfg, const std::string& name) {
  const std::size_t M = cfg.columns;
  const std::size_t N = cfg.kernels;
  const std::size_t paired = M - M % 2;
  int fused_in = x;
  if (paired != M) fused_in = b.slice(x, 0, paired * N, name + ".pairs", NodeRole::pair_fusion);
  int y = conv_bn(b, fused_in, conv_params(paired * N, paired * N, 1, 1, paired / 2), name, NodeRole::pair_fusion,
                  true);
  if (paired != M) {
    int rest = b.slice(x, paired * N, M * N, name + ".passthrough", NodeRole::pair_fusion);
    y = b.concat({y, rest}, name + ".cat", NodeRole::pair_fusion);
  }
  return y;
}

}  // namespace detail

/// Appends one CoSNet unit to the builder and returns its output node.
inline int build_unit(GraphBuilder& b, int x, const UnitConfig& cfg, const std::string& stage) {
  cfg.validate();
  if (b.channels(x) != cfg.in_channels)
    throw invalid_config(stage + ": unit expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                         std::to_string(b.channels(x)));
  const std::size_t M = cfg.columns;
  const std::size_t N = cfg.kernels;
  const std::size_t k = cfg.kernel_size;
  const std::size_t stride = cfg.downsample ? 2 : 1;

  const std::size_t ls_out = cfg.level1_in();
  int h = detail::conv_bn(b, x, conv_params(cfg.in_channels, ls_out, 1), stage + ".Ls", NodeRole::squeeze, true);
  if (M > 1) h = b.replicate(h, M, stage + ".ir", NodeRole::squeeze);

  std::vector<int> level_in(cfg.depth + 1);
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    level_in[i] = h;
    const std::size_t cin = i == 1 ? M * ls_out : M * N;
    const std::string name = stage + ".col.level" + std::to_string(i);
    int y = b.conv(h, conv_params(cin, M * N, k, i == 1 ? stride : 1, M), name, NodeRole::column_level);
    y = b.bn(y, M * N, name + ".bn", NodeRole::column_level);
    // Shallow skip closes at the last level of each span.
    if (cfg.shallow_proj && i % cfg.shallow_span == 0) {
      const int from = level_in[i - cfg.shallow_span + 1];
      if (b.shape(from) == b.shape(y))
        y = b.add({y, from}, stage + ".skip" + std::to_string(i - cfg.shallow_span + 1) + "_" + std::to_string(i),
                  NodeRole::shallow_skip);
    }
    h = b.relu(y, name + ".relu", NodeRole::column_level);
    if (cfg.pff && i < cfg.depth) h = detail::pair_fusion(b, h, cfg, stage + ".pff" + std::to_string(i));
  }

  if (cfg.fusion == Fusion::block_sum && M > 1) h = b.block_sum(h, M, stage + ".fuse", NodeRole::fuse);
  int out = detail::conv_bn(b, h, conv_params(cfg.fuse_in(), cfg.expand, 1), stage + ".Lf", NodeRole::fuse, false);

  if (cfg.deep_proj) {
    int p = x;
    std::size_t lp_stride = 1;
    if (cfg.deep_proj_pooling)
      p = b.pool(x, PoolKind::avg, Window{3, 3, stride, stride, 1, 1}, stage + ".pool", NodeRole::projection);
    else
      lp_stride = stride;
    p = detail::conv_bn(b, p, conv_params(cfg.in_channels, cfg.expand, 1, lp_stride), stage + ".Lp",
                        NodeRole::projection, false);
    out = b.add({out, p}, stage + ".add", NodeRole::projection);
  }
  return b.relu(out, stage + ".relu");
}

inline int build_pff_unit(GraphBuilder& b, int x, const UnitConfig& cfg, const std::string& stage) {
  if (!cfg.pff) throw invalid_config(stage + ": build_pff_unit needs pff = true");
  return build_unit(b, x, cfg, stage);
}

/// Stand-alone graph of one unit on a c x res x res input.
inline Graph build_unit_graph(const UnitConfig& cfg, std::size_t res, std::uint64_t seed = 0,
                              WeightInit init = WeightInit::seeded) {
  GraphBuilder b("unit");
  int x = b.input(cfg.in_channels, res, res);
  return b.finish(build_unit(b, x, cfg, "u1"), seed, init);
}

// --- network specs -----------------------------------------------------------------

enum class Family { cosnet, resnet50 };

struct VariantSpec {
  std::string name = "custom";
  Family family = Family::cosnet;
  std::vector<std::size_t> S{64, 128, 256, 512};
  std::vector<std::size_t> P{256, 512, 1024, 2048};
  std::vector<std::size_t> N{16, 32, 64, 128};
  std::vector<std::size_t> l{3, 4, 6, 3};
  std::vector<std::size_t> M{1, 1, 1, 1};
  std::size_t zeta = 4;
  std::size_t stem_channels = 64;
  std::size_t num_classes = 1000;
  std::size_t in_channels = 3;
  std::size_t input_res = 224;
  std::size_t kernel_size = 3;
  bool pff = false;
  bool shallow_proj = true;
  bool deep_proj = true;
  bool deep_proj_pooling = true;
  Fusion fusion = Fusion::block_sum;
  FirstLevelInput first_level = FirstLevelInput::squeezed;
  PffOdd pff_odd = PffOdd::reject;

  std::size_t stages() const { return S.size(); }

  void validate() const {
    if (family == Family::resnet50) return;
    const std::size_t s = S.size();
    if (s < 1 || s > 4) throw invalid_config("spec: 1 to 4 stages supported, got " + std::to_string(s));
    if (P.size() != s || N.size() != s || l.size() != s || M.size() != s)
      throw invalid_config("spec: S, P, N, l, M must all list " + std::to_string(s) + " stages");
    if (zeta == 0 || stem_channels == 0 || num_classes == 0 || in_channels == 0 || input_res == 0)
      throw invalid_config("spec: zeta, stem_channels, num_classes, in_channels, input_res must be positive");
    for (std::size_t i = 0; i < s; ++i) {
      if (S[i] == 0) throw invalid_config("spec: S must be positive");
      if (P[i] != zeta * S[i])
        throw invalid_config("spec: stage " + std::to_string(i + 1) + " has P/S = " + std::to_string(P[i]) + "/" +
                             std::to_string(S[i]) + ", expected zeta = " + std::to_string(zeta));
      if (i > 0 && S[i] != 2 * S[i - 1])
        throw invalid_config("spec: S must double from stage to stage (stage " + std::to_string(i + 1) + ")");
    }
  }

  UnitConfig unit(std::size_t i) const {
    UnitConfig u;
    u.in_channels = i == 0 ? stem_channels : P[i - 1];
    u.squeeze = S[i];
    u.columns = M[i];
    u.kernels = N[i];
    u.depth = l[i];
    u.expand = P[i];
    u.kernel_size = kernel_size;
    u.downsample = true;
    u.pff = pff;
    u.shallow_proj = shallow_proj;
    u.deep_proj = deep_proj;
    u.deep_proj_pooling = deep_proj_pooling;
    u.fusion = fusion;
    u.first_level = first_level;
    u.pff_odd = pff_odd;
    return u;
  }

  friend bool operator==(const VariantSpec&, const VariantSpec&) = default;
};

/// Standard bottleneck (torchvision v1.5: stride on the 3x3).
inline int build_bottleneck(GraphBuilder& b, int x, std::size_t width, std::size_t stride, const std::string& name) {
  const std::size_t in = b.channels(x);
  const std::size_t out = 4 * width;
  int y = detail::conv_bn(b, x, conv_params(in, width, 1), name + ".conv1", NodeRole::none, true);
  y = detail::conv_bn(b, y, conv_params(width, width, 3, stride), name + ".conv2", NodeRole::none, true);
  y = detail::conv_bn(b, y, conv_params(width, out, 1), name + ".conv3", NodeRole::none, false);
  int skip = x;
  if (stride != 1 || in != out)
    skip = detail::conv_bn(b, x, conv_params(in, out, 1, stride), name + ".downsample", NodeRole::projection, false);
  y = b.add({y, skip}, name + ".add");
  return b.relu(y, name + ".relu");
}

inline int build_bottleneck_stage(GraphBuilder& b, int x, std::size_t width, std::size_t blocks, std::size_t stride,
                                  const std::string& name) {
  for (std::size_t i = 0; i < blocks; ++i)
    x = build_bottleneck(b, x, width, i == 0 ? stride : 1, name + ".b" + std::to_string(i + 1));
  return x;
}

inline Graph build_resnet50_reference(std::size_t num_classes = 1000, std::size_t res = 224, std::uint64_t seed = 0,
                                      WeightInit init = WeightInit::seeded) {
  GraphBuilder b("ResNet-50-ref");
  int x = b.input(3, res, res);
  x = detail::conv_bn(b, x, conv_params(3, 64, 7, 2), "stem", NodeRole::stem, true);
  x = b.pool(x, PoolKind::max, Window{3, 3, 2, 2, 1, 1}, "stem.pool", NodeRole::stem);
  const std::size_t widths[] = {64, 128, 256, 512};
  const std::size_t blocks[] = {3, 4, 6, 3};
  for (std::size_t s = 0; s < 4; ++s)
    x = build_bottleneck_stage(b, x, widths[s], blocks[s], s == 0 ? 1 : 2, "s" + std::to_string(s + 1));
  x = b.gap(x, "head.gap", NodeRole::head);
  x = b.linear(x, 2048, num_classes, "head.fc", NodeRole::head);
  return b.finish(x, seed, init);
}

inline Graph build_network(const VariantSpec& spec, std::uint64_t seed = 0, WeightInit init = WeightInit::seeded) {
  spec.validate();
  if (spec.family == Family::resnet50) return build_resnet50_reference(spec.num_classes, spec.input_res, seed, init);
  GraphBuilder b(spec.name);
  int x = b.input(spec.in_channels, spec.input_res, spec.input_res);
  x = detail::conv_bn(b, x, conv_params(spec.in_channels, spec.stem_channels, 3, 2), "stem", NodeRole::stem, true);
  for (std::size_t i = 0; i < spec.stages(); ++i) x = build_unit(b, x, spec.unit(i), "u" + std::to_string(i + 1));
  x = b.gap(x, "head.gap", NodeRole::head);
  x = b.linear(x, spec.P.back(), spec.num_classes, "head.fc", NodeRole::head);
  return b.finish(x, seed, init);
}

// --- registry ----------------------------------------------------------------------

/// Published depth / params / MACs for a named variant.
struct PublishedRow {
  int depth = 0;
  double params = 0;
  double flops = 0;
};

struct RegistryEntry {
  VariantSpec spec;
  std::optional<PublishedRow> published;
};

namespace detail {

inline VariantSpec cosnet_spec(std::string name, std::vector<std::size_t> N, std::vector<std::size_t> l,
                               std::vector<std::size_t> M, bool pff) {
  VariantSpec s;
  s.name = std::move(name);
  s.N = std::move(N);
  s.l = std::move(l);
  s.M = std::move(M);
  s.pff = pff;
  if (pff) s.pff_odd = PffOdd::passthrough_last;
  return s;
}

inline std::vector<RegistryEntry> make_registry() {
  using V = std::vector<std::size_t>;
  const V nA{16, 32, 64, 128}, nB{32, 64, 128, 256}, nC{48, 80, 144, 272};
  const V l0{3, 4, 6, 3}, lC1{4, 4, 6, 4};
  struct Row {
    const char* name;
    V N, l, M;
    PublishedRow plain;
    std::optional<PublishedRow> pff;
  };
  const std::vector<Row> rows = {
      {"CoSNet-A0", nA, l0, {1, 1, 1, 1}, {26, 8.8e6, 1.25e9}, std::nullopt},
      {"CoSNet-A1", nA, l0, {4, 4, 4, 4}, {26, 12.1e6, 1.77e9}, PublishedRow{38, 12.7e6, 1.93e9}},
      {"CoSNet-B0", nB, l0, {4, 4, 4, 4}, {26, 19.8e6, 3.05e9}, PublishedRow{38, 21.8e6, 3.44e9}},
      {"CoSNet-B1", nB, l0, {5, 5, 5, 5}, {26, 22.6e6, 3.51e9}, PublishedRow{38, 25.6e6, 4.08e9}},
      {"CoSNet-B2", nB, l0, {4, 4, 16, 4}, {26, 30.0e6, 5.1e9}, PublishedRow{38, 34.3e6, 5.91e9}},
      {"CoSNet-C1", nC, lC1, {4, 4, 4, 4}, {28, 24.4e6, 4.12e9}, PublishedRow{42, 27.3e6, 4.75e9}},
      {"CoSNet-C2", nC, l0, {6, 6, 16, 6}, {26, 38.9e6, 7.09e9}, PublishedRow{38, 44.5e6, 8.27e9}},
  };
  std::vector<RegistryEntry> out;
  for (const auto& r : rows) out.push_back({cosnet_spec(r.name, r.N, r.l, r.M, false), r.plain});
  for (const auto& r : rows)
    if (r.pff) out.push_back({cosnet_spec(std::string(r.name) + "-PFF", r.N, r.l, r.M, true), r.pff});

  VariantSpec resnet;
  resnet.name = "ResNet-50-ref";
  resnet.family = Family::resnet50;
  out.push_back({resnet, PublishedRow{50, 25.5e6, 4.12e9}});

  // Toy network for desk-scale training.
  VariantSpec mini;
  mini.name = "mini";
  mini.S = {16, 32, 64};
  mini.P = {64, 128, 256};
  mini.N = {8, 8, 8};
  mini.l = {2, 2, 2};
  mini.M = {2, 2, 2};
  mini.stem_channels = 16;
  mini.num_classes = 10;
  mini.input_res = 32;
  out.push_back({mini, std::nullopt});
  return out;
}

}  // namespace detail

inline const std::vector<RegistryEntry>& registry() {
  static const std::vector<RegistryEntry> r = detail::make_registry();
  return r;
}

inline std::vector<std::string> registry_names() {
  std::vector<std::string> out;
  for (const auto& e : registry()) out.push_back(e.spec.name);
  return out;
}

inline const RegistryEntry& registry_entry(const std::string& name) {
  for (const auto& e : registry())
    if (e.spec.name == name) return e;
  std::string known;
  for (const auto& n : registry_names()) known += (known.empty() ? "" : ", ") + n;
  throw lookup_error("unknown variant '" + name + "'; known: " + known);
}

inline VariantSpec registry_lookup(const std::string& name) { return registry_entry(name).spec; }

/// The seven published non-PFF variants.
inline std::vector<std::string> table_a1_names() {
  return {"CoSNet-A0", "CoSNet-A1", "CoSNet-B0", "CoSNet-B1", "CoSNet-B2", "CoSNet-C1", "CoSNet-C2"};
}

/// Every registry CoSNet variant at ImageNet scale (excludes the toy and the ResNet reference).
inline std::vector<std::string> cosnet_variant_names() {
  std::vector<std::string> out;
  for (const auto& e : registry())
    if (e.spec.family == Family::cosnet && e.published) out.push_back(e.spec.name);
  return out;
}

// --- spec text format ----------------------------------------------------------------

namespace detail {

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (v.empty() || v[0] == '-') throw std::invalid_argument("sign");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw invalid_config("spec: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw invalid_config("spec: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw invalid_config("spec: '" + key + "' is empty");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw invalid_config("spec: '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace detail

inline std::string spec_to_text(const VariantSpec& s) {
  using detail::join;
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "name = " << s.name << '\n';
  os << "family = " << (s.family == Family::cosnet ? "cosnet" : "resnet50") << '\n';
  os << "S = " << join(s.S) << '\n';
  os << "P = " << join(s.P) << '\n';
  os << "N = " << join(s.N) << '\n';
  os << "l = " << join(s.l) << '\n';
  os << "M = " << join(s.M) << '\n';
  os << "zeta = " << s.zeta << '\n';
  os << "stem_channels = " << s.stem_channels << '\n';
  os << "num_classes = " << s.num_classes << '\n';
  os << "in_channels = " << s.in_channels << '\n';
  os << "input_res = " << s.input_res << '\n';
  os << "kernel_size = " << s.kernel_size << '\n';
  os << "pff = " << b(s.pff) << '\n';
  os << "shallow_proj = " << b(s.shallow_proj) << '\n';
  os << "deep_proj = " << b(s.deep_proj) << '\n';
  os << "deep_proj_pooling = " << b(s.deep_proj_pooling) << '\n';
  os << "fusion = " << to_string(s.fusion) << '\n';
  os << "first_level_input = " << to_string(s.first_level) << '\n';
  os << "pff_odd = " << to_string(s.pff_odd) << '\n';
  return os.str();
}

/// Parses `key = value` lines; '#' starts a comment. Unset keys keep the
/// CoSNet-A0 defaults. Unknown keys are rejected. The result is validated.
inline VariantSpec spec_from_text(const std::string& text) {
  using namespace detail;
  VariantSpec s;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw invalid_config("spec line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "name") s.name = val;
    else if (key == "family") {
      if (val == "cosnet") s.family = Family::cosnet;
      else if (val == "resnet50") s.family = Family::resnet50;
      else throw invalid_config("spec: unknown family '" + val + "'");
    } else if (key == "S") s.S = parse_list(key, val);
    else if (key == "P") s.P = parse_list(key, val);
    else if (key == "N") s.N = parse_list(key, val);
    else if (key == "l") s.l = parse_list(key, val);
    else if (key == "M") s.M = parse_list(key, val);
    else if (key == "zeta") s.zeta = parse_size(key, val);
    else if (key == "stem_channels") s.stem_channels = parse_size(key, val);
    else if (key == "num_classes") s.num_classes = parse_size(key, val);
    else if (key == "in_channels") s.in_channels = parse_size(key, val);
    else if (key == "input_res") s.input_res = parse_size(key, val);
    else if (key == "kernel_size") s.kernel_size = parse_size(key, val);
    else if (key == "pff") s.pff = parse_bool(key, val);
    else if (key == "shallow_proj") s.shallow_proj = parse_bool(key, val);
    else if (key == "deep_proj") s.deep_proj = parse_bool(key, val);
    else if (key == "deep_proj_pooling") s.deep_proj_pooling = parse_bool(key, val);
    else if (key == "fusion") {
      if (val == "concat") s.fusion = Fusion::concat;
      else if (val == "block_sum") s.fusion = Fusion::block_sum;
      else throw invalid_config("spec: fusion must be concat or block_sum, got '" + val + "'");
    } else if (key == "first_level_input") {
      if (val == "squeezed") s.first_level = FirstLevelInput::squeezed;
      else if (val == "pre_narrowed") s.first_level = FirstLevelInput::pre_narrowed;
      else throw invalid_config("spec: first_level_input must be squeezed or pre_narrowed, got '" + val + "'");
    } else if (key == "pff_odd") {
      if (val == "reject") s.pff_odd = PffOdd::reject;
      else if (val == "passthrough_last") s.pff_odd = PffOdd::passthrough_last;
      else throw invalid_config("spec: pff_odd must be reject or passthrough_last, got '" + val + "'");
    } else {
      throw invalid_config("spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

/// Unit configuration text: same `key = value` syntax as variant specs.
inline UnitConfig unit_from_text(const std::string& text) {
  using namespace detail;
  UnitConfig u;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw invalid_config("unit line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "in_channels") u.in_channels = parse_size(key, val);
    else if (key == "S") u.squeeze = parse_size(key, val);
    else if (key == "M") u.columns = parse_size(key, val);
    else if (key == "N") u.kernels = parse_size(key, val);
    else if (key == "l") u.depth = parse_size(key, val);
    else if (key == "P") u.expand = parse_size(key, val);
    else if (key == "kernel_size") u.kernel_size = parse_size(key, val);
    else if (key == "shallow_span") u.shallow_span = parse_size(key, val);
    else if (key == "downsample") u.downsample = parse_bool(key, val);
    else if (key == "pff") u.pff = parse_bool(key, val);
    else if (key == "shallow_proj") u.shallow_proj = parse_bool(key, val);
    else if (key == "deep_proj") u.deep_proj = parse_bool(key, val);
    else if (key == "deep_proj_pooling") u.deep_proj_pooling = parse_bool(key, val);
    else if (key == "fusion") {
      if (val == "concat") u.fusion = Fusion::concat;
      else if (val == "block_sum") u.fusion = Fusion::block_sum;
      else throw invalid_config("unit: fusion must be concat or block_sum, got '" + val + "'");
    } else if (key == "first_level_input") {
      if (val == "squeezed") u.first_level = FirstLevelInput::squeezed;
      else if (val == "pre_narrowed") u.first_level = FirstLevelInput::pre_narrowed;
      else throw invalid_config("unit: first_level_input must be squeezed or pre_narrowed, got '" + val + "'");
    } else if (key == "pff_odd") {
      if (val == "reject") u.pff_odd = PffOdd::reject;
      else if (val == "passthrough_last") u.pff_odd = PffOdd::passthrough_last;
      else throw invalid_config("unit: pff_odd must be reject or passthrough_last, got '" + val + "'");
    } else {
      throw invalid_config("unit line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  u.validate();
  return u;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw invalid_config("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline VariantSpec load_spec_file(const std::string& path) { return spec_from_text(read_text_file(path)); }

}  // namespace cosnet
