#include <gtest/gtest.h>

#include "cosnet/cosnet.hpp"
#include "support/oracles.hpp"

using namespace cosnet;

namespace {

UnitConfig unit(std::size_t in, std::size_t S, std::size_t M, std::size_t N, std::size_t l, std::size_t P) {
  UnitConfig u;
  u.in_channels = in;
  u.squeeze = S;
  u.columns = M;
  u.kernels = N;
  u.depth = l;
  u.expand = P;
  return u;
}

int count_kind(const Graph& g, NodeKind k, NodeRole role) {
  int n = 0;
  for (const auto& node : g.nodes())
    if (node.kind == k && node.role == role) ++n;
  return n;
}

Tensor weight_slice(const Tensor& w, std::size_t begin, std::size_t end) {
  const Shape& s = w.shape();
  const std::size_t per = s.sample();
  return Tensor({end - begin, s.c, s.h, s.w},
                std::vector<float>(w.vec().begin() + static_cast<std::ptrdiff_t>(begin * per),
                                   w.vec().begin() + static_cast<std::ptrdiff_t>(end * per)));
}

// Eval-mode BN over channels [begin, end) of the node's statistics.
Tensor bn_eval(const Tensor& x, const Graph& g, const WeightTable& w, const std::string& node, std::size_t begin) {
  const int id = g.find(node);
  Tensor y = x;
  const double eps = g.node(id).bn().epsilon;
  for (std::size_t n = 0; n < x.shape().n; ++n)
    for (std::size_t c = 0; c < x.shape().c; ++c) {
      const std::size_t k = begin + c;
      const double m = w.get(id, "running_mean")[k], v = w.get(id, "running_var")[k];
      const double ga = w.get(id, "gamma")[k], be = w.get(id, "beta")[k];
      float* p = y.plane(n, c);
      for (std::size_t i = 0; i < x.shape().plane(); ++i)
        p[i] = static_cast<float>(ga * (p[i] - m) / std::sqrt(v + eps) + be);
    }
  return y;
}

}  // namespace

// --- units --------------------------------------------------------------------------------

TEST(BuildUnit, FiveLayerMainPath) {
  UnitConfig u = unit(64, 64, 1, 16, 3, 256);
  u.fusion = Fusion::concat;
  Graph g = build_unit_graph(u, 16, 0, WeightInit::zeros);
  EXPECT_EQ(count_depth(g), 5);
  EXPECT_EQ(g.find("u1.ir"), -1);
}

TEST(BuildUnit, GroupedWeightsScaleWithColumns) {
  auto level2 = [](std::size_t M) {
    Graph g = build_unit_graph(unit(16, 16, M, 8, 3, 64), 8, 0, WeightInit::zeros);
    return g.weights().get(g.find("u1.col.level2"), "weight").numel();
  };
  EXPECT_EQ(level2(4), 4 * level2(1));
  Graph g = build_unit_graph(unit(16, 16, 4, 8, 3, 64), 8, 0, WeightInit::zeros);
  EXPECT_EQ(g.node(g.find("u1.col.level2")).conv().groups, 4u);
  EXPECT_EQ(g.node(g.find("u1.col.level1")).conv().groups, 4u);
  EXPECT_EQ(g.node(g.find("u1.col.level1")).conv().sh, 2u);
  EXPECT_EQ(g.node(g.find("u1.col.level2")).conv().sh, 1u);
}

// Hand-wired columns built from the primitive ops, one column at a time.
TEST(BuildUnit, BatchedColumnsMatchHandWiredColumns) {
  const UnitConfig u = unit(4, 4, 2, 2, 2, 8);
  Graph g = build_unit_graph(u, 8, 1);
  const WeightTable w = randomized_weights(g, 2);
  Tensor x = tensor_create({1, 4, 8, 8}, fill::normal{3, 0.0, 1.0});
  Tensor batched = graph_forward(g, w, x, Mode::eval).output;

  auto W = [&](const char* n) -> const Tensor& { return w.get(g.find(n), "weight"); };
  Tensor h = relu(bn_eval(conv2d_forward(x, W("u1.Ls"), conv_params(4, 4, 1)), g, w, "u1.Ls.bn", 0));
  Tensor fused({1, 2, 4, 4});
  for (std::size_t col = 0; col < 2; ++col) {
    Tensor c1 = conv2d_forward(h, weight_slice(W("u1.col.level1"), col * 2, col * 2 + 2), conv_params(4, 2, 3, 2));
    c1 = relu(bn_eval(c1, g, w, "u1.col.level1.bn", col * 2));
    Tensor c2 = conv2d_forward(c1, weight_slice(W("u1.col.level2"), col * 2, col * 2 + 2), conv_params(2, 2, 3));
    // Level 1 in (4 ch, 8x8) and level 2 out (2 ch, 4x4) differ, so no shallow skip.
    c2 = relu(bn_eval(c2, g, w, "u1.col.level2.bn", col * 2));
    accumulate(fused, c2);
  }
  Tensor main = bn_eval(conv2d_forward(fused, W("u1.Lf"), conv_params(2, 8, 1)), g, w, "u1.Lf.bn", 0);
  Tensor pooled = pool2d(x, PoolKind::avg, Window{3, 3, 2, 2, 1, 1});
  Tensor deep = bn_eval(conv2d_forward(pooled, W("u1.Lp"), conv_params(4, 8, 1)), g, w, "u1.Lp.bn", 0);
  Tensor ref = relu(add(main, deep));
  EXPECT_LE(max_abs_diff(batched, ref), 1e-5);
}

TEST(BuildUnit, ShallowSkipOnMatchingShapes) {
  UnitConfig u = unit(8, 8, 2, 4, 4, 32);
  Graph g = build_unit_graph(u, 8, 0, WeightInit::zeros);
  // Level 1 changes stride and width, so only the (3, 4) pair qualifies.
  EXPECT_EQ(g.find("u1.skip1_2"), -1);
  EXPECT_GE(g.find("u1.skip3_4"), 0);
  u.shallow_proj = false;
  EXPECT_EQ(build_unit_graph(u, 8, 0, WeightInit::zeros).find("u1.skip3_4"), -1);
}

TEST(BuildUnit, ExactlyTwoPointwiseConvsOnMainPath) {
  for (const auto& name : table_a1_names()) {
    Graph g = build_network(registry_lookup(name), 0, WeightInit::zeros);
    for (int k = 1; k <= 4; ++k) {
      const std::string prefix = "u" + std::to_string(k) + ".";
      int pointwise = 0;
      for (const auto& n : g.nodes())
        if (n.kind == NodeKind::conv && n.name.rfind(prefix, 0) == 0 && n.conv().kh == 1 &&
            n.role != NodeRole::projection)
          ++pointwise;
      EXPECT_EQ(pointwise, 2) << name << " unit " << k;
    }
  }
}

// Zeroing column j's level-1 weights only changes column j downstream.
TEST(BuildUnit, NoCrosstalkBeforeFusion) {
  const UnitConfig u = unit(4, 4, 4, 2, 3, 8);
  Graph g = build_unit_graph(u, 8, 1);
  WeightTable w = randomized_weights(g, 1);
  Tensor x = tensor_create({2, 4, 8, 8}, fill::normal{4, 0.0, 1.0});
  const int last = g.find("u1.col.level3.relu");
  const Tensor base = *graph_forward(g, w, x, Mode::train).tape.values[static_cast<std::size_t>(last)];
  for (std::size_t col = 0; col < 4; ++col) {
    WeightTable z = w;
    Tensor& l1 = z.get(g.find("u1.col.level1"), "weight");
    const std::size_t per = l1.shape().sample() * 2;
    for (std::size_t i = col * per; i < (col + 1) * per; ++i) l1[i] = 0.0f;
    const Tensor y = *graph_forward(g, z, x, Mode::train).tape.values[static_cast<std::size_t>(last)];
    for (std::size_t c = 0; c < 4; ++c) {
      const bool same = channel_slice(y, c * 2, c * 2 + 2) == channel_slice(base, c * 2, c * 2 + 2);
      EXPECT_EQ(same, c != col) << "zeroed " << col << " inspected " << c;
    }
  }
}

TEST(BuildUnit, InvalidConfigurations) {
  EXPECT_THROW(build_unit_graph(unit(4, 0, 2, 2, 2, 8), 8), invalid_config);
  UnitConfig even_k = unit(4, 4, 2, 2, 2, 8);
  even_k.kernel_size = 4;
  EXPECT_THROW(build_unit_graph(even_k, 8), invalid_config);
  GraphBuilder b;
  int x = b.input(5, 8, 8);
  EXPECT_THROW(build_unit(b, x, unit(4, 4, 2, 2, 2, 8), "u1"), invalid_config);
}

TEST(BuildUnit, FusionKnobs) {
  UnitConfig u = unit(8, 8, 4, 4, 2, 32);
  Graph sum = build_unit_graph(u, 8, 0, WeightInit::zeros);
  EXPECT_EQ(sum.node(sum.find("u1.Lf")).conv().in_channels, 4u);
  u.fusion = Fusion::concat;
  Graph cat = build_unit_graph(u, 8, 0, WeightInit::zeros);
  EXPECT_EQ(cat.node(cat.find("u1.Lf")).conv().in_channels, 16u);
  EXPECT_EQ(cat.find("u1.fuse"), -1);
  u.first_level = FirstLevelInput::pre_narrowed;
  Graph pre = build_unit_graph(u, 8, 0, WeightInit::zeros);
  EXPECT_EQ(pre.node(pre.find("u1.Ls")).conv().out_channels, 4u);
  EXPECT_EQ(pre.node(pre.find("u1.col.level1")).conv().in_channels, 16u);
}

TEST(BuildUnit, DeepProjectionKnobs) {
  UnitConfig u = unit(8, 8, 2, 4, 2, 32);
  u.deep_proj_pooling = false;
  Graph g = build_unit_graph(u, 8, 0, WeightInit::zeros);
  EXPECT_EQ(g.find("u1.pool"), -1);
  EXPECT_EQ(g.node(g.find("u1.Lp")).conv().sh, 2u);
  u.deep_proj = false;
  Graph h = build_unit_graph(u, 8, 0, WeightInit::zeros);
  EXPECT_EQ(h.find("u1.Lp"), -1);
  EXPECT_EQ(infer_shapes(h).back(), (Shape{1, 32, 4, 4}));
}

// --- PFF ----------------------------------------------------------------------------------

TEST(BuildPffUnit, TwoFusionLevelsSevenLayers) {
  UnitConfig u = unit(8, 8, 4, 4, 3, 32);
  u.pff = true;
  GraphBuilder b;
  int x = b.input(8, 8, 8);
  Graph g = b.finish(build_pff_unit(b, x, u, "u1"), 0, WeightInit::zeros);
  EXPECT_EQ(count_kind(g, NodeKind::conv, NodeRole::pair_fusion), 2);
  EXPECT_EQ(count_depth(g), 7);
  EXPECT_EQ(g.node(g.find("u1.pff1")).conv().groups, 2u);
  EXPECT_EQ(g.node(g.find("u1.pff1")).conv().in_channels, 16u);
}

TEST(BuildPffUnit, OddColumnsRejected) {
  UnitConfig u = unit(8, 8, 5, 4, 3, 32);
  u.pff = true;
  EXPECT_THROW(build_unit_graph(u, 8), invalid_config);
  u.pff_odd = PffOdd::passthrough_last;
  Graph g = build_unit_graph(u, 8, 0, WeightInit::zeros);
  EXPECT_EQ(g.node(g.find("u1.pff1")).conv().groups, 2u);
  EXPECT_GE(g.find("u1.pff1.passthrough"), 0);
  UnitConfig plain = unit(8, 8, 2, 4, 3, 32);
  GraphBuilder b;
  int x = b.input(8, 8, 8);
  EXPECT_THROW(build_pff_unit(b, x, plain, "u1"), invalid_config);
}

// Identity pair fusion, with BN statistics chosen so the BN is exactly the
// identity, reproduces the plain unit.
TEST(BuildPffUnit, IdentityFusionIsNoOp) {
  UnitConfig u = unit(4, 4, 2, 2, 3, 8);
  Graph plain = build_unit_graph(u, 8, 3);
  u.pff = true;
  Graph pff = build_unit_graph(u, 8, 3);
  const WeightTable wp = randomized_weights(plain, 5);
  WeightTable w = pff.weights();
  for (const auto& n : plain.nodes())
    if (wp.entries.count(n.id)) w.entries[pff.find(n.name)] = wp.entries.at(n.id);
  for (const char* lvl : {"u1.pff1", "u1.pff2"}) {
    Tensor& k = w.get(pff.find(lvl), "weight");
    k = Tensor(k.shape());
    for (std::size_t o = 0; o < 4; ++o) k.at(o, o % 4, 0, 0) = 1.0f;
    const int bn = pff.find(std::string(lvl) + ".bn");
    const float eps = static_cast<float>(pff.node(bn).bn().epsilon);
    for (auto& v : w.get(bn, "running_var").data()) v = 1.0f - eps;
  }
  Tensor x = tensor_create({1, 4, 8, 8}, fill::normal{6, 0.0, 1.0});
  EXPECT_LE(max_abs_diff(graph_forward(pff, w, x, Mode::eval).output, graph_forward(plain, wp, x, Mode::eval).output),
            1e-6);
}

// Zeroing column 0's level-1 weights: after pair fusion, level 2 of columns 0
// and 1 changes, columns 2 and 3 do not.
TEST(BuildPffUnit, PairLocality) {
  UnitConfig u = unit(4, 4, 4, 2, 3, 8);
  u.pff = true;
  Graph g = build_unit_graph(u, 8, 1);
  WeightTable w = randomized_weights(g, 1);
  Tensor x = tensor_create({2, 4, 8, 8}, fill::normal{8, 0.0, 1.0});
  const auto probe = static_cast<std::size_t>(g.find("u1.col.level2.relu"));
  const Tensor base = *graph_forward(g, w, x, Mode::train).tape.values[probe];
  Tensor& l1 = w.get(g.find("u1.col.level1"), "weight");
  for (std::size_t i = 0; i < l1.shape().sample() * 2; ++i) l1[i] = 0.0f;
  const Tensor y = *graph_forward(g, w, x, Mode::train).tape.values[probe];
  for (std::size_t c = 0; c < 4; ++c)
    EXPECT_EQ(channel_slice(y, 2 * c, 2 * c + 2) == channel_slice(base, 2 * c, 2 * c + 2), c >= 2) << c;
}

// --- networks -----------------------------------------------------------------------------

TEST(BuildNetwork, PublishedDepths) {
  EXPECT_EQ(count_depth(build_network(registry_lookup("CoSNet-A0"), 0, WeightInit::zeros)), 26);
  EXPECT_EQ(count_depth(build_network(registry_lookup("CoSNet-C1"), 0, WeightInit::zeros)), 28);
}

TEST(BuildNetwork, DepthBookkeepingFormula) {
  for (const auto& e : registry()) {
    if (e.spec.family != Family::cosnet) continue;
    int expected = 2;
    for (std::size_t l : e.spec.l) expected += static_cast<int>(l) + 2 + (e.spec.pff ? static_cast<int>(l) - 1 : 0);
    EXPECT_EQ(count_depth(build_network(e.spec, 0, WeightInit::zeros)), expected) << e.spec.name;
  }
}

TEST(BuildNetwork, FiveStagesAndHead) {
  for (const auto& name : cosnet_variant_names()) {
    Graph g = build_network(registry_lookup(name), 0, WeightInit::zeros);
    EXPECT_EQ(count_kind(g, NodeKind::conv, NodeRole::stem), 1) << name;
    EXPECT_EQ(count_kind(g, NodeKind::conv, NodeRole::squeeze), 4) << name;
    EXPECT_EQ(count_kind(g, NodeKind::linear, NodeRole::head), 1) << name;
    const auto shapes = infer_shapes(g, Shape{1, 3, 224, 224});
    EXPECT_EQ(shapes[static_cast<std::size_t>(g.find("u4.relu"))], (Shape{1, 2048, 7, 7})) << name;
    EXPECT_EQ(shapes.back(), (Shape{1, 1000, 1, 1})) << name;
    const auto& stem = g.node(g.find("stem")).conv();
    EXPECT_EQ(stem.kh, 3u);
    EXPECT_EQ(stem.sh, 2u);
    EXPECT_EQ(stem.out_channels, 64u);
  }
}

TEST(BuildNetwork, UnitInputsChain) {
  const VariantSpec s = registry_lookup("CoSNet-B0");
  EXPECT_EQ(s.unit(0).in_channels, 64u);
  for (std::size_t k = 1; k < 4; ++k) EXPECT_EQ(s.unit(k).in_channels, s.P[k - 1]);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(s.P[k], s.zeta * s.S[k]);
    EXPECT_TRUE(s.unit(k).downsample);
  }
}

TEST(BuildNetwork, CanonicalSpecInvariants) {
  VariantSpec s = registry_lookup("CoSNet-A0");
  s.P[2] = 999;
  EXPECT_THROW(build_network(s, 0, WeightInit::zeros), invalid_config);
  s = registry_lookup("CoSNet-A0");
  s.S = {64, 128, 200, 512};
  s.P = {256, 512, 800, 2048};
  EXPECT_THROW(s.validate(), invalid_config);
  s = registry_lookup("CoSNet-A0");
  s.M = {1, 1, 1};
  EXPECT_THROW(s.validate(), invalid_config);
}

TEST(ResNet50Reference, Structure) {
  Graph g = build_resnet50_reference(1000, 224, 0, WeightInit::zeros);
  EXPECT_EQ(count_depth(g), 50);
  EXPECT_EQ(g.node(g.find("stem")).conv().kh, 7u);
  EXPECT_GE(g.find("stem.pool"), 0);
  EXPECT_GE(g.find("s4.b3.conv3"), 0);
  EXPECT_EQ(g.find("s4.b4.conv3"), -1);
  EXPECT_EQ(infer_shapes(g).back(), (Shape{1, 1000, 1, 1}));
}

// --- registry -----------------------------------------------------------------------------

TEST(Registry, TableA1Values) {
  const VariantSpec a0 = registry_lookup("CoSNet-A0");
  using V = std::vector<std::size_t>;
  EXPECT_EQ(a0.N, (V{16, 32, 64, 128}));
  EXPECT_EQ(a0.l, (V{3, 4, 6, 3}));
  EXPECT_EQ(a0.M, (V{1, 1, 1, 1}));
  EXPECT_EQ(a0.P, (V{256, 512, 1024, 2048}));
  EXPECT_EQ(a0.S, (V{64, 128, 256, 512}));
  const VariantSpec b0 = registry_lookup("CoSNet-B0");
  EXPECT_EQ(b0.N, (V{32, 64, 128, 256}));
  EXPECT_EQ(b0.M, (V{4, 4, 4, 4}));
  EXPECT_EQ(b0.l, (V{3, 4, 6, 3}));
  EXPECT_EQ(registry_lookup("CoSNet-B2").M, (V{4, 4, 16, 4}));
  const VariantSpec c1 = registry_lookup("CoSNet-C1");
  EXPECT_EQ(c1.N, (V{48, 80, 144, 272}));
  EXPECT_EQ(c1.l, (V{4, 4, 6, 4}));
  const VariantSpec c2 = registry_lookup("CoSNet-C2");
  EXPECT_EQ(c2.N, (V{48, 80, 144, 272}));
  EXPECT_EQ(c2.l, (V{3, 4, 6, 3}));
  EXPECT_EQ(c2.M, (V{6, 6, 16, 6}));
  EXPECT_EQ(registry_lookup("CoSNet-B1").M, (V{5, 5, 5, 5}));
  EXPECT_EQ(registry_lookup("CoSNet-A1").M, (V{4, 4, 4, 4}));
}

TEST(Registry, AllNamesPresent) {
  for (const char* base : {"A1", "B0", "B1", "B2", "C1", "C2"}) {
    const std::string n = std::string("CoSNet-") + base;
    const VariantSpec plain = registry_lookup(n), pff = registry_lookup(n + "-PFF");
    EXPECT_FALSE(plain.pff);
    EXPECT_TRUE(pff.pff);
    EXPECT_EQ(plain.N, pff.N);
    EXPECT_EQ(plain.M, pff.M);
    EXPECT_EQ(plain.l, pff.l);
  }
  EXPECT_THROW(registry_lookup("CoSNet-A0-PFF"), lookup_error);
  EXPECT_EQ(registry_lookup("ResNet-50-ref").family, Family::resnet50);
  EXPECT_EQ(cosnet_variant_names().size(), 13u);
}

TEST(Registry, UnknownNameListsKnownNames) {
  try {
    registry_lookup("nonesuch");
    FAIL() << "expected lookup_error";
  } catch (const lookup_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("nonesuch"), std::string::npos);
    for (const auto& n : registry_names()) EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
}

TEST(Registry, MiniVariant) {
  const VariantSpec m = registry_lookup("mini");
  EXPECT_EQ(m.stages(), 3u);
  EXPECT_EQ(m.M, (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(m.N, (std::vector<std::size_t>{8, 8, 8}));
  EXPECT_EQ(m.l, (std::vector<std::size_t>{2, 2, 2}));
  Graph g = build_network(m, 0, WeightInit::zeros);
  EXPECT_EQ(infer_shapes(g).back(), (Shape{1, 10, 1, 1}));
}

// --- spec text ----------------------------------------------------------------------------

TEST(SpecText, RoundTripsEveryRegistryEntry) {
  for (const auto& e : registry()) EXPECT_EQ(spec_from_text(spec_to_text(e.spec)), e.spec) << e.spec.name;
}

TEST(SpecText, ParsesCommentsAndDefaults) {
  const VariantSpec s = spec_from_text("# custom\nname = tiny\nN = 8, 8, 8, 8  # per stage\nM=2,2,2,2\n\n");
  EXPECT_EQ(s.name, "tiny");
  EXPECT_EQ(s.N, (std::vector<std::size_t>{8, 8, 8, 8}));
  EXPECT_EQ(s.M, (std::vector<std::size_t>{2, 2, 2, 2}));
  EXPECT_EQ(s.l, registry_lookup("CoSNet-A0").l);
}

TEST(SpecText, Rejections) {
  EXPECT_THROW(spec_from_text("colour = red\n"), invalid_config);
  EXPECT_THROW(spec_from_text("N 16\n"), invalid_config);
  EXPECT_THROW(spec_from_text("N = 16,x,64,128\n"), invalid_config);
  EXPECT_THROW(spec_from_text("fusion = average\n"), invalid_config);
  EXPECT_THROW(spec_from_text("P = 256,512,1024,4096\n"), invalid_config);
  EXPECT_THROW(unit_from_text("M = 3\npff = true\n"), invalid_config);
  EXPECT_THROW(load_spec_file("/nonexistent/spec.txt"), invalid_config);
}

TEST(SpecText, UnitConfig) {
  const UnitConfig u = unit_from_text("in_channels = 4\nS = 4\nM = 2\nN = 2\nl = 2\nP = 8\nfusion = concat\n");
  EXPECT_EQ(u.in_channels, 4u);
  EXPECT_EQ(u.columns, 2u);
  EXPECT_EQ(u.fusion, Fusion::concat);
  EXPECT_EQ(u.fuse_in(), 4u);
}
