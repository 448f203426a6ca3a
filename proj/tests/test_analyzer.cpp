#include <gtest/gtest.h>

#include "cosnet/cosnet.hpp"

using namespace cosnet;

namespace {

Graph chain(std::size_t n_convs, std::size_t res) {
  GraphBuilder b("chain");
  int x = b.input(2, res, res);
  for (std::size_t i = 0; i < n_convs; ++i) x = b.conv(x, conv_params(2, 2, 3), "c" + std::to_string(i));
  return b.finish(x, 0, WeightInit::zeros);
}

Graph network(const std::string& name) { return build_network(registry_lookup(name), 0, WeightInit::zeros); }

UnitConfig unit(std::size_t M, std::size_t N, std::size_t l) {
  UnitConfig u;
  u.in_channels = 16;
  u.squeeze = 16;
  u.columns = M;
  u.kernels = N;
  u.depth = l;
  u.expand = 64;
  return u;
}

}  // namespace

TEST(CountDepth, PublishedDepths) {
  const std::map<std::string, int> expected = {
      {"CoSNet-A0", 26},     {"CoSNet-A1", 26},     {"CoSNet-B0", 26},     {"CoSNet-B1", 26},
      {"CoSNet-B2", 26},     {"CoSNet-C1", 28},     {"CoSNet-C2", 26},     {"CoSNet-A1-PFF", 38},
      {"CoSNet-B0-PFF", 38}, {"CoSNet-B1-PFF", 38}, {"CoSNet-B2-PFF", 38}, {"CoSNet-C1-PFF", 42},
      {"CoSNet-C2-PFF", 38}, {"ResNet-50-ref", 50}};
  for (const auto& [name, d] : expected) {
    EXPECT_EQ(count_depth(network(name)), d) << name;
    EXPECT_EQ(registry_entry(name).published->depth, d) << name;
  }
}

TEST(CountDepth, OnlyWeightedLayersCount) {
  GraphBuilder b;
  int x = b.input(2, 4, 4);
  x = b.bn(x, 2, "bn");
  x = b.relu(x, "relu");
  x = b.pool(x, PoolKind::max, Window{3, 3, 1, 1, 1, 1}, "pool");
  x = b.replicate(x, 2, "ir");
  x = b.block_sum(x, 2, "sum");
  int y = b.conv(x, conv_params(2, 2, 1), "conv");
  x = b.add({x, y}, "add");
  x = b.gap(x, "gap");
  x = b.linear(x, 2, 3, "fc");
  EXPECT_EQ(count_depth(b.finish(x)), 2);
}

// Three bottlenecks stack 9 weighted layers; one l = 3 unit has 5.
TEST(CountDepth, BottleneckStageVersusUnit) {
  GraphBuilder b;
  int x = b.input(256, 14, 14);
  Graph stage = b.finish(build_bottleneck_stage(b, x, 64, 3, 1, "s"), 0, WeightInit::zeros);
  UnitConfig u = unit(1, 16, 3);
  u.in_channels = 256;
  u.squeeze = 64;
  u.expand = 256;
  Graph cos = build_unit_graph(u, 14, 0, WeightInit::zeros);
  EXPECT_EQ(count_depth(stage), 9);
  EXPECT_EQ(count_depth(cos), 5);
  EXPECT_NEAR(1.0 - 5.0 / 9.0, 0.45, 0.01);
}

TEST(CountParams, PointwiseConvArithmetic) {
  GraphBuilder b;
  int x = b.input(64, 7, 7);
  Graph g = b.finish(b.conv(x, conv_params(64, 256, 1), "pw"), 0, WeightInit::zeros);
  EXPECT_EQ(count_params(g), 16384);
}

TEST(CountParams, ConventionsForBnBiasAndRunningStats) {
  GraphBuilder b;
  int x = b.input(3, 4, 4);
  x = b.conv(x, conv_params(3, 4, 3, 1, 1, std::nullopt, true), "c");
  x = b.bn(x, 4, "bn");
  x = b.gap(x, "gap");
  Graph g = b.finish(b.linear(x, 4, 5, "fc"), 0, WeightInit::zeros);
  EXPECT_EQ(count_params(g), (4 * 3 * 9 + 4) + 2 * 4 + (4 * 5 + 5));
}

TEST(CountParams, FormulaMatchesWeightTableForEveryVariant) {
  for (const auto& e : registry()) {
    const Graph g = build_network(e.spec, 0, WeightInit::zeros);
    EXPECT_EQ(count_params(g), enumerate_weight_elements(g.weights())) << e.spec.name;
  }
}

TEST(CountParams, ResNet50Anchor) {
  const double p = static_cast<double>(count_params(network("ResNet-50-ref")));
  EXPECT_NEAR(p / 25.5e6, 1.0, 0.02);
}

TEST(CountFlops, TinyConv) {
  GraphBuilder b;
  int x = b.input(1, 4, 4);
  Graph g = b.finish(b.conv(x, conv_params(1, 1, 3), "c"), 0, WeightInit::zeros);
  EXPECT_EQ(count_flops(g, 4), 144);
}

TEST(CountFlops, ResNet50Anchor) {
  const double f = static_cast<double>(count_flops(network("ResNet-50-ref"), 224));
  EXPECT_NEAR(f / 4.12e9, 1.0, 0.03);
}

TEST(CountFlops, QuadraticInResolution) {
  const Graph g = chain(3, 8);
  EXPECT_EQ(count_flops(g, 16), 4 * count_flops(g, 8));
  const Graph u = build_unit_graph(unit(4, 8, 3), 8, 0, WeightInit::zeros);
  EXPECT_EQ(count_flops(u, 32), 4 * count_flops(u, 16));
}

TEST(CountFlops, GroupedConvFormula) {
  GraphBuilder b;
  int x = b.input(8, 6, 6);
  Graph g = b.finish(b.conv(x, conv_params(8, 12, 3, 2, 4), "g"), 0, WeightInit::zeros);
  EXPECT_EQ(count_flops(g, 6), 3 * 3 * 2 * 12 * 3 * 3);
}

TEST(CountFlops, MonotoneInColumnsKernelsAndDepth) {
  auto f = [](std::size_t M, std::size_t N, std::size_t l) {
    return count_flops(build_unit_graph(unit(M, N, l), 16, 0, WeightInit::zeros), 16);
  };
  for (std::size_t M : {1u, 2u, 4u})
    for (std::size_t N : {4u, 8u})
      for (std::size_t l : {1u, 2u, 3u}) {
        EXPECT_GE(f(M + 1, N, l), f(M, N, l));
        EXPECT_GE(f(M, N * 2, l), f(M, N, l));
        EXPECT_GE(f(M, N, l + 1), f(M, N, l));
      }
}

TEST(BranchStats, ChainHoldsTwo) {
  for (std::size_t n : {1u, 3u, 10u}) EXPECT_EQ(branch_stats(chain(n, 4)).max_concurrent_tensors, 2u) << n;
  // Two 2x4x4 tensors of 4-byte floats.
  EXPECT_EQ(branch_stats(chain(3, 4)).peak_activation_bytes, 2 * 32 * 4);
}

TEST(BranchStats, DiamondHoldsThree) {
  GraphBuilder b;
  int x = b.input(2, 4, 4);
  int p = b.conv(x, conv_params(2, 2, 1), "a");
  int q = b.conv(x, conv_params(2, 2, 1), "b");
  EXPECT_EQ(branch_stats(b.finish(b.add({p, q}, "sum"), 0, WeightInit::zeros)).max_concurrent_tensors, 3u);
}

TEST(BranchStats, BatchedB1HasFewerLiveTensorsThanUnrolled) {
  const Graph g = network("CoSNet-B1");
  const auto plan_u = plan(g, PlanMode::unrolled);
  const auto batched = branch_stats(g, 224);
  const auto unrolled = branch_stats(plan_u.graph, 224);
  EXPECT_LT(batched.max_concurrent_tensors, unrolled.max_concurrent_tensors);
}

TEST(Report, TotalsEqualRowSumsAndCounters) {
  for (const char* name : {"CoSNet-A0", "CoSNet-B1-PFF", "ResNet-50-ref"}) {
    const Graph g = network(name);
    const auto r = analyze(g, 224);
    std::int64_t params = 0, macs = 0;
    for (const auto& row : r.rows) {
      params += row.params;
      macs += row.macs;
    }
    EXPECT_EQ(r.params, params) << name;
    EXPECT_EQ(r.flops_macs, macs) << name;
    EXPECT_EQ(r.params, count_params(g));
    EXPECT_EQ(r.flops_macs, count_flops(g, 224));
    EXPECT_EQ(r.depth, count_depth(g));
    const auto bs = branch_stats(g, 224);
    EXPECT_EQ(r.max_concurrent_tensors, bs.max_concurrent_tensors);
    EXPECT_EQ(r.peak_activation_bytes, bs.peak_activation_bytes);
    EXPECT_EQ(r.rows.size(), g.size());
  }
}

TEST(Report, PublishedComparisonDeltas) {
  const auto& e = registry_entry("CoSNet-A0");
  const auto r = analyze(network("CoSNet-A0"), 224, e.published);
  ASSERT_TRUE(r.comparison);
  EXPECT_EQ(r.comparison->published_depth, 26);
  EXPECT_EQ(r.comparison->depth_delta, 0.0);
  EXPECT_DOUBLE_EQ(r.comparison->params_delta, (static_cast<double>(r.params) - 8.8e6) / 8.8e6);
  EXPECT_DOUBLE_EQ(r.comparison->flops_delta, (static_cast<double>(r.flops_macs) - 1.25e9) / 1.25e9);
}

TEST(Report, RenderingIsDeterministic) {
  const auto r = analyze(network("CoSNet-B0"), 224, registry_entry("CoSNet-B0").published);
  EXPECT_EQ(render_table(r), render_table(analyze(network("CoSNet-B0"), 224, registry_entry("CoSNet-B0").published)));
  const std::string t = render_table(r);
  EXPECT_NE(t.find("u3.col.level2"), std::string::npos);
  const std::string csv = render_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,kind,out_n,out_c,out_h,out_w,params,macs");
}

TEST(Report, CsvRoundTrip) {
  for (const char* name : {"CoSNet-A0", "CoSNet-C2-PFF", "ResNet-50-ref", "mini"}) {
    const auto& e = registry_entry(name);
    const auto r = analyze(build_network(e.spec, 0, WeightInit::zeros), 0, e.published);
    EXPECT_EQ(parse_csv(render_csv(r)), r) << name;
  }
}

TEST(Report, CsvRejectsGarbage) {
  EXPECT_THROW(parse_csv("not,a,report\n"), error);
  const auto r = analyze(chain(2, 4));
  std::string csv = render_csv(r);
  csv.insert(csv.find('\n') + 1, "c9,conv,1,2\n");
  EXPECT_THROW(parse_csv(csv), error);
}

TEST(Calibration, GridAndCanonicalBand) {
  const auto rep = calibrate();
  ASSERT_EQ(rep.combos.size(), 4u);
  for (const auto& c : rep.combos) EXPECT_EQ(c.cells.size(), 7u);
  for (std::size_t i = 0; i < rep.combos.size(); ++i)
    EXPECT_LE(rep.combos[rep.best].mean_abs_params_delta, rep.combos[i].mean_abs_params_delta);
  const auto& canon = rep.combos[rep.canonical];
  EXPECT_EQ(canon.fusion, registry_lookup("CoSNet-A0").fusion);
  EXPECT_EQ(canon.first_level, registry_lookup("CoSNet-A0").first_level);
  for (const auto& cell : canon.cells) {
    EXPECT_LE(std::abs(cell.params_delta), 0.25) << cell.variant;
    EXPECT_LE(std::abs(cell.flops_delta), 0.25) << cell.variant;
  }
  const std::string text = render_calibration(rep);
  EXPECT_NE(text.find("block_sum"), std::string::npos);
  EXPECT_NE(text.find("pre_narrowed"), std::string::npos);
}
