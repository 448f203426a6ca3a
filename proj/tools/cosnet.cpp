// cosnet: describe, analyze, verify, gradcheck, train, bench and export
// CoSNet graphs from the command line.
//
// stdout carries data, stderr carries logs. Exit codes: 0 success,
// 1 check failed, 2 usage or configuration error.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cosnet/cosnet.hpp"

namespace {

using namespace cosnet;
using json = nlohmann::json;

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct Source {
  std::string variant;
  std::string config;
};

void add_source(CLI::App* cmd, Source& src) {
  cmd->add_option("variant", src.variant, "Registry variant name (e.g. CoSNet-A0, ResNet-50-ref, mini)");
  cmd->add_option("--config", src.config, "Variant spec file (key = value lines)");
}

struct Resolved {
  VariantSpec spec;
  std::optional<PublishedRow> published;
};

Resolved resolve(const Source& src) {
  if (src.variant.empty() == src.config.empty())
    throw invalid_config("give exactly one of a variant name or --config");
  if (!src.config.empty()) return {load_spec_file(src.config), std::nullopt};
  const auto& e = registry_entry(src.variant);
  return {e.spec, e.published};
}

void write_out(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw invalid_config("cannot write '" + path + "'");
  f << text;
}

// --- describe ----------------------------------------------------------------

int cmd_describe(const Source& src, std::size_t res) {
  const auto r = resolve(src);
  const Graph g = build_network(r.spec, 0, WeightInit::zeros);
  std::size_t units = 0, fusion_levels = 0;
  for (const auto& n : g.nodes()) {
    if (n.kind == NodeKind::conv && n.role == NodeRole::squeeze) ++units;
    if (n.kind == NodeKind::conv && n.role == NodeRole::pair_fusion) ++fusion_levels;
  }
  std::istringstream spec(spec_to_text(r.spec));
  for (std::string line; std::getline(spec, line);) std::cout << "# " << line << '\n';
  std::cout << "# units = " << units << '\n';
  std::cout << "# pair_fusion_levels = " << fusion_levels << '\n';
  std::cout << render_graph(g, res);
  return kOk;
}

// --- analyze -------------------------------------------------------------------

int cmd_analyze(const Source& src, std::size_t res, const std::string& format, bool compare_published, bool calibration,
                const std::string& out) {
  if (calibration) {
    write_out(out, render_calibration(calibrate()));
    return kOk;
  }
  const auto r = resolve(src);
  const Graph g = build_network(r.spec, 0, WeightInit::zeros);
  if (compare_published && !r.published) std::cerr << "note: no published figures for '" << r.spec.name << "'\n";
  const auto rep = analyze(g, res ? res : r.spec.input_res, compare_published ? r.published : std::nullopt);
  if (format == "csv")
    write_out(out, render_csv(rep));
  else if (format == "table")
    write_out(out, render_table(rep));
  else
    throw invalid_config("--format must be csv or table");
  return kOk;
}

// --- verify ------------------------------------------------------------------------

int cmd_verify(const Source& src, std::size_t trials, std::uint64_t seed, double tol, std::size_t res, bool as_json) {
  if (trials == 0) throw invalid_config("--trials must be >= 1");
  const auto r = resolve(src);
  const auto rep = equivalence_check(r.spec, trials, seed, tol, res);
  if (as_json) {
    json j;
    j["variant"] = r.spec.name;
    j["trials"] = rep.trials.size();
    j["tol"] = tol;
    j["max_abs_diff"] = rep.max_abs_diff();
    j["pass"] = rep.pass;
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "trial  seed                  M   N   l  max_abs_diff   result\n";
    for (std::size_t i = 0; i < rep.trials.size(); ++i) {
      const auto& t = rep.trials[i];
      std::cout << std::setw(5) << i << "  " << std::setw(20) << t.seed << "  " << std::setw(2) << t.columns << "  "
                << std::setw(2) << t.kernels << "  " << std::setw(2) << t.depth << "  " << std::setw(12)
                << std::scientific << std::setprecision(3) << t.max_abs_diff << std::defaultfloat << "   "
                << (t.pass ? "pass" : "FAIL") << '\n';
    }
    std::cout << r.spec.name << ": max abs diff " << rep.max_abs_diff() << " (tol " << tol << ") "
              << (rep.pass ? "PASS" : "FAIL") << '\n';
  }
  return rep.pass ? kOk : kCheckFailed;
}

// --- gradcheck -----------------------------------------------------------------------

int cmd_gradcheck(const std::string& unit_config, bool pff, double eps, double tol, std::uint64_t seed,
                  std::size_t res, std::size_t batch, bool as_json) {
  UnitConfig u;
  if (!unit_config.empty()) {
    u = unit_from_text(read_text_file(unit_config));
  } else {
    u.in_channels = 4;
    u.squeeze = 4;
    u.columns = 2;
    u.kernels = 2;
    u.depth = 2;
    u.expand = 8;
    u.pff = pff;
  }
  if (pff) u.pff = true;
  const Graph g = build_unit_graph(u, res, seed);
  GradCheckOptions opt;
  opt.eps = eps;
  opt.tol = tol;
  opt.seed = seed;
  const auto rep = grad_check(g, Shape{batch, u.in_channels, res, res}, opt);
  if (as_json) {
    json j;
    for (const auto& [k, v] : rep.param_errors) j["param." + k] = v;
    j["input"] = rep.input_error;
    j["max_error"] = rep.max_error;
    j["worst"] = rep.worst;
    j["eps"] = rep.eps;
    j["tol"] = rep.tol;
    j["checked"] = rep.checked;
    j["skipped"] = rep.skipped;
    j["pass"] = rep.pass;
    std::cout << j.dump() << '\n';
  } else {
    for (const auto& [k, v] : rep.param_errors) std::cout << std::left << std::setw(32) << k << v << '\n';
    std::cout << std::left << std::setw(32) << "input" << rep.input_error << '\n';
    std::cout << "max relative error " << rep.max_error << " at " << rep.worst << " (eps " << eps << ", tol " << tol
              << ", " << rep.checked << " elements, " << rep.skipped << " skipped at kinks) " << (rep.pass ? "PASS" : "FAIL") << '\n';
  }
  return rep.pass ? kOk : kCheckFailed;
}

// --- train ---------------------------------------------------------------------------

struct TrainArgs {
  Source src;
  std::string dataset;
  bool synth = false;
  std::size_t samples_per_class = 100;
  TrainConfig cfg;
  std::string schedule = "cosine";
  std::string out;
  bool as_json = false;
};

int cmd_train(TrainArgs a) {
  const auto r = resolve(a.src);
  if (a.synth == !a.dataset.empty()) throw invalid_config("give exactly one of --synth or --dataset");
  if (a.schedule == "cosine") a.cfg.lr_schedule = LrSchedule::cosine;
  else if (a.schedule == "constant") a.cfg.lr_schedule = LrSchedule::constant;
  else throw invalid_config("--schedule must be constant or cosine");
  a.cfg.validate();
  if (a.cfg.lr == 0.0) std::cerr << "warning: --lr 0 leaves the weights unchanged\n";
  const Dataset d = a.synth ? synth_dataset(r.spec.num_classes, a.samples_per_class, r.spec.input_res, a.cfg.seed,
                                            r.spec.in_channels)
                            : load_raw_dataset(a.dataset, a.cfg.seed);
  const Graph g = build_network(r.spec, a.cfg.seed);
  std::cerr << "training " << r.spec.name << " on " << d.train.size() << " samples for " << a.cfg.epochs
            << " epochs\n";
  const auto res = train(g, d, a.cfg);
  const double train_acc = evaluate(g, res.weights, d, d.train);
  const double test_acc = evaluate(g, res.weights, d, d.test);
  if (a.as_json) {
    json j;
    j["variant"] = r.spec.name;
    j["epochs"] = res.epochs.size();
    j["final_loss"] = res.epochs.empty() ? 0.0 : res.epochs.back().loss;
    j["train_accuracy"] = train_acc;
    j["test_accuracy"] = test_acc;
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "epoch  loss        train_acc  lr\n";
    for (const auto& e : res.epochs)
      std::cout << std::setw(5) << e.epoch << "  " << std::fixed << std::setprecision(6) << e.loss << "  "
                << std::setprecision(4) << e.train_accuracy << "     " << std::setprecision(6) << e.lr << '\n';
    std::cout << std::fixed << std::setprecision(4) << "final train accuracy " << train_acc << '\n'
              << "final test accuracy " << test_acc << '\n';
  }
  if (!a.out.empty()) {
    save_checkpoint(g, res.weights, r.spec, a.out);
    std::cerr << "wrote " << a.out << '\n';
  }
  return kOk;
}

// --- bench ---------------------------------------------------------------------------

int cmd_bench(const Source& src, const std::string& mode, std::size_t iters, std::size_t warmup, std::size_t res,
              std::size_t batch, bool unit_only, bool as_json) {
  if (iters == 0) throw invalid_config("--iters must be >= 1");
  const auto r = resolve(src);
  const std::size_t resolution = res ? res : r.spec.input_res;
  Graph g = unit_only ? build_unit_graph(r.spec.unit(0), resolution) : build_network(r.spec);
  if (!unit_only && resolution != r.spec.input_res) {
    VariantSpec s = r.spec;
    s.input_res = resolution;
    g = build_network(s);
  }
  std::vector<PlanMode> modes;
  if (mode == "batched" || mode == "both") modes.push_back(PlanMode::batched);
  if (mode == "unrolled" || mode == "both") modes.push_back(PlanMode::unrolled);
  if (modes.empty()) throw invalid_config("--mode must be batched, unrolled or both");
  const Shape in{batch, g.input_shape().c, resolution, resolution};
  const char* det = std::getenv("COSNET_DETERMINISTIC");
  json j;
  if (!as_json)
    std::cout << "mode       iters  mean_ms     p50_ms      p95_ms\n";
  for (PlanMode m : modes) {
    const auto p = plan(g, m);
    const auto st = bench(p, g.weights(), in, warmup, iters);
    if (as_json) {
      const std::string k = to_string(m);
      j[k + ".mean_ms"] = st.mean_ms;
      j[k + ".p50_ms"] = st.p50_ms;
      j[k + ".p95_ms"] = st.p95_ms;
      j[k + ".iters"] = st.iters;
      j[k + ".conv_steps"] = p.conv_steps();
    } else {
      std::cout << std::left << std::setw(9) << to_string(m) << std::right << std::setw(7) << st.iters << std::fixed
                << std::setprecision(3) << std::setw(10) << st.mean_ms << std::setw(12) << st.p50_ms << std::setw(12)
                << st.p95_ms << '\n';
    }
  }
  if (as_json) {
    j["variant"] = r.spec.name;
    j["resolution"] = resolution;
    j["batch"] = batch;
    j["deterministic"] = det ? std::string(det) : "";
    std::cout << j.dump() << '\n';
  }
  std::cerr << "note: single-threaded reference kernels; timings are machine-specific\n";
  return kOk;
}

// --- export --------------------------------------------------------------------------

int cmd_export(const std::string& in, const std::string& out) {
  const Checkpoint ck = load_checkpoint(in);
  const Graph g = build_network(ck.spec, 0, WeightInit::zeros);
  const WeightTable w = weights_from_named(g, ck.tensors);
  save_checkpoint(g, w, ck.spec, out);
  std::cerr << "exported " << ck.tensors.size() << " tensors of " << ck.spec.name << " to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CoSNet construction kit, reference engine and analyzer"};
  app.require_subcommand(1);
  std::function<int()> run;

  Source describe_src;
  std::size_t describe_res = 0;
  auto* describe = app.add_subcommand("describe", "Print the graph of a variant");
  add_source(describe, describe_src);
  describe->add_option("--input-res", describe_res, "Resolution for the shape column");
  describe->callback([&] { run = [&] { return cmd_describe(describe_src, describe_res); }; });

  Source analyze_src;
  std::size_t analyze_res = 0;
  std::string analyze_format = "table", analyze_out;
  bool compare_published = false, calibration = false;
  auto* analyze_cmd = app.add_subcommand("analyze", "Depth, parameters, MACs and branching of a variant");
  add_source(analyze_cmd, analyze_src);
  analyze_cmd->add_option("--input-res", analyze_res, "Input resolution (default: the variant's)");
  analyze_cmd->add_option("--format", analyze_format, "table or csv")->check(CLI::IsMember({"table", "csv"}));
  analyze_cmd->add_flag("--compare-paper", compare_published, "Report deltas against published figures");
  analyze_cmd->add_flag("--calibrate", calibration, "Fusion / first-level knob grid over the published variants");
  analyze_cmd->add_option("--out", analyze_out, "Write to file instead of stdout");
  analyze_cmd->callback([&] {
    run = [&] {
      return cmd_analyze(analyze_src, analyze_res, analyze_format, compare_published, calibration, analyze_out);
    };
  });

  Source verify_src;
  std::size_t verify_trials = 20, verify_res = 32;
  std::uint64_t verify_seed = 0;
  double verify_tol = 1e-5;
  bool verify_json = false;
  auto* verify = app.add_subcommand("verify", "Batched vs unrolled equivalence on the first unit");
  add_source(verify, verify_src);
  verify->add_option("--trials", verify_trials, "Randomized trials");
  verify->add_option("--seed", verify_seed, "Base seed (default 0)");
  verify->add_option("--tol", verify_tol, "Max abs difference allowed");
  verify->add_option("--input-res", verify_res, "Input resolution");
  verify->add_flag("--json", verify_json, "Flat JSON output");
  verify->callback([&] {
    run = [&] { return cmd_verify(verify_src, verify_trials, verify_seed, verify_tol, verify_res, verify_json); };
  });

  std::string gc_config;
  bool gc_pff = false, gc_json = false;
  double gc_eps = 1e-3, gc_tol = 1e-3;
  std::uint64_t gc_seed = 0;
  std::size_t gc_res = 8, gc_batch = 2;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of a small unit");
  gradcheck->add_option("--unit-config", gc_config, "Unit config file (default: 2-column mini unit)");
  gradcheck->add_flag("--pff", gc_pff, "Enable pairwise frequent fusion");
  gradcheck->add_option("--eps", gc_eps, "Central difference step");
  gradcheck->add_option("--tol", gc_tol, "Max relative error");
  gradcheck->add_option("--seed", gc_seed, "Seed (default 0)");
  gradcheck->add_option("--input-res", gc_res, "Input resolution");
  gradcheck->add_option("--batch", gc_batch, "Batch size (>= 2 exercises batch statistics)");
  gradcheck->add_flag("--json", gc_json, "Flat JSON output");
  gradcheck->callback([&] {
    run = [&] { return cmd_gradcheck(gc_config, gc_pff, gc_eps, gc_tol, gc_seed, gc_res, gc_batch, gc_json); };
  });

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a variant with SGD and momentum");
  add_source(train_cmd, ta.src);
  train_cmd->add_option("--dataset", ta.dataset, "CSDS raw dataset file");
  train_cmd->add_flag("--synth", ta.synth, "Use the seeded synthetic dataset");
  train_cmd->add_option("--samples-per-class", ta.samples_per_class, "Synthetic samples per class");
  train_cmd->add_option("--epochs", ta.cfg.epochs);
  train_cmd->add_option("--batch-size", ta.cfg.batch_size);
  train_cmd->add_option("--lr", ta.cfg.lr);
  train_cmd->add_option("--momentum", ta.cfg.momentum);
  train_cmd->add_option("--weight-decay", ta.cfg.weight_decay);
  train_cmd->add_option("--seed", ta.cfg.seed, "Seed (default 0)");
  train_cmd->add_option("--schedule", ta.schedule, "constant or cosine");
  train_cmd->add_option("--out", ta.out, "Write the trained checkpoint here");
  train_cmd->add_flag("--json", ta.as_json, "Flat JSON summary");
  train_cmd->callback([&] { run = [&] { return cmd_train(ta); }; });

  Source bench_src;
  std::string bench_mode = "both";
  std::size_t bench_iters = 10, bench_warmup = 2, bench_res = 0, bench_batch = 1;
  bool bench_unit = false, bench_json = false;
  auto* bench_cmd = app.add_subcommand("bench", "Wall-clock forward timing, batched and/or unrolled");
  add_source(bench_cmd, bench_src);
  bench_cmd->add_option("--mode", bench_mode, "batched, unrolled or both");
  bench_cmd->add_option("--iters", bench_iters);
  bench_cmd->add_option("--warmup", bench_warmup);
  bench_cmd->add_option("--input-res", bench_res);
  bench_cmd->add_option("--batch", bench_batch);
  bench_cmd->add_flag("--unit", bench_unit, "Time only the first unit");
  bench_cmd->add_flag("--json", bench_json, "Flat JSON output");
  bench_cmd->callback([&] {
    run = [&] {
      return cmd_bench(bench_src, bench_mode, bench_iters, bench_warmup, bench_res, bench_batch, bench_unit,
                       bench_json);
    };
  });

  std::string export_in, export_out;
  auto* export_cmd = app.add_subcommand("export", "Validate a checkpoint and write it out again");
  export_cmd->add_option("checkpoint", export_in)->required();
  export_cmd->add_option("--out", export_out)->required();
  export_cmd->callback([&] { run = [&] { return cmd_export(export_in, export_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  try {
    return run();
  } catch (const lookup_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const invalid_config& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const format_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const divergence_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const cosnet::error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
