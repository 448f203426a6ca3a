#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cosnet/arch.hpp"
#include "cosnet/graph.hpp"

namespace cosnet {

/// Longest input-to-output path counting conv and linear nodes.
inline int count_depth(const Graph& g) {
  std::vector<int> best(g.size(), 0);
  for (const auto& n : g.nodes()) {
    int d = 0;
    for (int in : n.inputs) d = std::max(d, best[static_cast<std::size_t>(in)]);
    best[static_cast<std::size_t>(n.id)] = d + (n.weighted() ? 1 : 0);
  }
  return best[static_cast<std::size_t>(g.output_id())];
}

/// Parameter count of one node from its configuration alone.
inline std::int64_t node_params(const LayerNode& n) {
  switch (n.kind) {
    case NodeKind::conv: {
      const auto& p = n.conv();
      return static_cast<std::int64_t>(p.weight_shape().numel() + (p.has_bias ? p.out_channels : 0));
    }
    case NodeKind::linear: return static_cast<std::int64_t>(n.linear().in * n.linear().out + n.linear().out);
    case NodeKind::bn: return static_cast<std::int64_t>(2 * n.bn().channels);
    default: return 0;
  }
}

inline std::int64_t node_macs(const LayerNode& n, const Shape& out) {
  if (n.kind == NodeKind::conv) {
    const auto& p = n.conv();
    return static_cast<std::int64_t>(p.kh * p.kw * p.in_per_group() * p.out_channels * out.h * out.w * out.n);
  }
  if (n.kind == NodeKind::linear) return static_cast<std::int64_t>(n.linear().in * n.linear().out * out.n);
  return 0;
}

inline std::int64_t count_params(const Graph& g) {
  std::int64_t total = 0;
  for (const auto& n : g.nodes()) total += node_params(n);
  return total;
}

/// Counts elements of every trainable tensor in the weight table.
inline std::int64_t enumerate_weight_elements(const WeightTable& w) {
  std::int64_t total = 0;
  for (const auto& [id, m] : w.entries)
    for (const auto& [name, t] : m)
      if (!WeightTable::is_buffer(name)) total += static_cast<std::int64_t>(t.numel());
  return total;
}

inline std::int64_t count_flops(const Graph& g, std::size_t resolution) {
  const auto shapes = infer_shapes(g, input_shape_at(g, resolution));
  std::int64_t total = 0;
  for (const auto& n : g.nodes()) total += node_macs(n, shapes[static_cast<std::size_t>(n.id)]);
  return total;
}

struct BranchStats {
  std::size_t max_concurrent_tensors = 0;
  std::int64_t peak_activation_bytes = 0;
};

/// Topological execution with activations freed after their last consumer.
/// The output node aliases its producer.
inline BranchStats branch_stats(const Graph& g, std::size_t resolution = 0) {
  const auto shapes = infer_shapes(g, resolution ? input_shape_at(g, resolution) : g.input_shape());
  std::vector<int> remaining(g.size(), 0);
  for (const auto& n : g.nodes())
    for (int in : n.inputs) ++remaining[static_cast<std::size_t>(in)];
  BranchStats st;
  std::size_t live = 0;
  std::int64_t bytes = 0;
  for (const auto& n : g.nodes()) {
    if (n.kind == NodeKind::output) break;
    const auto b = static_cast<std::int64_t>(shapes[static_cast<std::size_t>(n.id)].numel() * 4);
    ++live;
    bytes += b;
    st.max_concurrent_tensors = std::max(st.max_concurrent_tensors, live);
    st.peak_activation_bytes = std::max(st.peak_activation_bytes, bytes);
    for (int in : n.inputs) {
      if (--remaining[static_cast<std::size_t>(in)] == 0) {
        --live;
        bytes -= static_cast<std::int64_t>(shapes[static_cast<std::size_t>(in)].numel() * 4);
      }
    }
  }
  return st;
}

// --- report ------------------------------------------------------------------------

struct LayerRow {
  std::string name;
  std::string kind;
  Shape out;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  friend bool operator==(const LayerRow&, const LayerRow&) = default;
};

struct Comparison {
  int published_depth = 0;
  double published_params = 0;
  double published_flops = 0;
  double depth_delta = 0;
  double params_delta = 0;
  double flops_delta = 0;
  friend bool operator==(const Comparison&, const Comparison&) = default;
};

struct AnalysisReport {
  std::string name;
  std::size_t resolution = 0;
  std::vector<LayerRow> rows;
  int depth = 0;
  std::int64_t params = 0;
  std::int64_t flops_macs = 0;
  std::size_t max_concurrent_tensors = 0;
  std::int64_t peak_activation_bytes = 0;
  std::optional<Comparison> comparison;
  friend bool operator==(const AnalysisReport&, const AnalysisReport&) = default;
};

inline double relative_delta(double ours, double published) { return (ours - published) / published; }

inline Comparison compare(const AnalysisReport& r, const PublishedRow& p) {
  Comparison c;
  c.published_depth = p.depth;
  c.published_params = p.params;
  c.published_flops = p.flops;
  c.depth_delta = relative_delta(r.depth, p.depth);
  c.params_delta = relative_delta(static_cast<double>(r.params), p.params);
  c.flops_delta = relative_delta(static_cast<double>(r.flops_macs), p.flops);
  return c;
}

inline AnalysisReport analyze(const Graph& g, std::size_t resolution = 0, std::optional<PublishedRow> published = std::nullopt) {
  if (resolution == 0) resolution = g.input_shape().h;
  const auto shapes = infer_shapes(g, input_shape_at(g, resolution));
  AnalysisReport r;
  r.name = g.name();
  r.resolution = resolution;
  for (const auto& n : g.nodes()) {
    const Shape& s = shapes[static_cast<std::size_t>(n.id)];
    LayerRow row{n.name, to_string(n.kind), s, node_params(n), node_macs(n, s)};
    r.params += row.params;
    r.flops_macs += row.macs;
    r.rows.push_back(std::move(row));
  }
  r.depth = count_depth(g);
  const auto bs = branch_stats(g, resolution);
  r.max_concurrent_tensors = bs.max_concurrent_tensors;
  r.peak_activation_bytes = bs.peak_activation_bytes;
  if (published) r.comparison = compare(r, *published);
  return r;
}

namespace detail {

inline std::string fmt_count(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  if (std::abs(v) >= 1e9) os << v / 1e9 << "B";
  else if (std::abs(v) >= 1e6) os << v / 1e6 << "M";
  else if (std::abs(v) >= 1e3) os << v / 1e3 << "K";
  else os << std::setprecision(0) << v;
  return os.str();
}

inline std::string fmt_pct(double d) {
  std::ostringstream os;
  os << std::showpos << std::fixed << std::setprecision(2) << d * 100.0 << "%";
  return os.str();
}

}  // namespace detail

inline std::string render_table(const AnalysisReport& r) {
  std::ostringstream os;
  std::size_t wname = 4;
  for (const auto& row : r.rows) wname = std::max(wname, row.name.size());
  os << std::left << std::setw(static_cast<int>(wname)) << "name" << "  " << std::setw(10) << "kind" << std::setw(18)
     << "output" << std::right << std::setw(12) << "params" << std::setw(16) << "macs" << '\n';
  for (const auto& row : r.rows) {
    os << std::left << std::setw(static_cast<int>(wname)) << row.name << "  " << std::setw(10) << row.kind
       << std::setw(18) << row.out.str() << std::right << std::setw(12) << row.params << std::setw(16) << row.macs
       << '\n';
  }
  os << "\n" << r.name << " @ " << r.resolution << "x" << r.resolution << '\n';
  os << "  depth            " << r.depth << '\n';
  os << "  params           " << r.params << " (" << detail::fmt_count(static_cast<double>(r.params)) << ")\n";
  os << "  macs             " << r.flops_macs << " (" << detail::fmt_count(static_cast<double>(r.flops_macs)) << ")\n";
  os << "  max live tensors " << r.max_concurrent_tensors << '\n';
  os << "  peak activations " << r.peak_activation_bytes << " bytes\n";
  if (r.comparison) {
    const auto& c = *r.comparison;
    os << "  vs published     depth " << c.published_depth << " (" << detail::fmt_pct(c.depth_delta) << "), params "
       << detail::fmt_count(c.published_params) << " (" << detail::fmt_pct(c.params_delta) << "), macs "
       << detail::fmt_count(c.published_flops) << " (" << detail::fmt_pct(c.flops_delta) << ")\n";
  }
  return os.str();
}

inline constexpr const char* kCsvHeader = "name,kind,out_n,out_c,out_h,out_w,params,macs";

/// Per-layer CSV with the fixed header; totals follow as '#' lines.
inline std::string render_csv(const AnalysisReport& r) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& row : r.rows)
    os << row.name << ',' << row.kind << ',' << row.out.n << ',' << row.out.c << ',' << row.out.h << ',' << row.out.w
       << ',' << row.params << ',' << row.macs << '\n';
  os << "#name," << r.name << '\n';
  os << "#resolution," << r.resolution << '\n';
  os << "#depth," << r.depth << '\n';
  os << "#params," << r.params << '\n';
  os << "#macs," << r.flops_macs << '\n';
  os << "#max_concurrent_tensors," << r.max_concurrent_tensors << '\n';
  os << "#peak_activation_bytes," << r.peak_activation_bytes << '\n';
  if (r.comparison) {
    const auto& c = *r.comparison;
    os << std::setprecision(17);
    os << "#published," << c.published_depth << ',' << c.published_params << ',' << c.published_flops << ',' << c.depth_delta << ','
       << c.params_delta << ',' << c.flops_delta << '\n';
  }
  return os.str();
}

inline AnalysisReport parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw invalid_config("csv: missing or wrong header");
  auto split = [](const std::string& s) {
    std::vector<std::string> f;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (!s.empty() && s.back() == ',') f.emplace_back();
    return f;
  };
  auto num = [](const std::string& s) -> std::int64_t {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw invalid_config("csv: bad integer '" + s + "'");
    return v;
  };
  AnalysisReport r;
  int lineno = 1;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto f = split(line);
      if (line[0] == '#') {
        const std::string key = f[0].substr(1);
        if (f.size() < 2) throw invalid_config("csv line " + std::to_string(lineno) + ": missing value");
        if (key == "name") r.name = f[1];
        else if (key == "resolution") r.resolution = static_cast<std::size_t>(num(f[1]));
        else if (key == "depth") r.depth = static_cast<int>(num(f[1]));
        else if (key == "params") r.params = num(f[1]);
        else if (key == "macs") r.flops_macs = num(f[1]);
        else if (key == "max_concurrent_tensors") r.max_concurrent_tensors = static_cast<std::size_t>(num(f[1]));
        else if (key == "peak_activation_bytes") r.peak_activation_bytes = num(f[1]);
        else if (key == "published") {
          if (f.size() != 7) throw invalid_config("csv: #published needs 6 values");
          Comparison c;
          c.published_depth = static_cast<int>(num(f[1]));
          c.published_params = std::stod(f[2]);
          c.published_flops = std::stod(f[3]);
          c.depth_delta = std::stod(f[4]);
          c.params_delta = std::stod(f[5]);
          c.flops_delta = std::stod(f[6]);
          r.comparison = c;
        } else {
          throw invalid_config("csv: unknown total '" + key + "'");
        }
        continue;
      }
      if (f.size() != 8) throw invalid_config("csv line " + std::to_string(lineno) + ": expected 8 fields");
      LayerRow row;
      row.name = f[0];
      row.kind = f[1];
      row.out = {static_cast<std::size_t>(num(f[2])), static_cast<std::size_t>(num(f[3])),
                 static_cast<std::size_t>(num(f[4])), static_cast<std::size_t>(num(f[5]))};
      row.params = num(f[6]);
      row.macs = num(f[7]);
      r.rows.push_back(std::move(row));
    }
  } catch (const std::logic_error&) {
    throw invalid_config("csv line " + std::to_string(lineno) + ": malformed number");
  }
  return r;
}

// --- knob calibration ------------------------------------------------------------------

struct CalibrationCell {
  std::string variant;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  double params_delta = 0;
  double flops_delta = 0;
};

struct CalibrationCombo {
  Fusion fusion = Fusion::concat;
  FirstLevelInput first_level = FirstLevelInput::squeezed;
  std::vector<CalibrationCell> cells;
  double mean_abs_params_delta = 0;
  double mean_abs_flops_delta = 0;
  double max_abs_delta = 0;
};

struct CalibrationReport {
  std::vector<CalibrationCombo> combos;
  std::size_t best = 0;  // index minimizing mean |params delta|
  std::size_t canonical = 0;
};

/// Analyzes every published variant under each (fusion, first_level_input) pair.
inline CalibrationReport calibrate(const std::vector<std::string>& names = table_a1_names()) {
  CalibrationReport rep;
  const VariantSpec canon = registry_lookup(names.front());
  for (Fusion f : {Fusion::concat, Fusion::block_sum}) {
    for (FirstLevelInput fl : {FirstLevelInput::squeezed, FirstLevelInput::pre_narrowed}) {
      CalibrationCombo c;
      c.fusion = f;
      c.first_level = fl;
      for (const auto& name : names) {
        const auto& entry = registry_entry(name);
        VariantSpec s = entry.spec;
        s.fusion = f;
        s.first_level = fl;
        const Graph g = build_network(s, 0, WeightInit::zeros);
        CalibrationCell cell{name, count_params(g), count_flops(g, s.input_res), 0, 0};
        cell.params_delta = relative_delta(static_cast<double>(cell.params), entry.published->params);
        cell.flops_delta = relative_delta(static_cast<double>(cell.macs), entry.published->flops);
        c.mean_abs_params_delta += std::abs(cell.params_delta);
        c.mean_abs_flops_delta += std::abs(cell.flops_delta);
        c.max_abs_delta = std::max({c.max_abs_delta, std::abs(cell.params_delta), std::abs(cell.flops_delta)});
        c.cells.push_back(cell);
      }
      c.mean_abs_params_delta /= static_cast<double>(names.size());
      c.mean_abs_flops_delta /= static_cast<double>(names.size());
      if (f == canon.fusion && fl == canon.first_level) rep.canonical = rep.combos.size();
      rep.combos.push_back(std::move(c));
    }
  }
  for (std::size_t i = 1; i < rep.combos.size(); ++i)
    if (rep.combos[i].mean_abs_params_delta < rep.combos[rep.best].mean_abs_params_delta) rep.best = i;
  return rep;
}

inline std::string render_calibration(const CalibrationReport& rep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < rep.combos.size(); ++i) {
    const auto& c = rep.combos[i];
    os << "fusion=" << to_string(c.fusion) << " first_level_input=" << to_string(c.first_level);
    if (i == rep.canonical) os << "  [canonical]";
    if (i == rep.best) os << "  [best mean |params delta|]";
    os << '\n';
    for (const auto& cell : c.cells)
      os << "  " << std::left << std::setw(12) << cell.variant << std::right << std::setw(10)
         << detail::fmt_count(static_cast<double>(cell.params)) << std::setw(10) << detail::fmt_pct(cell.params_delta)
         << std::setw(10) << detail::fmt_count(static_cast<double>(cell.macs)) << std::setw(10)
         << detail::fmt_pct(cell.flops_delta) << '\n';
    os << "  mean |params delta| " << detail::fmt_pct(c.mean_abs_params_delta) << ", mean |macs delta| "
       << detail::fmt_pct(c.mean_abs_flops_delta) << ", max " << detail::fmt_pct(c.max_abs_delta) << "\n";
  }
  return os.str();
}

}  // namespace cosnet
