#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cosnet/arch.hpp"
#include "cosnet/autodiff.hpp"
#include "cosnet/graph.hpp"

namespace cosnet {

struct Dataset {
  std::vector<Tensor> images;  // each 1 x c x h x w, values in [0, 1]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::size_t> train, test;

  std::size_t size() const { return images.size(); }
  Shape image_shape() const { return images.empty() ? Shape{} : images.front().shape(); }
};

/// Seeded 80/20 train/test split.
inline void split_dataset(Dataset& d, std::uint64_t seed) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5111));
  rng.shuffle(idx);
  const std::size_t n_train = std::max<std::size_t>(1, (idx.size() * 8) / 10);
  d.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(d.train.begin(), d.train.end());
  std::sort(d.test.begin(), d.test.end());
}

/// Class k: an oriented sinusoid (orientation and frequency set by k) with
/// a random phase, a per-class color tint, and Gaussian pixel noise.
inline Dataset synth_dataset(std::size_t num_classes, std::size_t samples_per_class, std::size_t image_size,
                             std::uint64_t seed, std::size_t channels = 3) {
  if (num_classes < 2) throw invalid_config("synth_dataset: need at least 2 classes");
  if (samples_per_class == 0 || image_size == 0 || channels == 0)
    throw invalid_config("synth_dataset: sizes must be positive");
  constexpr double pi = 3.14159265358979323846;
  Dataset d;
  d.num_classes = num_classes;
  Rng rng(derive_seed(seed, 0xDA7A));
  const double K = static_cast<double>(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double theta = pi * static_cast<double>(k) / K;
    const double freq = 2.0 + static_cast<double>(k % 3);
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      Tensor img({1, channels, image_size, image_size});
      const double phase = rng.uniform(0.0, 2.0 * pi);
      for (std::size_t c = 0; c < channels; ++c) {
        const double tint = 0.12 * std::cos(2.0 * pi * (static_cast<double>(k) / K + static_cast<double>(c) / 3.0));
        for (std::size_t y = 0; y < image_size; ++y)
          for (std::size_t x = 0; x < image_size; ++x) {
            const double u = (static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta)) /
                             static_cast<double>(image_size);
            double v = 0.5 + tint + 0.3 * std::sin(2.0 * pi * freq * u + phase) + rng.normal(0.0, 0.08);
            img.at(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
      }
      d.images.push_back(std::move(img));
      d.labels.push_back(static_cast<int>(k));
    }
  }
  split_dataset(d, seed);
  return d;
}

// --- little-endian byte helpers ----------------------------------------------------

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : d_(data), end_(end) {}
  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n || pos_ > end_) throw format_error(format_errc::truncated, std::string("truncated ") + what);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(byte(0) | (byte(1) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte(static_cast<std::size_t>(i))) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const unsigned char* raw(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = reinterpret_cast<const unsigned char*>(d_.data()) + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::uint32_t byte(std::size_t off) const { return static_cast<unsigned char>(d_[pos_ + off]); }
  const std::string& d_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw format_error(format_errc::io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw format_error(format_errc::io, "cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw format_error(format_errc::io, "write failed for '" + path + "'");
}

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace detail

// --- raw dataset -----------------------------------------------------------------------

inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::string encode_dataset(const Dataset& d) {
  if (d.images.empty()) throw format_error(format_errc::empty_dataset, "nothing to write");
  const Shape s = d.image_shape();
  std::string out = "CSDS";
  detail::put_u16(out, kDatasetVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(d.size()));
  detail::put_u16(out, static_cast<std::uint16_t>(d.num_classes));
  detail::put_u16(out, static_cast<std::uint16_t>(s.c));
  detail::put_u16(out, static_cast<std::uint16_t>(s.h));
  detail::put_u16(out, static_cast<std::uint16_t>(s.w));
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.images[i].shape() != s) throw format_error(format_errc::shape_mismatch, "images differ in shape");
    detail::put_u16(out, static_cast<std::uint16_t>(d.labels[i]));
    for (float v : d.images[i].data())
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
  return out;
}

inline Dataset decode_dataset(const std::string& bytes, std::uint64_t split_seed = 0) {
  detail::Reader r(bytes, bytes.size());
  if (r.bytes(4, "magic") != "CSDS") throw format_error(format_errc::magic_mismatch, "not a CSDS dataset");
  const auto version = r.u16("version");
  if (version != kDatasetVersion)
    throw format_error(format_errc::version_mismatch, "dataset version " + std::to_string(version));
  const auto count = r.u32("count");
  const auto classes = r.u16("classes");
  const std::size_t c = r.u16("c"), h = r.u16("h"), w = r.u16("w");
  if (count == 0) throw format_error(format_errc::empty_dataset, "header declares 0 records");
  if (c == 0 || h == 0 || w == 0) throw format_error(format_errc::shape_mismatch, "zero image extent");
  Dataset d;
  d.num_classes = classes;
  const std::size_t npix = c * h * w;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto label = r.u16("record label");
    if (label >= classes)
      throw format_error(format_errc::label_out_of_range,
                         "record " + std::to_string(i) + " has label " + std::to_string(label));
    const unsigned char* px = r.raw(npix, "record pixels");
    Tensor img({1, c, h, w});
    for (std::size_t j = 0; j < npix; ++j) img[j] = static_cast<float>(px[j]) / 255.0f;
    d.images.push_back(std::move(img));
    d.labels.push_back(label);
  }
  split_dataset(d, split_seed);
  return d;
}

inline void save_raw_dataset(const Dataset& d, const std::string& path) {
  detail::write_file(path, encode_dataset(d));
}

inline Dataset load_raw_dataset(const std::string& path, std::uint64_t split_seed = 0) {
  return decode_dataset(detail::read_file(path), split_seed);
}

// --- checkpoint --------------------------------------------------------------------------

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  VariantSpec spec;
  std::vector<NamedTensor> tensors;
};

/// "<node name>/<param>" for every tensor, running statistics included.
inline std::vector<NamedTensor> named_tensors(const Graph& g, const WeightTable& w) {
  std::vector<NamedTensor> out;
  for (const auto& [id, m] : w.entries)
    for (const auto& [name, t] : m) out.push_back({g.node(id).name + "/" + name, t});
  return out;
}

inline WeightTable weights_from_named(const Graph& g, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  WeightTable out;
  for (const auto& [id, m] : g.weights().entries) {
    for (const auto& [pname, t] : m) {
      const std::string key = g.node(id).name + "/" + pname;
      auto it = by_name.find(key);
      if (it == by_name.end()) throw format_error(format_errc::shape_mismatch, "tensor '" + key + "' missing");
      if (it->second->shape() != t.shape())
        throw format_error(format_errc::shape_mismatch, "tensor '" + key + "' has shape " +
                                                            it->second->shape().str() + ", expected " + t.shape().str());
      out.entries[id].emplace(pname, *it->second);
      by_name.erase(it);
    }
  }
  if (!by_name.empty())
    throw format_error(format_errc::shape_mismatch, "tensor '" + by_name.begin()->first + "' has no place in the graph");
  return out;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out = "COSN";
  detail::put_u16(out, kCheckpointVersion);
  const std::string spec = spec_to_text(ck.spec);
  detail::put_u32(out, static_cast<std::uint32_t>(spec.size()));
  out += spec;
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& nt : ck.tensors) {
    detail::put_u16(out, static_cast<std::uint16_t>(nt.name.size()));
    out += nt.name;
    const Shape& s = nt.tensor.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : nt.tensor.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_u32(out, detail::crc32_of(out, out.size()));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4) throw format_error(format_errc::truncated, "file shorter than magic");
  if (bytes.compare(0, 4, "COSN") != 0) throw format_error(format_errc::magic_mismatch, "not a COSN checkpoint");
  if (bytes.size() < 10) throw format_error(format_errc::truncated, "file shorter than header");
  detail::Reader r(bytes, bytes.size() - 4);
  r.bytes(4, "magic");
  const auto version = r.u16("version");
  if (version != kCheckpointVersion)
    throw format_error(format_errc::version_mismatch, "checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::string spec_text = r.bytes(r.u32("spec length"), "spec text");
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.bytes(r.u16("name length"), "tensor name");
    Shape s;
    s.n = r.u32("dims");
    s.c = r.u32("dims");
    s.h = r.u32("dims");
    s.w = r.u32("dims");
    if (!s.valid()) throw format_error(format_errc::shape_mismatch, "tensor '" + nt.name + "' has a zero dim");
    r.need(s.numel() * 4, "tensor payload");
    std::vector<float> data(s.numel());
    for (auto& v : data) v = std::bit_cast<float>(r.u32("payload"));
    nt.tensor = Tensor(s, std::move(data));
    ck.tensors.push_back(std::move(nt));
  }
  if (r.pos() != bytes.size() - 4) throw format_error(format_errc::truncated, "unexpected bytes before checksum");
  detail::Reader tail(bytes, bytes.size());
  tail.bytes(bytes.size() - 4, "body");
  if (tail.u32("checksum") != detail::crc32_of(bytes, bytes.size() - 4))
    throw format_error(format_errc::checksum_mismatch, "CRC32 does not match contents");
  try {
    ck.spec = spec_from_text(spec_text);
  } catch (const invalid_config& e) {
    throw format_error(format_errc::shape_mismatch, std::string("embedded spec invalid: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Graph& g, const WeightTable& w, const VariantSpec& spec, const std::string& path) {
  detail::write_file(path, encode_checkpoint({spec, named_tensors(g, w)}));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

// --- training ------------------------------------------------------------------------------

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::cosine;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw invalid_config("train: lr must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw invalid_config("train: momentum must be in [0, 1)");
    if (batch_size < 2) throw invalid_config("train: batch_size must be >= 2 for batch norm");
    if (weight_decay < 0.0) throw invalid_config("train: weight_decay must be >= 0");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;
  double train_accuracy = 0;  // running, train-mode forward
  double lr = 0;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainResult {
  WeightTable weights;
  std::vector<EpochMetrics> epochs;
};

inline std::size_t output_classes(const Graph& g) {
  return infer_shapes(g)[static_cast<std::size_t>(g.output_id())].c;
}

/// Stacks the listed images into one n x c x h x w batch.
inline Tensor make_batch(const Dataset& d, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
                         std::vector<int>* labels = nullptr) {
  const Shape s = d.image_shape();
  Tensor out({end - begin, s.c, s.h, s.w});
  const std::size_t per = s.sample();
  for (std::size_t i = begin; i < end; ++i) {
    const auto& img = d.images[idx[i]];
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>((i - begin) * per));
    if (labels) labels->push_back(d.labels[idx[i]]);
  }
  return out;
}

/// Argmax with ties going to the lower class index.
inline int argmax_row(const Tensor& logits, std::size_t n) {
  const std::size_t k = logits.shape().c;
  int best = 0;
  for (std::size_t c = 1; c < k; ++c)
    if (logits.at(n, c, 0, 0) > logits.at(n, static_cast<std::size_t>(best), 0, 0)) best = static_cast<int>(c);
  return best;
}

inline double evaluate(const Graph& g, const WeightTable& w, const Dataset& d, const std::vector<std::size_t>& split,
                       std::size_t batch = 64) {
  if (output_classes(g) != d.num_classes)
    throw invalid_config("evaluate: graph predicts " + std::to_string(output_classes(g)) + " classes, dataset has " +
                         std::to_string(d.num_classes));
  if (split.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < split.size(); b += batch) {
    const std::size_t e = std::min(split.size(), b + batch);
    std::vector<int> labels;
    const Tensor x = make_batch(d, split, b, e, &labels);
    const Tensor y = graph_forward(g, w, x, Mode::eval).output;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (argmax_row(y, i) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// SGD with momentum: v <- momentum*v - lr*(g + wd*theta); theta <- theta + v.
/// Single-threaded; every reduction runs in a fixed order, so a given
/// (graph, dataset, cfg) always produces the same bits.
inline TrainResult train(const Graph& g, const Dataset& d, const TrainConfig& cfg, const WeightTable* start = nullptr) {
  cfg.validate();
  if (output_classes(g) != d.num_classes)
    throw invalid_config("train: graph predicts " + std::to_string(output_classes(g)) + " classes, dataset has " +
                         std::to_string(d.num_classes));
  if (d.train.size() < 2) throw format_error(format_errc::empty_dataset, "train split needs at least 2 samples");
  TrainResult res;
  res.weights = start ? *start : g.weights();
  WeightTable& w = res.weights;
  WeightTable velocity;
  for (const auto& [id, m] : w.entries)
    for (const auto& [name, t] : m)
      if (!WeightTable::is_buffer(name)) velocity.entries[id].emplace(name, Tensor(t.shape()));

  const std::size_t steps_per_epoch = d.train.size() / cfg.batch_size + (d.train.size() % cfg.batch_size >= 2 ? 1 : 0);
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * cfg.epochs);
  std::size_t step = 0;
  constexpr double pi = 3.14159265358979323846;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = d.train;
    Rng rng(derive_seed(cfg.seed, 0x7000 + epoch));
    rng.shuffle(order);
    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    double lr_now = cfg.lr;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      if (e - b < 2) break;  // a lone trailing sample has no batch statistics
      lr_now = cfg.lr_schedule == LrSchedule::cosine
                   ? cfg.lr * 0.5 * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total_steps)))
                   : cfg.lr;
      std::vector<int> labels;
      const Tensor x = make_batch(d, order, b, e, &labels);
      auto fwd = graph_forward(g, w, x, Mode::train);
      auto loss = softmax_cross_entropy(fwd.output, std::span<const int>(labels));
      if (!std::isfinite(loss.loss))
        throw divergence_error("loss became " + std::to_string(loss.loss) + " in epoch " + std::to_string(epoch + 1),
                               static_cast<int>(epoch + 1));
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (argmax_row(fwd.output, i) == labels[i]) ++correct;
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(labels.size());
      seen += labels.size();

      auto grads = graph_backward(g, w, fwd.tape, loss.grad);
      const float lr = static_cast<float>(lr_now);
      const float mom = static_cast<float>(cfg.momentum);
      const float wd = static_cast<float>(cfg.weight_decay);
      for (auto& [id, m] : velocity.entries) {
        for (auto& [name, v] : m) {
          auto theta = w.get(id, name).data();
          auto gr = grads.weights.get(id, name).data();
          auto vv = v.data();
          for (std::size_t i = 0; i < vv.size(); ++i) {
            vv[i] = mom * vv[i] - lr * (gr[i] + wd * theta[i]);
            theta[i] += vv[i];
          }
        }
      }
      for (auto& [id, rs] : fwd.running_stats) {
        std::copy(rs.mean.begin(), rs.mean.end(), w.get(id, "running_mean").data().begin());
        std::copy(rs.var.begin(), rs.var.end(), w.get(id, "running_var").data().begin());
      }
      ++step;
    }
    res.epochs.push_back({epoch + 1, seen ? loss_sum / static_cast<double>(seen) : 0.0,
                          seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0, lr_now});
  }
  return res;
}

}  // namespace cosnet
