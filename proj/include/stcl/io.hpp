#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stcl/datagen.hpp"
#include "stcl/error.hpp"
#include "stcl/network.hpp"
#include "stcl/training.hpp"
#include "stcl/volume.hpp"

namespace stcl {

// ---------------------------------------------------------------------------
// Array container
//
//   offset 0   "STCL"
//   offset 4   u16 version, little endian
//   offset 6   u32 metadata length L, little endian
//   offset 10  L bytes of UTF-8 JSON (keys sorted)
//   offset 10+L  payload, little endian IEEE-754, f32 or f64 per "dtype"
//
// The payload element count is the product of metadata "dims".

inline constexpr char kMagic[4] = {'S', 'T', 'C', 'L'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

inline std::string offset_prefix(std::size_t offset) { return "offset " + std::to_string(offset) + ": "; }

}  // namespace detail

/// A decoded container: metadata plus payload widened to double.
struct ArrayFile {
  nlohmann::json meta;
  std::vector<double> values;
};

inline std::size_t element_count(const nlohmann::json& meta) {
  std::size_t n = 1;
  for (const auto& d : meta.at("dims")) n *= d.get<std::size_t>();
  return n;
}

/// Serializes to bytes. `meta` must carry "dims"; "dtype" is set here.
inline std::string encode_array(nlohmann::json meta, const std::vector<double>& values, bool f64) {
  meta["dtype"] = f64 ? "f64" : "f32";
  detail::require(meta.contains("dims"), "encode_array: metadata needs dims");
  detail::require(element_count(meta) == values.size(), "encode_array: dims do not match payload length");
  const std::string text = meta.dump();
  std::string out(kMagic, 4);
  detail::put_le<std::uint16_t>(out, kFormatVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + values.size() * (f64 ? 8 : 4));
  for (double v : values) {
    if (f64) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    else detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline ArrayFile decode_array(const std::string& bytes) {
  if (bytes.size() < 4) throw FormatError(detail::offset_prefix(bytes.size()) + "file ends inside the magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(detail::offset_prefix(0) + "bad magic, expected \"STCL\"");
  if (bytes.size() < kHeaderSize) throw FormatError(detail::offset_prefix(bytes.size()) + "truncated header");
  const auto version = detail::get_le<std::uint16_t>(bytes, 4);
  if (version != kFormatVersion)
    throw FormatError(detail::offset_prefix(4) + "unsupported version " + std::to_string(version) + ", expected " +
                      std::to_string(kFormatVersion));
  const auto len = detail::get_le<std::uint32_t>(bytes, 6);
  if (bytes.size() < kHeaderSize + len)
    throw FormatError(detail::offset_prefix(bytes.size()) + "truncated metadata, expected " + std::to_string(len) +
                      " bytes at offset " + std::to_string(kHeaderSize));
  ArrayFile f;
  try {
    f.meta = nlohmann::json::parse(bytes.begin() + kHeaderSize, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderSize + len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(detail::offset_prefix(kHeaderSize) + "metadata is not valid JSON (" + e.what() + ")");
  }
  if (!f.meta.is_object() || !f.meta.contains("dims") || !f.meta["dims"].is_array() || !f.meta.contains("dtype"))
    throw FormatError(detail::offset_prefix(kHeaderSize) + "metadata lacks dims/dtype");
  const std::string dtype = f.meta["dtype"].get<std::string>();
  if (dtype != "f32" && dtype != "f64")
    throw FormatError(detail::offset_prefix(kHeaderSize) + "unknown dtype \"" + dtype + "\"");
  const std::size_t width = dtype == "f64" ? 8 : 4;
  const std::size_t n = element_count(f.meta);
  const std::size_t start = kHeaderSize + len;
  if (bytes.size() - start != n * width)
    throw FormatError(detail::offset_prefix(bytes.size()) + "payload holds " + std::to_string(bytes.size() - start) +
                      " bytes, expected " + std::to_string(n * width) + " starting at offset " + std::to_string(start));
  f.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = start + i * width;
    f.values[i] = width == 8 ? std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, o))
                             : static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, o)));
  }
  return f;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline ArrayFile read_array(const std::filesystem::path& path) {
  try {
    return decode_array(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Volumes and records

inline std::string encode_volume(const Volume& v, nlohmann::json meta) {
  meta["dims"] = {v.depth, v.rows, v.cols, v.channels};
  return encode_array(std::move(meta), std::vector<double>(v.data.begin(), v.data.end()), false);
}

inline Volume volume_from(const ArrayFile& f) {
  const auto& d = f.meta.at("dims");
  if (d.size() != 4) throw FormatError("volume metadata needs four dims");
  Volume v(d[0].get<int>(), d[1].get<int>(), d[2].get<int>(), d[3].get<int>());
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(f.values[i]);
  return v;
}

inline std::string record_filename(int id, int t) {
  return "patient" + std::to_string(id) + "_t" + std::to_string(t + 1) + ".stcl";
}

inline nlohmann::json record_metadata(const DatasetRecord& r, int t) {
  return {{"patient", r.id},
          {"time", t + 1},
          {"times", r.times()},
          {"intervals", r.intervals},
          {"seed", r.seed},
          {"channels", {"icvf", "ct", "mask"}}};
}

/// Writes one file per time point into `dir`.
inline void write_record(const std::filesystem::path& dir, const DatasetRecord& r) {
  for (int t = 0; t < r.times(); ++t)
    write_file(dir / record_filename(r.id, t), encode_volume(r.volumes[static_cast<std::size_t>(t)], record_metadata(r, t)));
}

inline DatasetRecord read_record(const std::filesystem::path& dir, int id) {
  DatasetRecord r;
  r.id = id;
  const ArrayFile first = read_array(dir / record_filename(id, 0));
  const int times = first.meta.value("times", 0);
  if (times < 1) throw FormatError((dir / record_filename(id, 0)).string() + ": metadata lacks times");
  r.seed = first.meta.value("seed", std::uint64_t{0});
  r.intervals = first.meta.value("intervals", std::vector<double>{});
  r.volumes.push_back(volume_from(first));
  for (int t = 1; t < times; ++t) r.volumes.push_back(volume_from(read_array(dir / record_filename(id, t))));
  return r;
}

// ---------------------------------------------------------------------------
// Segmentation cases: one file per time point, channels (image, mask).

inline void write_segmentation_case(const std::filesystem::path& dir, int id, std::uint64_t seed,
                                    const SegmentationCase& c) {
  const int S = c.images.slices, H = c.images.frame(0, 0).rows(), W = c.images.frame(0, 0).cols();
  for (int t = 0; t < c.images.times; ++t) {
    Volume v(S, H, W, 2);
    for (int s = 0; s < S; ++s)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          v.at(s, y, x, 0) = static_cast<float>(c.images.frame(s, t).at(y, x, 0) * 255.0);
          v.at(s, y, x, 1) = static_cast<float>(c.masks.frame(s, t).at(y, x, 0) * 255.0);
        }
    const bool labeled = std::find(c.labeled_times.begin(), c.labeled_times.end(), t) != c.labeled_times.end();
    nlohmann::json meta = {{"patient", id},          {"time", t + 1},   {"times", c.images.times},
                           {"labeled", labeled},     {"seed", seed},    {"labeled_times", c.labeled_times},
                           {"channels", {"image", "mask"}}};
    write_file(dir / record_filename(id, t), encode_volume(v, meta));
  }
}

inline SegmentationCase read_segmentation_case(const std::filesystem::path& dir, int id) {
  const ArrayFile first = read_array(dir / record_filename(id, 0));
  const int times = first.meta.value("times", 0);
  if (times < 1) throw FormatError((dir / record_filename(id, 0)).string() + ": metadata lacks times");
  SegmentationCase c;
  c.labeled_times = first.meta.value("labeled_times", std::vector<int>{});
  for (int t = 0; t < times; ++t) {
    const Volume v = volume_from(t == 0 ? first : read_array(dir / record_filename(id, t)));
    if (v.channels != 2) throw FormatError(record_filename(id, t) + ": segmentation volumes need 2 channels");
    if (t == 0) {
      c.images = SpatioTemporalSequence(v.depth, times);
      c.masks = SpatioTemporalSequence(v.depth, times);
    }
    for (int s = 0; s < v.depth; ++s) {
      FeatureMap img(v.rows, v.cols, 1), mask(v.rows, v.cols, 1);
      for (int y = 0; y < v.rows; ++y)
        for (int x = 0; x < v.cols; ++x) {
          img.at(y, x, 0) = v.at(s, y, x, 0) / 255.0;
          mask.at(y, x, 0) = is_foreground(v.at(s, y, x, 1)) ? 1.0 : 0.0;
        }
      c.images.frame(s, t) = std::move(img);
      c.masks.frame(s, t) = std::move(mask);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints: parameters, ADAM moments and the network config in one f64
// container. Payload order is params, first moment, second moment, each in
// for_each_array order.

struct Checkpoint {
  NetworkConfig config;
  NetworkParams params;
  OptimizerState optimizer;
  int epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::vector<double> payload;
  nlohmann::json arrays = nlohmann::json::array();
  c.params.for_each_array([&](const std::string& name, const std::vector<double>& a) {
    arrays.push_back({{"name", name}, {"size", a.size()}});
    payload.insert(payload.end(), a.begin(), a.end());
  });
  for (const NetworkParams* m : {&c.optimizer.first_moment, &c.optimizer.second_moment})
    m->for_each_array(
        [&](const std::string&, const std::vector<double>& a) { payload.insert(payload.end(), a.begin(), a.end()); });
  nlohmann::json meta = {{"kind", "checkpoint"},
                         {"config", c.config},
                         {"arrays", arrays},
                         {"epoch", c.epoch},
                         {"seed", c.seed},
                         {"extra", c.extra},
                         {"adam",
                          {{"step", c.optimizer.step},
                           {"learning_rate", c.optimizer.config.learning_rate},
                           {"beta1", c.optimizer.config.beta1},
                           {"beta2", c.optimizer.config.beta2},
                           {"epsilon", c.optimizer.config.epsilon}}},
                         {"dims", {payload.size()}}};
  return encode_array(std::move(meta), payload, true);
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  const ArrayFile f = decode_array(bytes);
  if (f.meta.value("kind", std::string()) != "checkpoint") throw FormatError("not a checkpoint file");
  Checkpoint c;
  try {
    c.config = f.meta.at("config").get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config unreadable: ") + e.what());
  }
  c.config.validate();
  c.params = NetworkParams::zeros(c.config);
  c.optimizer = OptimizerState::for_params(c.params);
  c.epoch = f.meta.value("epoch", 0);
  c.seed = f.meta.value("seed", std::uint64_t{0});
  c.extra = f.meta.value("extra", nlohmann::json::object());
  const auto& adam = f.meta.at("adam");
  c.optimizer.step = adam.at("step").get<std::int64_t>();
  c.optimizer.config.learning_rate = adam.at("learning_rate").get<double>();
  c.optimizer.config.beta1 = adam.at("beta1").get<double>();
  c.optimizer.config.beta2 = adam.at("beta2").get<double>();
  c.optimizer.config.epsilon = adam.at("epsilon").get<double>();

  std::size_t pos = 0;
  auto fill = [&](NetworkParams& p) {
    p.for_each_array([&](const std::string& name, std::vector<double>& a) {
      if (pos + a.size() > f.values.size()) throw FormatError("checkpoint payload too short at array " + name);
      std::copy_n(f.values.begin() + static_cast<std::ptrdiff_t>(pos), a.size(), a.begin());
      pos += a.size();
    });
  };
  fill(c.params);
  fill(c.optimizer.first_moment);
  fill(c.optimizer.second_moment);
  if (pos != f.values.size()) throw FormatError("checkpoint payload length does not match its config");
  return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file(path, encode_checkpoint(c));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Portable graymap export for inspection.

/// Binary PGM (P5) of one channel of one slice; values clamped to [0, 255].
inline std::string encode_pgm(const Volume& v, int slice, int channel) {
  std::string out = "P5\n" + std::to_string(v.cols) + " " + std::to_string(v.rows) + "\n255\n";
  for (int r = 0; r < v.rows; ++r)
    for (int c = 0; c < v.cols; ++c) {
      const double x = std::clamp(static_cast<double>(v.at(slice, r, c, channel)), 0.0, 255.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(x))));
    }
  return out;
}

}  // namespace stcl
