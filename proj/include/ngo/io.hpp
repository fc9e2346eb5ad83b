#pragma once

// Binary dataset ("NGOD") and checkpoint ("NGOC") formats, plus the
// append-only metric log. All integers and floats are little-endian; readers
// validate magic/version and reject truncated payloads without partial loads.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ngo/mazeworld.hpp"
#include "ngo/optim.hpp"

namespace ngo {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "unexpected float widths");

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw IoError(std::string("truncated file while reading ") + what);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_str16(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw IoError("string too long for format: " + s.substr(0, 32));
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str16(std::istream& is, const char* what) {
  const auto n = read_le<std::uint16_t>(is, what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw IoError(std::string("truncated file while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& is, const char* magic, const std::string& path) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw IoError("bad magic in " + path + ": expected " + magic);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset files
// ---------------------------------------------------------------------------

constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("NGOD", 4);
  detail::write_le<std::uint32_t>(os, kDatasetVersion);
  detail::write_le<std::uint64_t>(os, trajs.size());
  for (const auto& tr : trajs) {
    const auto t = static_cast<std::uint32_t>(tr.gt_poses.size());
    if (tr.observations.size() != t || tr.actions.size() + 1 != t)
      throw IoError("inconsistent trajectory lengths while writing " + path);
    detail::write_le<std::uint64_t>(os, tr.maze_seed);
    detail::write_le<std::uint32_t>(os, t);
    for (const auto a : tr.actions) detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(a));
    for (const auto& p : tr.gt_poses) {
      detail::write_le<double>(os, p.x);
      detail::write_le<double>(os, p.y);
      detail::write_le<double>(os, p.theta);
    }
    for (const auto& o : tr.observations)
      for (const auto& ray : o.rays) {
        detail::write_le<float>(os, ray.r);
        detail::write_le<float>(os, ray.g);
        detail::write_le<float>(os, ray.b);
        detail::write_le<float>(os, ray.depth);
      }
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<Trajectory> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  detail::expect_magic(is, "NGOD", path);
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kDatasetVersion)
    throw IoError("unsupported dataset version " + std::to_string(version) + " in " + path);
  const auto count = detail::read_le<std::uint64_t>(is, "trajectory count");
  std::vector<Trajectory> trajs;
  trajs.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Trajectory tr;
    tr.maze_seed = detail::read_le<std::uint64_t>(is, "maze seed");
    const auto t = detail::read_le<std::uint32_t>(is, "trajectory length");
    if (t < 2) throw IoError("trajectory shorter than 2 frames in " + path);
    tr.actions.reserve(t - 1);
    for (std::uint32_t k = 0; k + 1 < t; ++k) {
      const auto a = detail::read_le<std::uint8_t>(is, "action");
      if (a > 2) throw IoError("invalid action code in " + path);
      tr.actions.push_back(static_cast<Action>(a));
    }
    tr.gt_poses.reserve(t);
    for (std::uint32_t k = 0; k < t; ++k) {
      const double x = detail::read_le<double>(is, "pose");
      const double y = detail::read_le<double>(is, "pose");
      const double th = detail::read_le<double>(is, "pose");
      tr.gt_poses.emplace_back(x, y, th);
    }
    tr.observations.resize(t);
    for (std::uint32_t k = 0; k < t; ++k)
      for (auto& ray : tr.observations[k].rays) {
        ray.r = detail::read_le<float>(is, "observation");
        ray.g = detail::read_le<float>(is, "observation");
        ray.b = detail::read_le<float>(is, "observation");
        ray.depth = detail::read_le<float>(is, "observation");
      }
    trajs.push_back(std::move(tr));
  }
  return trajs;
}

// ---------------------------------------------------------------------------
// checkpoint files
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  // insertion-ordered so round-trips are byte-exact
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return &v;
    return nullptr;
  }
  const Tensor<float>* find_tensor(const std::string& name) const {
    for (const auto& [k, v] : tensors)
      if (k == name) return &v;
    return nullptr;
  }
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("NGOC", 4);
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    detail::write_str16(os, k);
    detail::write_str16(os, v);
  }
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail::write_str16(os, name);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(d)));
    for (float v : t.value()) detail::write_le<float>(os, v);
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  detail::expect_magic(is, "NGOC", path);
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  Checkpoint ckpt;
  const auto nmeta = detail::read_le<std::uint32_t>(is, "metadata count");
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    auto k = detail::read_str16(is, "metadata key");
    auto v = detail::read_str16(is, "metadata value");
    ckpt.metadata.emplace_back(std::move(k), std::move(v));
  }
  const auto ntensors = detail::read_le<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    auto name = detail::read_str16(is, "tensor name");
    for (const auto& [existing, t] : ckpt.tensors)
      if (existing == name) throw IoError("duplicate tensor name in " + path + ": " + name);
    const auto rank = detail::read_le<std::uint8_t>(is, "tensor rank");
    Shape shape;
    for (int d = 0; d < rank; ++d)
      shape.push_back(static_cast<int>(detail::read_le<std::uint32_t>(is, "tensor dim")));
    std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = detail::read_le<float>(is, "tensor payload");
    ckpt.tensors.emplace_back(std::move(name), Tensor<float>::from_data(std::move(shape), std::move(data)));
  }
  return ckpt;
}

// Copies parameter values (cast to f32) into a checkpoint tensor table.
template <class S>
void append_params(Checkpoint& ckpt, const ParamSet<S>& params, const std::string& prefix = "") {
  for (const auto& [name, p] : params) {
    std::vector<float> data(p.value().size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(p.value()[i]);
    ckpt.tensors.emplace_back(prefix + name, Tensor<float>::from_data(p.shape(), std::move(data)));
  }
}

// Restores parameters by name; every parameter must be present with matching
// shape, otherwise the error names the offending tensor.
template <class S>
void load_params(const Checkpoint& ckpt, ParamSet<S>& params, const std::string& prefix = "") {
  for (auto& [name, p] : params) {
    const Tensor<float>* t = ckpt.find_tensor(prefix + name);
    if (!t) throw IoError("checkpoint is missing tensor '" + prefix + name + "'");
    if (t->shape() != p.shape())
      throw IoError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(t->shape()) +
                    ", expected " + shape_str(p.shape()));
    for (std::size_t i = 0; i < p.value().size(); ++i) p.value()[i] = static_cast<S>(t->value()[i]);
  }
}

// ---------------------------------------------------------------------------
// metric log
// ---------------------------------------------------------------------------

// Append-only lines: step,split,metric,value
class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(const std::string& path, bool append = false) { open(path, append); }

  void open(const std::string& path, bool append = false) {
    os_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!os_) throw IoError("cannot open metric log: " + path);
  }

  void log(std::int64_t step, const std::string& split, const std::string& metric, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", value);
    os_ << step << ',' << split << ',' << metric << ',' << buf << '\n';
    os_.flush();
  }

  bool is_open() const { return os_.is_open(); }

 private:
  std::ofstream os_;
};

struct MetricRow {
  std::int64_t step;
  std::string split;
  std::string metric;
  double value;
};

inline std::vector<MetricRow> parse_metric_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open metric log: " + path);
  std::vector<MetricRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    MetricRow r;
    std::string step_s, value_s;
    if (!std::getline(ss, step_s, ',') || !std::getline(ss, r.split, ',') ||
        !std::getline(ss, r.metric, ',') || !std::getline(ss, value_s))
      throw IoError("malformed metric log line " + std::to_string(lineno) + " in " + path);
    r.step = std::stoll(step_s);
    r.value = std::stod(value_s);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace ngo
