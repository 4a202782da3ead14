#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "pkfr/nn/layers.hpp"

namespace pkfr::cli {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(std::numeric_limits<float>::is_iec559, "checkpoint values are IEEE-754 binary32");

inline constexpr char kCheckpointMagic[4] = {'P', 'K', 'F', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Unreadable or malformed checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stored array does not fit the parameter of the same name in the model.
class DimensionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Layout (all integers little-endian):
///   "PKFR" | u32 version | u32 entry count
///   per entry: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 values[prod(dims)]
///   u32 config length | config text (UTF-8)
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;
  std::string config;
};

namespace detail {

template <class U>
void put(std::string& out, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.append(b, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, b_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CheckpointError("truncated checkpoint at byte offset " + std::to_string(pos_) + " while reading " + what +
                            " (" + std::to_string(n) + " bytes needed, " + std::to_string(b_.size() - pos_) +
                            " left)");
    }
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, c.version);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw CheckpointError("parameter name too long: " + e.name);
    if (e.dims.size() > std::numeric_limits<std::uint8_t>::max()) throw CheckpointError("rank too large: " + e.name);
    std::size_t n = 1;
    for (auto d : e.dims) n *= d;
    if (n != e.values.size()) throw CheckpointError("entry '" + e.name + "' has dims that do not match its value count");
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) detail::put<std::uint32_t>(out, d);
    for (float v : e.values) detail::put<float>(out, v);
  }
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.config.size()));
  out += c.config;
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError("not a checkpoint");
  detail::Reader r(bytes);
  r.bytes(4, "magic");
  Checkpoint c;
  c.version = r.get<std::uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(c.version) + " does not match supported version " +
                          std::to_string(kCheckpointVersion));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = r.get<std::uint16_t>("name length");
    e.name = r.bytes(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      e.dims.push_back(r.get<std::uint32_t>("dims"));
      n *= e.dims.back();
    }
    const auto raw = r.bytes(n * sizeof(float), "values");
    e.values.resize(n);
    if (n) std::memcpy(e.values.data(), raw.data(), raw.size());
    c.entries.push_back(std::move(e));
  }
  const auto clen = r.get<std::uint32_t>("config length");
  c.config = r.bytes(clen, "config");
  if (!r.at_end()) throw CheckpointError("trailing bytes after checkpoint at byte offset " + std::to_string(r.offset()));
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Parameter values as checkpoint entries. Values must be finite.
template <std::floating_point T>
std::vector<CheckpointEntry> capture_parameters(const nn::ParamList<T>& ps) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : ps.items()) {
    CheckpointEntry e;
    e.name = p.name;
    for (auto d : p.var.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    for (T v : p.var.value().storage()) {
      if (!std::isfinite(static_cast<double>(v))) throw CheckpointError("parameter '" + p.name + "' is not finite");
      e.values.push_back(static_cast<float>(v));
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// Copies stored values into the matching parameters. Every model parameter
/// must be present with identical dims; extra entries are an error as well.
template <std::floating_point T>
void restore_parameters(const nn::ParamList<T>& ps, const std::vector<CheckpointEntry>& entries) {
  if (entries.size() != ps.size()) {
    throw DimensionMismatch("checkpoint holds " + std::to_string(entries.size()) + " arrays but the model has " +
                            std::to_string(ps.size()));
  }
  for (const auto& p : ps.items()) {
    const CheckpointEntry* hit = nullptr;
    for (const auto& e : entries)
      if (e.name == p.name) hit = &e;
    if (!hit) throw DimensionMismatch("parameter '" + p.name + "' is missing from the checkpoint");
    std::vector<std::uint32_t> want;
    for (auto d : p.var.shape()) want.push_back(static_cast<std::uint32_t>(d));
    if (hit->dims != want) {
      auto str = [](const std::vector<std::uint32_t>& d) {
        std::string s = "[";
        for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
        return s + "]";
      };
      throw DimensionMismatch("parameter '" + p.name + "' has dims " + str(want) + " in the model but " + str(hit->dims) +
                              " in the checkpoint");
    }
  }
  for (const auto& p : ps.items()) {
    for (const auto& e : entries) {
      if (e.name != p.name) continue;
      auto v = p.var;
      auto& dst = v.mutable_value().storage();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e.values[i]);
    }
  }
}

}  // namespace pkfr::cli
