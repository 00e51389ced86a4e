#pragma once

// Binary checkpoint, little-endian:
//   "A2MC" | u32 version | u32 array count
//   per array: u32 name length | name bytes | u32 ndim | u32 dims[ndim] | f64 values[]
//   u64 digest length | digest bytes

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "a2m/errors.hpp"
#include "a2m/meta_training.hpp"

namespace a2m {

inline constexpr std::string_view kCheckpointMagic = "A2MC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedArray> arrays;
  std::string config_digest;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::vector<std::string> parameter_names(const MetaModel& model) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < model.embedding.layers().size(); ++i) {
    names.push_back("embedding." + std::to_string(i) + ".weight");
    names.push_back("embedding." + std::to_string(i) + ".bias");
  }
  names.push_back("shared_head.weight");
  names.push_back("shared_head.bias");
  return names;
}

inline Checkpoint make_checkpoint(const MetaModel& model, std::string digest) {
  Checkpoint ck;
  ck.config_digest = std::move(digest);
  const auto names = parameter_names(model);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedArray a{names[i], {}, {params[i].values().begin(), params[i].values().end()}};
    for (auto d : params[i].shape().dims()) a.dims.push_back(static_cast<std::uint32_t>(d));
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

/// Loads parameters into a model shaped like `like`; every array must match
/// by name and shape.
inline MetaModel model_from_checkpoint(const Checkpoint& ck, const MetaModel& like) {
  const auto names = parameter_names(like);
  const auto params = like.parameters();
  if (ck.arrays.size() != params.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ck.arrays.size()) + " arrays but the configured model has " +
                          std::to_string(params.size()));
  }
  std::vector<Tensor> loaded;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = ck.arrays[i];
    std::vector<std::size_t> dims(a.dims.begin(), a.dims.end());
    if (a.name != names[i] || dims != params[i].shape().dims()) {
      throw ValidationError("checkpoint array '" + a.name + "' is incompatible with configured parameter '" + names[i] +
                            "' of shape " + params[i].shape().to_string());
    }
    loaded.emplace_back(Shape(dims), a.values);
  }
  return like.with_parameters(loaded);
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t offset() const noexcept { return pos_; }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t uint(std::size_t width, const char* what) {
    const auto s = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
  std::uint64_t u64(const char* what) { return uint(8, what); }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic);
  detail::put_u32(out, ck.version);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put_u32(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) detail::put_u32(out, d);
    for (double v : a.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  detail::put_u64(out, ck.config_digest.size());
  out += ck.config_digest;
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(4, "magic") != kCheckpointMagic) throw FormatError("checkpoint has wrong magic bytes at offset 0");
  Checkpoint ck;
  ck.version = in.u32("version");
  if (ck.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ck.version) + " at offset 4");
  }
  const auto count = in.u32("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = in.u32("array name length");
    a.name = std::string(in.take(name_len, "array name"));
    const auto ndim = in.u32("array rank");
    if (ndim == 0) throw FormatError("array '" + a.name + "' has rank 0 at offset " + std::to_string(in.offset() - 4));
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.dims.push_back(in.u32("array dims"));
      numel *= a.dims.back();
    }
    if (numel == 0 || numel > bytes.size()) {
      throw FormatError("array '" + a.name + "' has an invalid shape at offset " + std::to_string(in.offset()));
    }
    a.values.reserve(numel);
    for (std::uint64_t k = 0; k < numel; ++k) a.values.push_back(std::bit_cast<double>(in.u64("array values")));
    ck.arrays.push_back(std::move(a));
  }
  const auto digest_len = in.u64("digest length");
  ck.config_digest = std::string(in.take(digest_len, "config digest"));
  if (!in.done()) throw FormatError("trailing bytes after checkpoint at offset " + std::to_string(in.offset()));
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  const auto bytes = encode_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace a2m
