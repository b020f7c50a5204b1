#pragma once

// Binary checkpoint layout (all integers and reals little-endian):
//
//   "DEMCKPT1"                      8 ASCII bytes
//   version                         u32
//   dim count, dims...              u32, u32 each (input, hidden1, hidden2)
//   parameter count                 u64
//   parameters                      f64 each, canonical layer order
//   optimizer block                 u64 length + payload
//   rng block                       u64 length + payload
//   utility block                   u64 length + payload

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "cbp.hpp"

namespace dem {

inline constexpr std::string_view kCheckpointMagic = "DEMCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ColumnShape shape;
  Vector parameters;
  OptimizerState optimizer;
  std::string rng_state;
  UtilityState utility;

  ModelColumn column() const {
    ColumnParams p = ColumnParams::zeros(shape);
    unflatten(parameters, p);
    return ModelColumn(std::move(p));
  }
};

inline Checkpoint make_checkpoint(const ModelColumn& column, const OptimizerState& opt, const Rng& rng,
                                  const UtilityState& utility) {
  return {kCheckpointVersion, column.shape(), flatten(column.params()), opt, rng_state(rng), utility};
}

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes_.append(reinterpret_cast<const char*>(raw), sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.append(s); }
  void put_block(const std::string& payload) {
    put<std::uint64_t>(payload.size());
    bytes_.append(payload);
  }
  void put_vector(const Vector& v) {
    for (Index i = 0; i < v.size(); ++i) put<double>(v(i));
  }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view get_block() { return get_bytes(checked_size(get<std::uint64_t>())); }
  Vector get_vector(std::uint64_t n) {
    Vector v(static_cast<Index>(checked_size(n * sizeof(double)) / sizeof(double)));
    for (Index i = 0; i < v.size(); ++i) v(i) = get<double>();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::size_t checked_size(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::corrupt_checkpoint, "length prefix exceeds file size");
    return static_cast<std::size_t>(n);
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::corrupt_checkpoint, "truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string encode_optimizer(const OptimizerState& s) {
  ByteWriter w;
  w.put<std::uint64_t>(s.step_count);
  w.put<double>(s.learning_rate);
  w.put<double>(s.beta1);
  w.put<double>(s.beta2);
  w.put<double>(s.epsilon);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(s.first_moment.size()));
  w.put_vector(s.first_moment);
  w.put_vector(s.second_moment);
  return w.take();
}

inline OptimizerState decode_optimizer(std::string_view bytes) {
  ByteReader r(bytes);
  OptimizerState s;
  s.step_count = r.get<std::uint64_t>();
  s.learning_rate = r.get<double>();
  s.beta1 = r.get<double>();
  s.beta2 = r.get<double>();
  s.epsilon = r.get<double>();
  const auto n = r.get<std::uint64_t>();
  s.first_moment = r.get_vector(n);
  s.second_moment = r.get_vector(n);
  if (!r.done()) throw Error(ErrorCode::corrupt_checkpoint, "trailing bytes in optimizer block");
  return s;
}

inline std::string encode_utility(const UtilityState& s) {
  ByteWriter w;
  w.put<double>(s.decay);
  w.put<double>(s.replacement_rate);
  w.put<std::uint64_t>(s.maturity_threshold);
  for (const auto& layer : s.layers) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(layer.utility.size()));
    w.put<double>(layer.pending);
    w.put_vector(layer.utility);
    for (auto a : layer.age) w.put<std::uint64_t>(a);
  }
  return w.take();
}

inline UtilityState decode_utility(std::string_view bytes) {
  ByteReader r(bytes);
  UtilityState s;
  s.decay = r.get<double>();
  s.replacement_rate = r.get<double>();
  s.maturity_threshold = r.get<std::uint64_t>();
  for (auto& layer : s.layers) {
    const auto n = r.get<std::uint64_t>();
    layer.pending = r.get<double>();
    layer.utility = r.get_vector(n);
    layer.age.resize(static_cast<std::size_t>(n));
    for (auto& a : layer.age) a = r.get<std::uint64_t>();
  }
  if (!r.done()) throw Error(ErrorCode::corrupt_checkpoint, "trailing bytes in utility block");
  return s;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(c.version);
  w.put<std::uint32_t>(3);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.shape.input));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.shape.hidden1));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.shape.hidden2));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(c.parameters.size()));
  w.put_vector(c.parameters);
  w.put_block(detail::encode_optimizer(c.optimizer));
  w.put_block(c.rng_state);
  w.put_block(detail::encode_utility(c.utility));
  return w.take();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw Error(ErrorCode::corrupt_checkpoint, "bad magic");
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) throw Error(ErrorCode::corrupt_checkpoint, "unsupported version");
  if (r.get<std::uint32_t>() != 3) throw Error(ErrorCode::corrupt_checkpoint, "unexpected dimension count");
  c.shape.input = r.get<std::uint32_t>();
  c.shape.hidden1 = r.get<std::uint32_t>();
  c.shape.hidden2 = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (count != static_cast<std::uint64_t>(ColumnParams::zeros(c.shape).size()))
    throw Error(ErrorCode::corrupt_checkpoint, "parameter count does not match dims");
  c.parameters = r.get_vector(count);
  c.optimizer = detail::decode_optimizer(r.get_block());
  c.rng_state = std::string(r.get_block());
  c.utility = detail::decode_utility(r.get_block());
  if (!r.done()) throw Error(ErrorCode::corrupt_checkpoint, "trailing bytes");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open " + path);
  const std::string bytes = serialize_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

/// FNV-1a over the serialized bytes, as 16 hex digits.
inline std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xf];
  return out;
}

}  // namespace dem
