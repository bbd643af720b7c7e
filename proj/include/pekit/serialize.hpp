#pragma once

// Parameter snapshots and byte-level encoding helpers.
//
// Parameter sets are stored as flat named real arrays in a versioned binary
// container.  All integers and doubles are little-endian.  Layout:
//
//   magic   "PKPB"        4 bytes
//   version u32           currently 1
//   count   u32
//   entry*  count times:
//     name_len u32, name bytes (UTF-8, no NUL)
//     rank     u32, dims u64 * rank
//     data     f64 * prod(dims)
//
// Restoring validates magic, version, and exact byte length; any mismatch is
// an error rather than a best-effort read.

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "pekit/tensor.hpp"

namespace pekit {

struct NamedTensor {
  std::string name;
  Tensor value;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw std::runtime_error("parameter blob: truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kParamBlobVersion = 1;

inline std::vector<std::uint8_t> serialize_params(const std::vector<NamedTensor>& params) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'P', 'K', 'P', 'B'});
  detail::put_u32(out, kParamBlobVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::int64_t i = 0; i < p.value.rank(); ++i) {
      detail::put_u64(out, static_cast<std::uint64_t>(p.value.dim(i)));
    }
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      detail::put_f64(out, p.value.data()[i]);
    }
  }
  return out;
}

inline std::vector<NamedTensor> deserialize_params(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  if (r.bytes(4) != "PKPB") throw std::runtime_error("parameter blob: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kParamBlobVersion) {
    throw std::runtime_error("parameter blob: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> params;
  params.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    NamedTensor nt;
    nt.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape.push_back(static_cast<std::int64_t>(r.u64()));
    }
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = r.f64();
    nt.value = Tensor(std::move(shape), std::move(data));
    params.push_back(std::move(nt));
  }
  if (!r.exhausted()) throw std::runtime_error("parameter blob: trailing bytes");
  return params;
}

// ---------------------------------------------------------------------------
// Base64 (RFC 4648, with padding) for embedding binary payloads in text.
// ---------------------------------------------------------------------------

inline std::string base64_encode(const std::uint8_t* data, std::size_t size) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((size + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= size) {
    const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                            (static_cast<std::uint32_t>(data[i + 1]) << 8) |
                            static_cast<std::uint32_t>(data[i + 2]);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
    i += 3;
  }
  const std::size_t rem = size - i;
  if (rem == 1) {
    const std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rem == 2) {
    const std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                            (static_cast<std::uint32_t>(data[i + 1]) << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  return base64_encode(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  const auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t buf = 0;
  int bits = 0;
  std::size_t pad = 0;
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ') continue;
    if (c == '=') {
      ++pad;
      continue;
    }
    if (pad > 0) throw std::runtime_error("base64: data after padding");
    const int v = value_of(c);
    if (v < 0) throw std::runtime_error("base64: invalid character");
    buf = (buf << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buf >> bits) & 0xff));
    }
  }
  if (pad > 2) throw std::runtime_error("base64: bad padding");
  return out;
}

// Doubles <-> base64, little-endian payload.
inline std::string doubles_to_base64(const std::vector<double>& values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 8);
  for (double v : values) detail::put_f64(bytes, v);
  return base64_encode(bytes);
}

inline std::vector<double> doubles_from_base64(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw std::runtime_error("base64 doubles: size not a multiple of 8");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    }
    std::memcpy(&values[i], &bits, 8);
  }
  return values;
}

}  // namespace pekit
