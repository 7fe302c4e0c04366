#pragma once

// TCSF tensor files.
//
//   offset  size      field
//   0       4         magic "TCSF"
//   4       4         version, u32 little-endian (= 1)
//   8       1         dtype: 0 = f32, 1 = f64, 2 = u8
//   9       4         ndim, u32 little-endian
//   13      8*ndim    dims, u64 little-endian
//   ...     payload   row-major values, little-endian
//
// The payload must be exactly product(dims) * sizeof(dtype) bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tcs/errors.hpp"
#include "tcs/matrix.hpp"

namespace tcs {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32:
      return 4;
    case Dtype::f64:
      return 8;
    case Dtype::u8:
      return 1;
  }
  throw FormatError("unknown dtype");
}

struct Tensor {
  std::vector<std::uint64_t> dims;
  Dtype dtype = Dtype::f64;
  std::vector<double> values;

  std::uint64_t element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>{});
  }
};

constexpr std::uint32_t kTensorVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw TruncatedError("tensor: header truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_tensor(std::span<const std::uint64_t> dims, std::span<const double> data,
                                 Dtype dtype = Dtype::f64) {
  const std::uint64_t count = std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>{});
  if (count != data.size()) {
    throw ShapeError("write_tensor: data length " + std::to_string(data.size()) + " != product(dims) " +
                     std::to_string(count));
  }
  std::string out = "TCSF";
  detail::put_le<std::uint32_t>(out, kTensorVersion);
  out.push_back(static_cast<char>(dtype));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint64_t d : dims) detail::put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + data.size() * dtype_size(dtype));
  for (double v : data) {
    switch (dtype) {
      case Dtype::f32:
        detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case Dtype::f64:
        detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        break;
      case Dtype::u8:
        if (!(v >= 0.0 && v <= 255.0) || v != static_cast<double>(static_cast<std::uint8_t>(v))) {
          throw PreconditionError("write_tensor: value not representable as u8");
        }
        out.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
        break;
    }
  }
  return out;
}

inline Tensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "TCSF") != 0) throw MagicMismatchError("tensor: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version == 0 || version > kTensorVersion) {
    throw VersionError("tensor: unsupported version " + std::to_string(version));
  }
  if (pos >= bytes.size()) throw TruncatedError("tensor: header truncated");
  const auto code = static_cast<std::uint8_t>(bytes[pos++]);
  if (code > 2) throw FormatError("tensor: unknown dtype code " + std::to_string(code));
  Tensor t;
  t.dtype = static_cast<Dtype>(code);
  const auto ndim = detail::get_le<std::uint32_t>(bytes, pos);
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = detail::get_le<std::uint64_t>(bytes, pos);
  const std::uint64_t count = t.element_count();
  const std::uint64_t expected = count * dtype_size(t.dtype);
  if (bytes.size() - pos != expected) {
    throw TruncatedError("tensor: payload length mismatch, expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(bytes.size() - pos));
  }
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    switch (t.dtype) {
      case Dtype::f32:
        t.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
        break;
      case Dtype::f64:
        t.values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
        break;
      case Dtype::u8:
        t.values[i] = static_cast<unsigned char>(bytes[pos++]);
        break;
    }
  }
  return t;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

inline void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                         std::span<const double> data, Dtype dtype = Dtype::f64) {
  write_file_bytes(path, encode_tensor(dims, data, dtype));
}

inline Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

inline void write_matrix(const std::filesystem::path& path, const Matrix& m, Dtype dtype = Dtype::f64) {
  const std::uint64_t dims[2] = {m.rows(), m.cols()};
  write_tensor(path, dims, m.values(), dtype);
}

inline void write_vector(const std::filesystem::path& path, std::span<const double> v, Dtype dtype = Dtype::f64) {
  const std::uint64_t dims[1] = {v.size()};
  write_tensor(path, dims, v, dtype);
}

/// Reads a 1-D or 2-D tensor as a matrix (1-D becomes a single row).
inline Matrix read_matrix(const std::filesystem::path& path) {
  Tensor t = read_tensor(path);
  if (t.dims.size() == 1) return Matrix(1, t.dims[0], t.values);
  if (t.dims.size() != 2) throw ShapeError(path.string() + ": expected a 2-D tensor");
  Matrix m(t.dims[0], t.dims[1], t.values);
  if (!m.all_finite()) throw FormatError(path.string() + ": non-finite entries");
  return m;
}

inline Vector read_vector(const std::filesystem::path& path) {
  Tensor t = read_tensor(path);
  if (t.dims.size() != 1) throw ShapeError(path.string() + ": expected a 1-D tensor");
  return std::move(t.values);
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string checksum(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

inline std::string file_checksum(const std::filesystem::path& path) { return checksum(read_file_bytes(path)); }

}  // namespace tcs
