#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "twirgcn/error.hpp"
#include "twirgcn/tensor.hpp"

namespace twirgcn::io {

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t hash_strings(const std::vector<std::string>& items) {
  std::uint64_t h = fnv1a("");
  for (const auto& s : items) {
    h = fnv1a(s, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string file_hash(const std::string& path) { return hex64(fnv1a(read_file(path))); }

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    bytes(s);
  }
  void strings(const std::vector<std::string>& v) {
    pod<std::uint64_t>(v.size());
    for (const auto& s : v) str(s);
  }
  void doubles(const std::vector<double>& v) {
    out_.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void tensor(const Tensor& t) {
    pod<std::uint64_t>(t.shape.size());
    for (auto d : t.shape) pod<std::uint64_t>(d);
    doubles(t.values);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw CheckpointError("truncated checkpoint");
    return v;
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("truncated checkpoint");
    return s;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 30)) throw CheckpointError("corrupt string length");
    return bytes(n);
  }
  std::vector<std::string> strings() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 28)) throw CheckpointError("corrupt list length");
    std::vector<std::string> v;
    v.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) v.push_back(str());
    return v;
  }
  std::vector<double> doubles(std::size_t n) {
    std::vector<double> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in_) throw CheckpointError("truncated checkpoint");
    return v;
  }
  Tensor tensor() {
    const auto rank = pod<std::uint64_t>();
    if (rank > 4) throw CheckpointError("corrupt tensor rank");
    Shape s;
    for (std::uint64_t i = 0; i < rank; ++i) s.push_back(pod<std::uint64_t>());
    if (numel(s) > (1ULL << 32)) throw CheckpointError("corrupt tensor shape");
    return Tensor(s, doubles(numel(s)));
  }

 private:
  std::istream& in_;
};

}  // namespace twirgcn::io
