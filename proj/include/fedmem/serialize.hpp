#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fedmem/error.hpp"
#include "fedmem/param_set.hpp"

namespace fedmem {

// Binary ParamSet container, all integers and reals little-endian:
//
//   "APFL" | version u32 | layer count u32
//   per layer: name length u32 | name bytes | activation u8
//              | weight rows u64 | weight cols u64 | weight reals (f64)
//              | bias length u64 | bias reals (f64)
inline constexpr std::uint32_t kParamFormatVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ParseError("parameter container truncated at byte " + std::to_string(pos_));
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_params(const ParamSet& params) {
  std::vector<unsigned char> out = {'A', 'P', 'F', 'L'};
  detail::put_le<std::uint32_t>(out, kParamFormatVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.depth()));
  for (const Layer& l : params.layers()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.name.size()));
    out.insert(out.end(), l.name.begin(), l.name.end());
    out.push_back(static_cast<unsigned char>(l.activation));
    detail::put_le<std::uint64_t>(out, l.weight.rows());
    detail::put_le<std::uint64_t>(out, l.weight.cols());
    for (double x : l.weight.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
    detail::put_le<std::uint64_t>(out, l.bias.size());
    for (double x : l.bias.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  return out;
}

inline ParamSet decode_params(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "APFL", 4) != 0)
    throw ParseError("parameter container does not start with magic 'APFL'");
  std::vector<unsigned char> body(bytes.begin() + 4, bytes.end());
  detail::ByteReader in(body);
  const auto version = in.get<std::uint32_t>();
  if (version != kParamFormatVersion) throw ParseError("unsupported parameter container version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer l;
    l.name = in.get_string(in.get<std::uint32_t>());
    const auto act = in.get<std::uint8_t>();
    if (act > 1) throw ParseError("unknown activation code " + std::to_string(act) + " in layer '" + l.name + "'");
    l.activation = static_cast<Activation>(act);
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    std::vector<double> w(rows * cols);
    for (double& x : w) x = std::bit_cast<double>(in.get<std::uint64_t>());
    l.weight = Tensor({rows, cols}, std::move(w));
    const auto blen = in.get<std::uint64_t>();
    std::vector<double> b(blen);
    for (double& x : b) x = std::bit_cast<double>(in.get<std::uint64_t>());
    l.bias = Tensor({blen}, std::move(b));
    layers.push_back(std::move(l));
  }
  if (!in.at_end()) throw ParseError("trailing bytes after parameter container");
  return ParamSet(std::move(layers));
}

inline void save_params(const ParamSet& params, const std::filesystem::path& path) {
  const auto bytes = encode_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace fedmem
