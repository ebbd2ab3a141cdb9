#pragma once

// Tensor exchange file: little-endian, magic "DRVTENS1", u32 rank, rank u32
// dims (channel, frame, bin), then float32 payload with real/imaginary
// interleaved per complex value, row-major. One tensor per file.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dereverb/error.hpp"
#include "dereverb/spectral.hpp"

namespace dereverb {

inline constexpr std::array<char, 8> kTensorMagic = {'D', 'R', 'V', 'T', 'E', 'N', 'S', '1'};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_tensor(const ComplexSpectrogram& spec) {
  std::vector<unsigned char> out(kTensorMagic.begin(), kTensorMagic.end());
  detail::put_u32(out, 3);
  detail::put_u32(out, static_cast<std::uint32_t>(spec.channels()));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.frames()));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.bins()));
  out.reserve(out.size() + spec.size() * 8);
  for (const Complex& z : spec.data()) {
    for (double part : {z.real(), z.imag()}) {
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(part)));
    }
  }
  return out;
}

inline ComplexSpectrogram decode_tensor(const std::vector<unsigned char>& bytes) {
  using detail::require;
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kTensorMagic.data(), 8) == 0,
          ErrorKind::ExternalEnhancer, "tensor file has a bad magic header");
  const std::uint32_t rank = detail::get_u32(bytes.data() + 8);
  require(rank == 3, ErrorKind::ExternalEnhancer,
          "tensor rank must be 3 (channel, frame, bin), got " + std::to_string(rank));
  require(bytes.size() >= 12 + 4 * rank, ErrorKind::ExternalEnhancer, "truncated tensor header");
  std::array<std::uint32_t, 3> dims{};
  for (std::uint32_t i = 0; i < rank; ++i) dims[i] = detail::get_u32(bytes.data() + 12 + 4 * i);
  const std::size_t header = 12 + 4 * rank;
  const std::uint64_t count = static_cast<std::uint64_t>(dims[0]) * dims[1] * dims[2];
  require(bytes.size() == header + count * 8, ErrorKind::ExternalEnhancer,
          "tensor payload size does not match its dimensions");
  ComplexSpectrogram spec(dims[0], dims[1], dims[2]);
  const unsigned char* p = bytes.data() + header;
  for (auto& z : spec.data()) {
    const float re = std::bit_cast<float>(detail::get_u32(p));
    const float im = std::bit_cast<float>(detail::get_u32(p + 4));
    z = Complex{re, im};
    p += 8;
  }
  return spec;
}

inline void write_tensor(const std::filesystem::path& path, const ComplexSpectrogram& spec) {
  const auto bytes = encode_tensor(spec);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  detail::require(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  detail::require(static_cast<bool>(os), ErrorKind::Io, "failed writing " + path.string());
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path, ErrorKind kind) {
  std::ifstream is(path, std::ios::binary);
  detail::require(static_cast<bool>(is), kind, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline ComplexSpectrogram read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_bytes(path, ErrorKind::ExternalEnhancer));
}

}  // namespace dereverb
