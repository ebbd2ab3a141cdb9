#pragma once

// RIFF/WAVE reading and writing. Writes 32-bit IEEE float; reads 16/24/32-bit
// PCM and 32/64-bit float, including WAVE_FORMAT_EXTENSIBLE.

#include <algorithm>
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

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_le(std::vector<unsigned char>& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

}  // namespace detail

inline std::vector<unsigned char> encode_wav(const MultichannelWaveform& wave) {
  wave.validate();
  const auto channels = static_cast<std::uint32_t>(wave.channel_count());
  const auto frames = static_cast<std::uint32_t>(wave.length());
  const auto rate = static_cast<std::uint32_t>(wave.sample_rate);
  const std::uint32_t data_bytes = frames * channels * 4;
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  const char* riff = "RIFF";
  out.insert(out.end(), riff, riff + 4);
  detail::put_le(out, 36 + data_bytes, 4);
  const char* wave_fmt = "WAVEfmt ";
  out.insert(out.end(), wave_fmt, wave_fmt + 8);
  detail::put_le(out, 16, 4);
  detail::put_le(out, 3, 2);  // IEEE float
  detail::put_le(out, channels, 2);
  detail::put_le(out, rate, 4);
  detail::put_le(out, rate * channels * 4, 4);
  detail::put_le(out, channels * 4, 2);
  detail::put_le(out, 32, 2);
  const char* data = "data";
  out.insert(out.end(), data, data + 4);
  detail::put_le(out, data_bytes, 4);
  for (std::uint32_t i = 0; i < frames; ++i)
    for (std::uint32_t c = 0; c < channels; ++c) {
      const float v = static_cast<float>(wave[c][i]);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_le(out, bits, 4);
    }
  return out;
}

inline MultichannelWaveform decode_wav(const std::vector<unsigned char>& b,
                                       const std::string& what = "wav") {
  using detail::le16;
  using detail::le32;
  auto bad = [&](const std::string& why) { detail::fail(ErrorKind::Io, what + ": " + why); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    bad("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const unsigned char* c = b.data() + pos;
    const std::size_t size = le32(c + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size() && std::memcmp(c, "data", 4) != 0) bad("truncated chunk");
    if (std::memcmp(c, "fmt ", 4) == 0) {
      if (size < 16) bad("short fmt chunk");
      format = le16(b.data() + body);
      channels = le16(b.data() + body + 2);
      rate = le32(b.data() + body + 4);
      bits = le16(b.data() + body + 14);
      if (format == 0xFFFE) {
        if (size < 40) bad("short extensible fmt chunk");
        format = le16(b.data() + body + 24);
      }
    } else if (std::memcmp(c, "data", 4) == 0) {
      data = b.data() + body;
      data_size = std::min(size, b.size() - body);
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) bad("missing fmt chunk");
  if (data == nullptr) bad("missing data chunk");
  const bool is_float = format == 3 && (bits == 32 || bits == 64);
  const bool is_pcm = format == 1 && (bits == 16 || bits == 24 || bits == 32);
  if (!is_float && !is_pcm)
    bad("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits));

  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  MultichannelWaveform w(channels, frames, static_cast<double>(rate));
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const unsigned char* p = data + (i * channels + ch) * width;
      double v = 0.0;
      if (is_float && bits == 32) {
        float f;
        std::memcpy(&f, p, 4);
        v = f;
      } else if (is_float) {
        std::memcpy(&v, p, 8);
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = p[0] | p[1] << 8 | p[2] << 16;
        if (s & 0x800000) s -= 0x1000000;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
      }
      w[ch][i] = v;
    }
  return w;
}

inline void write_wav(const std::filesystem::path& path, const MultichannelWaveform& wave) {
  const auto bytes = encode_wav(wave);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  detail::require(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  detail::require(static_cast<bool>(os), ErrorKind::Io, "failed writing " + path.string());
}

inline MultichannelWaveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  detail::require(static_cast<bool>(is), ErrorKind::Io, "cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(is),
                                         std::istreambuf_iterator<char>()};
  return decode_wav(bytes, path.string());
}

}  // namespace dereverb
