// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// RIFF/WAVE, mono, 16-bit signed PCM at 16 kHz. Nothing else is accepted.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "cocktailser/autodiff/checkpoint.hpp"
#include "cocktailser/signal.hpp"

namespace cocktailser {

inline std::string encode_wav(const Waveform& w) {
  CSER_CHECK(w.sample_rate == kSampleRate, "wav: only ", kSampleRate, " Hz is supported");
  const auto data_bytes = static_cast<std::uint32_t>(w.size() * 2);
  std::string out = "RIFF";
  ad::detail::put_le<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  ad::detail::put_le<std::uint32_t>(out, 16);
  ad::detail::put_le<std::uint16_t>(out, 1);  // PCM
  ad::detail::put_le<std::uint16_t>(out, 1);  // mono
  ad::detail::put_le<std::uint32_t>(out, kSampleRate);
  ad::detail::put_le<std::uint32_t>(out, kSampleRate * 2);
  ad::detail::put_le<std::uint16_t>(out, 2);
  ad::detail::put_le<std::uint16_t>(out, 16);
  out += "data";
  ad::detail::put_le<std::uint32_t>(out, data_bytes);
  for (double v : w.samples) {
    const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
    ad::detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline Waveform decode_wav(const std::string& bytes) {
  ad::detail::Reader r(bytes);
  CSER_CHECK(r.bytes(4) == "RIFF", "wav: missing RIFF header");
  r.get<std::uint32_t>();
  CSER_CHECK(r.bytes(4) == "WAVE", "wav: not a WAVE file");
  bool have_fmt = false;
  while (true) {
    const std::string id = r.bytes(4);
    const auto size = r.get<std::uint32_t>();
    if (id == "fmt ") {
      CSER_CHECK(size >= 16, "wav: short fmt chunk");
      const auto format = r.get<std::uint16_t>();
      const auto channels = r.get<std::uint16_t>();
      const auto rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      const auto bits = r.get<std::uint16_t>();
      CSER_CHECK(format == 1, "wav: only PCM is supported (format ", format, ")");
      CSER_CHECK(channels == 1, "wav: only mono is supported (", channels, " channels)");
      CSER_CHECK(rate == kSampleRate, "wav: sample rate ", rate, " != ", kSampleRate);
      CSER_CHECK(bits == 16, "wav: only 16-bit samples are supported (", bits, " bits)");
      r.bytes(size - 16 + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      CSER_CHECK(have_fmt, "wav: data chunk before fmt chunk");
      std::vector<double> s(size / 2);
      for (auto& v : s) v = static_cast<std::int16_t>(r.get<std::uint16_t>()) / 32768.0;
      Waveform w(std::move(s));
      CSER_CHECK(w.size() >= 1, "wav: no samples");
      return w;
    } else {
      r.bytes(size + (size & 1));
    }
  }
}

inline void write_wav(const std::string& path, const Waveform& w) { ad::write_file(path, encode_wav(w)); }

inline Waveform read_wav(const std::string& path) {
  try {
    return decode_wav(ad::read_file(path));
  } catch (const Error& e) {
    detail::fail(path, ": ", e.what());
  }
}

}  // namespace cocktailser
