#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "rsknet/params.hpp"
#include "rsknet/tensor.hpp"

namespace rsknet {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

/// Row-major T x F log-mel matrix.
struct FeatureMatrix {
  int frames = 0;
  int bins = 0;
  std::vector<float> data;
  double frame_shift_ms = 10.0;
  double frame_len_ms = 25.0;

  FeatureMatrix() = default;
  FeatureMatrix(int t, int f) : frames(t), bins(f), data(std::size_t(t) * f, 0.0f) {}
  float& operator()(int t, int f) { return data[std::size_t(t) * bins + f]; }
  float operator()(int t, int f) const { return data[std::size_t(t) * bins + f]; }
  const float* row(int t) const { return data.data() + std::size_t(t) * bins; }
  bool empty() const { return frames == 0; }

  /// Network input: T x F x 1.
  template <typename T = float>
  Tensor3<T> as_tensor() const {
    Tensor3<T> x(frames, bins, 1);
    for (std::size_t i = 0; i < data.size(); ++i) x.data[i] = static_cast<T>(data[i]);
    return x;
  }
};

// ---------------------------------------------------------------------------
// WAV I/O: 16-bit signed little-endian PCM, mono.

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }
inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

}  // namespace detail

inline Waveform read_wav(const std::string& path, int expected_rate = 16000) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), {});
  auto fail = [&](const std::string& why) { return DataError(path + ": " + why); };
  if (buf.size() < 12 || std::string(buf.begin(), buf.begin() + 4) != "RIFF" ||
      std::string(buf.begin() + 8, buf.begin() + 12) != "WAVE")
    throw fail("not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, rate = 0, bits = 0, format = 0;
  bool have_fmt = false;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.begin() + pos, buf.begin() + pos + 4);
    const std::size_t len = detail::le32(&buf[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) throw fail("truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw fail("short fmt chunk");
      format = detail::le16(&buf[body]);
      channels = detail::le16(&buf[body + 2]);
      rate = static_cast<int>(detail::le32(&buf[body + 4]));
      bits = detail::le16(&buf[body + 14]);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw fail("only 16-bit PCM is supported");
      if (channels != 1) throw fail("only mono audio is supported (got " + std::to_string(channels) + " channels)");
      if (rate != expected_rate)
        throw fail("sample rate " + std::to_string(rate) + " Hz, expected " + std::to_string(expected_rate) +
                   " (no resampling)");
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(detail::le16(&buf[body + 2 * i])) / 32768.0;
      if (w.samples.empty()) throw fail("empty data chunk");
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw fail("no data chunk");
}

inline void write_wav(const std::string& path, const Waveform& w) {
  std::string out = "RIFF";
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  detail::put32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put32(out, 16);
  detail::put16(out, 1);
  detail::put16(out, 1);
  detail::put32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  detail::put16(out, 2);
  detail::put16(out, 16);
  out += "data";
  detail::put32(out, data_len);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    detail::put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write WAV file " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// ---------------------------------------------------------------------------
// Filterbank features.

struct FbankOptions {
  int n_mels = 40;
  double frame_len_ms = 25.0;
  double frame_shift_ms = 10.0;
  double preemph = 0.97;
  double log_floor = 1e-10;
};

inline int frame_count(std::size_t n_samples, int win, int hop) {
  if (n_samples < static_cast<std::size_t>(win)) return 0;
  return static_cast<int>((n_samples - win) / hop) + 1;
}

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist,
/// evaluated at the n_fft/2 + 1 FFT bin centres. Row-major n_mels x bins.
inline std::vector<double> mel_filterbank(int n_mels, int n_fft, int sample_rate) {
  const int bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(0.0), hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centres(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) centres[i] = lo + (hi - lo) * i / (n_mels + 1);
  std::vector<double> bank(std::size_t(n_mels) * bins, 0.0);
  for (int m = 0; m < n_mels; ++m) {
    const double l = centres[m], c = centres[m + 1], r = centres[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double mel = hz_to_mel(double(k) * sample_rate / n_fft);
      double w = 0.0;
      if (mel > l && mel <= c) w = (mel - l) / (c - l);
      else if (mel > c && mel < r) w = (r - mel) / (r - c);
      bank[std::size_t(m) * bins + k] = w;
    }
  }
  return bank;
}

/// Log mel-filterbank energies: per-frame pre-emphasis, Hann window, power
/// spectrum, triangular mel bank, log with a floor.
inline FeatureMatrix fbank(const Waveform& w, const FbankOptions& opt = {}) {
  if (w.sample_rate < 8000) throw DataError("fbank: sample rate must be >= 8000 Hz");
  const int win = static_cast<int>(std::lround(w.sample_rate * opt.frame_len_ms / 1000.0));
  const int hop = static_cast<int>(std::lround(w.sample_rate * opt.frame_shift_ms / 1000.0));
  const int T = frame_count(w.samples.size(), win, hop);
  if (T == 0)
    throw DataError("fbank: " + std::to_string(w.samples.size()) + " samples is shorter than one " +
                    std::to_string(win) + "-sample window");
  const int n_fft = next_pow2(win), bins = n_fft / 2 + 1;
  const std::vector<double> bank = mel_filterbank(opt.n_mels, n_fft, w.sample_rate);
  std::vector<double> window(win);
  for (int i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

  FeatureMatrix out(T, opt.n_mels);
  out.frame_len_ms = opt.frame_len_ms;
  out.frame_shift_ms = opt.frame_shift_ms;
  Eigen::FFT<double> fft;
  std::vector<double> frame(n_fft, 0.0), power(bins);
  std::vector<std::complex<double>> spec;
  for (int t = 0; t < T; ++t) {
    const double* x = w.samples.data() + std::size_t(t) * hop;
    for (int i = win - 1; i > 0; --i) frame[i] = (x[i] - opt.preemph * x[i - 1]) * window[i];
    frame[0] = (x[0] - opt.preemph * x[0]) * window[0];
    std::fill(frame.begin() + win, frame.end(), 0.0);
    fft.fwd(spec, frame);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(spec[k]);
    for (int m = 0; m < opt.n_mels; ++m) {
      const double* row = bank.data() + std::size_t(m) * bins;
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += row[k] * power[k];
      out(t, m) = static_cast<float>(std::log(std::max(e, opt.log_floor)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Energy VAD.

struct VadOptions {
  double relative_db = 30.0;      // keep frames within this of the loudest
  double absolute_floor = 1e-8;   // minimum mean-square frame power
};

/// Natural-log mean-square power of each analysis frame.
inline std::vector<double> frame_log_energy(const Waveform& w, const FbankOptions& opt = {}) {
  const int win = static_cast<int>(std::lround(w.sample_rate * opt.frame_len_ms / 1000.0));
  const int hop = static_cast<int>(std::lround(w.sample_rate * opt.frame_shift_ms / 1000.0));
  const int T = frame_count(w.samples.size(), win, hop);
  std::vector<double> e(T);
  for (int t = 0; t < T; ++t) {
    const double* x = w.samples.data() + std::size_t(t) * hop;
    double acc = 0.0;
    for (int i = 0; i < win; ++i) acc += x[i] * x[i];
    e[t] = std::log(std::max(acc / win, 1e-30));
  }
  return e;
}

/// Frame kept iff log-energy > max(loudest - relative_db, log(absolute_floor)).
inline std::vector<bool> energy_vad(std::span<const double> log_energy, const VadOptions& opt = {}) {
  std::vector<bool> keep(log_energy.size(), false);
  if (log_energy.empty()) return keep;
  const double peak = *std::max_element(log_energy.begin(), log_energy.end());
  const double rel = peak - opt.relative_db * std::log(10.0) / 10.0;
  const double threshold = std::max(rel, std::log(opt.absolute_floor));
  for (std::size_t t = 0; t < log_energy.size(); ++t) keep[t] = log_energy[t] > threshold;
  return keep;
}

inline FeatureMatrix select_frames(const FeatureMatrix& f, const std::vector<bool>& keep) {
  if (keep.size() != std::size_t(f.frames)) throw ShapeError("select_frames: mask length mismatch");
  FeatureMatrix out(0, f.bins);
  out.frame_len_ms = f.frame_len_ms;
  out.frame_shift_ms = f.frame_shift_ms;
  for (int t = 0; t < f.frames; ++t) {
    if (!keep[t]) continue;
    out.data.insert(out.data.end(), f.row(t), f.row(t) + f.bins);
    ++out.frames;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sliding mean normalization and cropping.

/// Subtracts from each frame the mean of a window of min(T, window) frames,
/// centred on the frame and shifted inward at the edges so it always holds
/// exactly min(T, window) frames. T <= window is global mean subtraction.
inline FeatureMatrix cmn_sliding(const FeatureMatrix& f, int window = 300) {
  if (window < 1) throw ShapeError("cmn_sliding: window must be >= 1");
  FeatureMatrix out = f;
  const int T = f.frames, F = f.bins;
  if (T == 0) return out;
  const int W = std::min(T, window);
  // Prefix sums in double for O(T F).
  std::vector<double> prefix(std::size_t(T + 1) * F, 0.0);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < F; ++k)
      prefix[std::size_t(t + 1) * F + k] = prefix[std::size_t(t) * F + k] + f(t, k);
  for (int t = 0; t < T; ++t) {
    const int start = std::clamp(t - W / 2, 0, T - W);
    for (int k = 0; k < F; ++k) {
      const double mean =
          (prefix[std::size_t(start + W) * F + k] - prefix[std::size_t(start) * F + k]) / W;
      out(t, k) = static_cast<float>(f(t, k) - mean);
    }
  }
  return out;
}

/// Uniform random crop of `len` frames; shorter inputs are tiled to `len`.
inline FeatureMatrix crop_segment(const FeatureMatrix& f, int len, Rng& rng) {
  if (f.frames == 0) throw DataError("crop_segment: empty feature matrix");
  if (len < 1) throw ShapeError("crop_segment: length must be >= 1");
  FeatureMatrix out(len, f.bins);
  out.frame_len_ms = f.frame_len_ms;
  out.frame_shift_ms = f.frame_shift_ms;
  const int start = f.frames > len ? static_cast<int>(rng.index(std::size_t(f.frames - len + 1))) : 0;
  for (int t = 0; t < len; ++t) {
    const int src = f.frames > len ? start + t : t % f.frames;
    std::copy(f.row(src), f.row(src) + f.bins, out.data.begin() + std::size_t(t) * f.bins);
  }
  return out;
}

struct FrontendOptions {
  FbankOptions fbank{};
  VadOptions vad{};
  int cmn_window = 300;
};

/// Full pipeline: fbank -> sliding CMN -> drop non-speech frames.
inline FeatureMatrix extract_features(const Waveform& w, const FrontendOptions& opt = {}) {
  const FeatureMatrix raw = fbank(w, opt.fbank);
  const std::vector<double> energy = frame_log_energy(w, opt.fbank);
  return select_frames(cmn_sliding(raw, opt.cmn_window), energy_vad(energy, opt.vad));
}

}  // namespace rsknet
