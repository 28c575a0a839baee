#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "rsknet/dataset.hpp"
#include "rsknet/frontend.hpp"
#include "rsknet/params.hpp"

namespace rsknet {

/// Synthetic speaker corpus. Each speaker owns a fixed log-spectral envelope
/// (smooth mel-domain shape plus formant-like peaks in several "phone" states)
/// and a pitch; an utterance is a random walk over the speaker's states,
/// rendered by overlap-add of random-phase frames, with silence gaps, gain,
/// tilt and additive noise as within-speaker variation.
struct ToyOptions {
  int n_speakers = 20;
  int utts_per_speaker = 50;
  std::uint64_t seed = 0;
  double noise = 1.0;  // scales every nuisance term; 0 disables them
  double min_seconds = 1.0;
  double max_seconds = 4.0;
  int sample_rate = 16000;
  int states = 4;
};

struct ToySpeaker {
  double f0 = 150.0;
  std::vector<std::vector<double>> states;  // log-magnitude per FFT bin
};

struct ToyUtteranceSpec {
  std::string id;
  int speaker = 0;
  int index = 0;
  double seconds = 1.0;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::string padded(int v, int width) {
  std::string s = std::to_string(v);
  return std::string(std::max(0, width - int(s.size())), '0') + s;
}

}  // namespace detail

class ToyCorpus {
 public:
  static constexpr int kFft = 512;
  static constexpr int kHop = 256;

  explicit ToyCorpus(const ToyOptions& opt) : opt_(opt) {
    if (opt.n_speakers < 2) throw DataError("toy corpus needs at least 2 speakers");
    if (opt.utts_per_speaker < 1) throw DataError("toy corpus needs at least 1 utterance per speaker");
    if (!(opt.min_seconds > 0.1 && opt.max_seconds >= opt.min_seconds))
      throw DataError("toy corpus: invalid duration range");
    const int bins = kFft / 2 + 1;
    const double mel_top = hz_to_mel(opt.sample_rate / 2.0);
    std::vector<double> u(bins);  // mel position in [0, 1]
    for (int k = 0; k < bins; ++k) u[k] = hz_to_mel(double(k) * opt.sample_rate / kFft) / mel_top;

    Rng rng(detail::mix_seed(opt.seed, 0xC0FFEE));
    for (int s = 0; s < opt.n_speakers; ++s) {
      ToySpeaker spk;
      spk.f0 = rng.uniform(90.0, 260.0);
      std::vector<double> base(bins, 0.0);
      for (int h = 1; h <= 4; ++h) {
        const double a = rng.normal() * 0.8 / h, ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int k = 0; k < bins; ++k) base[k] += a * std::cos(std::numbers::pi * h * u[k] + ph);
      }
      for (int k = 0; k < bins; ++k) base[k] -= 1.5 * u[k];  // speech-like downward tilt
      for (int st = 0; st < opt.states; ++st) {
        std::vector<double> env = base;
        for (int f = 0; f < 3; ++f) {
          const double centre = rng.uniform(0.08, 0.92), width = rng.uniform(0.02, 0.05),
                       height = rng.uniform(1.5, 3.0);
          for (int k = 0; k < bins; ++k) {
            const double d = (u[k] - centre) / width;
            env[k] += height * std::exp(-0.5 * d * d);
          }
        }
        spk.states.push_back(std::move(env));
      }
      speakers_.push_back(std::move(spk));
    }
    for (int s = 0; s < opt.n_speakers; ++s) {
      for (int i = 0; i < opt.utts_per_speaker; ++i) {
        ToyUtteranceSpec spec;
        spec.speaker = s;
        spec.index = i;
        spec.id = speaker_id(s) + "-u" + detail::padded(i, 3);
        spec.seconds = rng.uniform(opt.min_seconds, opt.max_seconds);
        utts_.push_back(spec);
      }
    }
  }

  const ToyOptions& options() const { return opt_; }
  const std::vector<ToySpeaker>& speakers() const { return speakers_; }
  const std::vector<ToyUtteranceSpec>& utterances() const { return utts_; }
  std::size_t size() const { return utts_.size(); }

  static std::string speaker_id(int s) { return "spk" + detail::padded(s, 3); }

  /// Deterministic rendering of one utterance.
  Waveform synthesize(const ToyUtteranceSpec& u) const {
    const ToySpeaker& spk = speakers_.at(u.speaker);
    Rng rng(detail::mix_seed(opt_.seed, std::uint64_t(u.speaker) * 100003u + std::uint64_t(u.index)));
    const double nz = opt_.noise;
    const int bins = kFft / 2 + 1;
    const std::size_t n = static_cast<std::size_t>(u.seconds * opt_.sample_rate);
    const int frames = static_cast<int>(n / kHop) + 2;

    const double gain = std::exp(nz * rng.uniform(-0.7, 0.7));
    const double tilt = nz * 0.3 * rng.normal();
    const double f0 = spk.f0 * (1.0 + nz * 0.04 * rng.normal());

    // Harmonic comb, per bin, in log domain.
    std::vector<double> comb(bins);
    for (int k = 0; k < bins; ++k) {
      const double hz = double(k) * opt_.sample_rate / kFft;
      const double frac = hz / f0 - std::round(hz / f0);
      comb[k] = std::log(0.25 + std::exp(-0.5 * (frac * f0 / 25.0) * (frac * f0 / 25.0)));
    }

    std::vector<double> out((frames + 2) * kHop + kFft, 0.0);
    std::vector<double> window(kFft);
    for (int i = 0; i < kFft; ++i) window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFft);
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spec(kFft);
    std::vector<double> frame;

    int state = static_cast<int>(rng.index(spk.states.size()));
    int remaining = 0;
    bool silent = false;
    for (int t = 0; t < frames; ++t) {
      if (remaining == 0) {
        silent = t > 0 && rng.uniform() < 0.15;
        state = static_cast<int>(rng.index(spk.states.size()));
        remaining = 6 + static_cast<int>(rng.index(18));
      }
      --remaining;
      if (silent) continue;
      const auto& env = spk.states[state];
      for (int k = 0; k < bins; ++k) {
        const double logmag = env[k] + comb[k] + tilt * (double(k) / bins - 0.5) + nz * 0.25 * rng.normal();
        const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        spec[k] = std::polar(std::exp(logmag), ph);
      }
      spec[0] = spec[0].real();
      spec[bins - 1] = spec[bins - 1].real();
      for (int k = bins; k < kFft; ++k) spec[k] = std::conj(spec[kFft - k]);
      fft.inv(frame, spec);
      for (int i = 0; i < kFft; ++i) out[std::size_t(t) * kHop + i] += frame[i] * window[i];
    }

    Waveform w;
    w.sample_rate = opt_.sample_rate;
    w.samples.assign(out.begin() + kFft / 2, out.begin() + kFft / 2 + n);
    double peak = 1e-12;
    for (double v : w.samples) peak = std::max(peak, std::abs(v));
    const double scale = 0.3 * gain / (peak * std::exp(0.7));  // headroom for the largest gain
    for (double& v : w.samples) v = v * scale + nz * 2e-4 * rng.normal();
    return w;
  }

  /// Writes <dir>/wav/<utt>.wav for every utterance plus <dir>/manifest.txt.
  std::vector<ManifestEntry> write(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "wav");
    std::vector<ManifestEntry> entries;
    for (const auto& u : utts_) {
      const std::string path = (fs::path(dir) / "wav" / (u.id + ".wav")).string();
      write_wav(path, synthesize(u));
      entries.push_back({u.id, speaker_id(u.speaker), path});
    }
    write_manifest((fs::path(dir) / "manifest.txt").string(), entries);
    return entries;
  }

 private:
  ToyOptions opt_;
  std::vector<ToySpeaker> speakers_;
  std::vector<ToyUtteranceSpec> utts_;
};

}  // namespace rsknet
