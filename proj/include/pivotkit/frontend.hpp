// Copyright 2026 The pivotkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Log mel-filterbank front end: waveform -> FBANK -> corpus normalization
// -> time/frequency masking.

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "pivotkit/common.hpp"
#include "pivotkit/rng.hpp"

namespace pivotkit {

/// Interleaved samples. Only channel 0 is consumed by the front end.
struct WaveformClip {
  std::vector<float> samples;
  double sample_rate = 16000.0;
  int channel_count = 1;

  std::size_t frames() const {
    return channel_count > 0 ? samples.size() / channel_count : 0;
  }
  std::vector<float> channel0() const;
  void validate() const;
};

/// time-frames x mel-bins log energies.
struct FbankSpectrogram {
  MatF values;
  double frame_shift_ms = 10.0;

  int frames() const { return static_cast<int>(values.rows()); }
  int mel_bins() const { return static_cast<int>(values.cols()); }
};

struct CorpusStats {
  double mean = 0.0;
  double std = 1.0;
};

struct FbankOptions {
  int mel_bins = 128;
  double frame_shift_ms = 10.0;
  double window_ms = 25.0;
  double low_freq = 20.0;
  double high_freq = 0.0;  // <= 0 means offset from Nyquist
  double energy_floor = 1e-10;
};

int window_samples(const FbankOptions& opts, double sample_rate);
int shift_samples(const FbankOptions& opts, double sample_rate);

/// floor((num_samples - window) / shift) + 1, or 0 when the clip is shorter
/// than one window.
int fbank_frame_count(std::size_t num_samples, int window, int shift);

// HTK mel mapping.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Precomputed Hann window, FFT plan and triangular mel weights for one
/// (sample rate, options) pair. Safe to share between threads once built.
class FbankComputer {
 public:
  FbankComputer(const FbankOptions& opts, double sample_rate);
  ~FbankComputer();
  FbankComputer(const FbankComputer&) = delete;
  FbankComputer& operator=(const FbankComputer&) = delete;

  FbankSpectrogram compute(const WaveformClip& clip) const;

  const FbankOptions& options() const { return opts_; }
  double sample_rate() const { return sample_rate_; }
  int fft_size() const { return fft_size_; }
  int window_length() const { return window_; }
  int shift_length() const { return shift_; }
  const std::vector<double>& window() const { return hann_; }
  /// mel_bins x (fft_size/2) weights over FFT bins [0, fft_size/2).
  const MatD& mel_weights() const { return weights_; }
  /// Frequency (Hz) at the peak of triangle `bin`.
  double center_frequency(int bin) const;

 private:
  struct Plan;
  FbankOptions opts_;
  double sample_rate_;
  int window_;
  int shift_;
  int fft_size_;
  std::vector<double> hann_;
  MatD weights_;
  std::unique_ptr<Plan> plan_;
};

FbankSpectrogram compute_fbank(const WaveformClip& clip, int mel_bins,
                               double frame_shift_ms, double window_ms);
FbankSpectrogram compute_fbank(const WaveformClip& clip,
                               const FbankOptions& opts);

/// Scalar mean/std over every entry of every spectrogram in the corpus.
CorpusStats compute_corpus_stats(std::span<const FbankSpectrogram> corpus);

FbankSpectrogram normalize(const FbankSpectrogram& spec,
                           const CorpusStats& stats);
FbankSpectrogram denormalize(const FbankSpectrogram& spec,
                             const CorpusStats& stats);

struct MaskSpan {
  int start = 0;
  int length = 0;
};

struct MaskDraw {
  MaskSpan time;
  MaskSpan freq;
};

/// Draws one contiguous time block of floor(T*time_fraction) frames and one
/// contiguous frequency block of floor(F*freq_fraction) bins; starts uniform.
MaskDraw draw_mask(int frames, int bins, double time_fraction,
                   double freq_fraction, Rng& rng);

/// Zero-fills the drawn blocks. Zero is the post-normalization mean.
FbankSpectrogram mask_augment(const FbankSpectrogram& spec,
                              double time_fraction, double freq_fraction,
                              Rng& rng);
void apply_mask(MatF& values, const MaskDraw& mask);

// ---------------------------------------------------------------------------
// File formats

/// Mono or multi-channel 16-bit PCM RIFF/WAVE.
WaveformClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const WaveformClip& clip);

/// Raw float32 little-endian samples plus a "<path>.hdr" sidecar with
/// `sample_rate` and `length` key-value lines.
WaveformClip read_raw_f32(const std::filesystem::path& path);
void write_raw_f32(const std::filesystem::path& path, const WaveformClip& clip);

/// Spectrogram dump: uint32 T, uint32 F, then T*F float32, all little-endian.
void write_spectrogram(const std::filesystem::path& path,
                       const FbankSpectrogram& spec);
FbankSpectrogram read_spectrogram(const std::filesystem::path& path);

}  // namespace pivotkit
