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

#include "pivotkit/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

#include "pivotkit/binio.hpp"

namespace pivotkit {

namespace binio {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

}  // namespace binio

std::vector<float> WaveformClip::channel0() const {
  validate();
  if (channel_count == 1) return samples;
  std::vector<float> out(frames());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = samples[i * channel_count];
  return out;
}

void WaveformClip::validate() const {
  if (!(sample_rate > 0)) throw Error("waveform: sample_rate must be positive");
  if (channel_count < 1) throw Error("waveform: channel_count must be positive");
  if (samples.empty()) throw Error("waveform: empty clip");
  if (samples.size() % channel_count != 0)
    throw Error("waveform: sample count is not a multiple of channel_count");
}

int window_samples(const FbankOptions& opts, double sample_rate) {
  return static_cast<int>(std::lround(opts.window_ms * sample_rate / 1000.0));
}

int shift_samples(const FbankOptions& opts, double sample_rate) {
  return static_cast<int>(std::lround(opts.frame_shift_ms * sample_rate / 1000.0));
}

int fbank_frame_count(std::size_t num_samples, int window, int shift) {
  if (window <= 0 || shift <= 0) throw Error("fbank: window and shift must be positive");
  if (num_samples < static_cast<std::size_t>(window)) return 0;
  return static_cast<int>((num_samples - window) / shift) + 1;
}

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::exp(mel / 1127.0) - 1.0); }

struct FbankComputer::Plan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
};

namespace {
// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

FbankComputer::FbankComputer(const FbankOptions& opts, double sample_rate)
    : opts_(opts), sample_rate_(sample_rate) {
  if (!(sample_rate > 0)) throw Error("fbank: sample_rate must be positive");
  if (opts.mel_bins < 1) throw Error("fbank: mel_bins must be positive");
  if (!(opts.frame_shift_ms > 0)) throw Error("fbank: frame shift must be positive");
  if (opts.window_ms < opts.frame_shift_ms)
    throw Error("fbank: window_ms must be >= frame_shift_ms");
  window_ = window_samples(opts, sample_rate);
  shift_ = shift_samples(opts, sample_rate);
  if (window_ < 2 || shift_ < 1) throw Error("fbank: window too short for sample rate");
  fft_size_ = 1;
  while (fft_size_ < window_) fft_size_ <<= 1;

  // Hann ("hanning") window spanning the whole frame.
  hann_.resize(window_);
  for (int n = 0; n < window_; ++n)
    hann_[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / (window_ - 1));

  const double nyquist = 0.5 * sample_rate;
  const double high = opts.high_freq > 0 ? opts.high_freq : nyquist + opts.high_freq;
  if (!(opts.low_freq >= 0 && high > opts.low_freq && high <= nyquist))
    throw Error("fbank: invalid mel frequency range");
  const int num_fft_bins = fft_size_ / 2;
  const double bin_width = sample_rate / fft_size_;
  const double mel_low = hz_to_mel(opts.low_freq);
  const double mel_high = hz_to_mel(high);
  const double delta = (mel_high - mel_low) / (opts.mel_bins + 1);
  weights_ = MatD::Zero(opts.mel_bins, num_fft_bins);
  for (int b = 0; b < opts.mel_bins; ++b) {
    const double left = mel_low + b * delta;
    const double center = left + delta;
    const double right = center + delta;
    for (int i = 0; i < num_fft_bins; ++i) {
      const double mel = hz_to_mel(i * bin_width);
      if (mel > left && mel < right) {
        weights_(b, i) = mel <= center ? (mel - left) / (center - left)
                                       : (right - mel) / (right - center);
      }
    }
  }

  plan_ = std::make_unique<Plan>();
  std::lock_guard lock(planner_mutex());
  plan_->in = fftw_alloc_real(fft_size_);
  plan_->out = fftw_alloc_complex(fft_size_ / 2 + 1);
  // FFTW_ESTIMATE keeps the chosen algorithm (and so the rounding) fixed.
  plan_->plan = fftw_plan_dft_r2c_1d(fft_size_, plan_->in, plan_->out, FFTW_ESTIMATE);
}

FbankComputer::~FbankComputer() {
  if (!plan_) return;
  std::lock_guard lock(planner_mutex());
  if (plan_->plan) fftw_destroy_plan(plan_->plan);
  fftw_free(plan_->in);
  fftw_free(plan_->out);
}

double FbankComputer::center_frequency(int bin) const {
  const double nyquist = 0.5 * sample_rate_;
  const double high = opts_.high_freq > 0 ? opts_.high_freq : nyquist + opts_.high_freq;
  const double mel_low = hz_to_mel(opts_.low_freq);
  const double delta = (hz_to_mel(high) - mel_low) / (opts_.mel_bins + 1);
  return mel_to_hz(mel_low + (bin + 1) * delta);
}

FbankSpectrogram FbankComputer::compute(const WaveformClip& clip) const {
  const std::vector<float> mono = clip.channel0();
  const int frames = fbank_frame_count(mono.size(), window_, shift_);
  if (frames == 0) throw Error("clip too short");

  double mean = 0.0;
  for (float s : mono) mean += s;
  mean /= static_cast<double>(mono.size());

  // Per-call buffers so one computer can serve several threads.
  double* in = fftw_alloc_real(fft_size_);
  fftw_complex* out = fftw_alloc_complex(fft_size_ / 2 + 1);
  const int num_fft_bins = fft_size_ / 2;
  Vec<double> power(num_fft_bins);

  FbankSpectrogram spec;
  spec.frame_shift_ms = opts_.frame_shift_ms;
  spec.values.resize(frames, opts_.mel_bins);
  const double log_floor = std::log(opts_.energy_floor);

  for (int t = 0; t < frames; ++t) {
    const std::size_t offset = static_cast<std::size_t>(t) * shift_;
    for (int n = 0; n < window_; ++n) in[n] = (mono[offset + n] - mean) * hann_[n];
    for (int n = window_; n < fft_size_; ++n) in[n] = 0.0;
    fftw_execute_dft_r2c(plan_->plan, in, out);
    for (int k = 0; k < num_fft_bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    const Vec<double> energies = weights_ * power;
    for (int b = 0; b < opts_.mel_bins; ++b) {
      const double e = energies[b];
      spec.values(t, b) = static_cast<float>(
          e > opts_.energy_floor && std::isfinite(e) ? std::log(e) : log_floor);
    }
  }
  fftw_free(in);
  fftw_free(out);
  return spec;
}

FbankSpectrogram compute_fbank(const WaveformClip& clip, int mel_bins,
                               double frame_shift_ms, double window_ms) {
  FbankOptions opts;
  opts.mel_bins = mel_bins;
  opts.frame_shift_ms = frame_shift_ms;
  opts.window_ms = window_ms;
  return compute_fbank(clip, opts);
}

FbankSpectrogram compute_fbank(const WaveformClip& clip, const FbankOptions& opts) {
  clip.validate();
  return FbankComputer(opts, clip.sample_rate).compute(clip);
}

CorpusStats compute_corpus_stats(std::span<const FbankSpectrogram> corpus) {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& s : corpus) {
    sum += s.values.cast<double>().sum();
    count += static_cast<double>(s.values.size());
  }
  if (count == 0) throw Error("degenerate corpus statistics");
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto& s : corpus) sq += (s.values.cast<double>().array() - mean).square().sum();
  CorpusStats stats{mean, std::sqrt(sq / count)};
  if (!(stats.std > 0)) throw Error("degenerate corpus statistics");
  return stats;
}

FbankSpectrogram normalize(const FbankSpectrogram& spec, const CorpusStats& stats) {
  if (!(stats.std > 0) || !std::isfinite(stats.std))
    throw Error("degenerate corpus statistics");
  FbankSpectrogram out = spec;
  out.values = ((spec.values.cast<double>().array() - stats.mean) / stats.std)
                   .cast<float>()
                   .matrix();
  return out;
}

FbankSpectrogram denormalize(const FbankSpectrogram& spec, const CorpusStats& stats) {
  if (!(stats.std > 0)) throw Error("degenerate corpus statistics");
  FbankSpectrogram out = spec;
  out.values = (spec.values.cast<double>().array() * stats.std + stats.mean)
                   .cast<float>()
                   .matrix();
  return out;
}

MaskDraw draw_mask(int frames, int bins, double time_fraction,
                   double freq_fraction, Rng& rng) {
  if (!(time_fraction >= 0 && time_fraction < 1 && freq_fraction >= 0 && freq_fraction < 1))
    throw Error("mask_augment: fractions must lie in [0, 1)");
  MaskDraw m;
  m.time.length = static_cast<int>(std::floor(frames * time_fraction));
  m.freq.length = static_cast<int>(std::floor(bins * freq_fraction));
  // Both starts are always drawn so the stream advances identically.
  m.time.start = static_cast<int>(rng.below(static_cast<std::uint64_t>(frames - m.time.length + 1)));
  m.freq.start = static_cast<int>(rng.below(static_cast<std::uint64_t>(bins - m.freq.length + 1)));
  return m;
}

void apply_mask(MatF& values, const MaskDraw& mask) {
  if (mask.time.length > 0) values.middleRows(mask.time.start, mask.time.length).setZero();
  if (mask.freq.length > 0) values.middleCols(mask.freq.start, mask.freq.length).setZero();
}

FbankSpectrogram mask_augment(const FbankSpectrogram& spec, double time_fraction,
                              double freq_fraction, Rng& rng) {
  const MaskDraw m = draw_mask(spec.frames(), spec.mel_bins(), time_fraction, freq_fraction, rng);
  FbankSpectrogram out = spec;
  apply_mask(out.values, m);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_u32(const std::string& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

std::uint16_t read_u16(const std::string& b, std::size_t at) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + at, 2);
  return v;
}

}  // namespace

WaveformClip read_wav(const std::filesystem::path& path) {
  const std::string b = binio::read_file(path);
  const std::string name = path.string();
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0)
    throw Error(name + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw Error(name + ": truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (size < 16) throw Error(name + ": short fmt chunk");
      const std::uint16_t format = read_u16(b, body);
      channels = read_u16(b, body + 2);
      rate = read_u32(b, body + 4);
      bits = read_u16(b, body + 14);
      if (format != 1 || bits != 16) throw Error(name + ": only 16-bit PCM is supported");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(name + ": data chunk before fmt chunk");
      WaveformClip clip;
      clip.sample_rate = rate;
      clip.channel_count = channels;
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        std::int16_t s;
        std::memcpy(&s, b.data() + body + 2 * i, 2);
        clip.samples[i] = static_cast<float>(s) / 32768.0f;
      }
      clip.validate();
      return clip;
    }
    pos = body + size + (size & 1);
  }
  throw Error(name + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const WaveformClip& clip) {
  clip.validate();
  binio::Writer w;
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  w.put_bytes("RIFF", 4);
  w.put<std::uint32_t>(36 + data_bytes);
  w.put_bytes("WAVE", 4);
  w.put_bytes("fmt ", 4);
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(clip.channel_count));
  const auto rate = static_cast<std::uint32_t>(std::lround(clip.sample_rate));
  w.put<std::uint32_t>(rate);
  w.put<std::uint32_t>(rate * clip.channel_count * 2);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(clip.channel_count * 2));
  w.put<std::uint16_t>(16);
  w.put_bytes("data", 4);
  w.put<std::uint32_t>(data_bytes);
  for (float s : clip.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    w.put<std::int16_t>(static_cast<std::int16_t>(std::lround(std::min(c * 32768.0f, 32767.0f))));
  }
  binio::write_file(path, w.bytes());
}

WaveformClip read_raw_f32(const std::filesystem::path& path) {
  const std::filesystem::path hdr = path.string() + ".hdr";
  std::istringstream in(binio::read_file(hdr));
  WaveformClip clip;
  long long length = -1;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "sample_rate") clip.sample_rate = std::stod(value);
    else if (key == "length") length = std::stoll(value);
    else if (key == "channels") clip.channel_count = std::stoi(value);
  }
  if (length < 0) throw Error(hdr.string() + ": missing length");
  const std::string b = binio::read_file(path);
  if (b.size() != static_cast<std::size_t>(length) * 4)
    throw Error(path.string() + ": length does not match sidecar header");
  clip.samples.resize(length);
  std::memcpy(clip.samples.data(), b.data(), b.size());
  clip.validate();
  return clip;
}

void write_raw_f32(const std::filesystem::path& path, const WaveformClip& clip) {
  clip.validate();
  binio::write_file(path, std::string_view(reinterpret_cast<const char*>(clip.samples.data()),
                                           clip.samples.size() * 4));
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << "sample_rate=" << clip.sample_rate << "\nlength=" << clip.samples.size() << "\n";
  if (clip.channel_count != 1) hdr << "channels=" << clip.channel_count << "\n";
  binio::write_file(path.string() + ".hdr", hdr.str());
}

void write_spectrogram(const std::filesystem::path& path, const FbankSpectrogram& spec) {
  binio::Writer w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(spec.mel_bins()));
  w.put_bytes(spec.values.data(), spec.values.size() * sizeof(float));
  binio::write_file(path, w.bytes());
}

FbankSpectrogram read_spectrogram(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path), path.string());
  const auto t = r.get<std::uint32_t>();
  const auto f = r.get<std::uint32_t>();
  if (r.remaining() != static_cast<std::size_t>(t) * f * 4)
    throw Error(path.string() + ": payload size does not match header");
  FbankSpectrogram spec;
  spec.values.resize(t, f);
  r.get_bytes(spec.values.data(), r.remaining());
  return spec;
}

}  // namespace pivotkit
