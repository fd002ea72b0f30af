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

// Little-endian binary and whole-file helpers shared by the file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pivotkit/common.hpp"

namespace pivotkit::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  template <typename T>
  void put_span(std::span<const T> s) {
    put_bytes(s.data(), s.size_bytes());
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string bytes, std::string what = "buffer")
      : buf_(std::move(bytes)), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (pos_ + n > buf_.size()) throw Error(what_ + ": truncated");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  void skip(std::size_t n) {
    if (pos_ + n > buf_.size()) throw Error(what_ + ": truncated");
    pos_ += n;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace pivotkit::binio
