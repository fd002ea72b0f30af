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

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pivotkit/common.hpp"

namespace pivotkit {

/// Flat parameter or gradient storage. Eigen picks its vectorized code path
/// from the runtime address, so buffers are kept maximally aligned to make
/// results independent of where the allocator put them.
template <typename T>
using ParamBuffer = std::vector<T, Eigen::aligned_allocator<T>>;

/// One named tensor inside a flat parameter buffer.
struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  /// Biases, norm gains and other vector-shaped parameters. These get the
  /// separate "bias" learning rate and no weight decay.
  bool bias_group = false;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Ordered offset table over a flat buffer. Every model keeps all of its
/// parameters in one contiguous vector laid out by this table.
class ParamLayout {
 public:
  int add(std::string name, int rows, int cols, bool bias_group);

  const ParamSlot& operator[](int i) const { return slots_[i]; }
  const std::vector<ParamSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }
  int find(const std::string& name) const;  // -1 when absent
  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t total_ = 0;
};

template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
MatMap<T> view(T* base, const ParamSlot& s) {
  return MatMap<T>(base + s.offset, s.rows, s.cols);
}

template <typename T>
ConstMatMap<T> view(const T* base, const ParamSlot& s) {
  return ConstMatMap<T>(base + s.offset, s.rows, s.cols);
}

}  // namespace pivotkit
