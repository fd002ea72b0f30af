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

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pivotkit {

/// Base class for every error raised by the library. The CLI maps it to exit
/// code 1; the message names the violated contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a training stage touches data it is not allowed to read.
class QuarantineError : public Error {
 public:
  using Error::Error;
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

enum class Modality : std::uint8_t { kImage = 0, kAudio = 1, kText = 2 };

const char* modality_name(Modality m);
Modality parse_modality(const std::string& name);

/// Training stages: image-text pre-training, image-audio pivot training,
/// audio-text fine-tuning, and supervised classification.
enum class StageKind : std::uint8_t { kVT = 0, kVA = 1, kAT = 2, kCLF = 3 };

const char* stage_name(StageKind s);
StageKind parse_stage(const std::string& name);

}  // namespace pivotkit
