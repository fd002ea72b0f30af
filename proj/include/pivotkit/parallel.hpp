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

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace pivotkit {

/// Number of worker threads used by data-parallel loops. Work is always cut
/// into the same chunks regardless of this value, and per-chunk results are
/// combined in chunk order, so outputs do not depend on it.
int worker_count();
void set_worker_count(int jobs);

/// Fixed chunking used for gradient accumulation.
inline constexpr int kGradientChunks = 8;

/// Runs fn(chunk, begin, end) over `chunks` contiguous ranges of [0, n).
template <typename F>
void parallel_chunks(int n, int chunks, F&& fn) {
  chunks = std::max(1, std::min(chunks, n));
  auto range = [&](int c, int& b, int& e) {
    b = static_cast<int>(static_cast<long long>(n) * c / chunks);
    e = static_cast<int>(static_cast<long long>(n) * (c + 1) / chunks);
  };
  const int jobs = std::min(worker_count(), chunks);
  if (jobs <= 1) {
    for (int c = 0; c < chunks; ++c) {
      int b, e;
      range(c, b, e);
      fn(c, b, e);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) {
    pool.emplace_back([&, j] {
      try {
        for (int c = j; c < chunks; c += jobs) {
          int b, e;
          range(c, b, e);
          fn(c, b, e);
        }
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Element-wise map over [0, n); each index is independent.
template <typename F>
void parallel_for(int n, F&& fn) {
  parallel_chunks(n, std::max(1, worker_count() * 4), [&](int, int b, int e) {
    for (int i = b; i < e; ++i) fn(i);
  });
}

}  // namespace pivotkit
