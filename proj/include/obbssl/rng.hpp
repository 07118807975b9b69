/* Copyright 2026 The obbssl Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef OBBSSL_RNG_HPP_
#define OBBSSL_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace obbssl {

using Rng = std::mt19937_64;

// Stream tags keep independent consumers of one seed apart.
enum class Stream : uint64_t {
  kScene = 1,
  kRender = 2,
  kSplit = 3,
  kInit = 4,
  kTrain = 5,
  kSample = 6,
  kPerturb = 7,
  kTest = 8,
};

/// Independent generator for (seed, stream, ids...).
inline Rng make_stream(uint64_t seed, Stream stream,
                       std::initializer_list<uint64_t> ids = {}) {
  std::vector<uint32_t> words;
  auto push = [&](uint64_t v) {
    words.push_back(static_cast<uint32_t>(v));
    words.push_back(static_cast<uint32_t>(v >> 32));
  };
  push(seed);
  push(static_cast<uint64_t>(stream));
  for (uint64_t id : ids) push(id);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::runtime_error("corrupt RNG state");
}

}  // namespace obbssl

#endif  // OBBSSL_RNG_HPP_
