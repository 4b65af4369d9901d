// Copyright 2026 The sf-lens Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SFLENS_RANDOM_HPP_
#define SFLENS_RANDOM_HPP_

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace sflens {

// Seed derivation so that every (task, entity) pair gets its own stream
// regardless of the order in which tasks are scheduled.

constexpr std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t HashString(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t DeriveSeed(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = SplitMix64(seed);
  for (std::uint64_t p : parts) h = SplitMix64(h ^ SplitMix64(p));
  return h;
}

}  // namespace sflens

#endif  // SFLENS_RANDOM_HPP_
