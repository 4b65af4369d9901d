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

#ifndef SFLENS_SHIFT_HPP_
#define SFLENS_SHIFT_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "sflens/bundle.hpp"
#include "sflens/image.hpp"
#include "sflens/study.hpp"

namespace sflens {

// --- corruptions -----------------------------------------------------------

enum class CorruptionKind {
  kBrightnessUp,
  kBrightnessDown,
  kMotionBlur,
  kElastic,
  kGaussianNoise,
};

inline constexpr std::array<CorruptionKind, 5> kAllCorruptions = {
    CorruptionKind::kBrightnessUp, CorruptionKind::kBrightnessDown,
    CorruptionKind::kMotionBlur, CorruptionKind::kElastic,
    CorruptionKind::kGaussianNoise};

inline constexpr int kMinLevel = 1;
inline constexpr int kMaxLevel = 5;

std::string_view CorruptionName(CorruptionKind kind);
CorruptionKind ParseCorruption(std::string_view name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kGaussianNoise;
  int level = 1;
  std::uint64_t seed = 0;
};

/// Severity table. Returns the additive brightness delta, the blur kernel
/// length in pixels, the peak elastic displacement in pixels, or the noise
/// standard deviation, depending on `kind`.
double CorruptionStrength(CorruptionKind kind, int level);

inline constexpr double kMotionBlurAngleDeg = 45.0;
inline constexpr double kElasticSigma = 8.0;

/// Applies one corruption. Output has the input's shape, clamped to [0, 1].
/// Random draws depend only on (spec.seed, kind, image_id), so every
/// severity level of an image reuses the same noise realisation.
Image Corrupt(const Image& image, const CorruptionSpec& spec,
              std::string_view image_id);

/// Building blocks, exposed for testing. `clamp` = false keeps raw values.
Image ShiftBrightness(const Image& image, double delta, bool clamp = true);
Image MotionBlur(const Image& image, int length, double angle_deg);
Image ElasticDeform(const Image& image, double alpha, double sigma, std::uint64_t seed);
Image AddGaussianNoise(const Image& image, double sigma, std::uint64_t seed,
                       bool clamp = true);

/// Id of the corrupted copy of `id`; the copy also carries the tags
/// shift_kind, intensity and origin.
std::string CorruptedId(std::string_view id, CorruptionKind kind, int level);

// --- source/target splits --------------------------------------------------

struct SplitPreset {
  std::string name;
  std::string family;
  StudyKind kind = StudyKind::kAcq;
  Predicate target;  // records matching this form the target domain
};

/// The eight dataset presets (dermoscopy, chest X-ray, FC microscopy, LIDC).
const std::vector<SplitPreset>& BuiltinPresets();

/// Accepts either the bare name ("spiculation-man") or one prefixed with the
/// family ("lidc-spiculation-man").
const SplitPreset& FindPreset(std::string_view name);

struct SplitResult {
  std::size_t source = 0;  // counts of run 0
  std::size_t target = 0;
  std::vector<StudyDefinition> studies;  // <preset>-source, <preset>-target
};

/// Tags every record of every run with domain=source|target.
SplitResult ApplySplit(InferenceBundle& bundle, const SplitPreset& preset);

}  // namespace sflens

#endif  // SFLENS_SHIFT_HPP_
