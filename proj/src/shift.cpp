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

#include "sflens/shift.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sflens/error.hpp"
#include "sflens/random.hpp"

namespace sflens {

std::string_view CorruptionName(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kBrightnessUp: return "brightness_up";
    case CorruptionKind::kBrightnessDown: return "brightness_down";
    case CorruptionKind::kMotionBlur: return "motion_blur";
    case CorruptionKind::kElastic: return "elastic";
    case CorruptionKind::kGaussianNoise: return "gaussian_noise";
  }
  return "?";
}

CorruptionKind ParseCorruption(std::string_view name) {
  for (auto kind : kAllCorruptions) {
    if (CorruptionName(kind) == name) return kind;
  }
  throw Error(Errc::kBadParameter, "unknown corruption '" + std::string(name) + "'");
}

double CorruptionStrength(CorruptionKind kind, int level) {
  static constexpr std::array<double, 5> kBrightness = {0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr std::array<double, 5> kBlurLength = {5, 9, 13, 17, 21};
  static constexpr std::array<double, 5> kElasticAlpha = {8, 16, 24, 32, 40};
  static constexpr std::array<double, 5> kNoiseSigma = {0.04, 0.06, 0.08, 0.09, 0.10};
  if (level < kMinLevel || level > kMaxLevel) {
    throw Error(Errc::kBadParameter, "corruption level " + std::to_string(level) + " outside 1..5");
  }
  const auto i = static_cast<std::size_t>(level - 1);
  switch (kind) {
    case CorruptionKind::kBrightnessUp: return kBrightness[i];
    case CorruptionKind::kBrightnessDown: return -kBrightness[i];
    case CorruptionKind::kMotionBlur: return kBlurLength[i];
    case CorruptionKind::kElastic: return kElasticAlpha[i];
    case CorruptionKind::kGaussianNoise: return kNoiseSigma[i];
  }
  return 0.0;
}

namespace {

// Reflect without repeating the edge pixel (…c b | a b c | b a…).
std::ptrdiff_t Reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

float Bilinear(const Image& img, double y, double x, std::size_t c) {
  const auto h = static_cast<std::ptrdiff_t>(img.height());
  const auto w = static_cast<std::ptrdiff_t>(img.width());
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const double ty = y - fy;
  const double tx = x - fx;
  const auto y0 = static_cast<std::ptrdiff_t>(fy);
  const auto x0 = static_cast<std::ptrdiff_t>(fx);
  auto px = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    return static_cast<double>(img.at(static_cast<std::size_t>(Reflect(yy, h)),
                                      static_cast<std::size_t>(Reflect(xx, w)), c));
  };
  const double top = (1 - tx) * px(y0, x0) + tx * px(y0, x0 + 1);
  const double bottom = (1 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1);
  return static_cast<float>((1 - ty) * top + ty * bottom);
}

void Clamp(Image& img) {
  for (auto& v : img.pixels()) v = std::clamp(v, 0.0f, 1.0f);
}

// Separable Gaussian blur of a single-channel field with reflect padding.
std::vector<double> GaussianSmooth(const std::vector<double>& field, std::size_t h,
                                   std::size_t w, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : kernel) v /= total;

  const auto sh = static_cast<std::ptrdiff_t>(h);
  const auto sw = static_cast<std::ptrdiff_t>(w);
  std::vector<double> tmp(field.size()), out(field.size());
  for (std::ptrdiff_t y = 0; y < sh; ++y) {
    for (std::ptrdiff_t x = 0; x < sw; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               field[static_cast<std::size_t>(y * sw + Reflect(x + k, sw))];
      }
      tmp[static_cast<std::size_t>(y * sw + x)] = acc;
    }
  }
  for (std::ptrdiff_t y = 0; y < sh; ++y) {
    for (std::ptrdiff_t x = 0; x < sw; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] *
               tmp[static_cast<std::size_t>(Reflect(y + k, sh) * sw + x)];
      }
      out[static_cast<std::size_t>(y * sw + x)] = acc;
    }
  }
  return out;
}

void CheckImage(const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw Error(Errc::kUnsupportedImage,
                "expected 1 or 3 channels, got " + std::to_string(image.channels()));
  }
  if (image.width() == 0 || image.height() == 0) {
    throw Error(Errc::kUnsupportedImage, "empty image");
  }
}

}  // namespace

Image ShiftBrightness(const Image& image, double delta, bool clamp) {
  Image out = image;
  for (auto& v : out.pixels()) v = static_cast<float>(v + delta);
  if (clamp) Clamp(out);
  return out;
}

Image MotionBlur(const Image& image, int length, double angle_deg) {
  if (length < 1) throw Error(Errc::kBadParameter, "blur length must be >= 1");
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(theta);
  const double dy = -std::sin(theta);  // image rows grow downwards
  Image out(image.height(), image.width(), image.channels());
  const double half = 0.5 * (length - 1);
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      for (std::size_t c = 0; c < image.channels(); ++c) {
        double acc = 0.0;
        for (int s = 0; s < length; ++s) {
          const double t = s - half;
          acc += Bilinear(image, static_cast<double>(y) + t * dy, static_cast<double>(x) + t * dx, c);
        }
        out.at(y, x, c) = static_cast<float>(acc / length);
      }
    }
  }
  Clamp(out);
  return out;
}

Image ElasticDeform(const Image& image, double alpha, double sigma, std::uint64_t seed) {
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::vector<double> fx(h * w), fy(h * w);
  for (auto& v : fx) v = uniform(rng);
  for (auto& v : fy) v = uniform(rng);
  fx = GaussianSmooth(fx, h, w, sigma);
  fy = GaussianSmooth(fy, h, w, sigma);
  // Scale so that the largest displacement component is exactly alpha pixels.
  double peak = 0.0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    peak = std::max({peak, std::abs(fx[i]), std::abs(fy[i])});
  }
  const double gain = peak > 0.0 ? alpha / peak : 0.0;
  Image out(h, w, image.channels());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      for (std::size_t c = 0; c < image.channels(); ++c) {
        out.at(y, x, c) = Bilinear(image, static_cast<double>(y) + gain * fy[i],
                                   static_cast<double>(x) + gain * fx[i], c);
      }
    }
  }
  Clamp(out);
  return out;
}

Image AddGaussianNoise(const Image& image, double sigma, std::uint64_t seed, bool clamp) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Image out = image;
  for (auto& v : out.pixels()) v = static_cast<float>(v + sigma * gauss(rng));
  if (clamp) Clamp(out);
  return out;
}

Image Corrupt(const Image& image, const CorruptionSpec& spec, std::string_view image_id) {
  CheckImage(image);
  const double strength = CorruptionStrength(spec.kind, spec.level);
  const std::uint64_t stream =
      DeriveSeed(spec.seed, {HashString(image_id), static_cast<std::uint64_t>(spec.kind)});
  switch (spec.kind) {
    case CorruptionKind::kBrightnessUp:
    case CorruptionKind::kBrightnessDown:
      return ShiftBrightness(image, strength);
    case CorruptionKind::kMotionBlur:
      return MotionBlur(image, static_cast<int>(strength), kMotionBlurAngleDeg);
    case CorruptionKind::kElastic:
      return ElasticDeform(image, strength, kElasticSigma, stream);
    case CorruptionKind::kGaussianNoise:
      return AddGaussianNoise(image, strength, stream);
  }
  return image;
}

std::string CorruptedId(std::string_view id, CorruptionKind kind, int level) {
  return std::string(id) + "~" + std::string(CorruptionName(kind)) + "~" + std::to_string(level);
}

// --- splits ----------------------------------------------------------------

const std::vector<SplitPreset>& BuiltinPresets() {
  static const std::vector<SplitPreset> presets = [] {
    std::string last_ten_batches = "batch in {41,42,43,44,45,46,47,48,49,50}";
    return std::vector<SplitPreset>{
        {"mskcc-acq", "dermoscopy", StudyKind::kAcq, Predicate::Parse("site=MSKCC")},
        {"hcb-acq", "dermoscopy", StudyKind::kAcq, Predicate::Parse("site=HCB")},
        {"keratosis-man", "dermoscopy", StudyKind::kMan,
         Predicate::Parse("subclass in {\"keratosis-like\", \"actinic keratosis\"}")},
        {"nih14-acq", "chest-xray", StudyKind::kAcq, Predicate::Parse("dataset=NIH14")},
        {"chexpert-acq", "chest-xray", StudyKind::kAcq, Predicate::Parse("dataset=CheXpert")},
        {"batch-acq", "fc-microscopy", StudyKind::kAcq, Predicate::Parse(last_ten_batches)},
        {"spiculation-man", "lidc", StudyKind::kMan, Predicate::Parse("spiculation > 2")},
        {"texture-man", "lidc", StudyKind::kMan, Predicate::Parse("texture < 3")},
    };
  }();
  return presets;
}

const SplitPreset& FindPreset(std::string_view name) {
  for (const auto& p : BuiltinPresets()) {
    if (p.name == name || p.family + "-" + p.name == name) return p;
  }
  throw Error(Errc::kUnknownEntity, "no split preset named '" + std::string(name) + "'");
}

SplitResult ApplySplit(InferenceBundle& bundle, const SplitPreset& preset) {
  BundleManifest& m = bundle.manifest;
  for (const auto& tag : preset.target.ReferencedTags()) {
    if (!m.FindTag(tag)) {
      throw Error(Errc::kMissingTag, "preset '" + preset.name + "' needs tag '" + tag + "'");
    }
  }
  for (const auto& run : bundle.runs) {
    for (const auto& tag : preset.target.ReferencedTags()) {
      if (!run.meta.TagIndex(tag)) {
        throw Error(Errc::kMissingTag, "metadata.csv lacks column '" + tag + "'");
      }
    }
  }
  auto domain = std::find_if(m.meta_schema.begin(), m.meta_schema.end(),
                             [](const MetaTagSchema& t) { return t.name == "domain"; });
  if (domain == m.meta_schema.end()) {
    m.meta_schema.push_back({"domain", {"source", "target"}});
  } else if (!domain->values.empty()) {
    for (const char* v : {"source", "target"}) {
      if (!domain->Allows(v)) domain->values.emplace_back(v);
    }
  }

  SplitResult result;
  for (std::size_t r = 0; r < bundle.runs.size(); ++r) {
    for (std::size_t i = 0; i < bundle.runs[r].size(); ++i) {
      const bool target = preset.target.Evaluate(bundle.Lookup(r, i));
      bundle.runs[r].meta.Set(i, "domain", target ? "target" : "source");
      if (r == 0) ++(target ? result.target : result.source);
    }
  }

  const MetaTagSchema* shift = m.FindTag("shift_kind");
  const std::string clean =
      (shift && !shift->values.empty() && shift->Allows("none")) ? " && shift_kind=none" : "";
  const std::string expr = "(" + preset.target.text() + ")";
  result.studies.push_back({preset.name + "-source", StudyKind::kIid,
                            Predicate::Parse("!" + expr + clean)});
  result.studies.push_back({preset.name + "-target", preset.kind, Predicate::Parse(expr + clean)});
  return result;
}

}  // namespace sflens
