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

#include "sflens/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "sflens/error.hpp"

namespace sflens {

ClassIndex Predict(std::span<const float> logits) {
  ClassIndex best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = static_cast<ClassIndex>(k);
  }
  return best;
}

std::string_view OutcomeName(DetectionOutcome outcome) {
  switch (outcome) {
    case DetectionOutcome::kTP: return "TP";
    case DetectionOutcome::kFP: return "FP";
    case DetectionOutcome::kTN: return "TN";
    case DetectionOutcome::kFN: return "FN";
  }
  return "?";
}

void OutcomeCounts::Add(DetectionOutcome outcome) {
  switch (outcome) {
    case DetectionOutcome::kTP: ++tp; break;
    case DetectionOutcome::kFP: ++fp; break;
    case DetectionOutcome::kTN: ++tn; break;
    case DetectionOutcome::kFN: ++fn; break;
  }
}

OutcomeCounts CountOutcomes(std::span<const std::uint8_t> residuals,
                            std::span<const double> confidences, double tau) {
  if (residuals.size() != confidences.size()) {
    throw Error(Errc::kShapeMismatch, "residuals and confidences differ in length");
  }
  if (!std::isfinite(tau)) throw Error(Errc::kBadParameter, "tau must be finite");
  OutcomeCounts counts;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    counts.Add(ClassifyDetection(residuals[i] == 0, confidences[i], tau));
  }
  return counts;
}

double DefaultTau(std::span<const double> confidences, double coverage) {
  if (confidences.empty()) throw Error(Errc::kEmptyStudy, "no confidences");
  if (!(coverage > 0.0 && coverage <= 1.0)) {
    throw Error(Errc::kBadParameter, "coverage must lie in (0, 1]");
  }
  std::vector<double> sorted(confidences.begin(), confidences.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(coverage * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

}  // namespace sflens
