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

#ifndef SFLENS_CORE_HPP_
#define SFLENS_CORE_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace sflens {

using ClassIndex = std::uint32_t;

/// Argmax over the class logits; ties go to the lowest class index.
ClassIndex Predict(std::span<const float> logits);

/// 1 if the prediction is wrong, 0 otherwise.
inline int Residual(std::span<const float> logits, ClassIndex label) {
  return Predict(logits) != label ? 1 : 0;
}

/// Failure-detection outcome of one prediction at threshold `tau`.
/// "Positive" means the CSF flags a failure (confidence < tau), so a wrong
/// prediction that is not flagged is a false negative: a silent failure.
enum class DetectionOutcome { kTP, kFP, kTN, kFN };

std::string_view OutcomeName(DetectionOutcome outcome);

constexpr DetectionOutcome ClassifyDetection(bool correct, double confidence,
                                             double tau) {
  const bool flagged = confidence < tau;
  if (correct) return flagged ? DetectionOutcome::kFP : DetectionOutcome::kTN;
  return flagged ? DetectionOutcome::kTP : DetectionOutcome::kFN;
}

struct OutcomeCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void Add(DetectionOutcome outcome);
};

/// Counts detection outcomes over aligned residual/confidence arrays.
OutcomeCounts CountOutcomes(std::span<const std::uint8_t> residuals,
                            std::span<const double> confidences, double tau);

/// Confidence of the record sitting at `coverage` (default 95%) when records
/// are ranked most-confident first. Records with confidence >= the returned
/// value make up at least that fraction of the study.
double DefaultTau(std::span<const double> confidences, double coverage = 0.95);

}  // namespace sflens

#endif  // SFLENS_CORE_HPP_
