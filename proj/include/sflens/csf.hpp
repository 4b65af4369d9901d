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

#ifndef SFLENS_CSF_HPP_
#define SFLENS_CSF_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sflens/bundle.hpp"

namespace sflens {

// Confidence scoring functions. Every score follows "higher = more
// confident"; entropies are therefore negated. Natural logarithms.

/// Max-subtracted softmax, computed in double precision.
std::vector<double> Softmax(std::span<const float> logits);

/// Maximum softmax response.
double Msr(std::span<const float> logits);

/// Negated predictive entropy of the softmax, in [-ln K, 0].
double PredictiveEntropyConfidence(std::span<const float> logits);

/// Shannon entropy with 0 ln 0 := 0.
double Entropy(std::span<const double> probabilities);

struct McdConfidence {
  double msr = 0.0;  // max of the mean softmax
  double pe = 0.0;   // -H(mean softmax)
  double ee = 0.0;   // -mean_t H(softmax_t)
};

/// `stack` is T x K row-major with T >= 1.
McdConfidence McdChannels(std::span<const float> stack, std::size_t num_classes);

/// DeepGamblers: 1 - softmax(aux)[K], where `aux` holds K + 1 logits.
double DgResConfidence(std::span<const float> aux_logits, std::size_t num_classes);

enum class ChannelKind { kMsr, kPe, kMcdMsr, kMcdPe, kMcdEe, kDgRes, kExternal };

struct ChannelId {
  ChannelKind kind = ChannelKind::kMsr;
  std::string external;  // channel name for kExternal

  /// "msr", "pe", "mcd-msr", "mcd-pe", "mcd-ee", "dg-res" or "ext:<name>".
  static ChannelId Parse(std::string_view name);
  std::string Name() const;

  friend bool operator==(const ChannelId&, const ChannelId&) = default;
};

struct ConfidenceChannel {
  std::string name;
  std::vector<double> scores;
};

/// Channels the bundle can provide, in a stable order.
std::vector<ChannelId> AvailableChannels(const BundleManifest& manifest);

/// Throws UnknownChannel when the bundle lacks the inputs for `id`.
void RequireChannel(const BundleManifest& manifest, const ChannelId& id);

/// Scores for the given records of one run (all records when empty).
ConfidenceChannel ComputeChannel(const InferenceBundle& bundle, std::size_t run,
                                 const ChannelId& id,
                                 std::span<const std::size_t> records = {});

/// Pass-through of a declared external channel, named "ext:<name>".
ConfidenceChannel ExternalChannel(const InferenceBundle& bundle, std::size_t run,
                                  std::string_view name);

}  // namespace sflens

#endif  // SFLENS_CSF_HPP_
