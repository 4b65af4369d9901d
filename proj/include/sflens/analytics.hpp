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

#ifndef SFLENS_ANALYTICS_HPP_
#define SFLENS_ANALYTICS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sflens/bundle.hpp"
#include "sflens/csf.hpp"
#include "sflens/kmeans.hpp"
#include "sflens/pca.hpp"
#include "sflens/shift.hpp"

namespace sflens {

// --- embedding -------------------------------------------------------------

struct EmbedParams {
  std::size_t pca_dims = 50;
  double perplexity = 30.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  std::size_t run = 0;
  unsigned threads = 1;  // does not change the result
};

struct EmbeddingFrame {
  std::string key;    // cache key, see EmbeddingKey
  std::string scope;  // study name or "all"
  EmbedParams params;
  std::size_t pca_components = 0;
  double learning_rate = 0.0;
  bool barnes_hut = false;
  std::vector<std::string> ids;
  std::vector<std::size_t> records;  // row indices into the run
  std::vector<float> coords;         // n x 3
  std::vector<std::pair<int, double>> objective;

  std::size_t size() const { return ids.size(); }
  RowMatrix Coordinates() const;
};

/// Records of `run` selected by a scope: "all" (or "*"), a study name, or a
/// predicate. Throws UnknownEntity for names that are neither.
std::vector<std::size_t> ResolveScope(const InferenceBundle& bundle, std::size_t run,
                                      std::string_view scope);

/// Hex digest of the scope members and every parameter except `threads`.
std::string EmbeddingKey(const InferenceBundle& bundle, std::span<const std::size_t> records,
                         const EmbedParams& params);

/// PCA to `pca_dims` followed by 3-D t-SNE, fit on all scope members at once.
EmbeddingFrame EmbedScope(const InferenceBundle& bundle, std::string_view scope,
                          const EmbedParams& params = {},
                          std::function<void(int)> progress = {});

/// Writes <dir>/<key>.json and <dir>/<key>.coords.f32.
void SaveEmbedding(const EmbeddingFrame& frame, const std::filesystem::path& dir);
std::optional<EmbeddingFrame> LoadEmbedding(const std::filesystem::path& dir,
                                            std::string_view key);
std::string EmbeddingToJson(const EmbeddingFrame& frame);

/// Frame from <bundle>/embeddings when cached there, otherwise computed and
/// saved. `computed` reports which path was taken.
EmbeddingFrame CachedEmbedding(const InferenceBundle& bundle, std::string_view scope,
                               const EmbedParams& params = {}, bool* computed = nullptr);
EmbeddingFrame EmbeddingFromJson(const std::string& text);

// --- colouring -------------------------------------------------------------

enum class ColorScheme { kClass, kDomain, kClassifierConfusion, kCsfConfusion };

std::string_view ColorSchemeName(ColorScheme scheme);
ColorScheme ParseColorScheme(std::string_view name);

struct ColorLabels {
  std::vector<std::string> labels;  // one per frame row
  std::optional<double> tau;        // csf-confusion only
  std::vector<double> confidences;  // csf-confusion only
};

/// Per-record labels: class index, domain (with shift kind when shifted),
/// "gt<label>-pred<prediction>", or the detection outcome at tau (default:
/// confidence at 95% coverage of the frame).
ColorLabels ColorFrame(const InferenceBundle& bundle, const EmbeddingFrame& frame,
                       ColorScheme scheme, const ChannelId& channel = {},
                       std::optional<double> tau = std::nullopt);

// --- concept clusters ------------------------------------------------------

struct ConceptCluster {
  std::string concept_name;
  std::string predicate;
  RowMatrix centers;                              // k x 3
  std::vector<std::string> representative_ids;   // closest member per centre
  std::vector<std::size_t> sizes;
  std::vector<std::string> member_ids;
  std::vector<std::size_t> assignment;  // cluster per member
};

/// k-means over the embedded members of a concept. The concept is a study
/// name or a predicate; k is capped at the member count.
ConceptCluster ClusterConcept(const InferenceBundle& bundle, const EmbeddingFrame& frame,
                              std::string_view concept_spec, std::size_t k = kDefaultClusters,
                              std::uint64_t seed = 0);

// --- failures --------------------------------------------------------------

struct SilentFailure {
  std::string id;
  double confidence = 0.0;
  ClassIndex prediction = 0;
  ClassIndex label = 0;
  std::optional<std::string> image_ref;
};

/// Wrong predictions among `records`, most confident first (ties by id).
std::vector<SilentFailure> MineSilentFailures(const InferenceBundle& bundle, std::size_t run,
                                              std::span<const std::size_t> records,
                                              const ChannelId& channel, std::size_t top = 2);

struct SweepPoint {
  int level = 0;
  std::string id;
  ClassIndex prediction = 0;
  ClassIndex label = 0;
  double confidence = 0.0;
};

/// Prediction and confidence of one record over intensity levels 0..5. The
/// variants are found by origin/shift_kind/intensity tags, falling back to
/// ids of the form <id>~<kind>~<level>.
std::vector<SweepPoint> IntensitySweep(const InferenceBundle& bundle, std::size_t run,
                                       std::string_view id, std::string_view kind,
                                       const ChannelId& channel);

enum class FailureLocality { kBorder, kOpposingCenter, kOutlier };
std::string_view FailureLocalityName(FailureLocality locality);

struct ClassGeometry {
  RowMatrix centers;                    // all centres, grouped by class
  std::vector<ClassIndex> center_class;
  std::vector<double> p95;     // member-to-own-centre distance percentiles
  std::vector<double> median;
};

/// Per-class k-means in the embedding; thresholds per centre.
ClassGeometry BuildClassGeometry(const RowMatrix& coords, std::span<const ClassIndex> labels,
                                 std::size_t num_classes, std::size_t centers_per_class = 1,
                                 std::uint64_t seed = 0);

FailureLocality ClassifyFailure(const ClassGeometry& geometry,
                                const Eigen::Ref<const Eigen::RowVectorXd>& point,
                                ClassIndex label, ClassIndex prediction);

struct LocatedFailure {
  std::string id;
  ClassIndex label = 0;
  ClassIndex prediction = 0;
  FailureLocality locality = FailureLocality::kBorder;
};

/// Locality of every wrong prediction in the frame.
std::vector<LocatedFailure> LocateFailures(const InferenceBundle& bundle,
                                           const EmbeddingFrame& frame,
                                           std::size_t centers_per_class = 1);

}  // namespace sflens

#endif  // SFLENS_ANALYTICS_HPP_
