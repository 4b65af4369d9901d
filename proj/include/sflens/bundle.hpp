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

#ifndef SFLENS_BUNDLE_HPP_
#define SFLENS_BUNDLE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sflens/core.hpp"
#include "sflens/study.hpp"

namespace sflens {

/// One metadata column. An empty `values` list means free-form values.
struct MetaTagSchema {
  std::string name;
  std::vector<std::string> values;

  bool Allows(std::string_view value) const;
};

/// Contents of manifest.json. Shapes of all tensor files live here only.
struct BundleManifest {
  int schema_version = 1;
  std::string name;
  std::size_t n = 0;            // records per run
  std::size_t num_classes = 0;  // K
  std::size_t mcd_samples = 0;  // T, 0 when no MCD stacks are present
  std::size_t latent_dim = 0;   // d
  std::vector<std::string> channels;
  std::vector<MetaTagSchema> meta_schema;
  std::optional<std::string> image_dir;
  std::size_t runs = 1;
  bool dg_logits = false;  // dg_logits.f32 with K+1 columns per record

  const MetaTagSchema* FindTag(std::string_view tag) const;
  bool HasChannel(std::string_view channel) const;
  void Validate() const;
};

std::string ManifestToJson(const BundleManifest& manifest);
BundleManifest ManifestFromJson(const std::string& text);

/// Record metadata: one row per record, one column per tag.
class MetadataTable {
 public:
  MetadataTable() = default;
  MetadataTable(std::vector<std::string> tags, std::size_t rows);

  std::size_t rows() const { return rows_; }
  const std::vector<std::string>& tags() const { return tags_; }
  std::optional<std::size_t> TagIndex(std::string_view tag) const;

  std::string_view Get(std::size_t row, std::size_t column) const {
    return cells_[row * tags_.size() + column];
  }
  std::optional<std::string_view> Get(std::size_t row, std::string_view tag) const;
  /// Adds the column when it does not exist yet (empty for other rows).
  void Set(std::size_t row, std::string_view tag, std::string value);

 private:
  std::vector<std::string> tags_;
  std::vector<std::string> cells_;
  std::size_t rows_ = 0;
};

/// Arrays of one training-seed replica. All tensors are row-major.
struct RunData {
  std::vector<std::string> ids;
  std::vector<ClassIndex> labels;
  std::vector<float> logits;      // n x K
  std::vector<float> mcd_logits;  // n x T x K, empty when T == 0
  std::vector<float> latents;     // n x d
  std::vector<float> dg_logits;   // n x (K + 1), empty when absent
  std::map<std::string, std::vector<float>, std::less<>> ext_conf;
  MetadataTable meta;

  std::size_t size() const { return ids.size(); }
  std::optional<std::size_t> Find(std::string_view id) const;
  void RebuildIndex();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

/// Read-only view of one record.
struct RecordView {
  std::string_view id;
  ClassIndex label = 0;
  std::span<const float> logits;
  std::span<const float> mcd;  // T x K, empty without MCD
  std::span<const float> latent;
  std::span<const float> dg;  // K + 1, empty without DG head
  const MetadataTable* meta = nullptr;
  std::size_t row = 0;

  std::optional<std::string_view> Tag(std::string_view tag) const {
    return meta->Get(row, tag);
  }
  ClassIndex prediction() const { return Predict(logits); }
  int residual() const { return Residual(logits, label); }
};

struct InferenceBundle {
  BundleManifest manifest;
  std::vector<RunData> runs;
  std::filesystem::path root;  // empty for bundles that only live in memory

  RecordView Record(std::size_t run, std::size_t i) const;
  /// Metadata lookup that also resolves the pseudo-tags `id`, `label`
  /// and `pred`.
  TagLookup Lookup(std::size_t run, std::size_t i) const;
  /// Schema tags plus the pseudo-tags.
  std::vector<std::string> KnownTags() const;
  /// Image path of a record, if the bundle has an image directory.
  std::optional<std::filesystem::path> ImagePath(std::string_view id) const;
};

/// Loads and fully validates a bundle directory.
InferenceBundle LoadBundle(const std::filesystem::path& dir);

/// Writes manifest.json and per-run tensor files.
void WriteBundle(const InferenceBundle& bundle, const std::filesystem::path& dir);

/// Checks the in-memory invariants LoadBundle enforces on disk content.
void ValidateBundle(const InferenceBundle& bundle);

/// Rewrites only the metadata.csv files and manifest (used by split tagging).
void WriteBundleMetadata(const InferenceBundle& bundle,
                         const std::filesystem::path& dir);

std::vector<std::size_t> SelectRecords(const InferenceBundle& bundle,
                                       std::size_t run,
                                       const Predicate& predicate);

/// Built-in studies derived from the bundle's tags, overlaid with the
/// bundle's studies.json (entries there win on name clashes).
std::vector<StudyDefinition> BundleStudies(const InferenceBundle& bundle);
std::vector<StudyDefinition> DefaultStudies(const InferenceBundle& bundle);

/// Merges `studies` into <bundle root>/studies.json.
void SaveBundleStudies(const std::filesystem::path& dir,
                       const std::vector<StudyDefinition>& studies);

// --- synthetic fixtures ----------------------------------------------------

struct SyntheticSpec {
  std::size_t n = 1000;  // base records per run
  std::size_t num_classes = 2;
  std::size_t latent_dim = 16;
  std::size_t mcd_samples = 8;
  double class_separation = 8.0;
  double shift_offset = 0.0;
  std::uint64_t seed = 0;
  double target_fraction = 0.5;
  std::size_t runs = 1;
  /// Source records that get five corrupted variants each (appended).
  std::size_t variants = 0;
  double logit_noise = 0.5;
  double mcd_noise = 1.0;
  bool images = false;
  std::string name = "synthetic";
};

/// Gaussian-blob fixture: class k is centred at (separation / sqrt 2) e_k, so
/// every pair of class means is `class_separation` apart. Target-domain
/// records are moved by `shift_offset` towards the next class's mean.
InferenceBundle GenerateSyntheticBundle(const SyntheticSpec& spec);

/// Writes <id>.png images for a synthetic bundle into dir/images.
void WriteSyntheticImages(const InferenceBundle& bundle,
                          const std::filesystem::path& dir);

// --- LIDC label rule -------------------------------------------------------

enum class NoduleLabel { kBenign, kMalignant };

/// Malignant iff the mean of the raters' malignancy scores (1..5) exceeds 2.
NoduleLabel DeriveLidcLabel(std::span<const double> ratings);

// --- raw tensor helpers ----------------------------------------------------

std::vector<float> ReadF32File(const std::filesystem::path& path,
                               std::size_t expected_count,
                               std::size_t row_width);
void WriteF32File(const std::filesystem::path& path, std::span<const float> values);
std::vector<std::uint32_t> ReadU32File(const std::filesystem::path& path,
                                       std::size_t expected_count);
void WriteU32File(const std::filesystem::path& path,
                  std::span<const std::uint32_t> values);

std::string ReadTextFile(const std::filesystem::path& path);
void WriteTextFile(const std::filesystem::path& path, std::string_view text);

std::vector<std::vector<std::string>> ParseCsv(std::string_view text);
std::string CsvEscape(std::string_view field);

}  // namespace sflens

#endif  // SFLENS_BUNDLE_HPP_
