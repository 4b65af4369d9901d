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

#include "sflens/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sflens/error.hpp"
#include "sflens/image.hpp"
#include "sflens/random.hpp"
#include "sflens/shift.hpp"

namespace sflens {

namespace fs = std::filesystem;
using nlohmann::json;

// --- manifest --------------------------------------------------------------

bool MetaTagSchema::Allows(std::string_view value) const {
  return values.empty() ||
         std::find(values.begin(), values.end(), value) != values.end();
}

const MetaTagSchema* BundleManifest::FindTag(std::string_view tag) const {
  for (const auto& t : meta_schema) {
    if (t.name == tag) return &t;
  }
  return nullptr;
}

bool BundleManifest::HasChannel(std::string_view channel) const {
  return std::find(channels.begin(), channels.end(), channel) != channels.end();
}

void BundleManifest::Validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::kInvalidSpec, "manifest: " + what); };
  if (schema_version != 1) bad("unsupported schema_version " + std::to_string(schema_version));
  if (n < 1) bad("n must be >= 1");
  if (num_classes < 1) bad("K must be >= 1");
  if (latent_dim < 1) bad("d must be >= 1");
  if (runs < 1) bad("runs must be >= 1");
  std::set<std::string> seen;
  for (const auto& t : meta_schema) {
    if (t.name.empty() || t.name == "id") bad("invalid tag name '" + t.name + "'");
    if (!seen.insert(t.name).second) bad("duplicate tag '" + t.name + "'");
  }
  std::set<std::string> chans;
  for (const auto& c : channels) {
    if (c.empty() || c.find_first_of("/\\") != std::string::npos) bad("invalid channel name '" + c + "'");
    if (!chans.insert(c).second) bad("duplicate channel '" + c + "'");
  }
}

std::string ManifestToJson(const BundleManifest& m) {
  json schema = json::array();
  for (const auto& t : m.meta_schema) schema.push_back({{"name", t.name}, {"values", t.values}});
  json doc = {{"schema_version", m.schema_version},
              {"name", m.name},
              {"n", m.n},
              {"K", m.num_classes},
              {"T", m.mcd_samples},
              {"d", m.latent_dim},
              {"channels", m.channels},
              {"meta_schema", schema},
              {"runs", m.runs},
              {"dg_logits", m.dg_logits}};
  doc["image_dir"] = m.image_dir ? json(*m.image_dir) : json(nullptr);
  return doc.dump(2) + "\n";
}

BundleManifest ManifestFromJson(const std::string& text) {
  BundleManifest m;
  try {
    const json doc = json::parse(text);
    m.schema_version = doc.at("schema_version").get<int>();
    m.name = doc.value("name", std::string());
    m.n = doc.at("n").get<std::size_t>();
    m.num_classes = doc.at("K").get<std::size_t>();
    m.mcd_samples = doc.value("T", std::size_t{0});
    m.latent_dim = doc.at("d").get<std::size_t>();
    m.channels = doc.value("channels", std::vector<std::string>{});
    for (const auto& t : doc.value("meta_schema", json::array())) {
      m.meta_schema.push_back({t.at("name").get<std::string>(),
                               t.value("values", std::vector<std::string>{})});
    }
    if (doc.contains("image_dir") && !doc["image_dir"].is_null()) {
      m.image_dir = doc["image_dir"].get<std::string>();
    }
    m.runs = doc.value("runs", std::size_t{1});
    m.dg_logits = doc.value("dg_logits", false);
  } catch (const json::exception& e) {
    throw Error(Errc::kParseError, std::string("manifest.json: ") + e.what());
  }
  m.Validate();
  return m;
}

// --- metadata table --------------------------------------------------------

MetadataTable::MetadataTable(std::vector<std::string> tags, std::size_t rows)
    : tags_(std::move(tags)), cells_(tags_.size() * rows), rows_(rows) {}

std::optional<std::size_t> MetadataTable::TagIndex(std::string_view tag) const {
  for (std::size_t c = 0; c < tags_.size(); ++c) {
    if (tags_[c] == tag) return c;
  }
  return std::nullopt;
}

std::optional<std::string_view> MetadataTable::Get(std::size_t row,
                                                   std::string_view tag) const {
  auto c = TagIndex(tag);
  if (!c) return std::nullopt;
  return Get(row, *c);
}

void MetadataTable::Set(std::size_t row, std::string_view tag, std::string value) {
  auto c = TagIndex(tag);
  if (!c) {
    const std::size_t old_cols = tags_.size();
    std::vector<std::string> grown(rows_ * (old_cols + 1));
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t k = 0; k < old_cols; ++k) {
        grown[r * (old_cols + 1) + k] = std::move(cells_[r * old_cols + k]);
      }
    }
    cells_ = std::move(grown);
    tags_.emplace_back(tag);
    c = old_cols;
  }
  cells_[row * tags_.size() + *c] = std::move(value);
}

// --- run data / bundle -----------------------------------------------------

std::optional<std::size_t> RunData::Find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void RunData::RebuildIndex() {
  index_.clear();
  index_.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!index_.emplace(ids[i], i).second) {
      throw Error(Errc::kDuplicateId, "id '" + ids[i] + "' occurs twice", i);
    }
  }
}

RecordView InferenceBundle::Record(std::size_t run, std::size_t i) const {
  const RunData& r = runs.at(run);
  const std::size_t k = manifest.num_classes;
  const std::size_t t = manifest.mcd_samples;
  const std::size_t d = manifest.latent_dim;
  RecordView v;
  v.id = r.ids[i];
  v.label = r.labels[i];
  v.logits = std::span<const float>(r.logits).subspan(i * k, k);
  if (!r.mcd_logits.empty()) v.mcd = std::span<const float>(r.mcd_logits).subspan(i * t * k, t * k);
  v.latent = std::span<const float>(r.latents).subspan(i * d, d);
  if (!r.dg_logits.empty()) v.dg = std::span<const float>(r.dg_logits).subspan(i * (k + 1), k + 1);
  v.meta = &r.meta;
  v.row = i;
  return v;
}

TagLookup InferenceBundle::Lookup(std::size_t run, std::size_t i) const {
  const RunData& r = runs.at(run);
  return [this, &r, run, i, label = std::string(), pred = std::string()](
             std::string_view tag) mutable -> std::optional<std::string_view> {
    if (tag == "id") return r.ids[i];
    if (tag == "label") {
      label = std::to_string(r.labels[i]);
      return label;
    }
    if (tag == "pred") {
      pred = std::to_string(Record(run, i).prediction());
      return pred;
    }
    return r.meta.Get(i, tag);
  };
}

std::vector<std::string> InferenceBundle::KnownTags() const {
  std::vector<std::string> tags{"id", "label", "pred"};
  for (const auto& t : manifest.meta_schema) tags.push_back(t.name);
  return tags;
}

std::optional<fs::path> InferenceBundle::ImagePath(std::string_view id) const {
  if (!manifest.image_dir || root.empty()) return std::nullopt;
  return root / *manifest.image_dir / (std::string(id) + ".png");
}

// --- raw files -------------------------------------------------------------

namespace {

template <typename T>
void FromLittleEndian(std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) |
             ((bits >> 8) & 0xff00u) | (bits >> 24);
      v = std::bit_cast<T>(bits);
    }
  }
}

std::vector<char> ReadBytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kMissingFile, path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void WriteBytes(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIoError, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw Error(Errc::kIoError, "short write to " + path.string());
}

template <typename T>
std::vector<T> ReadRaw(const fs::path& path, std::size_t expected_count) {
  if (!fs::exists(path)) throw Error(Errc::kMissingFile, path.string());
  const std::vector<char> bytes = ReadBytes(path);
  if (bytes.size() != expected_count * sizeof(T)) {
    throw Error(Errc::kShapeMismatch,
                path.filename().string() + " holds " + std::to_string(bytes.size()) +
                    " bytes, manifest declares " + std::to_string(expected_count) +
                    " values (" + std::to_string(expected_count * sizeof(T)) + " bytes)");
  }
  std::vector<T> values(expected_count);
  if (!bytes.empty()) std::memcpy(values.data(), bytes.data(), bytes.size());
  FromLittleEndian(values);
  return values;
}

template <typename T>
void WriteRaw(const fs::path& path, std::span<const T> values) {
  std::vector<T> copy(values.begin(), values.end());
  FromLittleEndian(copy);  // byte swap is its own inverse
  WriteBytes(path, copy.data(), copy.size() * sizeof(T));
}

void CheckFinite(std::span<const float> values, std::size_t row_width,
                 const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(Errc::kNonFiniteValue, what, i / row_width);
    }
  }
}

}  // namespace

std::vector<float> ReadF32File(const fs::path& path, std::size_t expected_count,
                               std::size_t row_width) {
  auto values = ReadRaw<float>(path, expected_count);
  CheckFinite(values, std::max<std::size_t>(row_width, 1), path.filename().string());
  return values;
}

void WriteF32File(const fs::path& path, std::span<const float> values) {
  WriteRaw<float>(path, values);
}

std::vector<std::uint32_t> ReadU32File(const fs::path& path, std::size_t expected_count) {
  return ReadRaw<std::uint32_t>(path, expected_count);
}

void WriteU32File(const fs::path& path, std::span<const std::uint32_t> values) {
  WriteRaw<std::uint32_t>(path, values);
}

std::string ReadTextFile(const fs::path& path) {
  const auto bytes = ReadBytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void WriteTextFile(const fs::path& path, std::string_view text) {
  WriteBytes(path, text.data(), text.size());
}

// RFC 4180: quoted fields may contain separators, doubled quotes and newlines.
std::vector<std::vector<std::string>> ParseCsv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        row.push_back(std::move(field));
        field.clear();
        rows.push_back(std::move(row));
        row.clear();
        field_started = false;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (quoted) throw Error(Errc::kParseError, "unterminated quoted CSV field");
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string CsvEscape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

// --- load / write ----------------------------------------------------------

namespace {

fs::path RunDir(const fs::path& root, std::size_t run) {
  return root / ("run_" + std::to_string(run));
}

MetadataTable ReadMetadata(const fs::path& path, const BundleManifest& m,
                           std::vector<std::string>& ids) {
  if (!fs::exists(path)) throw Error(Errc::kMissingFile, path.string());
  auto rows = ParseCsv(ReadTextFile(path));
  if (rows.empty() || rows.front().empty() || rows.front().front() != "id") {
    throw Error(Errc::kParseError, path.string() + ": header must start with 'id'");
  }
  std::vector<std::string> tags(rows.front().begin() + 1, rows.front().end());
  std::vector<const MetaTagSchema*> schema;
  for (const auto& tag : tags) {
    const MetaTagSchema* s = m.FindTag(tag);
    if (!s) throw Error(Errc::kUnknownMetaTag, "metadata.csv column '" + tag + "' is not in meta_schema");
    schema.push_back(s);
  }
  const std::size_t n_rows = rows.size() - 1;
  if (n_rows != m.n) {
    throw Error(Errc::kShapeMismatch, "metadata.csv has " + std::to_string(n_rows) +
                                          " rows, manifest declares n=" + std::to_string(m.n));
  }
  MetadataTable table(tags, n_rows);
  ids.resize(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    auto& row = rows[r + 1];
    if (row.size() != tags.size() + 1) {
      throw Error(Errc::kShapeMismatch, "metadata.csv row has " + std::to_string(row.size()) +
                                            " fields, expected " + std::to_string(tags.size() + 1), r);
    }
    ids[r] = std::move(row[0]);
    if (ids[r].empty()) throw Error(Errc::kParseError, "empty record id", r);
    for (std::size_t c = 0; c < tags.size(); ++c) {
      if (!schema[c]->Allows(row[c + 1])) {
        throw Error(Errc::kUnknownMetaTag,
                    "value '" + row[c + 1] + "' not allowed for tag '" + tags[c] + "'", r);
      }
      table.Set(r, tags[c], std::move(row[c + 1]));
    }
  }
  return table;
}

std::string MetadataCsv(const RunData& run) {
  std::string out = "id";
  for (const auto& t : run.meta.tags()) out += "," + CsvEscape(t);
  out += "\n";
  for (std::size_t r = 0; r < run.size(); ++r) {
    out += CsvEscape(run.ids[r]);
    for (std::size_t c = 0; c < run.meta.tags().size(); ++c) {
      out += "," + CsvEscape(run.meta.Get(r, c));
    }
    out += "\n";
  }
  return out;
}

std::vector<float> ReadDgLogits(const fs::path& path, const BundleManifest& m) {
  if (!fs::exists(path)) throw Error(Errc::kMissingFile, path.string());
  const auto bytes = fs::file_size(path);
  const std::size_t width = m.num_classes + 1;
  if (bytes != m.n * width * sizeof(float) && bytes % (m.n * sizeof(float)) == 0) {
    throw Error(Errc::kWidthMismatch,
                "dg_logits.f32 has " + std::to_string(bytes / (m.n * sizeof(float))) +
                    " columns, expected K+1=" + std::to_string(width));
  }
  return ReadF32File(path, m.n * width, width);
}

}  // namespace

InferenceBundle LoadBundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(Errc::kMissingFile, manifest_path.string());
  InferenceBundle b;
  b.root = dir;
  b.manifest = ManifestFromJson(ReadTextFile(manifest_path));
  const BundleManifest& m = b.manifest;
  for (std::size_t r = 0; r < m.runs; ++r) {
    const fs::path rd = RunDir(dir, r);
    if (!fs::is_directory(rd)) throw Error(Errc::kMissingFile, rd.string());
    RunData run;
    run.logits = ReadF32File(rd / "logits.f32", m.n * m.num_classes, m.num_classes);
    if (m.mcd_samples > 0) {
      run.mcd_logits = ReadF32File(rd / "mcd_logits.f32", m.n * m.mcd_samples * m.num_classes,
                                   m.mcd_samples * m.num_classes);
    }
    run.latents = ReadF32File(rd / "latents.f32", m.n * m.latent_dim, m.latent_dim);
    const auto labels = ReadU32File(rd / "labels.u32", m.n);
    run.labels.assign(labels.begin(), labels.end());
    for (const auto& ch : m.channels) {
      run.ext_conf[ch] = ReadF32File(rd / ("ext_conf_" + ch + ".f32"), m.n, 1);
    }
    if (m.dg_logits) run.dg_logits = ReadDgLogits(rd / "dg_logits.f32", m);
    run.meta = ReadMetadata(rd / "metadata.csv", m, run.ids);
    b.runs.push_back(std::move(run));
  }
  if (m.image_dir && !fs::is_directory(dir / *m.image_dir)) {
    throw Error(Errc::kMissingFile, (dir / *m.image_dir).string());
  }
  ValidateBundle(b);
  for (auto& run : b.runs) run.RebuildIndex();
  return b;
}

void ValidateBundle(const InferenceBundle& b) {
  const BundleManifest& m = b.manifest;
  m.Validate();
  if (b.runs.size() != m.runs) {
    throw Error(Errc::kShapeMismatch, "bundle holds " + std::to_string(b.runs.size()) +
                                          " runs, manifest declares " + std::to_string(m.runs));
  }
  for (const RunData& run : b.runs) {
    auto expect = [&](std::size_t got, std::size_t want, const char* what) {
      if (got != want) {
        throw Error(Errc::kShapeMismatch, std::string(what) + " holds " + std::to_string(got) +
                                              " values, expected " + std::to_string(want));
      }
    };
    expect(run.ids.size(), m.n, "ids");
    expect(run.labels.size(), m.n, "labels");
    expect(run.logits.size(), m.n * m.num_classes, "logits");
    expect(run.mcd_logits.size(), m.n * m.mcd_samples * m.num_classes, "mcd_logits");
    expect(run.latents.size(), m.n * m.latent_dim, "latents");
    if (m.dg_logits) {
      expect(run.dg_logits.size(), m.n * (m.num_classes + 1), "dg_logits");
    } else {
      expect(run.dg_logits.size(), 0, "dg_logits");
    }
    CheckFinite(run.logits, m.num_classes, "logits");
    CheckFinite(run.mcd_logits, std::max<std::size_t>(1, m.mcd_samples * m.num_classes), "mcd_logits");
    CheckFinite(run.latents, m.latent_dim, "latents");
    CheckFinite(run.dg_logits, m.num_classes + 1, "dg_logits");
    for (const auto& ch : m.channels) {
      auto it = run.ext_conf.find(ch);
      if (it == run.ext_conf.end()) throw Error(Errc::kMissingFile, "ext_conf_" + ch + ".f32");
      expect(it->second.size(), m.n, ("ext_conf_" + ch).c_str());
      CheckFinite(it->second, 1, "ext_conf_" + ch);
    }
    for (std::size_t i = 0; i < run.labels.size(); ++i) {
      if (run.labels[i] >= m.num_classes) {
        throw Error(Errc::kLabelOutOfRange, "label " + std::to_string(run.labels[i]) +
                                                " with K=" + std::to_string(m.num_classes), i);
      }
    }
    if (run.meta.rows() != m.n) {
      throw Error(Errc::kShapeMismatch, "metadata rows differ from n");
    }
    for (std::size_t c = 0; c < run.meta.tags().size(); ++c) {
      const MetaTagSchema* s = m.FindTag(run.meta.tags()[c]);
      if (!s) throw Error(Errc::kUnknownMetaTag, "tag '" + run.meta.tags()[c] + "' not in meta_schema");
      for (std::size_t i = 0; i < m.n; ++i) {
        if (!s->Allows(run.meta.Get(i, c))) {
          throw Error(Errc::kUnknownMetaTag, "value '" + std::string(run.meta.Get(i, c)) +
                                                 "' not allowed for tag '" + s->name + "'", i);
        }
      }
    }
    std::set<std::string_view> seen;
    for (std::size_t i = 0; i < run.ids.size(); ++i) {
      if (!seen.insert(run.ids[i]).second) {
        throw Error(Errc::kDuplicateId, "id '" + run.ids[i] + "' occurs twice", i);
      }
    }
  }
}

void WriteBundle(const InferenceBundle& b, const fs::path& dir) {
  ValidateBundle(b);
  fs::create_directories(dir);
  WriteTextFile(dir / "manifest.json", ManifestToJson(b.manifest));
  for (std::size_t r = 0; r < b.runs.size(); ++r) {
    const RunData& run = b.runs[r];
    const fs::path rd = RunDir(dir, r);
    fs::create_directories(rd);
    WriteF32File(rd / "logits.f32", run.logits);
    if (b.manifest.mcd_samples > 0) WriteF32File(rd / "mcd_logits.f32", run.mcd_logits);
    WriteF32File(rd / "latents.f32", run.latents);
    std::vector<std::uint32_t> labels(run.labels.begin(), run.labels.end());
    WriteU32File(rd / "labels.u32", labels);
    for (const auto& [name, scores] : run.ext_conf) {
      WriteF32File(rd / ("ext_conf_" + name + ".f32"), scores);
    }
    if (b.manifest.dg_logits) WriteF32File(rd / "dg_logits.f32", run.dg_logits);
    WriteTextFile(rd / "metadata.csv", MetadataCsv(run));
  }
  if (b.manifest.image_dir) fs::create_directories(dir / *b.manifest.image_dir);
}

void WriteBundleMetadata(const InferenceBundle& b, const fs::path& dir) {
  ValidateBundle(b);
  WriteTextFile(dir / "manifest.json", ManifestToJson(b.manifest));
  for (std::size_t r = 0; r < b.runs.size(); ++r) {
    WriteTextFile(RunDir(dir, r) / "metadata.csv", MetadataCsv(b.runs[r]));
  }
}

std::vector<std::size_t> SelectRecords(const InferenceBundle& b, std::size_t run,
                                       const Predicate& predicate) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < b.runs.at(run).size(); ++i) {
    if (predicate.Evaluate(b.Lookup(run, i))) out.push_back(i);
  }
  return out;
}

// --- studies ---------------------------------------------------------------

std::vector<StudyDefinition> DefaultStudies(const InferenceBundle& b) {
  const BundleManifest& m = b.manifest;
  const MetaTagSchema* shift = m.FindTag("shift_kind");
  const bool has_clean_marker = shift && shift->Allows("none") && !shift->values.empty();
  const std::string clean = has_clean_marker ? " && shift_kind=none" : "";

  std::vector<StudyDefinition> studies;
  if (m.FindTag("domain")) {
    studies.push_back({"iid", StudyKind::kIid, Predicate::Parse("domain=source" + clean)});
    StudyDefinition target{"target", StudyKind::kAcq, Predicate::Parse("domain=target" + clean)};
    if (!SelectRecords(b, 0, target.predicate).empty()) studies.push_back(std::move(target));
  } else {
    studies.push_back({"iid", StudyKind::kIid,
                       has_clean_marker ? Predicate::Parse("shift_kind=none") : Predicate()});
  }

  if (shift && m.FindTag("intensity")) {
    std::set<std::pair<std::string, int>> variants;
    const RunData& run = b.runs.front();
    const auto kc = run.meta.TagIndex("shift_kind");
    const auto lc = run.meta.TagIndex("intensity");
    if (kc && lc) {
      for (std::size_t i = 0; i < run.size(); ++i) {
        const std::string kind(run.meta.Get(i, *kc));
        int level = 0;
        try {
          level = std::stoi(std::string(run.meta.Get(i, *lc)));
        } catch (...) {
          continue;
        }
        if (kind.empty() || kind == "none" || level <= 0) continue;
        variants.emplace(kind, level);
      }
    }
    for (const auto& [kind, level] : variants) {
      const std::string l = std::to_string(level);
      studies.push_back({"cor-" + kind + "-" + l, StudyKind::kCor,
                         Predicate::Parse("shift_kind=\"" + kind + "\" && intensity=" + l)});
    }
  }
  return studies;
}

std::vector<StudyDefinition> BundleStudies(const InferenceBundle& b) {
  std::vector<StudyDefinition> studies = DefaultStudies(b);
  if (!b.root.empty() && fs::exists(b.root / "studies.json")) {
    for (auto& s : StudiesFromJson(ReadTextFile(b.root / "studies.json"))) {
      auto it = std::find_if(studies.begin(), studies.end(),
                             [&](const StudyDefinition& x) { return x.name == s.name; });
      if (it != studies.end()) {
        *it = std::move(s);
      } else {
        studies.push_back(std::move(s));
      }
    }
  }
  const auto known = b.KnownTags();
  for (const auto& s : studies) CheckStudyTags(s, known);
  return studies;
}

void SaveBundleStudies(const fs::path& dir, const std::vector<StudyDefinition>& studies) {
  std::vector<StudyDefinition> merged;
  if (fs::exists(dir / "studies.json")) merged = StudiesFromJson(ReadTextFile(dir / "studies.json"));
  for (const auto& s : studies) {
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const StudyDefinition& x) { return x.name == s.name; });
    if (it != merged.end()) {
      *it = s;
    } else {
      merged.push_back(s);
    }
  }
  WriteTextFile(dir / "studies.json", StudiesToJson(merged));
}

// --- synthetic fixture -----------------------------------------------------

namespace {

constexpr int kSyntheticBatches = 51;
constexpr int kSyntheticTargetBatches = 10;
constexpr std::string_view kSyntheticCorruption = "brightness_up";

std::string RecordId(std::size_t i, std::size_t n) {
  const int width = static_cast<int>(std::to_string(std::max<std::size_t>(n, 1) - 1).size());
  std::string digits = std::to_string(i);
  const auto pad = static_cast<std::size_t>(std::max(width, 4));
  if (digits.size() < pad) digits.insert(0, pad - digits.size(), '0');
  return "rec-" + digits;
}

void Readout(std::span<const double> x, std::size_t k, double scale, double noise_sd,
             std::mt19937_64& rng, std::span<float> out) {
  // Bayes-optimal linear readout for unit-covariance blobs with means scale*e_j.
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double z = scale * x[j] - 0.5 * scale * scale;
    out[j] = static_cast<float>(z + noise_sd * noise(rng));
  }
}

}  // namespace

InferenceBundle GenerateSyntheticBundle(const SyntheticSpec& spec) {
  const std::size_t k = spec.num_classes;
  const std::size_t d = spec.latent_dim;
  auto invalid = [](const std::string& what) { throw Error(Errc::kInvalidSpec, what); };
  if (k < 2) invalid("K must be >= 2");
  if (spec.n < k) invalid("n must be >= K");
  if (d < k) invalid("d must be >= K (one latent axis per class mean)");
  if (spec.runs < 1) invalid("runs must be >= 1");
  if (spec.variants > spec.n) invalid("variants must not exceed n");
  if (!(spec.target_fraction >= 0.0 && spec.target_fraction <= 1.0)) invalid("target_fraction must lie in [0,1]");
  for (double v : {spec.class_separation, spec.shift_offset, spec.logit_noise, spec.mcd_noise}) {
    if (!std::isfinite(v)) invalid("non-finite generator parameter");
  }
  if (spec.class_separation < 0 || spec.logit_noise < 0 || spec.mcd_noise < 0) {
    invalid("separation and noise levels must be >= 0");
  }

  const double scale = spec.class_separation / std::sqrt(2.0);
  const std::size_t base = spec.n;
  const std::size_t total = base + 5 * spec.variants;

  // Record-level data shared by all runs.
  std::mt19937_64 data_rng(DeriveSeed(spec.seed, {HashString("data")}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<ClassIndex> labels(base);
  for (std::size_t i = 0; i < base; ++i) labels[i] = static_cast<ClassIndex>(i % k);
  std::shuffle(labels.begin(), labels.end(), data_rng);

  std::vector<std::uint8_t> target(base, 0);
  const auto n_target = static_cast<std::size_t>(std::llround(spec.target_fraction * static_cast<double>(base)));
  std::fill_n(target.begin(), n_target, 1);
  std::shuffle(target.begin(), target.end(), data_rng);

  std::uniform_int_distribution<int> source_batch(0, kSyntheticBatches - kSyntheticTargetBatches - 1);
  std::uniform_int_distribution<int> target_batch(kSyntheticBatches - kSyntheticTargetBatches,
                                                  kSyntheticBatches - 1);

  std::vector<double> latents(total * d);
  std::vector<ClassIndex> all_labels(total);
  std::vector<std::string> ids(total);
  MetadataTable meta({"domain", "batch", "shift_kind", "intensity", "origin"}, total);

  // Unit direction from class y's mean towards the next class's mean.
  auto toward_next = [&](ClassIndex y, std::size_t axis) {
    const std::size_t next = (y + 1) % k;
    if (axis == y) return -1.0 / std::sqrt(2.0);
    if (axis == next) return 1.0 / std::sqrt(2.0);
    return 0.0;
  };

  for (std::size_t i = 0; i < base; ++i) {
    const ClassIndex y = labels[i];
    ids[i] = RecordId(i, total);
    all_labels[i] = y;
    const double offset = target[i] ? spec.shift_offset : 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      double mean = (a == y) ? scale : 0.0;
      latents[i * d + a] = mean + gauss(data_rng) + offset * toward_next(y, a);
    }
    meta.Set(i, "domain", target[i] ? "target" : "source");
    meta.Set(i, "batch", std::to_string(target[i] ? target_batch(data_rng) : source_batch(data_rng)));
    meta.Set(i, "shift_kind", "none");
    meta.Set(i, "intensity", "0");
    meta.Set(i, "origin", ids[i]);
  }

  // Corrupted variants drift towards the next class with growing intensity.
  std::size_t next_row = base;
  std::size_t made = 0;
  for (std::size_t i = 0; i < base && made < spec.variants; ++i) {
    if (target[i]) continue;
    ++made;
    std::vector<double> jitter(d);
    for (auto& j : jitter) j = gauss(data_rng);
    for (int level = 1; level <= 5; ++level) {
      const std::size_t row = next_row++;
      const double drift = 0.6 * spec.class_separation * level / 5.0;
      for (std::size_t a = 0; a < d; ++a) {
        latents[row * d + a] = latents[i * d + a] + drift * toward_next(labels[i], a) +
                               0.1 * level * jitter[a];
      }
      ids[row] = ids[i] + "~" + std::string(kSyntheticCorruption) + "~" + std::to_string(level);
      all_labels[row] = labels[i];
      meta.Set(row, "domain", "source");
      meta.Set(row, "batch", std::string(meta.Get(i, "batch").value()));
      meta.Set(row, "shift_kind", std::string(kSyntheticCorruption));
      meta.Set(row, "intensity", std::to_string(level));
      meta.Set(row, "origin", ids[i]);
    }
  }
  if (made < spec.variants) invalid("not enough source records for the requested variants");

  InferenceBundle b;
  BundleManifest& m = b.manifest;
  m.name = spec.name;
  m.n = total;
  m.num_classes = k;
  m.mcd_samples = spec.mcd_samples;
  m.latent_dim = d;
  m.channels = {"random"};
  m.runs = spec.runs;
  m.dg_logits = true;
  std::vector<std::string> batches, levels;
  for (int i = 0; i < kSyntheticBatches; ++i) batches.push_back(std::to_string(i));
  for (int i = 0; i <= 5; ++i) levels.push_back(std::to_string(i));
  m.meta_schema = {{"domain", {"source", "target"}},
                   {"batch", batches},
                   {"shift_kind", {"none", std::string(kSyntheticCorruption)}},
                   {"intensity", levels},
                   {"origin", {}}};
  if (spec.images) m.image_dir = "images";

  for (std::size_t r = 0; r < spec.runs; ++r) {
    std::mt19937_64 rng(DeriveSeed(spec.seed, {HashString("run"), r}));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    RunData run;
    run.ids = ids;
    run.labels = all_labels;
    run.meta = meta;
    run.latents.assign(latents.begin(), latents.end());
    run.logits.resize(total * k);
    run.mcd_logits.resize(total * spec.mcd_samples * k);
    run.dg_logits.resize(total * (k + 1));
    auto& random_channel = run.ext_conf["random"];
    random_channel.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      std::span<const double> x(latents.data() + i * d, d);
      std::span<float> z(run.logits.data() + i * k, k);
      Readout(x, k, scale, spec.logit_noise, rng, z);
      for (std::size_t t = 0; t < spec.mcd_samples; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
          run.mcd_logits[(i * spec.mcd_samples + t) * k + j] =
              static_cast<float>(z[j] + spec.mcd_noise * gauss(rng));
        }
      }
      // Abstention logit tracks the runner-up: reservation grows as the
      // top-2 margin shrinks.
      std::vector<float> sorted(z.begin(), z.end());
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      for (std::size_t j = 0; j < k; ++j) run.dg_logits[i * (k + 1) + j] = z[j];
      run.dg_logits[i * (k + 1) + k] = static_cast<float>(sorted[1] + 0.5 * gauss(rng));
      random_channel[i] = static_cast<float>(uniform(rng));
    }
    run.RebuildIndex();
    b.runs.push_back(std::move(run));
  }
  ValidateBundle(b);
  return b;
}

void WriteSyntheticImages(const InferenceBundle& b, const fs::path& dir) {
  if (!b.manifest.image_dir) return;
  const fs::path out = dir / *b.manifest.image_dir;
  fs::create_directories(out);
  constexpr std::size_t kSide = 32;
  const RunData& run = b.runs.front();
  const std::size_t d = b.manifest.latent_dim;
  const auto origin_col = run.meta.TagIndex("origin");
  const auto kind_col = run.meta.TagIndex("shift_kind");
  const auto level_col = run.meta.TagIndex("intensity");
  std::vector<std::size_t> variants;
  for (std::size_t i = 0; i < run.size(); ++i) {
    if (origin_col && run.meta.Get(i, *origin_col) != run.ids[i]) {
      variants.push_back(i);
      continue;
    }
    // A disc whose radius follows the label and whose brightness and
    // position follow the first latent coordinates.
    std::span<const float> x(run.latents.data() + i * d, d);
    const double radius = 5.0 + 3.0 * run.labels[i];
    const double bright = 0.5 + 0.4 * std::tanh(0.25 * x[0]);
    const double cx = 16.0 + 3.0 * std::tanh(0.3 * x[d > 1 ? 1 : 0]);
    const double cy = 16.0 + 3.0 * std::tanh(0.3 * x[d > 2 ? 2 : 0]);
    Image img(kSide, kSide, 1);
    for (std::size_t yy = 0; yy < kSide; ++yy) {
      for (std::size_t xx = 0; xx < kSide; ++xx) {
        const double r = std::hypot(xx + 0.5 - cx, yy + 0.5 - cy);
        const double edge = 1.0 / (1.0 + std::exp((r - radius) * 1.5));
        img.at(yy, xx, 0) = static_cast<float>(0.1 + edge * (bright - 0.1));
      }
    }
    WritePng(img, out / (run.ids[i] + ".png"));
  }
  // Variant images are the corrupted clean image.
  for (std::size_t i : variants) {
    const std::string origin(run.meta.Get(i, *origin_col));
    const Image base = ReadPng(out / (origin + ".png"));
    const CorruptionKind kind = ParseCorruption(run.meta.Get(i, *kind_col));
    const int level = std::stoi(std::string(run.meta.Get(i, *level_col)));
    WritePng(Corrupt(base, {kind, level, 0}, origin), out / (run.ids[i] + ".png"));
  }
}

// --- LIDC ------------------------------------------------------------------

NoduleLabel DeriveLidcLabel(std::span<const double> ratings) {
  if (ratings.empty()) throw Error(Errc::kRatingOutOfRange, "no ratings");
  double sum = 0.0;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    if (!(ratings[i] >= 1.0 && ratings[i] <= 5.0)) {
      throw Error(Errc::kRatingOutOfRange,
                  "rating " + std::to_string(ratings[i]) + " outside [1,5]");
    }
    sum += ratings[i];
  }
  return sum / static_cast<double>(ratings.size()) > 2.0 ? NoduleLabel::kMalignant
                                                        : NoduleLabel::kBenign;
}

}  // namespace sflens
