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

#include "sflens/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

#include "json.hpp"
#include "sflens/error.hpp"
#include "sflens/random.hpp"
#include "sflens/tsne.hpp"

namespace sflens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxIntensity = 5;

double Percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::string Hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

const StudyDefinition* FindStudy(const std::vector<StudyDefinition>& studies, std::string_view name) {
  for (const auto& s : studies) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

Predicate ConceptPredicate(const InferenceBundle& bundle, std::string_view spec) {
  if (spec.empty() || spec == "all" || spec == "*") return Predicate();
  const auto studies = BundleStudies(bundle);
  if (const StudyDefinition* s = FindStudy(studies, spec)) return s->predicate;
  Predicate p;
  try {
    p = Predicate::Parse(spec);
  } catch (const Error&) {
    throw Error(Errc::kUnknownEntity, "no study or predicate '" + std::string(spec) + "'");
  }
  const auto known = bundle.KnownTags();
  for (const auto& tag : p.ReferencedTags()) {
    if (std::find(known.begin(), known.end(), tag) == known.end()) {
      throw Error(Errc::kUnknownMetaTag, "'" + std::string(spec) + "' refers to unknown tag '" + tag + "'");
    }
  }
  return p;
}

std::size_t RunIndex(const InferenceBundle& bundle, std::size_t run) {
  if (run >= bundle.runs.size()) {
    throw Error(Errc::kUnknownEntity, "run " + std::to_string(run) + " not in bundle");
  }
  return run;
}

double Confidence(const InferenceBundle& bundle, std::size_t run, std::size_t record,
                  const ChannelId& channel) {
  const std::size_t one[] = {record};
  return ComputeChannel(bundle, run, channel, one).scores.front();
}

}  // namespace

// --- embedding -------------------------------------------------------------

RowMatrix EmbeddingFrame::Coordinates() const {
  RowMatrix m(static_cast<Eigen::Index>(size()), kEmbeddingDims);
  for (std::size_t i = 0; i < size(); ++i) {
    for (int a = 0; a < kEmbeddingDims; ++a) {
      m(static_cast<Eigen::Index>(i), a) = coords[i * kEmbeddingDims + static_cast<std::size_t>(a)];
    }
  }
  return m;
}

std::vector<std::size_t> ResolveScope(const InferenceBundle& bundle, std::size_t run,
                                      std::string_view scope) {
  return SelectRecords(bundle, RunIndex(bundle, run), ConceptPredicate(bundle, scope));
}

std::string EmbeddingKey(const InferenceBundle& bundle, std::span<const std::size_t> records,
                         const EmbedParams& p) {
  std::uint64_t h = HashString(bundle.manifest.name);
  const RunData& run = bundle.runs.at(p.run);
  for (std::size_t r : records) h = SplitMix64(h ^ HashString(run.ids[r]));
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu|%zu|%.17g|%d|%llu", p.run, p.pca_dims, p.perplexity,
                p.iterations, static_cast<unsigned long long>(p.seed));
  h = SplitMix64(h ^ HashString(buf));
  return Hex(h);
}

EmbeddingFrame EmbedScope(const InferenceBundle& bundle, std::string_view scope,
                          const EmbedParams& params, std::function<void(int)> progress) {
  if (params.pca_dims == 0) throw Error(Errc::kBadParameter, "pca_dims must be positive");
  EmbeddingFrame frame;
  frame.scope = scope.empty() ? "all" : std::string(scope);
  frame.params = params;
  frame.records = ResolveScope(bundle, params.run, frame.scope);
  frame.key = EmbeddingKey(bundle, frame.records, params);
  const RunData& run = bundle.runs[params.run];
  const std::size_t d = bundle.manifest.latent_dim;
  RowMatrix latents(static_cast<Eigen::Index>(frame.records.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < frame.records.size(); ++i) {
    const std::size_t r = frame.records[i];
    frame.ids.push_back(run.ids[r]);
    for (std::size_t j = 0; j < d; ++j) {
      latents(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = run.latents[r * d + j];
    }
  }
  if (frame.records.size() < 4) {
    throw Error(Errc::kDegenerateData, "scope '" + frame.scope + "' has fewer than 4 records");
  }
  const PcaResult pca = ReducePca(latents, params.pca_dims);
  frame.pca_components = static_cast<std::size_t>(pca.projected.cols());
  TsneOptions opt;
  opt.perplexity = params.perplexity;
  opt.iterations = params.iterations;
  opt.seed = params.seed;
  opt.threads = params.threads;
  opt.progress = std::move(progress);
  const TsneResult tsne = ReduceTsne(pca.projected, opt);
  frame.learning_rate = tsne.learning_rate;
  frame.barnes_hut = tsne.barnes_hut;
  frame.objective = tsne.objective;
  frame.coords.resize(frame.records.size() * kEmbeddingDims);
  for (std::size_t i = 0; i < frame.records.size(); ++i) {
    for (int a = 0; a < kEmbeddingDims; ++a) {
      frame.coords[i * kEmbeddingDims + static_cast<std::size_t>(a)] =
          static_cast<float>(tsne.embedding(static_cast<Eigen::Index>(i), a));
    }
  }
  return frame;
}

std::string EmbeddingToJson(const EmbeddingFrame& f) {
  json j;
  j["key"] = f.key;
  j["scope"] = f.scope;
  j["run"] = f.params.run;
  j["params"] = {{"pca_dims", f.params.pca_dims},
                 {"perplexity", f.params.perplexity},
                 {"iterations", f.params.iterations},
                 {"seed", f.params.seed},
                 {"pca_components", f.pca_components},
                 {"learning_rate", f.learning_rate},
                 {"barnes_hut", f.barnes_hut}};
  j["ids"] = f.ids;
  j["records"] = f.records;
  json obj = json::array();
  for (const auto& [it, kl] : f.objective) obj.push_back({{"iteration", it}, {"kl", kl}});
  j["objective"] = obj;
  return j.dump(1);
}

EmbeddingFrame EmbeddingFromJson(const std::string& text) {
  EmbeddingFrame f;
  try {
    const json j = json::parse(text);
    f.key = j.at("key").get<std::string>();
    f.scope = j.at("scope").get<std::string>();
    f.params.run = j.at("run").get<std::size_t>();
    const json& p = j.at("params");
    f.params.pca_dims = p.at("pca_dims").get<std::size_t>();
    f.params.perplexity = p.at("perplexity").get<double>();
    f.params.iterations = p.at("iterations").get<int>();
    f.params.seed = p.at("seed").get<std::uint64_t>();
    f.pca_components = p.at("pca_components").get<std::size_t>();
    f.learning_rate = p.at("learning_rate").get<double>();
    f.barnes_hut = p.at("barnes_hut").get<bool>();
    f.ids = j.at("ids").get<std::vector<std::string>>();
    f.records = j.at("records").get<std::vector<std::size_t>>();
    for (const auto& o : j.at("objective")) {
      f.objective.emplace_back(o.at("iteration").get<int>(), o.at("kl").get<double>());
    }
  } catch (const json::exception& e) {
    throw Error(Errc::kParseError, std::string("embedding sidecar: ") + e.what());
  }
  if (f.ids.size() != f.records.size()) throw Error(Errc::kShapeMismatch, "embedding sidecar ids/records");
  return f;
}

void SaveEmbedding(const EmbeddingFrame& frame, const fs::path& dir) {
  fs::create_directories(dir);
  // coordinates first so that a present sidecar implies complete coordinates
  const fs::path coords = dir / (frame.key + ".coords.f32");
  const fs::path sidecar = dir / (frame.key + ".json");
  WriteF32File(fs::path(coords.string() + ".tmp"), frame.coords);
  fs::rename(coords.string() + ".tmp", coords);
  WriteTextFile(fs::path(sidecar.string() + ".tmp"), EmbeddingToJson(frame));
  fs::rename(sidecar.string() + ".tmp", sidecar);
}

std::optional<EmbeddingFrame> LoadEmbedding(const fs::path& dir, std::string_view key) {
  const fs::path sidecar = dir / (std::string(key) + ".json");
  if (!fs::exists(sidecar)) return std::nullopt;
  EmbeddingFrame f = EmbeddingFromJson(ReadTextFile(sidecar));
  f.coords = ReadF32File(dir / (std::string(key) + ".coords.f32"), f.ids.size() * kEmbeddingDims,
                         kEmbeddingDims);
  return f;
}

EmbeddingFrame CachedEmbedding(const InferenceBundle& bundle, std::string_view scope,
                               const EmbedParams& params, bool* computed) {
  const std::string name = scope.empty() ? "all" : std::string(scope);
  const auto records = ResolveScope(bundle, params.run, name);
  const std::string key = EmbeddingKey(bundle, records, params);
  if (!bundle.root.empty()) {
    if (auto cached = LoadEmbedding(bundle.root / "embeddings", key)) {
      if (computed != nullptr) *computed = false;
      cached->scope = name;
      cached->params.threads = params.threads;
      return std::move(*cached);
    }
  }
  EmbeddingFrame frame = EmbedScope(bundle, name, params);
  if (!bundle.root.empty()) SaveEmbedding(frame, bundle.root / "embeddings");
  if (computed != nullptr) *computed = true;
  return frame;
}

// --- colouring -------------------------------------------------------------

std::string_view ColorSchemeName(ColorScheme scheme) {
  switch (scheme) {
    case ColorScheme::kClass: return "class";
    case ColorScheme::kDomain: return "domain";
    case ColorScheme::kClassifierConfusion: return "classifier-confusion";
    case ColorScheme::kCsfConfusion: return "csf-confusion";
  }
  return "class";
}

ColorScheme ParseColorScheme(std::string_view name) {
  for (ColorScheme s : {ColorScheme::kClass, ColorScheme::kDomain, ColorScheme::kClassifierConfusion,
                        ColorScheme::kCsfConfusion}) {
    if (ColorSchemeName(s) == name) return s;
  }
  if (name == "shift") return ColorScheme::kDomain;
  throw Error(Errc::kBadParameter, "unknown colouring scheme '" + std::string(name) + "'");
}

ColorLabels ColorFrame(const InferenceBundle& bundle, const EmbeddingFrame& frame,
                       ColorScheme scheme, const ChannelId& channel, std::optional<double> tau) {
  const std::size_t run = RunIndex(bundle, frame.params.run);
  ColorLabels out;
  out.labels.reserve(frame.size());
  if (scheme == ColorScheme::kCsfConfusion) {
    if (tau && !std::isfinite(*tau)) throw Error(Errc::kBadParameter, "tau must be finite");
    out.confidences = ComputeChannel(bundle, run, channel, frame.records).scores;
    out.tau = tau ? *tau : DefaultTau(out.confidences);
  }
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const RecordView rec = bundle.Record(run, frame.records[i]);
    switch (scheme) {
      case ColorScheme::kClass:
        out.labels.push_back(std::to_string(rec.label));
        break;
      case ColorScheme::kDomain: {
        std::string label(rec.Tag("domain").value_or("unknown"));
        const auto shift = rec.Tag("shift_kind");
        if (shift && !shift->empty() && *shift != "none") label += ":" + std::string(*shift);
        out.labels.push_back(std::move(label));
        break;
      }
      case ColorScheme::kClassifierConfusion:
        out.labels.push_back("gt" + std::to_string(rec.label) + "-pred" + std::to_string(rec.prediction()));
        break;
      case ColorScheme::kCsfConfusion:
        out.labels.emplace_back(OutcomeName(ClassifyDetection(rec.residual() == 0, out.confidences[i], *out.tau)));
        break;
    }
  }
  return out;
}

// --- concept clusters ------------------------------------------------------

ConceptCluster ClusterConcept(const InferenceBundle& bundle, const EmbeddingFrame& frame,
                              std::string_view concept_spec, std::size_t k, std::uint64_t seed) {
  const std::size_t run = RunIndex(bundle, frame.params.run);
  const Predicate predicate = ConceptPredicate(bundle, concept_spec);
  ConceptCluster out;
  out.concept_name = concept_spec.empty() ? "all" : std::string(concept_spec);
  out.predicate = predicate.text();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (predicate.Evaluate(bundle.Lookup(run, frame.records[i]))) rows.push_back(i);
  }
  if (rows.empty()) {
    out.centers.resize(0, kEmbeddingDims);
    return out;
  }
  RowMatrix pts(static_cast<Eigen::Index>(rows.size()), kEmbeddingDims);
  for (std::size_t m = 0; m < rows.size(); ++m) {
    out.member_ids.push_back(frame.ids[rows[m]]);
    for (int a = 0; a < kEmbeddingDims; ++a) {
      pts(static_cast<Eigen::Index>(m), a) = frame.coords[rows[m] * kEmbeddingDims + static_cast<std::size_t>(a)];
    }
  }
  KMeansResult km = KMeans(pts, k, seed);
  out.centers = km.centers;
  out.assignment = km.assignment;
  const auto kk = static_cast<std::size_t>(km.centers.rows());
  out.sizes.assign(kk, 0);
  out.representative_ids.assign(kk, std::string());
  std::vector<double> best(kk, std::numeric_limits<double>::infinity());
  for (std::size_t m = 0; m < rows.size(); ++m) {
    const std::size_t c = km.assignment[m];
    ++out.sizes[c];
    const double d = (pts.row(static_cast<Eigen::Index>(m)) - km.centers.row(static_cast<Eigen::Index>(c))).squaredNorm();
    if (d < best[c] || (d == best[c] && out.member_ids[m] < out.representative_ids[c])) {
      best[c] = d;
      out.representative_ids[c] = out.member_ids[m];
    }
  }
  return out;
}

// --- failures --------------------------------------------------------------

std::vector<SilentFailure> MineSilentFailures(const InferenceBundle& bundle, std::size_t run,
                                              std::span<const std::size_t> records,
                                              const ChannelId& channel, std::size_t top) {
  RunIndex(bundle, run);
  std::vector<std::size_t> wrong;
  for (std::size_t r : records) {
    if (bundle.Record(run, r).residual() == 1) wrong.push_back(r);
  }
  const std::vector<double> conf = ComputeChannel(bundle, run, channel, wrong).scores;
  std::vector<SilentFailure> out;
  out.reserve(wrong.size());
  for (std::size_t i = 0; i < wrong.size(); ++i) {
    const RecordView rec = bundle.Record(run, wrong[i]);
    SilentFailure f;
    f.id = std::string(rec.id);
    f.confidence = conf[i];
    f.prediction = rec.prediction();
    f.label = rec.label;
    if (bundle.manifest.image_dir) f.image_ref = *bundle.manifest.image_dir + "/" + f.id + ".png";
    out.push_back(std::move(f));
  }
  std::sort(out.begin(), out.end(), [](const SilentFailure& a, const SilentFailure& b) {
    return a.confidence != b.confidence ? a.confidence > b.confidence : a.id < b.id;
  });
  if (out.size() > top) out.resize(top);
  return out;
}

std::vector<SweepPoint> IntensitySweep(const InferenceBundle& bundle, std::size_t run,
                                       std::string_view id, std::string_view kind,
                                       const ChannelId& channel) {
  const RunData& data = bundle.runs.at(RunIndex(bundle, run));
  const auto base = data.Find(id);
  if (!base) throw Error(Errc::kUnknownEntity, "record '" + std::string(id) + "' not in bundle");
  std::string origin(id);
  if (auto o = bundle.Record(run, *base).Tag("origin"); o && !o->empty()) origin = std::string(*o);
  const auto clean = data.Find(origin);
  if (!clean) throw Error(Errc::kMissingVariant, "level 0 of '" + origin + "' not in bundle");

  std::map<int, std::size_t> levels{{0, *clean}};
  const auto oc = data.meta.TagIndex("origin");
  const auto kc = data.meta.TagIndex("shift_kind");
  const auto lc = data.meta.TagIndex("intensity");
  if (oc && kc && lc) {
    for (std::size_t r = 0; r < data.size(); ++r) {
      if (r == *clean || data.meta.Get(r, *oc) != origin || data.meta.Get(r, *kc) != kind) continue;
      const std::string level(data.meta.Get(r, *lc));
      char* end = nullptr;
      const long l = std::strtol(level.c_str(), &end, 10);
      if (end != level.c_str() && *end == '\0' && l >= 1 && l <= kMaxIntensity) {
        levels.emplace(static_cast<int>(l), r);
      }
    }
  }
  for (int l = 1; l <= kMaxIntensity; ++l) {
    if (levels.count(l)) continue;
    if (auto r = data.Find(origin + "~" + std::string(kind) + "~" + std::to_string(l))) levels.emplace(l, *r);
  }
  std::vector<SweepPoint> out;
  for (int l = 0; l <= kMaxIntensity; ++l) {
    const auto it = levels.find(l);
    if (it == levels.end()) {
      throw Error(Errc::kMissingVariant, "level " + std::to_string(l) + " of " + std::string(kind) +
                                             " for '" + origin + "'");
    }
    const RecordView rec = bundle.Record(run, it->second);
    out.push_back({l, std::string(rec.id), rec.prediction(), rec.label,
                   Confidence(bundle, run, it->second, channel)});
  }
  return out;
}

std::string_view FailureLocalityName(FailureLocality locality) {
  switch (locality) {
    case FailureLocality::kBorder: return "border";
    case FailureLocality::kOpposingCenter: return "opposing_center";
    case FailureLocality::kOutlier: return "outlier";
  }
  return "border";
}

ClassGeometry BuildClassGeometry(const RowMatrix& coords, std::span<const ClassIndex> labels,
                                 std::size_t num_classes, std::size_t centers_per_class,
                                 std::uint64_t seed) {
  if (static_cast<std::size_t>(coords.rows()) != labels.size()) {
    throw Error(Errc::kShapeMismatch, "coordinates and labels differ in length");
  }
  if (centers_per_class == 0) throw Error(Errc::kBadParameter, "centers_per_class must be positive");
  ClassGeometry g;
  std::vector<Eigen::RowVectorXd> centers;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(static_cast<Eigen::Index>(i));
    }
    if (members.empty()) continue;
    RowMatrix pts(static_cast<Eigen::Index>(members.size()), coords.cols());
    for (std::size_t m = 0; m < members.size(); ++m) pts.row(static_cast<Eigen::Index>(m)) = coords.row(members[m]);
    const KMeansResult km = KMeans(pts, centers_per_class, DeriveSeed(seed, {c}));
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(km.centers.rows()));
    for (std::size_t m = 0; m < members.size(); ++m) {
      const std::size_t a = km.assignment[m];
      dist[a].push_back((pts.row(static_cast<Eigen::Index>(m)) - km.centers.row(static_cast<Eigen::Index>(a))).norm());
    }
    for (Eigen::Index k = 0; k < km.centers.rows(); ++k) {
      const auto& d = dist[static_cast<std::size_t>(k)];
      if (d.empty()) continue;
      centers.push_back(km.centers.row(k));
      g.center_class.push_back(static_cast<ClassIndex>(c));
      g.p95.push_back(Percentile(d, 0.95));
      g.median.push_back(Percentile(d, 0.5));
    }
  }
  g.centers.resize(static_cast<Eigen::Index>(centers.size()), coords.cols());
  for (std::size_t i = 0; i < centers.size(); ++i) g.centers.row(static_cast<Eigen::Index>(i)) = centers[i];
  return g;
}

FailureLocality ClassifyFailure(const ClassGeometry& g, const Eigen::Ref<const Eigen::RowVectorXd>& point,
                                ClassIndex /*label*/, ClassIndex prediction) {
  if (g.centers.rows() == 0) throw Error(Errc::kDegenerateData, "class geometry has no centres");
  bool outlier = true;
  std::size_t nearest = 0;
  double nearest_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < g.centers.rows(); ++c) {
    const double d = (point - g.centers.row(c)).norm();
    const auto ci = static_cast<std::size_t>(c);
    if (d <= g.p95[ci]) outlier = false;
    if (d < nearest_d) {
      nearest_d = d;
      nearest = ci;
    }
  }
  if (outlier) return FailureLocality::kOutlier;
  if (g.center_class[nearest] == prediction && nearest_d < g.median[nearest]) {
    return FailureLocality::kOpposingCenter;
  }
  return FailureLocality::kBorder;
}

std::vector<LocatedFailure> LocateFailures(const InferenceBundle& bundle, const EmbeddingFrame& frame,
                                           std::size_t centers_per_class) {
  const std::size_t run = RunIndex(bundle, frame.params.run);
  const RowMatrix coords = frame.Coordinates();
  std::vector<ClassIndex> labels;
  labels.reserve(frame.size());
  for (std::size_t r : frame.records) labels.push_back(bundle.runs[run].labels[r]);
  const ClassGeometry g = BuildClassGeometry(coords, labels, bundle.manifest.num_classes,
                                             centers_per_class, frame.params.seed);
  std::vector<LocatedFailure> out;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const RecordView rec = bundle.Record(run, frame.records[i]);
    if (rec.residual() == 0) continue;
    out.push_back({frame.ids[i], rec.label, rec.prediction(),
                   ClassifyFailure(g, coords.row(static_cast<Eigen::Index>(i)), rec.label, rec.prediction())});
  }
  return out;
}

}  // namespace sflens
