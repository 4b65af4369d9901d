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

#include "sflens/service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"
#include "sflens/csf.hpp"
#include "sflens/metrics.hpp"
#include "sflens/tsne.hpp"

namespace sflens {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ApiResponse Json(const json& body, int status = 200) {
  return {status, "application/json", body.dump() + "\n"};
}

ApiResponse ErrorResponse(int status, std::string_view code, std::string_view message) {
  return Json({{"error", std::string(code)}, {"message", std::string(message)}}, status);
}

json Num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::optional<std::string_view> Param(const QueryParams& params, std::string_view name) {
  const auto it = params.find(name);
  if (it == params.end() || it->second.empty()) return std::nullopt;
  return std::string_view(it->second);
}

double ParseReal(std::string_view name, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw Error(Errc::kBadParameter, std::string(name) + " is not a number: '" + s + "'");
  }
  if (!std::isfinite(v)) throw Error(Errc::kBadParameter, std::string(name) + " must be finite");
  return v;
}

std::uint64_t ParseCount(std::string_view name, std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(Errc::kBadParameter, std::string(name) + " must be a non-negative integer");
  }
  return v;
}

template <typename T>
T CountParam(const QueryParams& params, std::string_view name, T fallback) {
  const auto p = Param(params, name);
  return p ? static_cast<T>(ParseCount(name, *p)) : fallback;
}

std::size_t RunParam(const QueryParams& params, const InferenceBundle& bundle) {
  const auto run = CountParam<std::size_t>(params, "run", 0);
  if (run >= bundle.runs.size()) throw Error(Errc::kUnknownEntity, "run " + std::to_string(run));
  return run;
}

ChannelId ChannelParam(const QueryParams& params, const InferenceBundle& bundle,
                       std::string_view fallback = "msr") {
  ChannelId id;
  const std::string_view name = Param(params, "channel").value_or(fallback);
  try {
    id = ChannelId::Parse(name);
  } catch (const Error&) {
    throw Error(Errc::kUnknownChannel, "no channel '" + std::string(name) + "'");
  }
  RequireChannel(bundle.manifest, id);
  return id;
}

const StudyDefinition& FindStudy(const std::vector<StudyDefinition>& studies, std::string_view name) {
  for (const auto& s : studies) {
    if (s.name == name) return s;
  }
  throw Error(Errc::kUnknownEntity, "no study '" + std::string(name) + "'");
}

json CurveJson(const RiskCoverageCurve& curve) {
  json cov = json::array(), risk = json::array();
  for (double c : curve.coverage) cov.push_back(c);
  for (double r : curve.risk) risk.push_back(r);
  return {{"coverage", cov}, {"risk", risk}};
}

bool AcceptsCsv(std::string_view accept) {
  return accept.find("text/csv") != std::string_view::npos;
}

}  // namespace

int HttpStatus(Errc code) {
  switch (code) {
    case Errc::kUnknownEntity:
    case Errc::kUnknownChannel:
    case Errc::kMissingVariant:
    case Errc::kMissingFile:
    case Errc::kEmptyStudy:
      return 404;
    case Errc::kEmbeddingNotReady:
      return 409;
    case Errc::kBadParameter:
    case Errc::kPerplexityTooLarge:
    case Errc::kDegenerateData:
    case Errc::kDegenerateStudy:
    case Errc::kParseError:
    case Errc::kUnknownMetaTag:
    case Errc::kInvalidSpec:
    case Errc::kMissingTag:
      return 422;
    default:
      return 500;
  }
}

// --- session ---------------------------------------------------------------

ApiSession::ApiSession(ServiceConfig config) : config_(std::move(config)) {
  const fs::path& root = config_.bundle_root;
  if (root.empty() || !fs::is_directory(root)) {
    throw Error(Errc::kMissingFile, "bundle root '" + root.string() + "' is not a directory");
  }
  std::vector<fs::path> dirs;
  if (fs::exists(root / "manifest.json")) {
    dirs.push_back(root);
  } else {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
  }
  for (const fs::path& dir : dirs) {
    auto ds = std::make_unique<Dataset>();
    ds->bundle = LoadBundle(dir);
    ds->studies = BundleStudies(ds->bundle);
    ds->name = ds->bundle.manifest.name;
    if (ds->name.empty() || datasets_.count(ds->name)) ds->name = dir.filename().string();
    const std::string name = ds->name;
    datasets_.emplace(name, std::move(ds));
  }
  if (datasets_.empty()) throw Error(Errc::kMissingFile, "no bundles under '" + root.string() + "'");
}

ApiSession::~ApiSession() { WaitForJobs(); }

void ApiSession::WaitForJobs() {
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mutex_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

std::vector<std::string> ApiSession::DatasetNames() const {
  std::vector<std::string> names;
  for (const auto& [name, ds] : datasets_) names.push_back(name);
  return names;
}

const ApiSession::Dataset& ApiSession::FindDataset(const QueryParams& params) const {
  const auto name = Param(params, "dataset");
  if (!name) {
    if (datasets_.size() == 1) return *datasets_.begin()->second;
    throw Error(Errc::kBadParameter, "dataset is required when several bundles are loaded");
  }
  const auto it = datasets_.find(*name);
  if (it == datasets_.end()) throw Error(Errc::kUnknownEntity, "no dataset '" + std::string(*name) + "'");
  return *it->second;
}

ApiResponse ApiSession::Handle(std::string_view method, std::string_view path,
                               const QueryParams& params, std::string_view accept,
                               std::string_view body) {
  try {
    if (method == "POST" && path == "/api/embed") {
      QueryParams merged = params;
      if (!body.empty()) {
        json j;
        try {
          j = json::parse(body);
        } catch (const json::exception&) {
          throw Error(Errc::kBadParameter, "request body is not JSON");
        }
        if (!j.is_object()) throw Error(Errc::kBadParameter, "request body must be a JSON object");
        for (const auto& [k, v] : j.items()) merged[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
      return Submit(merged);
    }
    constexpr std::string_view kImages = "/api/images/";
    const bool known = path == "/api/datasets" || path == "/api/studies" || path == "/api/metrics" ||
                       path == "/api/rc-curve" || path == "/api/embedding" || path == "/api/clusters" ||
                       path == "/api/failures" || path == "/api/sweep" || path == "/api/embed" ||
                       path.starts_with(kImages);
    if (!known) return ErrorResponse(404, "UnknownEntity", "no route " + std::string(path));
    if (method != "GET" || path == "/api/embed") {
      return ErrorResponse(405, "MethodNotAllowed", std::string(method) + " " + std::string(path));
    }
    if (path == "/api/datasets") return Datasets();
    if (path == "/api/studies") return Studies(params);
    if (path == "/api/metrics") return Metrics(params, accept);
    if (path == "/api/rc-curve") return RcCurveRoute(params);
    if (path == "/api/embedding") return Embedding(params);
    if (path == "/api/clusters") return Clusters(params);
    if (path == "/api/failures") return Failures(params);
    if (path == "/api/sweep") return Sweep(params);
    return Image(path.substr(kImages.size()), params);
  } catch (const Error& e) {
    return ErrorResponse(HttpStatus(e.code()), ErrcName(e.code()), e.what());
  } catch (const std::exception& e) {
    return ErrorResponse(500, "InternalError", e.what());
  }
}

ApiResponse ApiSession::Datasets() const {
  json list = json::array();
  for (const auto& [name, ds] : datasets_) {
    const BundleManifest& m = ds->bundle.manifest;
    json schema = json::object();
    for (const auto& tag : m.meta_schema) schema[tag.name] = tag.values;
    json channels = json::array();
    for (const auto& c : AvailableChannels(m)) channels.push_back(c.Name());
    list.push_back({{"name", name},
                    {"n", m.n},
                    {"K", m.num_classes},
                    {"T", m.mcd_samples},
                    {"d", m.latent_dim},
                    {"runs", m.runs},
                    {"channels", channels},
                    {"meta_schema", schema},
                    {"images", m.image_dir.has_value()}});
  }
  return Json({{"datasets", list}});
}

ApiResponse ApiSession::Studies(const QueryParams& params) const {
  const Dataset& ds = FindDataset(params);
  const std::size_t run = RunParam(params, ds.bundle);
  json list = json::array();
  for (const auto& s : ds.studies) {
    list.push_back({{"name", s.name},
                    {"kind", std::string(StudyKindName(s.kind))},
                    {"predicate", s.predicate.text()},
                    {"size", SelectRecords(ds.bundle, run, s.predicate).size()}});
  }
  return Json({{"dataset", ds.name}, {"studies", list}});
}

ApiResponse ApiSession::Metrics(const QueryParams& params, std::string_view accept) const {
  const Dataset& ds = FindDataset(params);
  std::vector<StudyDefinition> studies;
  if (const auto s = Param(params, "study")) {
    studies.push_back(FindStudy(ds.studies, *s));
  } else {
    studies = ds.studies;
  }
  std::vector<ChannelId> channels;
  if (Param(params, "channel")) {
    channels.push_back(ChannelParam(params, ds.bundle));
  } else {
    channels = AvailableChannels(ds.bundle.manifest);
  }
  EvaluateOptions opt;
  opt.threads = config_.threads;
  if (const auto tau = Param(params, "tau")) opt.taus.push_back(ParseReal("tau", *tau));
  const MetricReport report = Evaluate(ds.bundle, studies, channels, opt);
  if (AcceptsCsv(accept)) return {200, "text/csv", ReportToCsv(report)};
  return {200, "application/json", json::parse(ReportToJson(report)).dump() + "\n"};
}

ApiResponse ApiSession::RcCurveRoute(const QueryParams& params) const {
  const Dataset& ds = FindDataset(params);
  const auto study_name = Param(params, "study");
  if (!study_name) throw Error(Errc::kBadParameter, "study is required");
  const StudyDefinition& study = FindStudy(ds.studies, *study_name);
  const ChannelId channel = ChannelParam(params, ds.bundle);
  const std::size_t run = RunParam(params, ds.bundle);
  const StudySlice slice = SliceStudy(ds.bundle, run, study, channel);
  RiskCoverageCurve curve = RcCurve(slice.residuals, slice.confidences, slice.ids);
  const double aurc = Aurc(curve);
  const double eaurc = ExcessAurc(curve);
  if (const auto points = Param(params, "points")) {
    const std::uint64_t m = ParseCount("points", *points);
    if (m == 0) throw Error(Errc::kBadParameter, "points must be >= 1");
    curve = ThinCurve(curve, m);
  }
  json body = CurveJson(curve);
  body["dataset"] = ds.name;
  body["study"] = study.name;
  body["channel"] = channel.Name();
  body["run"] = run;
  body["n"] = slice.records.size();
  body["aurc"] = aurc;
  body["eaurc"] = eaurc;
  return Json(body);
}

// --- embeddings ------------------------------------------------------------

ApiSession::EmbedRequest ApiSession::ParseEmbedRequest(const QueryParams& params) const {
  EmbedRequest req;
  req.dataset = &FindDataset(params);
  req.scope = std::string(Param(params, "scope").value_or("all"));
  req.params.run = RunParam(params, req.dataset->bundle);
  req.params.seed = CountParam<std::uint64_t>(params, "seed", 0);
  req.params.pca_dims = CountParam<std::size_t>(params, "pca_dims", 50);
  req.params.iterations = CountParam<int>(params, "iterations", 1000);
  if (const auto p = Param(params, "perplexity")) req.params.perplexity = ParseReal("perplexity", *p);
  req.params.threads = config_.threads;
  if (req.params.pca_dims == 0) throw Error(Errc::kBadParameter, "pca_dims must be positive");
  req.records = ResolveScope(req.dataset->bundle, req.params.run, req.scope);
  req.key = EmbeddingKey(req.dataset->bundle, req.records, req.params);
  return req;
}

std::shared_ptr<const EmbeddingFrame> ApiSession::ReadyFrame(const EmbedRequest& req) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = ready_.find(req.key); it != ready_.end()) return it->second;
    if (running_.count(req.key)) return nullptr;
  }
  const InferenceBundle& bundle = req.dataset->bundle;
  if (bundle.root.empty()) return nullptr;
  std::optional<EmbeddingFrame> disk;
  try {
    disk = LoadEmbedding(bundle.root / "embeddings", req.key);
  } catch (const Error&) {
    return nullptr;
  }
  if (!disk) return nullptr;
  disk->scope = req.scope;
  auto frame = std::make_shared<const EmbeddingFrame>(std::move(*disk));
  std::lock_guard lock(mutex_);
  return ready_.emplace(req.key, std::move(frame)).first->second;
}

std::shared_ptr<const EmbeddingFrame> ApiSession::RequireFrame(const EmbedRequest& req) {
  if (auto frame = ReadyFrame(req)) return frame;
  std::lock_guard lock(mutex_);
  if (auto it = running_.find(req.key); it != running_.end()) {
    throw Error(Errc::kEmbeddingNotReady, "embedding " + req.key + " is at iteration " +
                                              std::to_string(it->second->iteration.load()) + " of " +
                                              std::to_string(it->second->iterations));
  }
  if (auto it = failed_.find(req.key); it != failed_.end()) {
    throw Error(Errc::kBadParameter, "embedding " + req.key + " failed: " + it->second);
  }
  throw Error(Errc::kUnknownEntity, "embedding " + req.key + " has not been submitted (POST /api/embed)");
}

ApiResponse ApiSession::Submit(const QueryParams& params) {
  const EmbedRequest req = ParseEmbedRequest(params);
  const std::size_t n = req.records.size();
  if (n < 4) throw Error(Errc::kDegenerateData, "scope '" + req.scope + "' has fewer than 4 records");
  if (!(req.params.perplexity > 0.0 && req.params.perplexity < static_cast<double>(n - 1) / 3.0)) {
    throw Error(Errc::kPerplexityTooLarge, "perplexity must be below (n-1)/3 for n = " + std::to_string(n));
  }
  json body{{"key", req.key}, {"scope", req.scope}, {"records", n}};
  if (ReadyFrame(req)) {
    body["status"] = "ready";
    return Json(body);
  }
  std::lock_guard lock(mutex_);
  if (!running_.count(req.key)) {
    failed_.erase(req.key);
    auto job = std::make_shared<Job>();
    job->iterations = req.params.iterations;
    running_.emplace(req.key, job);
    workers_.emplace_back([this, req, job] {
      std::shared_ptr<const EmbeddingFrame> frame;
      std::string failure;
      try {
        EmbeddingFrame f = EmbedScope(req.dataset->bundle, req.scope, req.params,
                                      [job](int it) { job->iteration.store(it); });
        if (config_.persist_embeddings && !req.dataset->bundle.root.empty()) {
          try {
            SaveEmbedding(f, req.dataset->bundle.root / "embeddings");
          } catch (const std::exception&) {
            // read-only bundle roots keep the in-memory result only
          }
        }
        frame = std::make_shared<const EmbeddingFrame>(std::move(f));
      } catch (const std::exception& e) {
        failure = e.what();
      }
      std::lock_guard lock(mutex_);
      if (frame) {
        ready_[req.key] = std::move(frame);
      } else {
        failed_[req.key] = failure;
      }
      running_.erase(req.key);
    });
  }
  body["status"] = "running";
  return Json(body, 202);
}

ApiResponse ApiSession::Embedding(const QueryParams& params) {
  const EmbedRequest req = ParseEmbedRequest(params);
  const auto frame = RequireFrame(req);
  const InferenceBundle& bundle = req.dataset->bundle;
  const ColorScheme scheme = ParseColorScheme(Param(params, "scheme").value_or("class"));
  const ChannelId channel = ChannelParam(params, bundle);
  std::optional<double> tau;
  if (const auto t = Param(params, "tau")) tau = ParseReal("tau", *t);
  const ColorLabels colors = ColorFrame(bundle, *frame, scheme, channel, tau);
  const std::vector<double> conf = ComputeChannel(bundle, frame->params.run, channel, frame->records).scores;

  json coords = json::array(), points = json::array();
  for (std::size_t i = 0; i < frame->size(); ++i) {
    const RecordView rec = bundle.Record(frame->params.run, frame->records[i]);
    coords.push_back({frame->coords[3 * i], frame->coords[3 * i + 1], frame->coords[3 * i + 2]});
    points.push_back({{"id", frame->ids[i]},
                      {"label", rec.label},
                      {"prediction", rec.prediction()},
                      {"confidence", conf[i]},
                      {"color", colors.labels[i]}});
  }
  json objective = json::array();
  for (const auto& [it, kl] : frame->objective) objective.push_back({{"iteration", it}, {"kl", Num(kl)}});
  json body{{"key", frame->key},
            {"dataset", req.dataset->name},
            {"scope", req.scope},
            {"run", frame->params.run},
            {"params",
             {{"pca_dims", frame->params.pca_dims},
              {"pca_components", frame->pca_components},
              {"perplexity", frame->params.perplexity},
              {"iterations", frame->params.iterations},
              {"seed", frame->params.seed},
              {"learning_rate", frame->learning_rate},
              {"barnes_hut", frame->barnes_hut}}},
            {"scheme", std::string(ColorSchemeName(scheme))},
            {"channel", channel.Name()},
            {"coords", coords},
            {"records", points},
            {"objective", objective}};
  body["tau"] = colors.tau ? Num(*colors.tau) : json(nullptr);
  return Json(body);
}

ApiResponse ApiSession::Clusters(const QueryParams& params) {
  const EmbedRequest req = ParseEmbedRequest(params);
  const auto frame = RequireFrame(req);
  const std::string concept_spec(Param(params, "concept").value_or("all"));
  const auto k = CountParam<std::size_t>(params, "k", kDefaultClusters);
  if (k == 0) throw Error(Errc::kBadParameter, "k must be positive");
  const ConceptCluster cc = ClusterConcept(req.dataset->bundle, *frame, concept_spec, k, req.params.seed);
  json clusters = json::array();
  for (Eigen::Index c = 0; c < cc.centers.rows(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    clusters.push_back({{"center", {cc.centers(c, 0), cc.centers(c, 1), cc.centers(c, 2)}},
                        {"representative_id", cc.representative_ids[i]},
                        {"size", cc.sizes[i]}});
  }
  return Json({{"dataset", req.dataset->name},
               {"scope", req.scope},
               {"concept", cc.concept_name},
               {"predicate", cc.predicate},
               {"k", cc.centers.rows()},
               {"clusters", clusters},
               {"representative_ids", cc.representative_ids},
               {"members", cc.member_ids},
               {"assignment", cc.assignment}});
}

ApiResponse ApiSession::Failures(const QueryParams& params) {
  const Dataset& ds = FindDataset(params);
  const std::size_t run = RunParam(params, ds.bundle);
  const std::string scope(Param(params, "scope").value_or("all"));
  const ChannelId channel = ChannelParam(params, ds.bundle);
  const auto top = CountParam<std::size_t>(params, "top", 2);
  const auto records = ResolveScope(ds.bundle, run, scope);
  const auto failures = MineSilentFailures(ds.bundle, run, records, channel, top);

  std::map<std::string, std::string, std::less<>> locality;
  const EmbedRequest req = ParseEmbedRequest(params);
  if (const auto frame = ReadyFrame(req)) {
    for (const auto& f : LocateFailures(ds.bundle, *frame)) {
      locality.emplace(f.id, std::string(FailureLocalityName(f.locality)));
    }
  }
  json list = json::array();
  for (const auto& f : failures) {
    json item{{"id", f.id}, {"confidence", f.confidence}, {"prediction", f.prediction}, {"label", f.label}};
    item["image_ref"] = f.image_ref ? json(*f.image_ref) : json(nullptr);
    if (auto it = locality.find(f.id); it != locality.end()) item["locality"] = it->second;
    list.push_back(std::move(item));
  }
  return Json({{"dataset", ds.name},
               {"scope", scope},
               {"channel", channel.Name()},
               {"run", run},
               {"top", top},
               {"failures", list}});
}

ApiResponse ApiSession::Sweep(const QueryParams& params) const {
  const Dataset& ds = FindDataset(params);
  const std::size_t run = RunParam(params, ds.bundle);
  const auto id = Param(params, "id");
  const auto kind = Param(params, "kind");
  if (!id || !kind) throw Error(Errc::kBadParameter, "id and kind are required");
  const ChannelId channel = ChannelParam(params, ds.bundle);
  const auto sweep = IntensitySweep(ds.bundle, run, *id, *kind, channel);
  json levels = json::array();
  for (const auto& p : sweep) {
    levels.push_back({{"level", p.level},
                      {"id", p.id},
                      {"prediction", p.prediction},
                      {"label", p.label},
                      {"confidence", p.confidence}});
  }
  return Json({{"dataset", ds.name},
               {"id", std::string(*id)},
               {"kind", std::string(*kind)},
               {"channel", channel.Name()},
               {"levels", levels}});
}

ApiResponse ApiSession::Image(std::string_view id, const QueryParams& params) const {
  const Dataset& ds = FindDataset(params);
  bool found = false;
  for (const RunData& run : ds.bundle.runs) found = found || run.Find(id).has_value();
  if (!found) throw Error(Errc::kUnknownEntity, "no record '" + std::string(id) + "'");
  const auto path = ds.bundle.ImagePath(id);
  if (!path || !fs::is_regular_file(*path)) {
    throw Error(Errc::kUnknownEntity, "no image for record '" + std::string(id) + "'");
  }
  return {200, "image/png", ReadTextFile(*path)};
}

// --- HTTP adapter ----------------------------------------------------------

struct HttpServer::Impl {
  ApiSession& session;
  httplib::Server server;
  explicit Impl(ApiSession& s) : session(s) {}
};

HttpServer::HttpServer(ApiSession& session) : impl_(std::make_unique<Impl>(session)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    QueryParams params;
    for (const auto& [k, v] : req.params) params.emplace(k, v);
    const ApiResponse r = impl_->session.Handle(req.method, req.path, params,
                                                req.get_header_value("Accept"), req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  impl_->server.Get(R"(/.*)", handler);
  impl_->server.Post(R"(/.*)", handler);
  impl_->server.Put(R"(/.*)", handler);
  impl_->server.Delete(R"(/.*)", handler);
}

HttpServer::~HttpServer() { Stop(); }

int HttpServer::Bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(Errc::kIoError, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::Listen() { impl_->server.listen_after_bind(); }

void HttpServer::Stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace sflens
