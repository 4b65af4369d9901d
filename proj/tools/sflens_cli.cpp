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

// sflens: batch driver for bundles, studies, metrics, embeddings and the
// HTTP service.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sflens/analytics.hpp"
#include "sflens/bundle.hpp"
#include "sflens/csf.hpp"
#include "sflens/error.hpp"
#include "sflens/image.hpp"
#include "sflens/metrics.hpp"
#include "sflens/service.hpp"
#include "sflens/shift.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sflens;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

// Relative bundle paths that do not exist from the working directory are
// looked up under $SF_LENS_BUNDLE_ROOT.
fs::path ResolvePath(const std::string& arg) {
  fs::path p(arg);
  if (p.is_absolute() || fs::exists(p)) return p;
  if (const char* root = std::getenv("SF_LENS_BUNDLE_ROOT"); root != nullptr && *root != '\0') {
    return fs::path(root) / p;
  }
  return p;
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<int> ParseLevels(const std::string& text) {
  std::vector<int> levels;
  for (const auto& part : SplitList(text)) {
    const auto dash = part.find('-');
    try {
      if (dash != std::string::npos) {
        const int lo = std::stoi(part.substr(0, dash));
        const int hi = std::stoi(part.substr(dash + 1));
        for (int l = lo; l <= hi; ++l) levels.push_back(l);
      } else {
        levels.push_back(std::stoi(part));
      }
    } catch (const std::logic_error&) {
      throw Error(Errc::kBadParameter, "bad level list '" + text + "'");
    }
  }
  for (int l : levels) {
    if (l < kMinLevel || l > kMaxLevel) throw Error(Errc::kBadParameter, "level " + std::to_string(l) + " outside 1..5");
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  return levels;
}

std::vector<ChannelId> ParseChannels(const BundleManifest& manifest, const std::string& list) {
  if (list.empty()) return AvailableChannels(manifest);
  std::vector<ChannelId> out;
  for (const auto& name : SplitList(list)) {
    out.push_back(ChannelId::Parse(name));
    RequireChannel(manifest, out.back());
  }
  return out;
}

std::vector<StudyDefinition> SelectStudies(const InferenceBundle& bundle, const std::string& arg) {
  auto all = BundleStudies(bundle);
  if (arg.empty()) return all;
  if (fs::is_regular_file(arg)) return StudiesFromJson(ReadTextFile(arg));
  std::vector<StudyDefinition> out;
  for (const auto& name : SplitList(arg)) {
    auto it = std::find_if(all.begin(), all.end(), [&](const StudyDefinition& s) { return s.name == name; });
    if (it == all.end()) throw Error(Errc::kUnknownEntity, "no study '" + name + "'");
    out.push_back(*it);
  }
  return out;
}

void Emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    WriteTextFile(out, text);
  }
}

struct EmbedArgs {
  std::string scope = "all";
  std::uint64_t seed = 0;
  double perplexity = 30.0;
  int iterations = 1000;
  std::size_t pca_dims = 50;
  std::size_t run = 0;

  void Register(CLI::App* cmd) {
    cmd->add_option("--scope", scope, "study name, predicate or 'all'");
    cmd->add_option("--seed", seed, "t-SNE seed");
    cmd->add_option("--perplexity", perplexity);
    cmd->add_option("--iterations", iterations);
    cmd->add_option("--pca-dims", pca_dims);
    cmd->add_option("--run", run);
  }
  EmbedParams Params(unsigned threads) const {
    EmbedParams p;
    p.seed = seed;
    p.perplexity = perplexity;
    p.iterations = iterations;
    p.pca_dims = pca_dims;
    p.run = run;
    p.threads = threads;
    return p;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sflens: silent-failure analytics for inference bundles"};
  app.require_subcommand(1);
  unsigned threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  // validate
  std::string bundle_arg;
  auto* validate = app.add_subcommand("validate", "load and check a bundle");
  validate->add_option("bundle", bundle_arg)->required();

  // synth
  SyntheticSpec spec;
  std::string out_arg;
  auto* synth = app.add_subcommand("synth", "generate a synthetic bundle");
  synth->add_option("--n", spec.n, "records per run");
  synth->add_option("--k", spec.num_classes, "classes");
  synth->add_option("--d", spec.latent_dim, "latent dimension");
  synth->add_option("--t", spec.mcd_samples, "MCD samples");
  synth->add_option("--separation", spec.class_separation);
  synth->add_option("--offset", spec.shift_offset, "target-domain shift");
  synth->add_option("--seed", spec.seed);
  synth->add_option("--runs", spec.runs);
  synth->add_option("--variants", spec.variants, "records that get brightness variants");
  synth->add_option("--target-fraction", spec.target_fraction);
  synth->add_option("--name", spec.name);
  synth->add_flag("--images", spec.images, "write PNG images");
  synth->add_option("--out", out_arg)->required();

  // corrupt
  std::string images_arg, kind_arg = "all", levels_arg = "1-5";
  std::uint64_t corrupt_seed = 0;
  auto* corrupt = app.add_subcommand("corrupt", "write corrupted copies of PNG images");
  corrupt->add_option("--images", images_arg)->required();
  corrupt->add_option("--kind", kind_arg, "corruption kind or 'all'");
  corrupt->add_option("--levels", levels_arg, "e.g. 1-5 or 1,3,5");
  corrupt->add_option("--seed", corrupt_seed);
  corrupt->add_option("--out", out_arg)->required();

  // split
  std::string preset_arg;
  auto* split = app.add_subcommand("split", "tag source/target domains with a preset");
  split->add_option("--preset", preset_arg)->required();
  split->add_option("--bundle", bundle_arg)->required();

  // evaluate
  std::string studies_arg, channels_arg, outcomes_arg;
  bool as_json = false;
  std::vector<double> taus;
  auto* evaluate = app.add_subcommand("evaluate", "AURC report per study and channel");
  evaluate->add_option("--bundle", bundle_arg)->required();
  evaluate->add_option("--studies", studies_arg, "studies JSON file or comma-separated names");
  evaluate->add_option("--channels", channels_arg, "comma-separated channels");
  evaluate->add_option("--out", out_arg, "report path (stdout when absent)");
  evaluate->add_option("--outcomes", outcomes_arg, "TP/FP/TN/FN counts CSV");
  evaluate->add_option("--tau", taus, "extra detection thresholds");
  evaluate->add_flag("--json", as_json);

  // curves
  std::string study_arg, channel_arg = "msr";
  std::size_t points = 0, run_arg = 0;
  auto* curves = app.add_subcommand("curves", "risk-coverage curve CSV");
  curves->add_option("--bundle", bundle_arg)->required();
  curves->add_option("--study", study_arg)->required();
  curves->add_option("--channel", channel_arg);
  curves->add_option("--points", points, "thin to this many coverage points");
  curves->add_option("--run", run_arg);
  curves->add_option("--out", out_arg);

  // embed / clusters / failures / sweep
  EmbedArgs embed_args;
  auto* embed = app.add_subcommand("embed", "PCA + t-SNE embedding of a scope");
  embed->add_option("--bundle", bundle_arg)->required();
  embed->add_option("--out", out_arg, "also write the frame JSON here");
  embed_args.Register(embed);

  std::string concept_arg = "all";
  std::size_t k_arg = kDefaultClusters;
  auto* clusters = app.add_subcommand("clusters", "concept clusters in the embedding");
  clusters->add_option("--bundle", bundle_arg)->required();
  clusters->add_option("--concept", concept_arg);
  clusters->add_option("--k", k_arg);
  clusters->add_option("--out", out_arg);
  embed_args.Register(clusters);

  std::size_t top = 2;
  bool locality = false;
  auto* failures = app.add_subcommand("failures", "most confident failures");
  failures->add_option("--bundle", bundle_arg)->required();
  failures->add_option("--channel", channel_arg);
  failures->add_option("--top", top);
  failures->add_flag("--locality", locality, "classify failure locality in the embedding");
  failures->add_option("--out", out_arg);
  embed_args.Register(failures);

  std::string id_arg;
  auto* sweep = app.add_subcommand("sweep", "prediction and confidence over intensity levels");
  sweep->add_option("--bundle", bundle_arg)->required();
  sweep->add_option("--id", id_arg)->required();
  sweep->add_option("--kind", kind_arg)->required();
  sweep->add_option("--channel", channel_arg);
  sweep->add_option("--run", run_arg);

  // serve
  int port = 8080;
  std::string host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--bundle-root", bundle_arg, "defaults to $SF_LENS_BUNDLE_ROOT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (validate->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      ValidateBundle(b);
      std::cout << "ok " << b.manifest.name << " n=" << b.manifest.n << " K=" << b.manifest.num_classes
                << " T=" << b.manifest.mcd_samples << " d=" << b.manifest.latent_dim
                << " runs=" << b.manifest.runs << "\n";
    } else if (synth->parsed()) {
      const InferenceBundle b = GenerateSyntheticBundle(spec);
      WriteBundle(b, out_arg);
      if (spec.images) WriteSyntheticImages(b, out_arg);
      std::cout << "wrote " << out_arg << " (" << b.runs.front().size() << " records x " << b.runs.size()
                << " runs)\n";
    } else if (corrupt->parsed()) {
      std::vector<CorruptionKind> kinds;
      if (kind_arg == "all") {
        kinds.assign(kAllCorruptions.begin(), kAllCorruptions.end());
      } else {
        for (const auto& k : SplitList(kind_arg)) kinds.push_back(ParseCorruption(k));
      }
      const std::vector<int> levels = ParseLevels(levels_arg);
      const fs::path src = ResolvePath(images_arg);
      if (!fs::is_directory(src)) throw Error(Errc::kMissingFile, src.string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(src)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      fs::create_directories(out_arg);
      json images = json::array();
      json studies = json::array();
      for (CorruptionKind kind : kinds) {
        for (int level : levels) {
          const std::string kname(CorruptionName(kind));
          json members = json::array();
          for (const fs::path& file : files) members.push_back(CorruptedId(file.stem().string(), kind, level));
          studies.push_back({{"name", "cor-" + kname + "-" + std::to_string(level)},
                             {"kind", "cor"},
                             {"predicate", "shift_kind=\"" + kname + "\" && intensity=" + std::to_string(level)},
                             {"parameters",
                              {{"corruption", kname},
                               {"level", level},
                               {"strength", CorruptionStrength(kind, level)},
                               {"seed", corrupt_seed}}},
                             {"members", members}});
        }
      }
      for (const fs::path& file : files) {
        const std::string id = file.stem().string();
        const Image img = ReadPng(file);
        for (CorruptionKind kind : kinds) {
          for (int level : levels) {
            const std::string cid = CorruptedId(id, kind, level);
            WritePng(Corrupt(img, {kind, level, corrupt_seed}, id), fs::path(out_arg) / (cid + ".png"));
            images.push_back({{"id", cid},
                              {"origin", id},
                              {"shift_kind", std::string(CorruptionName(kind))},
                              {"intensity", level},
                              {"file", cid + ".png"}});
          }
        }
      }
      WriteTextFile(fs::path(out_arg) / "corruptions.json",
                    json{{"studies", studies}, {"images", images}}.dump(2) + "\n");
      std::cout << "wrote " << images.size() << " images to " << out_arg << "\n";
    } else if (split->parsed()) {
      const fs::path dir = ResolvePath(bundle_arg);
      InferenceBundle b = LoadBundle(dir);
      const SplitResult r = ApplySplit(b, FindPreset(preset_arg));
      WriteBundleMetadata(b, dir);
      SaveBundleStudies(dir, r.studies);
      std::cout << preset_arg << ": source=" << r.source << " target=" << r.target << "\n";
    } else if (evaluate->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      EvaluateOptions opt;
      opt.threads = threads;
      opt.taus = taus;
      const MetricReport report = Evaluate(b, SelectStudies(b, studies_arg), ParseChannels(b.manifest, channels_arg), opt);
      Emit(as_json ? ReportToJson(report) : ReportToCsv(report), out_arg);
      if (!as_json) {
        std::string outcomes = outcomes_arg;
        if (outcomes.empty() && !out_arg.empty() && out_arg != "-") {
          fs::path p(out_arg);
          outcomes = (p.parent_path() / (p.stem().string() + ".outcomes.csv")).string();
        }
        if (!outcomes.empty()) Emit(OutcomesToCsv(report), outcomes);
      } else if (!outcomes_arg.empty()) {
        Emit(OutcomesToCsv(report), outcomes_arg);
      }
    } else if (curves->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      const auto studies = SelectStudies(b, study_arg);
      const ChannelId channel = ChannelId::Parse(channel_arg);
      RequireChannel(b.manifest, channel);
      if (run_arg >= b.runs.size()) throw Error(Errc::kUnknownEntity, "run " + std::to_string(run_arg));
      const StudySlice s = SliceStudy(b, run_arg, studies.front(), channel);
      RiskCoverageCurve curve = RcCurve(s.residuals, s.confidences, s.ids);
      if (points > 0) curve = ThinCurve(curve, points);
      Emit(CurveToCsv(curve), out_arg);
    } else if (embed->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      bool computed = false;
      const EmbeddingFrame f = CachedEmbedding(b, embed_args.scope, embed_args.Params(threads), &computed);
      if (!out_arg.empty()) {
        json doc = json::parse(EmbeddingToJson(f));
        doc["coords"] = f.coords;
        Emit(doc.dump() + "\n", out_arg);
      }
      const double kl = f.objective.empty() ? 0.0 : f.objective.back().second;
      std::cout << (computed ? "computed" : "cached") << " embedding " << f.key << " scope=" << f.scope
                << " n=" << f.size() << " kl=" << FormatNumber(kl) << "\n";
    } else if (clusters->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      const EmbeddingFrame f = CachedEmbedding(b, embed_args.scope, embed_args.Params(threads));
      const ConceptCluster cc = ClusterConcept(b, f, concept_arg, k_arg, embed_args.seed);
      json list = json::array();
      for (Eigen::Index c = 0; c < cc.centers.rows(); ++c) {
        const auto i = static_cast<std::size_t>(c);
        list.push_back({{"center", {cc.centers(c, 0), cc.centers(c, 1), cc.centers(c, 2)}},
                        {"representative_id", cc.representative_ids[i]},
                        {"size", cc.sizes[i]}});
      }
      Emit(json{{"concept", cc.concept_name}, {"predicate", cc.predicate}, {"k", cc.centers.rows()},
                {"clusters", list}}
                   .dump(2) + "\n",
           out_arg);
    } else if (failures->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      const ChannelId channel = ChannelId::Parse(channel_arg);
      RequireChannel(b.manifest, channel);
      const auto records = ResolveScope(b, embed_args.run, embed_args.scope);
      const auto found = MineSilentFailures(b, embed_args.run, records, channel, top);
      std::map<std::string, std::string> where;
      if (locality) {
        const EmbeddingFrame f = CachedEmbedding(b, embed_args.scope, embed_args.Params(threads));
        for (const auto& lf : LocateFailures(b, f)) where[lf.id] = std::string(FailureLocalityName(lf.locality));
      }
      json list = json::array();
      for (const auto& fl : found) {
        json item{{"id", fl.id}, {"confidence", fl.confidence}, {"prediction", fl.prediction}, {"label", fl.label}};
        item["image_ref"] = fl.image_ref ? json(*fl.image_ref) : json(nullptr);
        if (auto it = where.find(fl.id); it != where.end()) item["locality"] = it->second;
        list.push_back(std::move(item));
      }
      Emit(json{{"channel", channel.Name()}, {"scope", embed_args.scope}, {"failures", list}}.dump(2) + "\n",
           out_arg);
    } else if (sweep->parsed()) {
      const InferenceBundle b = LoadBundle(ResolvePath(bundle_arg));
      const ChannelId channel = ChannelId::Parse(channel_arg);
      RequireChannel(b.manifest, channel);
      json levels = json::array();
      for (const auto& p : IntensitySweep(b, run_arg, id_arg, kind_arg, channel)) {
        levels.push_back({{"level", p.level}, {"id", p.id}, {"prediction", p.prediction},
                          {"label", p.label}, {"confidence", p.confidence}});
      }
      std::cout << json{{"id", id_arg}, {"kind", kind_arg}, {"levels", levels}}.dump(2) << "\n";
    } else if (serve->parsed()) {
      std::string root = bundle_arg;
      if (root.empty()) {
        const char* env = std::getenv("SF_LENS_BUNDLE_ROOT");
        if (env == nullptr || *env == '\0') {
          std::cerr << "serve: --bundle-root or SF_LENS_BUNDLE_ROOT is required\n";
          return kExitUsage;
        }
        root = env;
      }
      ServiceConfig config;
      config.bundle_root = ResolvePath(root);
      config.host = host;
      config.port = port;
      config.threads = threads;
      ApiSession session(config);
      HttpServer server(session);
      const int bound = server.Bind(host, port);
      std::cout << "serving " << session.DatasetNames().size() << " dataset(s) on http://" << host << ":"
                << bound << std::endl;
      server.Listen();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}
