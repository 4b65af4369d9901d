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

// Acceptance runner: one PASS/FAIL line per criterion.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sflens/analytics.hpp"
#include "sflens/bundle.hpp"
#include "sflens/csf.hpp"
#include "sflens/kmeans.hpp"
#include "sflens/metrics.hpp"
#include "sflens/shift.hpp"
#include "test_util.hpp"

using namespace sflens;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

Verdict AurcOracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20260101);
  double worst = 0.0;
  std::size_t max_n = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 1000;
    max_n = std::max(max_n, n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double err_rate = u(rng);
    const int grid = 1 + static_cast<int>(rng() % 50);  // coarse grids force ties
    std::vector<std::uint8_t> r(n);
    std::vector<int> ri(n);
    std::vector<double> c(n);
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      ri[i] = u(rng) < err_rate ? 1 : 0;
      r[i] = static_cast<std::uint8_t>(ri[i]);
      c[i] = (t % 2 == 0) ? std::round(u(rng) * grid) / grid : u(rng);
    }
    // inject duplicates of existing confidences
    for (std::size_t i = 0; i < n / 4; ++i) c[rng() % n] = c[rng() % n];
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "id%06zu", perm[i]);
      ids[i] = buf;
    }
    const double got = Aurc(RcCurve(r, c, ids));
    const double want = oracle::Aurc(ri, c, ids);
    worst = std::max(worst, std::abs(got - want));
  }
  const double secs = Seconds(start);
  return {worst <= 1e-9 && secs < 10.0,
          "max |diff| " + Fmt("%.3g", worst) + " over 1000 instances (n <= " + std::to_string(max_n) +
              "), " + Fmt("%.2f", secs) + " s"};
}

// --- 2 ---------------------------------------------------------------------

Verdict WorkedExample() {
  const std::vector<std::uint8_t> r{0, 0, 1, 1};
  const RiskCoverageCurve fwd = RcCurve(r, std::vector<double>{0.9, 0.8, 0.2, 0.1});
  const RiskCoverageCurve rev = RcCurve(r, std::vector<double>{0.1, 0.2, 0.8, 0.9});
  const bool risks = fwd.risk == std::vector<double>{0.0, 0.0, 1.0 / 3.0, 0.5};
  const double a = Aurc(fwd), e = ExcessAurc(fwd), ra = Aurc(rev);
  const bool ok = risks && std::abs(a - 250.0 / 12.0) < 1e-12 && std::abs(e) < 1e-12 &&
                  std::abs(ra - 950.0 / 12.0) < 1e-12 && std::abs(ExcessAurc(rev) - 700.0 / 12.0) < 1e-12;
  return {ok, "risks " + std::string(risks ? "[0, 0, 1/3, 1/2]" : "differ") + ", AURC " + Fmt("%.4f", a) +
                  ", e-AURC " + Fmt("%.4f", e) + ", reversed AURC " + Fmt("%.4f", ra)};
}

// --- 3, 4, 5 ---------------------------------------------------------------

std::vector<SyntheticSpec> BinaryFixtures(std::size_t t, double mcd_noise) {
  std::vector<SyntheticSpec> out;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (double sep : {1.0, 3.0, 8.0}) {
      for (double offset : {0.0, 4.0}) {
        SyntheticSpec s;
        s.n = 1000;
        s.seed = seed;
        s.class_separation = sep;
        s.shift_offset = offset;
        s.mcd_samples = t;
        s.mcd_noise = mcd_noise;
        s.variants = 20;
        out.push_back(s);
      }
    }
  }
  return out;
}

Verdict BinaryEquivalence() {
  std::size_t bundles = 0, differing = 0;
  std::string first_diff;
  for (const SyntheticSpec& s : BinaryFixtures(1, 1.0)) {
    const InferenceBundle b = GenerateSyntheticBundle(s);
    for (const auto& study : DefaultStudies(b)) {
      for (auto [x, y] : {std::pair{"msr", "pe"}, std::pair{"mcd-msr", "mcd-pe"}}) {
        const StudySlice a = SliceStudy(b, 0, study, ChannelId::Parse(x));
        const StudySlice p = SliceStudy(b, 0, study, ChannelId::Parse(y));
        const RiskCoverageCurve ca = RcCurve(a.residuals, a.confidences, a.ids);
        const RiskCoverageCurve cp = RcCurve(p.residuals, p.confidences, p.ids);
        if (ca.risk != cp.risk || Aurc(ca) != Aurc(cp)) {
          ++differing;
          if (first_diff.empty()) {
            first_diff = std::string(x) + "/" + y + " sep " + Fmt("%.0f", s.class_separation) + " seed " +
                         std::to_string(s.seed) + " study " + study.name;
          }
        }
      }
    }
    ++bundles;
  }
  return {differing == 0, std::to_string(bundles) + " K=2 bundles, all studies: " +
                              (differing == 0 ? std::string("identical curves and AURC")
                                              : std::to_string(differing) + " differ, first " + first_diff)};
}

Verdict McdDegeneracy() {
  double worst = 0.0;
  std::size_t records = 0;
  for (double noise : {0.0, 1.0}) {
    for (const SyntheticSpec& s : BinaryFixtures(1, noise)) {
      const InferenceBundle b = GenerateSyntheticBundle(s);
      const auto msr = ComputeChannel(b, 0, ChannelId::Parse("msr")).scores;
      const auto pe = ComputeChannel(b, 0, ChannelId::Parse("pe")).scores;
      const auto mmsr = ComputeChannel(b, 0, ChannelId::Parse("mcd-msr")).scores;
      const auto mpe = ComputeChannel(b, 0, ChannelId::Parse("mcd-pe")).scores;
      const auto mee = ComputeChannel(b, 0, ChannelId::Parse("mcd-ee")).scores;
      for (std::size_t i = 0; i < msr.size(); ++i) {
        const auto sample = b.Record(0, i).mcd;
        // the single sample seen as deterministic logits
        const double smsr = Msr(sample), spe = PredictiveEntropyConfidence(sample);
        worst = std::max({worst, std::abs(mmsr[i] - smsr), std::abs(mpe[i] - spe), std::abs(mee[i] - spe)});
        if (noise == 0.0) {
          worst = std::max({worst, std::abs(mmsr[i] - msr[i]), std::abs(mpe[i] - pe[i]),
                            std::abs(mee[i] - pe[i])});
        }
        ++records;
      }
    }
  }
  return {worst <= 1e-12, std::to_string(records) + " records with T=1, max |diff| " + Fmt("%.3g", worst)};
}

Verdict Jensen() {
  std::size_t records = 0, violations = 0, identical = 0, equal_distinct = 0;
  std::vector<SyntheticSpec> specs = BinaryFixtures(8, 1.0);
  for (auto s : BinaryFixtures(8, 0.0)) specs.push_back(s);
  for (std::size_t k : {3u, 5u}) {
    SyntheticSpec s;
    s.n = 1000;
    s.num_classes = k;
    s.class_separation = 3.0;
    s.mcd_samples = 6;
    specs.push_back(s);
  }
  for (const SyntheticSpec& s : specs) {
    const InferenceBundle b = GenerateSyntheticBundle(s);
    const auto mpe = ComputeChannel(b, 0, ChannelId::Parse("mcd-pe")).scores;
    const auto mee = ComputeChannel(b, 0, ChannelId::Parse("mcd-ee")).scores;
    const std::size_t k = b.manifest.num_classes;
    for (std::size_t i = 0; i < mpe.size(); ++i) {
      ++records;
      const auto stack = b.Record(0, i).mcd;
      // identical predictive distributions across samples
      bool same = true;
      const auto first = Softmax(stack.subspan(0, k));
      for (std::size_t t = 1; t < stack.size() / k && same; ++t) {
        same = Softmax(stack.subspan(t * k, k)) == first;
      }
      if (same) {
        ++identical;
        if (std::abs(mee[i] - mpe[i]) > 1e-12) ++violations;
      } else {
        if (mee[i] < mpe[i]) ++violations;
        if (mee[i] == mpe[i]) ++equal_distinct;
      }
    }
  }
  return {violations == 0 && equal_distinct == 0,
          std::to_string(records) + " records, " + std::to_string(identical) +
              " with identical samples, violations " + std::to_string(violations) +
              ", ties with distinct samples " + std::to_string(equal_distinct)};
}

// --- 6, 7 ------------------------------------------------------------------

double StudyAurc(const InferenceBundle& b, const StudyDefinition& study, const char* channel) {
  const StudySlice s = SliceStudy(b, 0, study, ChannelId::Parse(channel));
  return Aurc(RcCurve(s.residuals, s.confidences, s.ids));
}

Verdict CsfDiscrimination() {
  const StudyDefinition pooled{"pooled", StudyKind::kIid, Predicate()};
  double gap = 0.0, literal_gap = 0.0, msr_sum = 0.0, rnd_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SyntheticSpec s;
    s.n = 2000;
    s.class_separation = 8.0;
    s.seed = seed;
    s.shift_offset = 4.0;
    const InferenceBundle b = GenerateSyntheticBundle(s);
    const double m = StudyAurc(b, pooled, "msr"), r = StudyAurc(b, pooled, "ext:random");
    msr_sum += m;
    rnd_sum += r;
    gap += (r - m) / 3.0;
    s.shift_offset = 0.0;
    const InferenceBundle clean = GenerateSyntheticBundle(s);
    literal_gap += (StudyAurc(clean, pooled, "ext:random") - StudyAurc(clean, pooled, "msr")) / 3.0;
  }
  return {gap >= 5.0, "seeds 0-2, all records of the offset-4 fixture: AURC msr " + Fmt("%.2f", msr_sum / 3) +
                          " vs random " + Fmt("%.2f", rnd_sum / 3) + ", gap " + Fmt("%.2f", gap) +
                          " (offset 0 fixture has no errors, gap " + Fmt("%.2f", literal_gap) + ")"};
}

Verdict ShiftDegradation() {
  SyntheticSpec s;
  s.n = 2000;
  s.shift_offset = 4.0;
  const InferenceBundle b = GenerateSyntheticBundle(s);
  const auto studies = DefaultStudies(b);
  const StudyDefinition& iid = studies.at(0);
  const StudyDefinition& target = studies.at(1);
  bool ok = iid.name == "iid" && target.name == "target";
  std::string detail;
  for (const auto& ch : AvailableChannels(b.manifest)) {
    const std::string name = ch.Name();
    const double a = StudyAurc(b, iid, name.c_str()), t = StudyAurc(b, target, name.c_str());
    ok = ok && t > a;
    detail += (detail.empty() ? "" : ", ") + name + " " + Fmt("%.2f", a) + "->" + Fmt("%.2f", t);
  }
  return {ok, "iid->target AURC: " + detail};
}

// --- 8 ---------------------------------------------------------------------

double MeanAbsDiff(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.pixels()[i] - b.pixels()[i]);
  return s / static_cast<double>(a.size());
}

Verdict CorruptionStatistics() {
  bool ok = true;
  std::string detail;
  // noise
  const Image flat(64, 64, 1, 0.5f);
  const double n = static_cast<double>(flat.size());
  int noise_fail = 0;
  for (int l = kMinLevel; l <= kMaxLevel; ++l) {
    const double sigma = CorruptionStrength(CorruptionKind::kGaussianNoise, l);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Image x = Corrupt(flat, {CorruptionKind::kGaussianNoise, l, seed}, "flat");
      const double m = x.Mean();
      double var = 0.0;
      for (float v : x.pixels()) var += (v - m) * (v - m);
      var /= n - 1.0;
      if (std::abs(var - sigma * sigma) > 3.0 * sigma * sigma * std::sqrt(2.0 / (n - 1.0))) ++noise_fail;
    }
  }
  ok = ok && noise_fail == 0;
  detail += "noise variance outside 3 sd: " + std::to_string(noise_fail) + "/100";
  // brightness
  double worst = 0.0;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image rnd(64, 64, 3);
  for (auto& v : rnd.pixels()) v = u(rng);
  for (int l = kMinLevel; l <= kMaxLevel; ++l) {
    for (CorruptionKind k : {CorruptionKind::kBrightnessUp, CorruptionKind::kBrightnessDown}) {
      const double beta = CorruptionStrength(k, l);
      const Image x = ShiftBrightness(rnd, beta, false);
      worst = std::max(worst, std::abs(x.Mean() - (rnd.Mean() + beta)));
      for (std::size_t i = 0; i < x.size(); ++i) {
        worst = std::max(worst, std::abs(x.pixels()[i] - (rnd.pixels()[i] + beta)));
      }
    }
    const Image c = Corrupt(flat, {CorruptionKind::kBrightnessUp, l, 0}, "flat");
    worst = std::max(worst, std::abs(c.Mean() - (0.5 + CorruptionStrength(CorruptionKind::kBrightnessUp, l))));
  }
  ok = ok && worst <= 1e-6;
  detail += ", brightness max error " + Fmt("%.2g", worst);
  // severity over the fixture's own images
  testutil::TempDir dir("accept-images");
  SyntheticSpec s;
  s.n = 20;
  s.images = true;
  const InferenceBundle b = GenerateSyntheticBundle(s);
  WriteBundle(b, dir.path());
  WriteSyntheticImages(LoadBundle(dir.path()), dir.path());
  std::vector<std::pair<std::string, Image>> images;
  for (const auto& id : b.runs[0].ids) images.emplace_back(id, ReadPng(dir.path() / "images" / (id + ".png")));
  int monotone_fail = 0, per_image_drops = 0;
  for (CorruptionKind k : kAllCorruptions) {
    std::vector<double> mean(kMaxLevel + 1, 0.0);
    for (const auto& [id, img] : images) {
      double prev = 0.0;
      for (int l = kMinLevel; l <= kMaxLevel; ++l) {
        const double d = MeanAbsDiff(img, Corrupt(img, {k, l, 0}, id));
        if (d < prev) ++per_image_drops;
        prev = d;
        mean[static_cast<std::size_t>(l)] += d / static_cast<double>(images.size());
      }
    }
    for (int l = kMinLevel + 1; l <= kMaxLevel; ++l) {
      if (mean[static_cast<std::size_t>(l)] < mean[static_cast<std::size_t>(l - 1)]) ++monotone_fail;
    }
  }
  ok = ok && monotone_fail == 0;
  detail += ", severity steps decreasing: " + std::to_string(monotone_fail) + "/20 (per-image drops " +
            std::to_string(per_image_drops) + "/500)";
  return {ok, detail};
}

// --- 9 ---------------------------------------------------------------------

Verdict EmbeddingPipeline() {
  const auto start = Clock::now();
  SyntheticSpec s;
  s.n = 300;
  s.num_classes = 3;
  s.latent_dim = 50;
  s.class_separation = 20.0;
  s.mcd_samples = 0;
  s.seed = 4;
  const InferenceBundle b = GenerateSyntheticBundle(s);
  EmbedParams p;
  p.threads = 1;
  const EmbeddingFrame one = EmbedScope(b, "all", p);
  const EmbeddingFrame again = EmbedScope(b, "all", p);
  p.threads = 4;
  const EmbeddingFrame four = EmbedScope(b, "all", p);
  const double secs = Seconds(start) / 3.0;
  const KMeansResult km = KMeans(one.Coordinates(), 3, 0);
  std::vector<std::size_t> truth;
  for (std::size_t r : one.records) truth.push_back(b.runs[0].labels[r]);
  const double ari = oracle::AdjustedRand(truth, km.assignment);
  const bool det = one.coords == again.coords && one.coords == four.coords;
  return {ari >= 0.9 && det && secs < 60.0,
          "n=" + std::to_string(one.size()) + " ARI " + Fmt("%.4f", ari) + ", identical across runs and threads 1/4: " +
              (det ? "yes" : "no") + ", " + Fmt("%.2f", secs) + " s per embedding"};
}

// --- 10 --------------------------------------------------------------------

Verdict KMeansCriterion() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  std::size_t increases = 0, steps = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 5 + rng() % 500;
    const std::size_t blobs = 1 + rng() % 12;
    RowMatrix centers(static_cast<Eigen::Index>(blobs), 3);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = 10.0 * g(rng);
    RowMatrix x(static_cast<Eigen::Index>(m), 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x.row(i) = centers.row(static_cast<Eigen::Index>(rng() % blobs));
      for (int a = 0; a < 3; ++a) x(i, a) += g(rng) * (0.5 + static_cast<double>(rng() % 4));
    }
    const KMeansResult r = KMeans(x, 1 + rng() % 15, rng());
    for (std::size_t i = 1; i < r.wcss_trace.size(); ++i, ++steps) {
      if (r.wcss_trace[i] > r.wcss_trace[i - 1] * (1.0 + 1e-12)) ++increases;
    }
  }
  RowMatrix x(200, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  const std::size_t k_default = static_cast<std::size_t>(KMeans(x).centers.rows());
  return {increases == 0 && k_default == 9,
          "100 instances, " + std::to_string(steps) + " Lloyd steps, increases " + std::to_string(increases) +
              ", default k " + std::to_string(k_default)};
}

// --- 11 --------------------------------------------------------------------

int Shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict EndToEnd() {
  const auto start = Clock::now();
  testutil::TempDir dir("accept-e2e");
  const std::string cli = "'" SFLENS_CLI_PATH "'";
  const std::string d = "'" + dir.path().string() + "'";
  const std::string quiet = " > /dev/null";
  const std::vector<std::string> steps{
      cli + " synth --n 2000 --offset 4 --variants 20 --images --seed 0 --out " + d + "/b" + quiet,
      cli + " split --preset batch-acq --bundle " + d + "/b" + quiet,
      cli + " --threads 4 evaluate --bundle " + d + "/b --tau 0.9 --tau 0.99 --out " + d + "/report.csv" + quiet,
      cli + " --threads 4 embed --bundle " + d + "/b" + quiet,
      cli + " --threads 4 failures --bundle " + d + "/b --channel msr --top 2 --locality > " + d + "/failures.json",
  };
  for (const auto& step : steps) {
    if (Shell(step) != 0) return {false, "command failed: " + step};
  }
  const double secs = Seconds(start);
  std::ifstream in(dir.path() / "report.outcomes.csv");
  std::string line;
  std::getline(in, line);
  std::size_t rows = 0, broken = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 9) {
      ++broken;
      continue;
    }
    const auto n = std::stoul(f[4]);
    if (std::stoul(f[5]) + std::stoul(f[6]) + std::stoul(f[7]) + std::stoul(f[8]) != n) ++broken;
    ++rows;
  }
  std::ifstream fj(dir.path() / "failures.json");
  std::stringstream fs;
  fs << fj.rdbuf();
  const bool failures_ok = fs.str().find("\"locality\"") != std::string::npos;
  return {broken == 0 && rows > 0 && failures_ok && secs < 300.0,
          std::to_string(rows) + " outcome rows, " + std::to_string(broken) + " not partitioning n, failures " +
              (failures_ok ? "written" : "missing") + ", " + Fmt("%.1f", secs) + " s"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"aurc-oracle-equivalence", AurcOracle},
      {"worked-example-goldens", WorkedExample},
      {"binary-ranking-equivalence", BinaryEquivalence},
      {"mcd-degeneracy", McdDegeneracy},
      {"jensen-property", Jensen},
      {"csf-discrimination", CsfDiscrimination},
      {"shift-degradation", ShiftDegradation},
      {"corruption-statistics", CorruptionStatistics},
      {"embedding-pipeline", EmbeddingPipeline},
      {"kmeans", KMeansCriterion},
      {"end-to-end-cli", EndToEnd},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
