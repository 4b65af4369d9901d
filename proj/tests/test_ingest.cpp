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

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "sflens/bundle.hpp"
#include "sflens/error.hpp"
#include "test_util.hpp"

using namespace sflens;
namespace fs = std::filesystem;

namespace {

SyntheticSpec SmallSpec() {
  SyntheticSpec s;
  s.n = 100;
  s.latent_dim = 8;
  s.mcd_samples = 2;
  return s;
}

Errc CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::kIoError;
}

double SourceAccuracy(const InferenceBundle& b) {
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < b.runs[0].size(); ++i) {
    const RecordView r = b.Record(0, i);
    if (r.Tag("domain") != "source") continue;
    ++total;
    correct += r.residual() == 0 ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string FileBytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("a written bundle loads back unchanged") {
  testutil::TempDir dir("ingest");
  const InferenceBundle b = GenerateSyntheticBundle(SmallSpec());
  WriteBundle(b, dir.path());
  const InferenceBundle back = LoadBundle(dir.path());
  CHECK(back.manifest.n == 100);
  CHECK(back.manifest.num_classes == 2);
  REQUIRE(back.runs.size() == 1);
  CHECK(back.runs[0].ids == b.runs[0].ids);
  CHECK(back.runs[0].labels == b.runs[0].labels);
  CHECK(back.runs[0].logits == b.runs[0].logits);
  CHECK(back.runs[0].mcd_logits == b.runs[0].mcd_logits);
  CHECK(back.runs[0].latents == b.runs[0].latents);
  CHECK(back.runs[0].dg_logits == b.runs[0].dg_logits);
  CHECK(back.runs[0].ext_conf.at("random") == b.runs[0].ext_conf.at("random"));
  CHECK(back.Record(0, 5).Tag("domain") == b.Record(0, 5).Tag("domain"));
  CHECK_NOTHROW(ValidateBundle(back));
}

TEST_CASE("truncated logits are a shape mismatch") {
  testutil::TempDir dir("trunc");
  WriteBundle(GenerateSyntheticBundle(SmallSpec()), dir.path());
  const fs::path logits = dir / "run_0/logits.f32";
  fs::resize_file(logits, fs::file_size(logits) - 4);
  CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kShapeMismatch);
}

TEST_CASE("a NaN reports its record index") {
  testutil::TempDir dir("nan");
  InferenceBundle b = GenerateSyntheticBundle(SmallSpec());
  WriteBundle(b, dir.path());
  std::vector<float> logits = b.runs[0].logits;
  logits[7 * 2 + 1] = std::numeric_limits<float>::quiet_NaN();
  WriteF32File(dir / "run_0/logits.f32", logits);
  try {
    LoadBundle(dir.path());
    FAIL("expected NonFiniteValue");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kNonFiniteValue);
    CHECK(e.record().value() == 7);
    CHECK(std::string(e.what()).find("NonFiniteValue(record=7)") == 0);
  }
}

TEST_CASE("infinite external scores are rejected") {
  testutil::TempDir dir("inf");
  InferenceBundle b = GenerateSyntheticBundle(SmallSpec());
  WriteBundle(b, dir.path());
  std::vector<float> scores = b.runs[0].ext_conf.at("random");
  scores[3] = std::numeric_limits<float>::infinity();
  WriteF32File(dir / "run_0/ext_conf_random.f32", scores);
  CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kNonFiniteValue);
}

TEST_CASE("missing files and unknown tags are reported") {
  testutil::TempDir dir("missing");
  WriteBundle(GenerateSyntheticBundle(SmallSpec()), dir.path());
  SUBCASE("latents") {
    fs::remove(dir / "run_0/latents.f32");
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kMissingFile);
  }
  SUBCASE("manifest") {
    fs::remove(dir / "manifest.json");
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kMissingFile);
  }
  SUBCASE("undeclared metadata column") {
    std::string csv = ReadTextFile(dir / "run_0/metadata.csv");
    csv.replace(csv.find("domain"), 6, "scanner");
    WriteTextFile(dir / "run_0/metadata.csv", csv);
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kUnknownMetaTag);
  }
  SUBCASE("value outside the schema") {
    std::string csv = ReadTextFile(dir / "run_0/metadata.csv");
    csv.replace(csv.find(",source,"), 8, ",elsewhere,");
    WriteTextFile(dir / "run_0/metadata.csv", csv);
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kUnknownMetaTag);
  }
}

TEST_CASE("label range, duplicate ids and DG width are validated") {
  testutil::TempDir dir("labels");
  InferenceBundle b = GenerateSyntheticBundle(SmallSpec());
  WriteBundle(b, dir.path());
  SUBCASE("label") {
    std::vector<std::uint32_t> labels(b.runs[0].labels.begin(), b.runs[0].labels.end());
    labels[4] = 2;
    WriteU32File(dir / "run_0/labels.u32", labels);
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kLabelOutOfRange);
  }
  SUBCASE("duplicate id") {
    std::string csv = ReadTextFile(dir / "run_0/metadata.csv");
    csv.replace(csv.find("rec-0001"), 8, "rec-0000");
    WriteTextFile(dir / "run_0/metadata.csv", csv);
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kDuplicateId);
  }
  SUBCASE("dg width") {
    WriteF32File(dir / "run_0/dg_logits.f32", std::vector<float>(100 * 4, 0.0f));
    CHECK(CodeOf([&] { LoadBundle(dir.path()); }) == Errc::kWidthMismatch);
  }
}

TEST_CASE("manifest JSON round-trips") {
  const InferenceBundle b = GenerateSyntheticBundle(SmallSpec());
  const BundleManifest m = ManifestFromJson(ManifestToJson(b.manifest));
  CHECK(m.n == b.manifest.n);
  CHECK(m.mcd_samples == 2);
  CHECK(m.latent_dim == 8);
  CHECK(m.channels == b.manifest.channels);
  CHECK(m.dg_logits);
  CHECK(m.meta_schema.size() == b.manifest.meta_schema.size());
  CHECK_THROWS_AS(ManifestFromJson("{"), Error);
  CHECK(CodeOf([] { ManifestFromJson(R"({"schema_version":1,"name":"x","n":0,"K":2,"T":0,"d":1})"); }) ==
        Errc::kInvalidSpec);
}

TEST_CASE("synthetic fixture accuracy follows the class separation") {
  SyntheticSpec s;
  s.n = 2000;
  s.class_separation = 8.0;
  CHECK(SourceAccuracy(GenerateSyntheticBundle(s)) > 0.95);
  s.class_separation = 0.0;
  CHECK(std::abs(SourceAccuracy(GenerateSyntheticBundle(s)) - 0.5) <= 0.05);
  s.num_classes = 4;
  CHECK(std::abs(SourceAccuracy(GenerateSyntheticBundle(s)) - 0.25) <= 0.05);
}

TEST_CASE("same seed gives byte-identical bundles") {
  testutil::TempDir a("det-a"), b("det-b"), c("det-c");
  SyntheticSpec s = SmallSpec();
  s.variants = 3;
  s.runs = 2;
  WriteBundle(GenerateSyntheticBundle(s), a.path());
  WriteBundle(GenerateSyntheticBundle(s), b.path());
  s.seed = 1;
  WriteBundle(GenerateSyntheticBundle(s), c.path());
  for (const char* f : {"manifest.json", "run_0/logits.f32", "run_0/mcd_logits.f32", "run_1/latents.f32",
                        "run_0/labels.u32", "run_0/metadata.csv", "run_1/dg_logits.f32"}) {
    CHECK_MESSAGE(FileBytes(a / f) == FileBytes(b / f), f);
  }
  CHECK(FileBytes(a / "run_0/logits.f32") != FileBytes(c / "run_0/logits.f32"));
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec s = SmallSpec();
  s.n = 1;
  CHECK(CodeOf([&] { GenerateSyntheticBundle(s); }) == Errc::kInvalidSpec);
  s = SmallSpec();
  s.num_classes = 1;
  CHECK(CodeOf([&] { GenerateSyntheticBundle(s); }) == Errc::kInvalidSpec);
}

TEST_CASE("target records are shifted and variants are tagged") {
  SyntheticSpec s = SmallSpec();
  s.n = 400;
  s.shift_offset = 4.0;
  s.variants = 2;
  const InferenceBundle b = GenerateSyntheticBundle(s);
  const RunData& run = b.runs[0];
  CHECK(run.size() == 400 + 2 * 5);
  std::optional<std::size_t> v;
  for (std::size_t i = 0; i < run.size() && !v; ++i) {
    if (run.ids[i].ends_with("~brightness_up~3")) v = i;
  }
  REQUIRE(v.has_value());
  const RecordView rec = b.Record(0, *v);
  const std::string origin(rec.Tag("origin").value());
  CHECK(run.ids[*v] == origin + "~brightness_up~3");
  REQUIRE(run.Find(origin).has_value());
  CHECK(b.Record(0, *run.Find(origin)).Tag("domain") == "source");
  CHECK(rec.Tag("intensity") == "3");
  CHECK(rec.Tag("shift_kind") == "brightness_up");
  std::size_t source = 0, target = 0;
  for (std::size_t i = 0; i < run.size(); ++i) {
    const auto d = b.Record(0, i).Tag("domain");
    (d == "source" ? source : target) += 1;
  }
  CHECK(source + target == run.size());
  CHECK(target >= 150);
}

TEST_CASE("default studies cover iid, target and corruption levels") {
  SyntheticSpec s = SmallSpec();
  s.variants = 2;
  const InferenceBundle b = GenerateSyntheticBundle(s);
  const auto studies = DefaultStudies(b);
  auto has = [&](const std::string& name, StudyKind kind) {
    return std::any_of(studies.begin(), studies.end(),
                       [&](const StudyDefinition& d) { return d.name == name && d.kind == kind; });
  };
  CHECK(has("iid", StudyKind::kIid));
  CHECK(has("target", StudyKind::kAcq));
  CHECK(has("cor-brightness_up-1", StudyKind::kCor));
  CHECK(has("cor-brightness_up-5", StudyKind::kCor));
  const auto& iid = *std::find_if(studies.begin(), studies.end(), [](auto& d) { return d.name == "iid"; });
  for (std::size_t i : SelectRecords(b, 0, iid.predicate)) {
    CHECK(b.Record(0, i).Tag("domain") == "source");
    CHECK(b.Record(0, i).Tag("shift_kind") == "none");
  }
}

TEST_CASE("bundle studies file adds to the defaults") {
  testutil::TempDir dir("studies");
  InferenceBundle b = GenerateSyntheticBundle(SmallSpec());
  WriteBundle(b, dir.path());
  SaveBundleStudies(dir.path(), {{"low-batch", StudyKind::kAcq, Predicate::Parse("batch < 5")}});
  SaveBundleStudies(dir.path(), {{"high-batch", StudyKind::kAcq, Predicate::Parse("batch > 45")}});
  const auto studies = BundleStudies(LoadBundle(dir.path()));
  auto count = [&](const std::string& name) {
    return std::count_if(studies.begin(), studies.end(), [&](auto& d) { return d.name == name; });
  };
  CHECK(count("iid") == 1);
  CHECK(count("low-batch") == 1);
  CHECK(count("high-batch") == 1);
}

TEST_CASE("malignancy rule for nodule ratings") {
  const std::vector<double> a{1, 2, 3, 3}, b{2, 2, 2, 2}, c{1, 1, 1, 1}, d{5, 5, 5, 5};
  CHECK(DeriveLidcLabel(a) == NoduleLabel::kMalignant);
  CHECK(DeriveLidcLabel(b) == NoduleLabel::kBenign);
  CHECK(DeriveLidcLabel(c) == NoduleLabel::kBenign);
  CHECK(DeriveLidcLabel(d) == NoduleLabel::kMalignant);
  const std::vector<double> bad{1, 2, 6, 3}, low{0.5, 2, 2, 2};
  CHECK(CodeOf([&] { DeriveLidcLabel(bad); }) == Errc::kRatingOutOfRange);
  CHECK(CodeOf([&] { DeriveLidcLabel(low); }) == Errc::kRatingOutOfRange);
}

TEST_CASE("CSV parsing handles quotes") {
  const auto rows = ParseCsv("id,note\r\na,\"x, \"\"y\"\"\"\nb,\n");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][1] == "x, \"y\"");
  CHECK(rows[2][1].empty());
  CHECK(CsvEscape("a,b") == "\"a,b\"");
  CHECK(CsvEscape("plain") == "plain");
  CHECK_THROWS_AS(ParseCsv("a,\"b"), Error);
}
