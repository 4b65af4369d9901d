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

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "sflens/core.hpp"
#include "sflens/error.hpp"
#include "sflens/random.hpp"
#include "sflens/study.hpp"

using namespace sflens;

namespace {

ClassIndex P(std::vector<float> logits) { return Predict(logits); }

TagLookup Tags(std::map<std::string, std::string> tags) {
  return [tags = std::move(tags)](std::string_view tag) -> std::optional<std::string_view> {
    const auto it = tags.find(std::string(tag));
    if (it == tags.end()) return std::nullopt;
    return std::string_view(it->second);
  };
}

}  // namespace

TEST_CASE("predict takes the argmax and breaks ties to the lowest index") {
  CHECK(P({2.0f, 0.0f}) == 0);
  CHECK(P({1.0f, 1.0f}) == 0);
  CHECK(P({0.1f, 0.2f, 5.0f}) == 2);
  CHECK(P({-3.0f, 7.0f, 7.0f, 1.0f}) == 1);
}

TEST_CASE("residual marks wrong predictions") {
  const std::vector<float> right{2.0f, 0.0f};
  const std::vector<float> wrong{0.0f, 2.0f};
  const std::vector<float> tie{1.0f, 1.0f};
  CHECK(Residual(right, 0) == 0);
  CHECK(Residual(wrong, 0) == 1);
  CHECK(Residual(tie, 1) == 1);
}

TEST_CASE("detection outcomes follow the flagging rule") {
  CHECK(ClassifyDetection(true, 0.9, 0.5) == DetectionOutcome::kTN);
  CHECK(ClassifyDetection(false, 0.9, 0.5) == DetectionOutcome::kFN);
  CHECK(ClassifyDetection(false, 0.1, 0.5) == DetectionOutcome::kTP);
  CHECK(ClassifyDetection(true, 0.1, 0.5) == DetectionOutcome::kFP);
  // confidence equal to tau is not flagged
  CHECK(ClassifyDetection(false, 0.5, 0.5) == DetectionOutcome::kFN);
  CHECK(OutcomeName(DetectionOutcome::kFN) == "FN");
}

TEST_CASE("outcome counts partition the records for any tau") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<std::uint8_t> res(n);
    std::vector<double> conf(n);
    for (std::size_t i = 0; i < n; ++i) {
      res[i] = u(rng) < 0.3 ? 1 : 0;
      conf[i] = std::round(u(rng) * 10.0) / 10.0;
    }
    const double tau = u(rng);
    const OutcomeCounts c = CountOutcomes(res, conf, tau);
    CHECK(c.total() == n);
    std::size_t wrong = 0;
    for (auto r : res) wrong += r;
    CHECK(c.tp + c.fn == wrong);
  }
}

TEST_CASE("non-finite tau is rejected") {
  const std::vector<std::uint8_t> res{0, 1};
  const std::vector<double> conf{0.2, 0.4};
  CHECK_THROWS_AS(CountOutcomes(res, conf, std::nan("")), Error);
  try {
    CountOutcomes(res, conf, INFINITY);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kBadParameter);
  }
}

TEST_CASE("default tau is the confidence at 95% coverage") {
  std::vector<double> conf;
  for (int i = 1; i <= 100; ++i) conf.push_back(i / 100.0);
  // 95 records retained: the 95th largest value is 0.06
  CHECK(DefaultTau(conf) == doctest::Approx(0.06));
  CHECK(DefaultTau(conf, 1.0) == doctest::Approx(0.01));
  const std::vector<double> one{0.7};
  CHECK(DefaultTau(one) == 0.7);
}

TEST_CASE("error messages carry the code name and record index") {
  const Error e(Errc::kNonFiniteValue, "logits.f32", 7);
  CHECK(e.code() == Errc::kNonFiniteValue);
  CHECK(e.record().value() == 7);
  CHECK(std::string(e.what()) == "NonFiniteValue(record=7): logits.f32");
  CHECK(ErrcName(Errc::kShapeMismatch) == "ShapeMismatch");
}

TEST_CASE("seed derivation is order independent and stable") {
  CHECK(DeriveSeed(1, {2, 3}) == DeriveSeed(1, {2, 3}));
  CHECK(DeriveSeed(1, {2, 3}) != DeriveSeed(1, {3, 2}));
  CHECK(HashString("abc") == HashString("abc"));
  CHECK(HashString("abc") != HashString("abd"));
  static_assert(HashString("") == 0xcbf29ce484222325ULL);
}

TEST_CASE("predicate grammar") {
  const auto tags = Tags({{"domain", "target"}, {"site", "MSKCC"}, {"rating", "3.5"}, {"kind", "a b"}});
  CHECK(Predicate().Evaluate(tags));
  CHECK(Predicate::Parse("*").Evaluate(tags));
  CHECK(Predicate::Parse("domain=target").Evaluate(tags));
  CHECK(Predicate::Parse("domain == target").Evaluate(tags));
  CHECK_FALSE(Predicate::Parse("domain!=target").Evaluate(tags));
  CHECK(Predicate::Parse("domain=target && site in {MSKCC, HCB}").Evaluate(tags));
  CHECK(Predicate::Parse("domain=source || site=MSKCC").Evaluate(tags));
  CHECK(Predicate::Parse("!(domain=source)").Evaluate(tags));
  CHECK(Predicate::Parse("rating > 2").Evaluate(tags));
  CHECK_FALSE(Predicate::Parse("rating < 3").Evaluate(tags));
  CHECK(Predicate::Parse("rating >= 3.5 && rating <= 3.5").Evaluate(tags));
  CHECK(Predicate::Parse("kind=\"a b\"").Evaluate(tags));
  // missing tags never match
  CHECK_FALSE(Predicate::Parse("absent=x").Evaluate(tags));
  CHECK_THROWS_AS(Predicate::Parse("domain=target &&"), Error);
  CHECK_THROWS_AS(Predicate::Parse("(domain=target"), Error);
}

TEST_CASE("predicate reports referenced tags") {
  const auto p = Predicate::Parse("domain=target && (site in {a,b} || !(rating < 3))");
  auto tags = p.ReferencedTags();
  std::sort(tags.begin(), tags.end());
  CHECK(tags == std::vector<std::string>{"domain", "rating", "site"});
}

TEST_CASE("studies round-trip through JSON") {
  std::vector<StudyDefinition> studies{
      {"iid", StudyKind::kIid, Predicate::Parse("domain=source")},
      {"cor-noise-3", StudyKind::kCor, Predicate::Parse("shift_kind=noise && intensity=3")},
      {"spic", StudyKind::kMan, Predicate::Parse("spiculation > 2")}};
  const auto back = StudiesFromJson(StudiesToJson(studies));
  REQUIRE(back.size() == 3);
  CHECK(back[1].name == "cor-noise-3");
  CHECK(back[1].kind == StudyKind::kCor);
  CHECK(back[2].predicate.Evaluate(Tags({{"spiculation", "4"}})));
  CHECK(ParseStudyKind("acq") == StudyKind::kAcq);
  CHECK_THROWS_AS(ParseStudyKind("ood"), Error);
}

TEST_CASE("study predicates must use known tags") {
  const StudyDefinition s{"x", StudyKind::kAcq, Predicate::Parse("scanner=a")};
  try {
    CheckStudyTags(s, {"domain", "site"});
    FAIL("expected UnknownMetaTag");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kUnknownMetaTag);
  }
  CHECK_NOTHROW(CheckStudyTags(s, {"scanner"}));
}
