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
#include <random>
#include <vector>

#include "doctest.h"
#include "sflens/csf.hpp"
#include "sflens/error.hpp"
#include "sflens/metrics.hpp"

using namespace sflens;
using doctest::Approx;

namespace {

std::vector<double> SoftmaxOf(std::vector<float> z) { return Softmax(z); }
double MsrOf(std::vector<float> z) { return Msr(z); }
double PeOf(std::vector<float> z) { return PredictiveEntropyConfidence(z); }

// Hand-written closed forms, independent of the library code.
double RefEntropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace

TEST_CASE("softmax examples") {
  const auto p = SoftmaxOf({2.0f, 0.0f});
  CHECK(p[0] == Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)).epsilon(1e-12));
  CHECK(p[0] == Approx(0.880797).epsilon(1e-6));
  CHECK(p[1] == Approx(0.119203).epsilon(1e-5));
  const auto u = SoftmaxOf({3.0f, 3.0f, 3.0f, 3.0f});
  for (double v : u) CHECK(v == Approx(0.25));
  const auto big = SoftmaxOf({1000.0f, 0.0f});
  CHECK(big[0] == 1.0);
  CHECK(big[1] == Approx(0.0));
  CHECK(std::isfinite(big[1]));
}

TEST_CASE("softmax sums to one") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g(0.0f, 10.0f);
  for (int t = 0; t < 100; ++t) {
    std::vector<float> z(2 + t % 7);
    for (auto& v : z) v = g(rng);
    double s = 0.0;
    for (double v : Softmax(z)) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(s == Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("maximum softmax response") {
  CHECK(MsrOf({2.0f, 0.0f}) == Approx(0.880797).epsilon(1e-6));
  CHECK(MsrOf({0.5f, 0.5f}) == Approx(0.5));
  CHECK(MsrOf({0.0f, 900.0f, 0.0f}) == 1.0);
}

TEST_CASE("negated predictive entropy") {
  CHECK(PeOf({1.0f, 1.0f, 1.0f, 1.0f}) == Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(PeOf({1.0f, 1.0f, 1.0f, 1.0f}) == Approx(-1.386294).epsilon(1e-6));
  CHECK(PeOf({2000.0f, 0.0f}) == Approx(0.0));
  CHECK(PeOf({2.0f, 0.0f}) == Approx(-0.365334).epsilon(1e-5));
  const double p = std::exp(2.0) / (std::exp(2.0) + 1.0);
  CHECK(PeOf({2.0f, 0.0f}) == Approx(-RefEntropy({p, 1.0 - p})).epsilon(1e-12));
}

TEST_CASE("MCD aggregation examples") {
  SUBCASE("opposing confident samples") {
    const std::vector<float> stack{800.0f, 0.0f, 0.0f, 800.0f};
    const McdConfidence c = McdChannels(stack, 2);
    CHECK(c.ee == Approx(0.0));
    CHECK(c.pe == Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(c.msr == Approx(0.5));
  }
  SUBCASE("single sample equals the deterministic channels") {
    const std::vector<float> stack{0.3f, -1.2f, 2.5f};
    const McdConfidence c = McdChannels(stack, 3);
    CHECK(c.msr == Approx(Msr(stack)).epsilon(1e-12));
    CHECK(c.pe == Approx(PredictiveEntropyConfidence(stack)).epsilon(1e-12));
    CHECK(c.ee == Approx(PredictiveEntropyConfidence(stack)).epsilon(1e-12));
  }
  SUBCASE("identical samples close the Jensen gap") {
    const std::vector<float> stack{0.3f, -1.2f, 2.5f, 0.3f, -1.2f, 2.5f, 0.3f, -1.2f, 2.5f};
    const McdConfidence c = McdChannels(stack, 3);
    CHECK(c.pe == Approx(c.ee).epsilon(1e-12));
  }
}

TEST_CASE("expected entropy confidence never falls below predictive entropy confidence") {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> g(0.0f, 3.0f);
  for (int t = 0; t < 500; ++t) {
    const std::size_t k = 2 + t % 5, samples = 1 + t % 9;
    std::vector<float> stack(k * samples);
    for (auto& v : stack) v = g(rng);
    const McdConfidence c = McdChannels(stack, k);
    CHECK(c.ee >= c.pe - 1e-12);
    if (samples > 1) CHECK(c.ee > c.pe);
  }
}

TEST_CASE("Jensen gap stays resolved for nearly saturated samples") {
  const std::vector<float> stack{-17.2049f, 20.3051f, -16.1f, 19.7f, -18.0f, 21.2f};
  const McdConfidence c = McdChannels(stack, 2);
  CHECK(c.pe < 0.0);
  CHECK(c.ee > c.pe);
  // closed form with the small probabilities q_t = e^{-d_t} / (1 + e^{-d_t})
  double mean_q = 0.0, mean_h = 0.0;
  for (std::size_t t = 0; t < 3; ++t) {
    const double d = static_cast<double>(stack[2 * t + 1]) - static_cast<double>(stack[2 * t]);
    const double q = std::exp(-d) / (1.0 + std::exp(-d));
    mean_q += q / 3.0;
    mean_h += (-q * std::log(q) - (1.0 - q) * std::log1p(-q)) / 3.0;
  }
  const double h_mean = -mean_q * std::log(mean_q) - (1.0 - mean_q) * std::log1p(-mean_q);
  CHECK(c.pe == Approx(-h_mean).epsilon(1e-9));
  CHECK(c.ee == Approx(-mean_h).epsilon(1e-9));
}

TEST_CASE("reservation score of the abstention head") {
  const std::vector<float> uniform{0.0f, 0.0f, 0.0f};
  CHECK(DgResConfidence(uniform, 2) == Approx(2.0 / 3.0).epsilon(1e-12));
  const std::vector<float> no_reservation{1.0f, 2.0f, -1000.0f};
  CHECK(DgResConfidence(no_reservation, 2) == Approx(1.0));
  const std::vector<float> reserved{0.0f, 0.0f, 1000.0f};
  CHECK(DgResConfidence(reserved, 2) == Approx(0.0));
  try {
    DgResConfidence(uniform, 3);
    FAIL("expected WidthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kWidthMismatch);
  }
}

TEST_CASE("channels ignore a constant added to every logit") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 2.0f);
  for (int t = 0; t < 100; ++t) {
    std::vector<float> z(3), shifted(3);
    for (std::size_t k = 0; k < 3; ++k) {
      z[k] = g(rng);
      shifted[k] = z[k] + 4.0f;
    }
    CHECK(Msr(z) == Approx(Msr(shifted)).epsilon(1e-5));
    CHECK(PredictiveEntropyConfidence(z) == Approx(PredictiveEntropyConfidence(shifted)).epsilon(1e-5));
  }
}

TEST_CASE("binary msr and pe rank records identically") {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> g(0.0f, 4.0f);
  std::vector<std::vector<float>> z(400);
  for (auto& v : z) v = {g(rng), g(rng)};
  for (std::size_t a = 0; a < z.size(); ++a) {
    for (std::size_t b = a + 1; b < z.size(); ++b) {
      const double ma = Msr(z[a]), mb = Msr(z[b]);
      const double pa = PredictiveEntropyConfidence(z[a]), pb = PredictiveEntropyConfidence(z[b]);
      if (ma < mb) CHECK(pa <= pb);
      if (ma > mb) CHECK(pa >= pb);
    }
  }
}

TEST_CASE("channel names") {
  CHECK(ChannelId::Parse("msr").kind == ChannelKind::kMsr);
  CHECK(ChannelId::Parse("mcd-ee").kind == ChannelKind::kMcdEe);
  CHECK(ChannelId::Parse("dg-res").kind == ChannelKind::kDgRes);
  const ChannelId ext = ChannelId::Parse("ext:confidnet");
  CHECK(ext.kind == ChannelKind::kExternal);
  CHECK(ext.external == "confidnet");
  CHECK(ext.Name() == "ext:confidnet");
  CHECK_THROWS_AS(ChannelId::Parse("softmax"), Error);
}

TEST_CASE("bundle channels") {
  SyntheticSpec s;
  s.n = 50;
  s.mcd_samples = 3;
  const InferenceBundle b = GenerateSyntheticBundle(s);
  const auto avail = AvailableChannels(b.manifest);
  std::vector<std::string> names;
  for (const auto& c : avail) names.push_back(c.Name());
  CHECK(names == std::vector<std::string>{"msr", "pe", "mcd-msr", "mcd-pe", "mcd-ee", "dg-res", "ext:random"});

  const ConfidenceChannel ext = ExternalChannel(b, 0, "random");
  CHECK(ext.name == "ext:random");
  REQUIRE(ext.scores.size() == 50);
  CHECK(ext.scores[4] == static_cast<double>(b.runs[0].ext_conf.at("random")[4]));
  try {
    ExternalChannel(b, 0, "confidnet");
    FAIL("expected UnknownChannel");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kUnknownChannel);
  }

  const ConfidenceChannel msr = ComputeChannel(b, 0, ChannelId::Parse("msr"));
  REQUIRE(msr.scores.size() == 50);
  CHECK(msr.scores[9] == Msr(b.Record(0, 9).logits));
  const std::vector<std::size_t> pick{3, 7};
  const ConfidenceChannel sub = ComputeChannel(b, 0, ChannelId::Parse("mcd-ee"), pick);
  REQUIRE(sub.scores.size() == 2);
  CHECK(sub.scores[1] == McdChannels(b.Record(0, 7).mcd, 2).ee);
  const ConfidenceChannel dg = ComputeChannel(b, 0, ChannelId::Parse("dg-res"));
  CHECK(dg.scores[0] == DgResConfidence(b.Record(0, 0).dg, 2));

  s.mcd_samples = 0;
  const InferenceBundle no_mcd = GenerateSyntheticBundle(s);
  CHECK_THROWS_AS(RequireChannel(no_mcd.manifest, ChannelId::Parse("mcd-pe")), Error);
}
