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

#include "sflens/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "json.hpp"
#include "sflens/error.hpp"
#include "sflens/parallel.hpp"

namespace sflens {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void CheckAligned(std::span<const std::uint8_t> residuals, std::span<const double> confidences) {
  if (residuals.size() != confidences.size()) {
    throw Error(Errc::kShapeMismatch, "residuals and confidences differ in length");
  }
  if (residuals.empty()) throw Error(Errc::kEmptyStudy, "no records");
}

double MeanRisk(std::span<const double> risk) {
  double sum = 0.0;
  for (double r : risk) sum += r;
  return 100.0 * sum / static_cast<double>(risk.size());
}

}  // namespace

RiskCoverageCurve RcCurve(std::span<const std::uint8_t> residuals,
                          std::span<const double> confidences,
                          std::span<const std::string> ids) {
  CheckAligned(residuals, confidences);
  if (!ids.empty() && ids.size() != residuals.size()) {
    throw Error(Errc::kShapeMismatch, "ids differ in length from residuals");
  }
  const std::size_t n = residuals.size();
  RiskCoverageCurve curve;
  curve.ordering.resize(n);
  std::iota(curve.ordering.begin(), curve.ordering.end(), std::size_t{0});
  std::sort(curve.ordering.begin(), curve.ordering.end(), [&](std::size_t a, std::size_t b) {
    if (confidences[a] != confidences[b]) return confidences[a] > confidences[b];
    if (!ids.empty() && ids[a] != ids[b]) return ids[a] < ids[b];
    return a < b;
  });
  curve.coverage.resize(n);
  curve.risk.resize(n);
  std::size_t errors = 0;
  for (std::size_t j = 0; j < n; ++j) {
    errors += residuals[curve.ordering[j]] ? 1 : 0;
    const auto kept = static_cast<double>(j + 1);
    curve.coverage[j] = kept / static_cast<double>(n);
    curve.risk[j] = static_cast<double>(errors) / kept;
  }
  return curve;
}

double Aurc(const RiskCoverageCurve& curve) {
  if (curve.risk.empty()) throw Error(Errc::kEmptyStudy, "empty curve");
  return MeanRisk(curve.risk);
}

double OptimalAurc(std::size_t n, std::size_t errors) {
  if (n == 0) throw Error(Errc::kEmptyStudy, "no records");
  std::vector<double> risk(n, 0.0);
  const std::size_t correct = n - errors;
  for (std::size_t j = correct; j < n; ++j) {
    risk[j] = static_cast<double>(j + 1 - correct) / static_cast<double>(j + 1);
  }
  return MeanRisk(risk);
}

double ExcessAurc(const RiskCoverageCurve& curve) {
  if (curve.risk.empty()) throw Error(Errc::kEmptyStudy, "empty curve");
  const std::size_t n = curve.risk.size();
  const auto errors = static_cast<std::size_t>(std::llround(curve.risk.back() * static_cast<double>(n)));
  return Aurc(curve) - OptimalAurc(n, errors);
}

double FailureAuroc(std::span<const std::uint8_t> residuals, std::span<const double> confidences) {
  CheckAligned(residuals, confidences);
  std::vector<std::size_t> order(residuals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return confidences[a] < confidences[b]; });
  // Sweep groups of equal confidence from low to high.
  double wins = 0.0;
  double ties = 0.0;
  std::size_t wrong_below = 0;
  std::size_t total_correct = 0;
  std::size_t total_wrong = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t end = g;
    std::size_t correct = 0;
    std::size_t wrong = 0;
    while (end < order.size() && confidences[order[end]] == confidences[order[g]]) {
      (residuals[order[end]] ? wrong : correct) += 1;
      ++end;
    }
    wins += static_cast<double>(correct) * static_cast<double>(wrong_below);
    ties += static_cast<double>(correct) * static_cast<double>(wrong);
    wrong_below += wrong;
    total_correct += correct;
    total_wrong += wrong;
    g = end;
  }
  if (total_correct == 0 || total_wrong == 0) {
    throw Error(Errc::kDegenerateStudy, "failure AUROC needs both correct and wrong predictions");
  }
  return (wins + 0.5 * ties) /
         (static_cast<double>(total_correct) * static_cast<double>(total_wrong));
}

std::pair<double, double> BootstrapAurcCi(std::span<const std::uint8_t> residuals,
                                          std::span<const double> confidences,
                                          std::size_t resamples, std::uint64_t seed) {
  CheckAligned(residuals, confidences);
  if (resamples < 1) throw Error(Errc::kBadParameter, "bootstrap needs at least one resample");
  const std::size_t n = residuals.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> stats(resamples);
  std::vector<std::uint8_t> r(n);
  std::vector<double> c(n);
  for (auto& stat : stats) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = pick(rng);
      r[i] = residuals[j];
      c[i] = confidences[j];
    }
    stat = Aurc(RcCurve(r, c));
  }
  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(stats.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, stats.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return stats[lo] + frac * (stats[hi] - stats[lo]);
  };
  return {quantile(0.025), quantile(0.975)};
}

RiskCoverageCurve ThinCurve(const RiskCoverageCurve& curve, std::size_t points) {
  if (points < 1) throw Error(Errc::kBadParameter, "points must be >= 1");
  if (curve.risk.empty()) throw Error(Errc::kEmptyStudy, "empty curve");
  const std::size_t n = curve.risk.size();
  RiskCoverageCurve out;
  for (std::size_t i = 1; i <= points; ++i) {
    const double c = static_cast<double>(i) / static_cast<double>(points);
    auto j = static_cast<std::size_t>(std::ceil(c * static_cast<double>(n) - 1e-9));
    j = std::clamp<std::size_t>(j, 1, n);
    out.coverage.push_back(c);
    out.risk.push_back(curve.risk[j - 1]);
  }
  return out;
}

std::string FormatNumber(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string CurveToCsv(const RiskCoverageCurve& curve) {
  std::string out = "coverage,risk\n";
  for (std::size_t j = 0; j < curve.risk.size(); ++j) {
    out += FormatNumber(curve.coverage[j]) + "," + FormatNumber(curve.risk[j]) + "\n";
  }
  return out;
}

// --- evaluation ------------------------------------------------------------

StudySlice SliceStudy(const InferenceBundle& bundle, std::size_t run,
                      const StudyDefinition& study, const ChannelId& channel) {
  StudySlice s;
  s.records = SelectRecords(bundle, run, study.predicate);
  if (s.records.empty()) throw Error(Errc::kEmptyStudy, "study '" + study.name + "' selects no records");
  const RunData& data = bundle.runs[run];
  s.confidences = ComputeChannel(bundle, run, channel, s.records).scores;
  s.ids.reserve(s.records.size());
  s.residuals.reserve(s.records.size());
  for (std::size_t i : s.records) {
    s.ids.push_back(data.ids[i]);
    s.residuals.push_back(static_cast<std::uint8_t>(bundle.Record(run, i).residual()));
  }
  return s;
}

namespace {

double NanMean(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t count = 0;
  for (double v : values) {
    if (!std::isnan(v)) {
      sum += v;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : kNaN;
}

MetricRow MeanRow(const std::vector<const MetricRow*>& members) {
  MetricRow row = *members.front();
  std::vector<double> a, e, f, acc;
  std::size_t n = 0;
  for (const MetricRow* m : members) {
    a.push_back(m->aurc);
    e.push_back(m->eaurc);
    f.push_back(m->f_auroc);
    acc.push_back(m->accuracy);
    n += m->n;
  }
  row.aurc = NanMean(a);
  row.eaurc = NanMean(e);
  row.f_auroc = NanMean(f);
  row.accuracy = NanMean(acc);
  row.n = n;
  return row;
}

}  // namespace

MetricReport Evaluate(const InferenceBundle& bundle, const std::vector<StudyDefinition>& studies,
                      const std::vector<ChannelId>& channels, const EvaluateOptions& options) {
  for (const auto& ch : channels) RequireChannel(bundle.manifest, ch);
  const auto known = bundle.KnownTags();
  for (const auto& s : studies) CheckStudyTags(s, known);
  for (double tau : options.taus) {
    if (!std::isfinite(tau)) throw Error(Errc::kBadParameter, "tau must be finite");
  }

  const std::size_t runs = bundle.runs.size();
  const std::size_t tasks = studies.size() * channels.size() * runs;
  std::vector<MetricRow> per_run(tasks);
  std::vector<std::vector<OutcomeRow>> outcomes(tasks);

  ParallelFor(tasks, options.threads, [&](std::size_t t) {
    const std::size_t run = t % runs;
    const std::size_t c = (t / runs) % channels.size();
    const std::size_t s = t / (runs * channels.size());
    const StudyDefinition& study = studies[s];
    const StudySlice slice = SliceStudy(bundle, run, study, channels[c]);
    const RiskCoverageCurve curve = RcCurve(slice.residuals, slice.confidences, slice.ids);
    MetricRow& row = per_run[t];
    row.study = study.name;
    row.kind = study.kind;
    row.channel = channels[c].Name();
    row.run = run;
    row.aurc = Aurc(curve);
    row.eaurc = ExcessAurc(curve);
    try {
      row.f_auroc = FailureAuroc(slice.residuals, slice.confidences);
    } catch (const Error& e) {
      if (e.code() != Errc::kDegenerateStudy) throw;
      row.f_auroc = kNaN;
    }
    row.accuracy = 1.0 - curve.risk.back();
    row.n = slice.records.size();

    std::vector<double> taus{DefaultTau(slice.confidences)};
    taus.insert(taus.end(), options.taus.begin(), options.taus.end());
    for (double tau : taus) {
      outcomes[t].push_back({study.name, row.channel, run, tau, slice.records.size(),
                             CountOutcomes(slice.residuals, slice.confidences, tau)});
    }
  });

  MetricReport report;
  // study-major order: per-run rows, then the run mean.
  for (std::size_t s = 0; s < studies.size(); ++s) {
    for (std::size_t c = 0; c < channels.size(); ++c) {
      std::vector<const MetricRow*> members;
      for (std::size_t r = 0; r < runs; ++r) {
        const std::size_t t = (s * channels.size() + c) * runs + r;
        report.rows.push_back(per_run[t]);
        members.push_back(&per_run[t]);
        for (auto& o : outcomes[t]) report.outcomes.push_back(std::move(o));
      }
      MetricRow mean = MeanRow(members);
      mean.run.reset();
      mean.n = per_run[(s * channels.size() + c) * runs].n;
      report.rows.push_back(std::move(mean));
    }
  }

  for (StudyKind kind : {StudyKind::kCor, StudyKind::kAcq, StudyKind::kMan}) {
    for (std::size_t c = 0; c < channels.size(); ++c) {
      std::vector<std::optional<std::size_t>> run_keys;
      for (std::size_t r = 0; r < runs; ++r) run_keys.emplace_back(r);
      run_keys.emplace_back(std::nullopt);
      for (const auto& run_key : run_keys) {
        std::vector<const MetricRow*> members;
        for (const auto& row : report.rows) {
          if (!row.family && row.kind == kind && row.channel == channels[c].Name() &&
              row.run == run_key) {
            members.push_back(&row);
          }
        }
        if (members.empty()) continue;
        MetricRow agg = MeanRow(members);
        agg.study = "family:" + std::string(StudyKindName(kind));
        agg.kind = kind;
        agg.run = run_key;
        agg.family = true;
        report.rows.push_back(std::move(agg));
      }
    }
  }
  return report;
}

std::string ReportToCsv(const MetricReport& report) {
  std::string out = "study,kind,channel,run,aurc,eaurc,f_auroc,accuracy\n";
  for (const auto& r : report.rows) {
    out += CsvEscape(r.study) + "," + std::string(StudyKindName(r.kind)) + "," +
           CsvEscape(r.channel) + "," + (r.run ? std::to_string(*r.run) : "mean") + "," +
           FormatNumber(r.aurc) + "," + FormatNumber(r.eaurc) + "," + FormatNumber(r.f_auroc) +
           "," + FormatNumber(r.accuracy) + "\n";
  }
  return out;
}

std::string OutcomesToCsv(const MetricReport& report) {
  std::string out = "study,channel,run,tau,n,tp,fp,tn,fn\n";
  for (const auto& o : report.outcomes) {
    out += CsvEscape(o.study) + "," + CsvEscape(o.channel) + "," + std::to_string(o.run) + "," +
           FormatNumber(o.tau) + "," + std::to_string(o.n) + "," + std::to_string(o.counts.tp) +
           "," + std::to_string(o.counts.fp) + "," + std::to_string(o.counts.tn) + "," +
           std::to_string(o.counts.fn) + "\n";
  }
  return out;
}

namespace {

nlohmann::json Num(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace

std::string ReportToJson(const MetricReport& report) {
  using nlohmann::json;
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"study", r.study},
                    {"kind", std::string(StudyKindName(r.kind))},
                    {"channel", r.channel},
                    {"run", r.run ? json(*r.run) : json("mean")},
                    {"aurc", Num(r.aurc)},
                    {"eaurc", Num(r.eaurc)},
                    {"f_auroc", Num(r.f_auroc)},
                    {"accuracy", Num(r.accuracy)},
                    {"n", r.n},
                    {"family", r.family}});
  }
  json outcomes = json::array();
  for (const auto& o : report.outcomes) {
    outcomes.push_back({{"study", o.study},
                        {"channel", o.channel},
                        {"run", o.run},
                        {"tau", o.tau},
                        {"n", o.n},
                        {"tp", o.counts.tp},
                        {"fp", o.counts.fp},
                        {"tn", o.counts.tn},
                        {"fn", o.counts.fn}});
  }
  return json{{"rows", rows}, {"outcomes", outcomes}}.dump(2) + "\n";
}

}  // namespace sflens
