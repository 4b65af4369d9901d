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

#ifndef SFLENS_METRICS_HPP_
#define SFLENS_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sflens/bundle.hpp"
#include "sflens/core.hpp"
#include "sflens/csf.hpp"
#include "sflens/study.hpp"

namespace sflens {

/// Selective risk after keeping the j most confident records, j = 1..n.
struct RiskCoverageCurve {
  std::vector<double> coverage;       // j / n
  std::vector<double> risk;           // errors among the top j, divided by j
  std::vector<std::size_t> ordering;  // input indices, most confident first
};

/// Ranks by confidence (descending) and breaks ties by ascending id, or by
/// ascending input index when `ids` is empty.
RiskCoverageCurve RcCurve(std::span<const std::uint8_t> residuals,
                          std::span<const double> confidences,
                          std::span<const std::string> ids = {});

/// Area under the curve in percent: 100 * mean_j risk(j).
double Aurc(const RiskCoverageCurve& curve);

/// AURC of the best possible ranking of the same predictions (all correct
/// records first).
double OptimalAurc(std::size_t n, std::size_t errors);

/// Excess AURC over the optimal ranking; never negative.
double ExcessAurc(const RiskCoverageCurve& curve);

/// Probability that a random correct record is ranked above a random
/// incorrect one, ties counted half. Throws DegenerateStudy when either
/// group is empty.
double FailureAuroc(std::span<const std::uint8_t> residuals,
                    std::span<const double> confidences);

/// Percentile (2.5 / 97.5) bootstrap interval of AURC over `resamples`
/// record-level resamples.
std::pair<double, double> BootstrapAurcCi(std::span<const std::uint8_t> residuals,
                                          std::span<const double> confidences,
                                          std::size_t resamples, std::uint64_t seed);

/// `points` evenly spaced coverages i/points with step-interpolated risk.
RiskCoverageCurve ThinCurve(const RiskCoverageCurve& curve, std::size_t points);

std::string CurveToCsv(const RiskCoverageCurve& curve);

// --- bundle evaluation -----------------------------------------------------

struct MetricRow {
  std::string study;
  StudyKind kind = StudyKind::kIid;
  std::string channel;
  std::optional<std::size_t> run;  // nullopt for the mean over runs
  double aurc = 0.0;
  double eaurc = 0.0;
  double f_auroc = 0.0;  // NaN when the study lacks correct or wrong records
  double accuracy = 0.0;
  std::size_t n = 0;
  bool family = false;  // unweighted mean over the studies of one kind
};

struct OutcomeRow {
  std::string study;
  std::string channel;
  std::size_t run = 0;
  double tau = 0.0;
  std::size_t n = 0;
  OutcomeCounts counts;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::vector<OutcomeRow> outcomes;
};

struct EvaluateOptions {
  /// Thresholds for outcome counts in addition to the per-study default
  /// (confidence at 95% coverage).
  std::vector<double> taus;
  unsigned threads = 1;
};

/// Per (study, channel, run) metrics, their run means, and cor/acq/man
/// family aggregates. Throws EmptyStudy if a study selects no record.
MetricReport Evaluate(const InferenceBundle& bundle,
                      const std::vector<StudyDefinition>& studies,
                      const std::vector<ChannelId>& channels,
                      const EvaluateOptions& options = {});

/// Residuals and confidences of one study/channel/run, aligned with `records`.
struct StudySlice {
  std::vector<std::size_t> records;
  std::vector<std::string> ids;
  std::vector<std::uint8_t> residuals;
  std::vector<double> confidences;
};

StudySlice SliceStudy(const InferenceBundle& bundle, std::size_t run,
                      const StudyDefinition& study, const ChannelId& channel);

/// Columns: study, kind, channel, run, aurc, eaurc, f_auroc, accuracy.
std::string ReportToCsv(const MetricReport& report);
std::string ReportToJson(const MetricReport& report);
/// Columns: study, channel, run, tau, n, tp, fp, tn, fn.
std::string OutcomesToCsv(const MetricReport& report);

/// Shortest round-trip decimal form, "nan" for NaN.
std::string FormatNumber(double value);

}  // namespace sflens

#endif  // SFLENS_METRICS_HPP_
