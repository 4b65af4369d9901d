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

#include "sflens/csf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sflens/error.hpp"

namespace sflens {

std::vector<double> Softmax(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(static_cast<double>(logits[k]) - top);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

double Entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double Msr(std::span<const float> logits) {
  const auto p = Softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

namespace {

/// log p_k for every class, accurate when p_k is close to one.
std::vector<double> LogSoftmax(std::span<const float> logits) {
  const auto top = static_cast<std::size_t>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double z_top = logits[top];
  double rest = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k != top) rest += std::exp(static_cast<double>(logits[k]) - z_top);
  }
  const double lse = z_top + std::log1p(rest);
  std::vector<double> lp(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) lp[k] = static_cast<double>(logits[k]) - lse;
  return lp;
}

double EntropyFromLog(const std::vector<double>& lp) {
  double h = 0.0;
  for (double l : lp) {
    const double v = std::exp(l);
    if (v > 0.0) h -= v * l;
  }
  return h;
}

}  // namespace

double PredictiveEntropyConfidence(std::span<const float> logits) {
  if (logits.empty()) return 0.0;
  return -EntropyFromLog(LogSoftmax(logits));
}

McdConfidence McdChannels(std::span<const float> stack, std::size_t k) {
  if (k == 0 || stack.empty() || stack.size() % k != 0) {
    throw Error(Errc::kShapeMismatch, "MCD stack is not a non-empty T x K array");
  }
  const std::size_t t_count = stack.size() / k;
  // mean probability and its complement 1 - p, kept apart so that
  // log(p) stays accurate for p close to one
  std::vector<double> mean(k, 0.0), complement(k, 0.0);
  double mean_entropy = 0.0;
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto lp = LogSoftmax(stack.subspan(t * k, k));
    for (std::size_t j = 0; j < k; ++j) {
      mean[j] += std::exp(lp[j]);
      complement[j] -= std::expm1(lp[j]);
    }
    mean_entropy += EntropyFromLog(lp);
  }
  const auto denom = static_cast<double>(t_count);
  double h = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    mean[j] /= denom;
    complement[j] /= denom;
    if (mean[j] <= 0.0) continue;
    const double log_p = complement[j] < 0.5 ? std::log1p(-complement[j]) : std::log(mean[j]);
    h -= mean[j] * log_p;
  }
  mean_entropy /= denom;
  McdConfidence c;
  c.msr = *std::max_element(mean.begin(), mean.end());
  c.pe = -h;
  c.ee = -mean_entropy;
  return c;
}

double DgResConfidence(std::span<const float> aux, std::size_t k) {
  if (aux.size() != k + 1) {
    throw Error(Errc::kWidthMismatch, "auxiliary logits have width " + std::to_string(aux.size()) +
                                          ", expected K+1=" + std::to_string(k + 1));
  }
  const auto p = Softmax(aux);
  return 1.0 - p[k];
}

ChannelId ChannelId::Parse(std::string_view name) {
  if (name == "msr") return {ChannelKind::kMsr, {}};
  if (name == "pe") return {ChannelKind::kPe, {}};
  if (name == "mcd-msr") return {ChannelKind::kMcdMsr, {}};
  if (name == "mcd-pe") return {ChannelKind::kMcdPe, {}};
  if (name == "mcd-ee") return {ChannelKind::kMcdEe, {}};
  if (name == "dg-res") return {ChannelKind::kDgRes, {}};
  if (name.starts_with("ext:") && name.size() > 4) {
    return {ChannelKind::kExternal, std::string(name.substr(4))};
  }
  throw Error(Errc::kUnknownChannel, "'" + std::string(name) + "'");
}

std::string ChannelId::Name() const {
  switch (kind) {
    case ChannelKind::kMsr: return "msr";
    case ChannelKind::kPe: return "pe";
    case ChannelKind::kMcdMsr: return "mcd-msr";
    case ChannelKind::kMcdPe: return "mcd-pe";
    case ChannelKind::kMcdEe: return "mcd-ee";
    case ChannelKind::kDgRes: return "dg-res";
    case ChannelKind::kExternal: return "ext:" + external;
  }
  return "?";
}

std::vector<ChannelId> AvailableChannels(const BundleManifest& m) {
  std::vector<ChannelId> out{{ChannelKind::kMsr, {}}, {ChannelKind::kPe, {}}};
  if (m.mcd_samples > 0) {
    out.push_back({ChannelKind::kMcdMsr, {}});
    out.push_back({ChannelKind::kMcdPe, {}});
    out.push_back({ChannelKind::kMcdEe, {}});
  }
  if (m.dg_logits) out.push_back({ChannelKind::kDgRes, {}});
  for (const auto& ext : m.channels) out.push_back({ChannelKind::kExternal, ext});
  return out;
}

void RequireChannel(const BundleManifest& m, const ChannelId& id) {
  switch (id.kind) {
    case ChannelKind::kMcdMsr:
    case ChannelKind::kMcdPe:
    case ChannelKind::kMcdEe:
      if (m.mcd_samples == 0) throw Error(Errc::kUnknownChannel, id.Name() + ": bundle has no MCD stacks");
      break;
    case ChannelKind::kDgRes:
      if (!m.dg_logits) throw Error(Errc::kUnknownChannel, "dg-res: bundle has no dg_logits.f32");
      break;
    case ChannelKind::kExternal:
      if (!m.HasChannel(id.external)) {
        throw Error(Errc::kUnknownChannel, id.Name() + " is not declared in the manifest");
      }
      break;
    default:
      break;
  }
}

ConfidenceChannel ComputeChannel(const InferenceBundle& bundle, std::size_t run,
                                 const ChannelId& id, std::span<const std::size_t> records) {
  RequireChannel(bundle.manifest, id);
  const RunData& data = bundle.runs.at(run);
  std::vector<std::size_t> all;
  if (records.empty()) {
    all.resize(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    records = all;
  }
  const std::size_t k = bundle.manifest.num_classes;
  ConfidenceChannel ch;
  ch.name = id.Name();
  ch.scores.reserve(records.size());
  for (std::size_t i : records) {
    const RecordView rec = bundle.Record(run, i);
    double score = 0.0;
    switch (id.kind) {
      case ChannelKind::kMsr: score = Msr(rec.logits); break;
      case ChannelKind::kPe: score = PredictiveEntropyConfidence(rec.logits); break;
      case ChannelKind::kMcdMsr: score = McdChannels(rec.mcd, k).msr; break;
      case ChannelKind::kMcdPe: score = McdChannels(rec.mcd, k).pe; break;
      case ChannelKind::kMcdEe: score = McdChannels(rec.mcd, k).ee; break;
      case ChannelKind::kDgRes: score = DgResConfidence(rec.dg, k); break;
      case ChannelKind::kExternal: score = data.ext_conf.find(id.external)->second[i]; break;
    }
    ch.scores.push_back(score);
  }
  return ch;
}

ConfidenceChannel ExternalChannel(const InferenceBundle& bundle, std::size_t run,
                                  std::string_view name) {
  return ComputeChannel(bundle, run, ChannelId{ChannelKind::kExternal, std::string(name)});
}

}  // namespace sflens
