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

#include "sflens/error.hpp"

namespace sflens {

std::string_view ErrcName(Errc code) {
  switch (code) {
    case Errc::kMissingFile: return "MissingFile";
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kNonFiniteValue: return "NonFiniteValue";
    case Errc::kUnknownMetaTag: return "UnknownMetaTag";
    case Errc::kLabelOutOfRange: return "LabelOutOfRange";
    case Errc::kDuplicateId: return "DuplicateId";
    case Errc::kInvalidSpec: return "InvalidSpec";
    case Errc::kRatingOutOfRange: return "RatingOutOfRange";
    case Errc::kUnknownChannel: return "UnknownChannel";
    case Errc::kWidthMismatch: return "WidthMismatch";
    case Errc::kEmptyStudy: return "EmptyStudy";
    case Errc::kDegenerateStudy: return "DegenerateStudy";
    case Errc::kMissingTag: return "MissingTag";
    case Errc::kUnsupportedImage: return "UnsupportedImage";
    case Errc::kPerplexityTooLarge: return "PerplexityTooLarge";
    case Errc::kDegenerateData: return "DegenerateData";
    case Errc::kMissingVariant: return "MissingVariant";
    case Errc::kUnknownEntity: return "UnknownEntity";
    case Errc::kBadParameter: return "BadParameter";
    case Errc::kEmbeddingNotReady: return "EmbeddingNotReady";
    case Errc::kParseError: return "ParseError";
    case Errc::kIoError: return "IoError";
  }
  return "Unknown";
}

namespace {

std::string Compose(Errc code, const std::string& detail,
                    std::optional<std::size_t> record) {
  std::string msg(ErrcName(code));
  if (record) msg += "(record=" + std::to_string(*record) + ")";
  if (!detail.empty()) msg += ": " + detail;
  return msg;
}

}  // namespace

Error::Error(Errc code, const std::string& detail,
             std::optional<std::size_t> record)
    : std::runtime_error(Compose(code, detail, record)),
      code_(code),
      record_(record) {}

}  // namespace sflens
