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

#ifndef SFLENS_ERROR_HPP_
#define SFLENS_ERROR_HPP_

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sflens {

enum class Errc {
  kMissingFile,
  kShapeMismatch,
  kNonFiniteValue,
  kUnknownMetaTag,
  kLabelOutOfRange,
  kDuplicateId,
  kInvalidSpec,
  kRatingOutOfRange,
  kUnknownChannel,
  kWidthMismatch,
  kEmptyStudy,
  kDegenerateStudy,
  kMissingTag,
  kUnsupportedImage,
  kPerplexityTooLarge,
  kDegenerateData,
  kMissingVariant,
  kUnknownEntity,
  kBadParameter,
  kEmbeddingNotReady,
  kParseError,
  kIoError,
};

std::string_view ErrcName(Errc code);

// Every failure the engine reports carries one of the codes above. The
// message always starts with the code name so that CLI users can grep for it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail,
        std::optional<std::size_t> record = std::nullopt);

  Errc code() const noexcept { return code_; }
  // Record index for per-record failures (e.g. NonFiniteValue).
  std::optional<std::size_t> record() const noexcept { return record_; }

 private:
  Errc code_;
  std::optional<std::size_t> record_;
};

}  // namespace sflens

#endif  // SFLENS_ERROR_HPP_
