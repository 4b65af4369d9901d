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

#ifndef SFLENS_STUDY_HPP_
#define SFLENS_STUDY_HPP_

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sflens {

/// Resolves a tag name to the record's value; nullopt when the tag is unknown.
using TagLookup =
    std::function<std::optional<std::string_view>(std::string_view tag)>;

/// Boolean filter over record metadata.
///
/// Grammar (whitespace-insensitive):
///
///     expr  := conj ('||' conj)*
///     conj  := unary ('&&' unary)*
///     unary := '!' unary | '(' expr ')' | '*' | term
///     term  := tag ('=' | '==' | '!=') value
///            | tag 'in' '{' value (',' value)* '}'
///            | tag ('<' | '<=' | '>' | '>=') number
///
/// Values are bare tokens or double-quoted strings. `*` matches everything.
/// Numeric comparisons are false for values that do not parse as numbers.
class Predicate {
 public:
  Predicate();  // matches everything

  static Predicate Parse(std::string_view text);

  bool Evaluate(const TagLookup& lookup) const;

  /// Tags the expression refers to, sorted and deduplicated.
  std::vector<std::string> ReferencedTags() const;

  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::shared_ptr<const Node> root_;
  std::string text_;
};

enum class StudyKind { kIid, kCor, kAcq, kMan };

std::string_view StudyKindName(StudyKind kind);
StudyKind ParseStudyKind(std::string_view name);

/// A named evaluation slice of a bundle.
struct StudyDefinition {
  std::string name;
  StudyKind kind = StudyKind::kIid;
  Predicate predicate;
};

/// Reads `{"studies": [{"name", "kind", "predicate"}, ...]}`.
std::vector<StudyDefinition> StudiesFromJson(const std::string& text);
std::string StudiesToJson(const std::vector<StudyDefinition>& studies);

/// Throws UnknownMetaTag if a predicate references a tag outside `known_tags`.
void CheckStudyTags(const StudyDefinition& study,
                    const std::vector<std::string>& known_tags);

}  // namespace sflens

#endif  // SFLENS_STUDY_HPP_
