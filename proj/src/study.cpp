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

#include "sflens/study.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <variant>

#include "json.hpp"
#include "sflens/error.hpp"

namespace sflens {

namespace {

enum class CmpOp { kLt, kLe, kGt, kGe };

struct MatchAll {};
struct Equals {
  std::string tag;
  std::string value;
  bool negate = false;
};
struct InSet {
  std::string tag;
  std::vector<std::string> values;
};
struct Compare {
  std::string tag;
  CmpOp op;
  double rhs;
};
struct Not {
  std::shared_ptr<const Predicate::Node> inner;
};
struct AllOf {
  std::vector<std::shared_ptr<const Predicate::Node>> terms;
};
struct AnyOf {
  std::vector<std::shared_ptr<const Predicate::Node>> terms;
};

std::optional<double> ToNumber(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

struct Predicate::Node {
  std::variant<MatchAll, Equals, InSet, Compare, Not, AllOf, AnyOf> expr;
};

namespace {

using NodePtr = std::shared_ptr<const Predicate::Node>;

NodePtr MakeNode(auto&& expr) {
  return std::make_shared<const Predicate::Node>(
      Predicate::Node{std::forward<decltype(expr)>(expr)});
}

bool IsTokenChar(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
         c == '.' || c == ':' || c == '/' || c == '+' ||
         static_cast<unsigned char>(c) >= 0x80;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  NodePtr ParseAll() {
    NodePtr node = ParseOr();
    SkipSpace();
    if (pos_ != text_.size()) Fail("unexpected trailing input");
    return node;
  }

 private:
  [[noreturn]] void Fail(const std::string& what) const {
    throw Error(Errc::kParseError, "predicate '" + std::string(text_) + "': " +
                                       what + " at offset " +
                                       std::to_string(pos_));
  }

  void SkipSpace() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }

  bool Accept(std::string_view token) {
    SkipSpace();
    if (text_.substr(pos_, token.size()) == token) {
      pos_ += token.size();
      return true;
    }
    return false;
  }

  NodePtr ParseOr() {
    std::vector<NodePtr> terms{ParseAnd()};
    while (Accept("||")) terms.push_back(ParseAnd());
    if (terms.size() == 1) return terms.front();
    return MakeNode(AnyOf{std::move(terms)});
  }

  NodePtr ParseAnd() {
    std::vector<NodePtr> terms{ParseUnary()};
    while (Accept("&&")) terms.push_back(ParseUnary());
    if (terms.size() == 1) return terms.front();
    return MakeNode(AllOf{std::move(terms)});
  }

  NodePtr ParseUnary() {
    SkipSpace();
    if (pos_ < text_.size() && text_[pos_] == '!' &&
        text_.substr(pos_, 2) != "!=") {
      ++pos_;
      return MakeNode(Not{ParseUnary()});
    }
    if (Accept("(")) {
      NodePtr inner = ParseOr();
      if (!Accept(")")) Fail("expected ')'");
      return inner;
    }
    if (Accept("*")) return MakeNode(MatchAll{});
    return ParseTerm();
  }

  std::string ParseToken(const char* what) {
    SkipSpace();
    if (pos_ < text_.size() && text_[pos_] == '"') {
      ++pos_;
      std::string out;
      while (pos_ < text_.size() && text_[pos_] != '"') {
        if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
        out.push_back(text_[pos_++]);
      }
      if (pos_ >= text_.size()) Fail("unterminated string");
      ++pos_;
      return out;
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size() && IsTokenChar(text_[pos_])) ++pos_;
    if (start == pos_) Fail(std::string("expected ") + what);
    return std::string(text_.substr(start, pos_ - start));
  }

  NodePtr ParseTerm() {
    std::string tag = ParseToken("tag name");
    SkipSpace();
    if (Accept("!=")) return MakeNode(Equals{tag, ParseToken("value"), true});
    if (Accept("==") || Accept("=")) {
      return MakeNode(Equals{tag, ParseToken("value"), false});
    }
    for (auto [tok, op] : {std::pair{"<=", CmpOp::kLe}, std::pair{">=", CmpOp::kGe},
                           std::pair{"<", CmpOp::kLt}, std::pair{">", CmpOp::kGt}}) {
      if (Accept(tok)) {
        const std::string num = ParseToken("number");
        auto value = ToNumber(num);
        if (!value) Fail("'" + num + "' is not a number");
        return MakeNode(Compare{tag, op, *value});
      }
    }
    if (Accept("in")) {
      if (!Accept("{")) Fail("expected '{'");
      std::vector<std::string> values{ParseToken("value")};
      while (Accept(",")) values.push_back(ParseToken("value"));
      if (!Accept("}")) Fail("expected '}'");
      return MakeNode(InSet{tag, std::move(values)});
    }
    Fail("expected an operator after '" + tag + "'");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool Eval(const Predicate::Node& node, const TagLookup& lookup) {
  return std::visit(
      [&](const auto& e) -> bool {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, MatchAll>) {
          return true;
        } else if constexpr (std::is_same_v<T, Equals>) {
          auto v = lookup(e.tag);
          const bool eq = v && *v == e.value;
          return e.negate ? !eq : eq;
        } else if constexpr (std::is_same_v<T, InSet>) {
          auto v = lookup(e.tag);
          return v && std::find(e.values.begin(), e.values.end(), *v) !=
                          e.values.end();
        } else if constexpr (std::is_same_v<T, Compare>) {
          auto v = lookup(e.tag);
          if (!v) return false;
          auto x = ToNumber(*v);
          if (!x) return false;
          switch (e.op) {
            case CmpOp::kLt: return *x < e.rhs;
            case CmpOp::kLe: return *x <= e.rhs;
            case CmpOp::kGt: return *x > e.rhs;
            case CmpOp::kGe: return *x >= e.rhs;
          }
          return false;
        } else if constexpr (std::is_same_v<T, Not>) {
          return !Eval(*e.inner, lookup);
        } else if constexpr (std::is_same_v<T, AllOf>) {
          return std::all_of(e.terms.begin(), e.terms.end(),
                             [&](const NodePtr& t) { return Eval(*t, lookup); });
        } else {
          return std::any_of(e.terms.begin(), e.terms.end(),
                             [&](const NodePtr& t) { return Eval(*t, lookup); });
        }
      },
      node.expr);
}

void CollectTags(const Predicate::Node& node, std::vector<std::string>& out) {
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, Equals> || std::is_same_v<T, InSet> ||
                      std::is_same_v<T, Compare>) {
          out.push_back(e.tag);
        } else if constexpr (std::is_same_v<T, Not>) {
          CollectTags(*e.inner, out);
        } else if constexpr (std::is_same_v<T, AllOf> ||
                             std::is_same_v<T, AnyOf>) {
          for (const auto& t : e.terms) CollectTags(*t, out);
        }
      },
      node.expr);
}

}  // namespace

Predicate::Predicate() : root_(MakeNode(MatchAll{})), text_("*") {}

Predicate Predicate::Parse(std::string_view text) {
  Predicate p;
  p.root_ = Parser(text).ParseAll();
  p.text_ = std::string(text);
  return p;
}

bool Predicate::Evaluate(const TagLookup& lookup) const {
  return Eval(*root_, lookup);
}

std::vector<std::string> Predicate::ReferencedTags() const {
  std::vector<std::string> tags;
  CollectTags(*root_, tags);
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  return tags;
}

std::string_view StudyKindName(StudyKind kind) {
  switch (kind) {
    case StudyKind::kIid: return "iid";
    case StudyKind::kCor: return "cor";
    case StudyKind::kAcq: return "acq";
    case StudyKind::kMan: return "man";
  }
  return "iid";
}

StudyKind ParseStudyKind(std::string_view name) {
  if (name == "iid") return StudyKind::kIid;
  if (name == "cor") return StudyKind::kCor;
  if (name == "acq") return StudyKind::kAcq;
  if (name == "man") return StudyKind::kMan;
  throw Error(Errc::kParseError,
              "study kind '" + std::string(name) + "' is not one of iid/cor/acq/man");
}

std::vector<StudyDefinition> StudiesFromJson(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kParseError, std::string("studies json: ") + e.what());
  }
  const nlohmann::json& list = doc.is_array() ? doc : doc.value("studies", nlohmann::json::array());
  std::vector<StudyDefinition> out;
  for (const auto& item : list) {
    if (!item.is_object() || !item.contains("name")) {
      throw Error(Errc::kParseError, "study entry without a name");
    }
    StudyDefinition s;
    s.name = item.at("name").get<std::string>();
    s.kind = ParseStudyKind(item.value("kind", std::string("iid")));
    s.predicate = Predicate::Parse(item.value("predicate", std::string("*")));
    out.push_back(std::move(s));
  }
  return out;
}

std::string StudiesToJson(const std::vector<StudyDefinition>& studies) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& s : studies) {
    list.push_back({{"name", s.name},
                    {"kind", std::string(StudyKindName(s.kind))},
                    {"predicate", s.predicate.text()}});
  }
  return nlohmann::json{{"studies", list}}.dump(2) + "\n";
}

void CheckStudyTags(const StudyDefinition& study,
                    const std::vector<std::string>& known_tags) {
  for (const auto& tag : study.predicate.ReferencedTags()) {
    if (std::find(known_tags.begin(), known_tags.end(), tag) == known_tags.end()) {
      throw Error(Errc::kUnknownMetaTag,
                  "study '" + study.name + "' references tag '" + tag + "'");
    }
  }
}

}  // namespace sflens
