#pragma once

// Grounded responses: text in which groundable phrases are written as
// "<p>phrase<SEG></p>". Each such group is an Entity bound to one mask slot;
// slots are numbered 0, 1, 2, ... in order of appearance.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace medground::grounded {

inline constexpr std::string_view kOpenTag = "<p>";
inline constexpr std::string_view kCloseTag = "</p>";
inline constexpr std::string_view kSegTag = "<SEG>";

struct PlainText {
  std::string text;
  bool operator==(const PlainText&) const = default;
};

struct Entity {
  std::string phrase;
  std::size_t slot = 0;
  bool operator==(const Entity&) const = default;
};

using Segment = std::variant<PlainText, Entity>;

// Built only through AddText/AddEntity, which keep the value canonical:
// no empty or adjacent plain-text segments, and entity slots 0..m-1.
class GroundedResponse {
 public:
  GroundedResponse() = default;

  // Appends plain text, merging with a trailing plain segment. Throws
  // Error(kInvalidArgument) if the text contains a marker.
  GroundedResponse& AddText(std::string_view text);

  // Appends an entity with the next free slot. Throws Error(kInvalidArgument)
  // on an empty phrase or one containing a marker.
  GroundedResponse& AddEntity(std::string_view phrase);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t entity_count() const { return entity_count_; }

  bool operator==(const GroundedResponse&) const = default;

 private:
  std::vector<Segment> segments_;
  std::size_t entity_count_ = 0;
};

enum class DiagnosticKind {
  kUnbalancedTag,
  kSegOutsidePhrase,
  kNestedPhrase,
  kEmptyPhrase,
  kStrayMarker,
};

std::string_view DiagnosticKindName(DiagnosticKind kind);

struct ParseDiagnostic {
  DiagnosticKind kind;
  std::size_t byte_offset = 0;
  bool operator==(const ParseDiagnostic&) const = default;
};

enum class ParseMode { kStrict, kLenient };

// `response` is set when parsing succeeded. In lenient mode it may be set
// alongside non-fatal diagnostics describing what was normalized away.
struct ParseResult {
  std::optional<GroundedResponse> response;
  std::vector<ParseDiagnostic> diagnostics;

  bool ok() const { return response.has_value(); }
};

// Strict mode accepts exactly (plain | "<p>" phrase "<SEG>" "</p>")*.
// Lenient mode also accepts "<p>" phrase "</p>" "<SEG>" (rewritten to the
// canonical order), drops stray "<SEG>" markers and empty groups, and turns
// a "<p>...</p>" group without "<SEG>" into plain text. Only UnbalancedTag
// and NestedPhrase are fatal in lenient mode.
ParseResult ParseGrounded(std::string_view text,
                          ParseMode mode = ParseMode::kStrict);

std::string Serialize(const GroundedResponse& response);

// Plain segments and entity phrases concatenated, markers removed.
std::string StripMarkup(const GroundedResponse& response);

std::vector<std::pair<std::string, std::size_t>> ExtractEntities(
    const GroundedResponse& response);

bool ContainsMarker(std::string_view text);

}  // namespace medground::grounded
