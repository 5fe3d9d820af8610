#include "medground/grounded_text.h"

#include <algorithm>

#include "medground/error.h"

namespace medground::grounded {

bool ContainsMarker(std::string_view text) {
  return text.find(kOpenTag) != std::string_view::npos ||
         text.find(kCloseTag) != std::string_view::npos ||
         text.find(kSegTag) != std::string_view::npos;
}

GroundedResponse& GroundedResponse::AddText(std::string_view text) {
  if (text.empty()) return *this;
  if (ContainsMarker(text)) {
    throw Error(ErrorKind::kInvalidArgument,
                "plain text must not contain grounding markers");
  }
  if (!segments_.empty()) {
    if (auto* last = std::get_if<PlainText>(&segments_.back())) {
      // A marker may straddle the join ("...<" + "p>...").
      const std::size_t keep = std::min<std::size_t>(last->text.size(), 4);
      std::string join = last->text.substr(last->text.size() - keep);
      join.append(text.substr(0, std::min<std::size_t>(text.size(), 4)));
      if (ContainsMarker(join)) {
        throw Error(ErrorKind::kInvalidArgument,
                    "plain text must not contain grounding markers");
      }
      last->text.append(text);
      return *this;
    }
  }
  segments_.emplace_back(PlainText{std::string(text)});
  return *this;
}

GroundedResponse& GroundedResponse::AddEntity(std::string_view phrase) {
  if (phrase.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "entity phrase is empty");
  }
  if (ContainsMarker(phrase)) {
    throw Error(ErrorKind::kInvalidArgument,
                "entity phrase must not contain grounding markers");
  }
  segments_.emplace_back(Entity{std::string(phrase), entity_count_});
  ++entity_count_;
  return *this;
}

std::string_view DiagnosticKindName(DiagnosticKind kind) {
  switch (kind) {
    case DiagnosticKind::kUnbalancedTag: return "UnbalancedTag";
    case DiagnosticKind::kSegOutsidePhrase: return "SegOutsidePhrase";
    case DiagnosticKind::kNestedPhrase: return "NestedPhrase";
    case DiagnosticKind::kEmptyPhrase: return "EmptyPhrase";
    case DiagnosticKind::kStrayMarker: return "StrayMarker";
  }
  return "Unknown";
}

namespace {

enum class Marker { kNone, kOpen, kClose, kSeg };

Marker MarkerAt(std::string_view text, std::size_t pos, std::size_t* len) {
  const std::string_view rest = text.substr(pos);
  if (rest.starts_with(kOpenTag)) {
    *len = kOpenTag.size();
    return Marker::kOpen;
  }
  if (rest.starts_with(kCloseTag)) {
    *len = kCloseTag.size();
    return Marker::kClose;
  }
  if (rest.starts_with(kSegTag)) {
    *len = kSegTag.size();
    return Marker::kSeg;
  }
  *len = 0;
  return Marker::kNone;
}

bool IsFatal(DiagnosticKind kind, ParseMode mode) {
  if (mode == ParseMode::kStrict) return true;
  return kind == DiagnosticKind::kUnbalancedTag ||
         kind == DiagnosticKind::kNestedPhrase;
}

}  // namespace

ParseResult ParseGrounded(std::string_view text, ParseMode mode) {
  ParseResult result;
  GroundedResponse response;
  bool fatal = false;
  auto report = [&](DiagnosticKind kind, std::size_t offset) {
    result.diagnostics.push_back({kind, offset});
    if (IsFatal(kind, mode)) fatal = true;
  };
  // Dropping a marker in lenient mode can splice the surrounding bytes into a
  // new marker; that input is rejected rather than reinterpreted.
  std::size_t last_marker = 0;
  auto append = [&](auto&& add) {
    try {
      add();
    } catch (const Error&) {
      result.diagnostics.push_back({DiagnosticKind::kStrayMarker, last_marker});
      fatal = true;
    }
  };

  bool in_phrase = false;
  bool seen_seg = false;
  std::size_t open_offset = 0;
  std::string phrase;
  std::string plain;

  auto flush_plain = [&] {
    append([&] { response.AddText(plain); });
    plain.clear();
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t len = 0;
    const Marker marker = MarkerAt(text, pos, &len);
    if (marker == Marker::kNone) {
      // Plain bytes up to the next '<' cannot start a marker.
      std::size_t next = text.find('<', pos + 1);
      if (next == std::string_view::npos) next = text.size();
      const std::string_view chunk = text.substr(pos, next - pos);
      if (!in_phrase) {
        plain.append(chunk);
      } else if (seen_seg) {
        // Text between "<SEG>" and "</p>": the SEG marker was misplaced.
        report(DiagnosticKind::kStrayMarker, pos);
        phrase.append(chunk);
      } else {
        phrase.append(chunk);
      }
      pos = next;
      continue;
    }

    last_marker = pos;
    switch (marker) {
      case Marker::kOpen:
        if (in_phrase) {
          report(DiagnosticKind::kNestedPhrase, pos);
        } else {
          in_phrase = true;
          seen_seg = false;
          open_offset = pos;
          phrase.clear();
        }
        pos += len;
        break;
      case Marker::kSeg:
        if (!in_phrase) {
          report(DiagnosticKind::kStrayMarker, pos);
        } else if (seen_seg) {
          report(DiagnosticKind::kStrayMarker, pos);
        } else {
          seen_seg = true;
        }
        pos += len;
        break;
      case Marker::kClose: {
        if (!in_phrase) {
          report(DiagnosticKind::kUnbalancedTag, pos);
          pos += len;
          break;
        }
        const std::size_t close_offset = pos;
        pos += len;
        bool grounded = seen_seg;
        if (!seen_seg) {
          std::size_t seg_len = 0;
          if (pos < text.size() &&
              MarkerAt(text, pos, &seg_len) == Marker::kSeg) {
            // "<p>phrase</p><SEG>": accepted only in lenient mode.
            report(DiagnosticKind::kSegOutsidePhrase, pos);
            pos += seg_len;
            grounded = true;
          } else {
            report(DiagnosticKind::kStrayMarker, close_offset);
          }
        }
        in_phrase = false;
        if (phrase.empty()) {
          report(DiagnosticKind::kEmptyPhrase, open_offset);
        } else if (grounded) {
          flush_plain();
          append([&] { response.AddEntity(phrase); });
        } else {
          plain.append(phrase);
        }
        phrase.clear();
        break;
      }
      case Marker::kNone:
        break;
    }
  }
  if (in_phrase) report(DiagnosticKind::kUnbalancedTag, open_offset);

  if (!fatal) flush_plain();
  if (!fatal) result.response = std::move(response);
  return result;
}

std::string Serialize(const GroundedResponse& response) {
  std::string out;
  for (const Segment& segment : response.segments()) {
    if (const auto* plain = std::get_if<PlainText>(&segment)) {
      out += plain->text;
    } else {
      const auto& entity = std::get<Entity>(segment);
      out += kOpenTag;
      out += entity.phrase;
      out += kSegTag;
      out += kCloseTag;
    }
  }
  return out;
}

std::string StripMarkup(const GroundedResponse& response) {
  std::string out;
  for (const Segment& segment : response.segments()) {
    if (const auto* plain = std::get_if<PlainText>(&segment)) {
      out += plain->text;
    } else {
      out += std::get<Entity>(segment).phrase;
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::size_t>> ExtractEntities(
    const GroundedResponse& response) {
  std::vector<std::pair<std::string, std::size_t>> out;
  out.reserve(response.entity_count());
  for (const Segment& segment : response.segments()) {
    if (const auto* entity = std::get_if<Entity>(&segment)) {
      out.emplace_back(entity->phrase, entity->slot);
    }
  }
  return out;
}

}  // namespace medground::grounded
