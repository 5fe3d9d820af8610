#include "medground/sample.h"

#include <string>

#include "medground/error.h"

namespace medground::forge {

std::string_view ModalityName(Modality m) {
  switch (m) {
    case Modality::kCt: return "CT";
    case Modality::kMri: return "MRI";
    case Modality::kDermoscopy: return "Dermoscopy";
    case Modality::kPet: return "PET";
    case Modality::kEndoscopy: return "Endoscopy";
    case Modality::kXRay: return "X-Ray";
    case Modality::kUltrasound: return "Ultrasound";
    case Modality::kFundus: return "Fundus";
  }
  return "";
}

Modality ParseModality(std::string_view name) {
  for (Modality m : kAllModalities) {
    if (ModalityName(m) == name) return m;
  }
  throw Error(ErrorKind::kParseError,
              "unknown modality '" + std::string(name) + "'");
}

std::string_view PerspectiveName(Perspective p) {
  switch (p) {
    case Perspective::kP1: return "P1";
    case Perspective::kP2: return "P2";
    case Perspective::kP3: return "P3";
    case Perspective::kP4: return "P4";
  }
  return "";
}

Perspective ParsePerspective(std::string_view name) {
  if (name.size() == 2 && (name[0] == 'P' || name[0] == 'p') &&
      name[1] >= '1' && name[1] <= '4') {
    return static_cast<Perspective>(name[1] - '1');
  }
  throw Error(ErrorKind::kParseError,
              "unknown perspective '" + std::string(name) + "'");
}

void ValidateSample(const Sample& s) {
  const bool needs = NeedsVisualPrompt(s.perspective);
  if (needs != s.visual_prompt.has_value()) {
    throw Error(ErrorKind::kInvalidArgument,
                "sample " + s.id + ": perspective " +
                    std::string(PerspectiveName(s.perspective)) +
                    (needs ? " requires" : " forbids") + " a visual prompt");
  }
  if (s.gold_masks.size() != s.gold.entity_count()) {
    throw Error(ErrorKind::kInvalidArgument,
                "sample " + s.id + ": " + std::to_string(s.gold_masks.size()) +
                    " masks for " + std::to_string(s.gold.entity_count()) +
                    " entities");
  }
  if (s.visual_prompt && !s.gold_masks.empty()) {
    const auto& m = s.gold_masks.front();
    if (!mask::InBounds(*s.visual_prompt, m.height(), m.width())) {
      throw Error(ErrorKind::kInvalidArgument,
                  "sample " + s.id + ": visual prompt out of bounds");
    }
  }
}

}  // namespace medground::forge
