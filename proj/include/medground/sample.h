#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medground/grounded_text.h"
#include "medground/mask.h"

namespace medground::forge {

enum class Modality {
  kCt,
  kMri,
  kDermoscopy,
  kPet,
  kEndoscopy,
  kXRay,
  kUltrasound,
  kFundus,
};

inline constexpr Modality kAllModalities[] = {
    Modality::kCt,        Modality::kMri,       Modality::kDermoscopy,
    Modality::kPet,       Modality::kEndoscopy, Modality::kXRay,
    Modality::kUltrasound, Modality::kFundus};

std::string_view ModalityName(Modality m);
// Accepts the canonical names ("CT", "MRI", "Dermoscopy", "PET",
// "Endoscopy", "X-Ray", "Ultrasound", "Fundus"). Error(kParseError) otherwise.
Modality ParseModality(std::string_view name);

enum class Perspective { kP1, kP2, kP3, kP4 };

inline constexpr Perspective kAllPerspectives[] = {
    Perspective::kP1, Perspective::kP2, Perspective::kP3, Perspective::kP4};

std::string_view PerspectiveName(Perspective p);  // "P1".."P4"
Perspective ParsePerspective(std::string_view name);  // "P1" or "p1"

inline bool NeedsVisualPrompt(Perspective p) {
  return p == Perspective::kP2 || p == Perspective::kP4;
}

struct LabeledMask {
  std::string label;
  mask::BinaryMask mask;
};

// One manifest row: an image and its labeled gold masks.
struct ImageRecord {
  std::string id;
  std::string image_ref;
  Modality modality = Modality::kCt;
  std::vector<LabeledMask> masks;
};

struct Sample {
  std::string id;
  std::string image_ref;
  Modality modality = Modality::kCt;
  Perspective perspective = Perspective::kP1;
  std::string query;
  std::optional<mask::VisualPrompt> visual_prompt;
  grounded::GroundedResponse gold;
  std::vector<mask::BinaryMask> gold_masks;
};

// Throws Error(kInvalidArgument) when the visual prompt presence does not
// match the perspective, the prompt is out of bounds, or gold_masks does not
// have one mask per entity.
void ValidateSample(const Sample& sample);

}  // namespace medground::forge
