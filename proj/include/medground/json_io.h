#pragma once

// JSON wire forms. Objects are emitted with a fixed key order so JSONL
// outputs are stable across runs and diff cleanly.
//
//   mask          {"h": int, "w": int, "runs": [int, ...]}
//   visual prompt {"type": "point", "x", "y"} |
//                 {"type": "box", "x_min", "y_min", "x_max", "y_max"}
//   sample        {"id", "image", "modality", "perspective", "query",
//                  "visual_prompt": prompt | null, "response", "masks"}
//   manifest row  {"id", "image", "modality",
//                  "masks": [{"label", "mask": mask}, ...]}

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medground/grounded_text.h"
#include "medground/mask.h"
#include "medground/metrics.h"
#include "medground/sample.h"

namespace medground {

using Json = nlohmann::ordered_json;

Json MaskToJson(const mask::BinaryMask& m);
// Error(kParseError) on schema problems, otherwise the RleDecode errors.
mask::BinaryMask MaskFromJson(const Json& j);

Json VisualPromptToJson(const mask::VisualPrompt& p);
mask::VisualPrompt VisualPromptFromJson(const Json& j);

Json SampleToJson(const forge::Sample& s);
// The response must parse under `mode`; Error(kParseError) otherwise.
forge::Sample SampleFromJson(const Json& j,
                             grounded::ParseMode mode = grounded::ParseMode::kStrict);

Json ImageRecordToJson(const forge::ImageRecord& r);
forge::ImageRecord ImageRecordFromJson(const Json& j);

Json FinalizedReportToJson(const metrics::FinalizedReport& f,
                           const metrics::MetricReport& counts);

// Reads a JSONL file, skipping blank lines. Error(kIoError) when the file
// cannot be opened, Error(kParseError) naming the line on malformed JSON.
std::vector<Json> ReadJsonl(const std::filesystem::path& path);

std::string ToJsonl(const std::vector<Json>& rows);

std::string ReadFile(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place, so readers
// never observe a partially written output.
void WriteFileAtomic(const std::filesystem::path& path,
                     std::string_view content);

}  // namespace medground
