#include "medground/json_io.h"

#include <fstream>
#include <sstream>

#include "medground/error.h"

namespace medground {

namespace {

[[noreturn]] void SchemaError(const std::string& what) {
  throw Error(ErrorKind::kParseError, what);
}

template <typename T>
T Field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    SchemaError(std::string("missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    SchemaError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

Json MaskToJson(const mask::BinaryMask& m) {
  Json j;
  j["h"] = m.height();
  j["w"] = m.width();
  j["runs"] = mask::RleEncode(m);
  return j;
}

mask::BinaryMask MaskFromJson(const Json& j) {
  const auto h = Field<std::int64_t>(j, "h");
  const auto w = Field<std::int64_t>(j, "w");
  if (h <= 0 || w <= 0) SchemaError("mask dimensions must be positive");
  const Json& runs_json = j.at("runs");
  if (!runs_json.is_array()) SchemaError("field 'runs' must be an array");
  mask::Runs runs;
  runs.reserve(runs_json.size());
  for (const Json& r : runs_json) {
    if (!r.is_number_integer()) SchemaError("runs must be integers");
    if (r.get<std::int64_t>() < 0) {
      throw Error(ErrorKind::kMalformedRuns, "negative run length");
    }
    runs.push_back(r.get<std::uint64_t>());
  }
  return mask::RleDecode(runs, static_cast<std::size_t>(h),
                         static_cast<std::size_t>(w));
}

Json VisualPromptToJson(const mask::VisualPrompt& p) {
  Json j;
  if (const auto* pt = std::get_if<mask::Point>(&p)) {
    j["type"] = "point";
    j["x"] = pt->x;
    j["y"] = pt->y;
  } else {
    const auto& b = std::get<mask::Box>(p);
    j["type"] = "box";
    j["x_min"] = b.x_min;
    j["y_min"] = b.y_min;
    j["x_max"] = b.x_max;
    j["y_max"] = b.y_max;
  }
  return j;
}

mask::VisualPrompt VisualPromptFromJson(const Json& j) {
  const auto type = Field<std::string>(j, "type");
  if (type == "point") {
    return mask::Point{Field<std::int64_t>(j, "x"), Field<std::int64_t>(j, "y")};
  }
  if (type == "box") {
    return mask::Box{Field<std::int64_t>(j, "x_min"),
                     Field<std::int64_t>(j, "y_min"),
                     Field<std::int64_t>(j, "x_max"),
                     Field<std::int64_t>(j, "y_max")};
  }
  SchemaError("unknown visual prompt type '" + type + "'");
}

Json SampleToJson(const forge::Sample& s) {
  Json j;
  j["id"] = s.id;
  j["image"] = s.image_ref;
  j["modality"] = forge::ModalityName(s.modality);
  j["perspective"] = forge::PerspectiveName(s.perspective);
  j["query"] = s.query;
  j["visual_prompt"] =
      s.visual_prompt ? VisualPromptToJson(*s.visual_prompt) : Json(nullptr);
  j["response"] = grounded::Serialize(s.gold);
  Json masks = Json::array();
  for (const auto& m : s.gold_masks) masks.push_back(MaskToJson(m));
  j["masks"] = std::move(masks);
  return j;
}

forge::Sample SampleFromJson(const Json& j, grounded::ParseMode mode) {
  forge::Sample s;
  s.id = Field<std::string>(j, "id");
  if (j.contains("image")) s.image_ref = Field<std::string>(j, "image");
  if (j.contains("modality")) {
    s.modality = forge::ParseModality(Field<std::string>(j, "modality"));
  }
  if (j.contains("perspective")) {
    s.perspective = forge::ParsePerspective(Field<std::string>(j, "perspective"));
  }
  if (j.contains("query")) s.query = Field<std::string>(j, "query");
  if (j.contains("visual_prompt") && !j.at("visual_prompt").is_null()) {
    s.visual_prompt = VisualPromptFromJson(j.at("visual_prompt"));
  }
  const auto text = Field<std::string>(j, "response");
  auto parsed = grounded::ParseGrounded(text, mode);
  if (!parsed.ok()) {
    const auto& d = parsed.diagnostics.front();
    SchemaError("record " + s.id + ": response does not parse (" +
                std::string(grounded::DiagnosticKindName(d.kind)) + " at byte " +
                std::to_string(d.byte_offset) + ")");
  }
  s.gold = std::move(*parsed.response);
  if (j.contains("masks")) {
    if (!j.at("masks").is_array()) SchemaError("field 'masks' must be an array");
    for (const Json& m : j.at("masks")) s.gold_masks.push_back(MaskFromJson(m));
  }
  return s;
}

Json ImageRecordToJson(const forge::ImageRecord& r) {
  Json j;
  j["id"] = r.id;
  j["image"] = r.image_ref;
  j["modality"] = forge::ModalityName(r.modality);
  Json masks = Json::array();
  for (const auto& lm : r.masks) {
    Json entry;
    entry["label"] = lm.label;
    entry["mask"] = MaskToJson(lm.mask);
    masks.push_back(std::move(entry));
  }
  j["masks"] = std::move(masks);
  return j;
}

forge::ImageRecord ImageRecordFromJson(const Json& j) {
  forge::ImageRecord r;
  r.id = Field<std::string>(j, "id");
  r.image_ref = Field<std::string>(j, "image");
  r.modality = forge::ParseModality(Field<std::string>(j, "modality"));
  if (!j.contains("masks") || !j.at("masks").is_array()) {
    SchemaError("record " + r.id + ": field 'masks' must be an array");
  }
  for (const Json& entry : j.at("masks")) {
    const auto label = Field<std::string>(entry, "label");
    if (label.empty()) SchemaError("record " + r.id + ": empty label");
    if (!entry.contains("mask")) SchemaError("record " + r.id + ": missing mask");
    r.masks.push_back({label, MaskFromJson(entry.at("mask"))});
  }
  return r;
}

Json FinalizedReportToJson(const metrics::FinalizedReport& f,
                           const metrics::MetricReport& c) {
  Json j;
  j["samples"] = f.samples;
  j["miou"] = f.miou;
  j["ap50"] = f.ap50;
  j["precision"] = f.precision;
  j["recall"] = f.recall;
  j["f1"] = f.f1;
  j["bleu4"] = f.bleu4;
  j["rouge_l"] = f.rouge_l;
  j["meteor"] = f.meteor;
  j["vqa_accuracy"] = f.vqa_accuracy ? Json(*f.vqa_accuracy) : Json(nullptr);
  j["iou_count"] = c.iou_count;
  j["ap50_matched"] = c.ap50_matched;
  j["ap50_pred_total"] = c.ap50_pred_total;
  j["ap50_gold_total"] = c.ap50_gold_total;
  j["f1_E"] = c.f1_e;
  j["f1_A"] = c.f1_a;
  j["f1_B"] = c.f1_b;
  j["text_count"] = c.text_count;
  j["vqa_correct"] = c.vqa_correct;
  j["vqa_count"] = c.vqa_count;
  return j;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Json> ReadJsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParseError, path.string() + ":" +
                                              std::to_string(line_no) + ": " +
                                              e.what());
    }
  }
  return rows;
}

std::string ToJsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const Json& row : rows) {
    out += row.dump();
    out += '\n';
  }
  return out;
}

void WriteFileAtomic(const std::filesystem::path& path,
                     std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIoError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::kIoError, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace medground
