#include "medground/knowledge.h"

#include "medground/error.h"
#include "medground/json_io.h"

namespace medground::forge {

std::string_view KnowledgeSourceName(KnowledgeSource s) {
  switch (s) {
    case KnowledgeSource::kWikipedia: return "wikipedia";
    case KnowledgeSource::kUmls: return "umls";
    case KnowledgeSource::kManual: return "manual";
  }
  return "";
}

std::string NormalizeLabel(std::string_view label) {
  return metrics::NormalizePhrase(label);
}

void KnowledgeBase::Add(KnowledgeEntry entry) {
  std::string key = NormalizeLabel(entry.label);
  if (key.empty()) {
    throw Error(ErrorKind::kParseError, "knowledge entry with empty label");
  }
  if (index_.contains(key)) {
    throw Error(ErrorKind::kDuplicateLabel,
                "duplicate knowledge label '" + entry.label + "'");
  }
  index_.emplace(std::move(key), entries_.size());
  entries_.push_back(std::move(entry));
}

const KnowledgeEntry* KnowledgeBase::Find(std::string_view label) const {
  const auto it = index_.find(NormalizeLabel(label));
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const KnowledgeEntry& KnowledgeBase::Lookup(std::string_view label) const {
  const KnowledgeEntry* e = Find(label);
  if (e == nullptr) {
    throw Error(ErrorKind::kNotFound,
                "no knowledge for label '" + std::string(label) + "'");
  }
  return *e;
}

std::vector<KnowledgeEntry> KnowledgeBase::entries() const { return entries_; }

KnowledgeBase ParseKnowledge(std::string_view text) {
  KnowledgeBase kb;
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return kb;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError,
                std::string("knowledge base: ") + e.what());
  }
  if (!j.is_array()) {
    throw Error(ErrorKind::kParseError, "knowledge base must be a JSON array");
  }
  for (const Json& row : j) {
    if (!row.is_object() || !row.contains("label") || !row.contains("text") ||
        !row["label"].is_string() || !row["text"].is_string()) {
      throw Error(ErrorKind::kParseError,
                  "knowledge entries need string 'label' and 'text'");
    }
    KnowledgeEntry e{row["label"].get<std::string>(),
                     row["text"].get<std::string>(), KnowledgeSource::kManual};
    if (row.contains("source")) {
      const std::string src = row["source"].is_string()
                                  ? row["source"].get<std::string>()
                                  : std::string();
      if (src == "wikipedia") {
        e.source = KnowledgeSource::kWikipedia;
      } else if (src == "umls") {
        e.source = KnowledgeSource::kUmls;
      } else if (src == "manual") {
        e.source = KnowledgeSource::kManual;
      } else {
        throw Error(ErrorKind::kParseError,
                    "unknown knowledge source '" + src + "'");
      }
    }
    kb.Add(std::move(e));
  }
  return kb;
}

KnowledgeBase LoadKnowledge(const std::filesystem::path& path) {
  return ParseKnowledge(ReadFile(path));
}

std::string DumpKnowledge(const KnowledgeBase& kb) {
  Json arr = Json::array();
  for (const auto& e : kb.entries()) {
    Json row;
    row["label"] = e.label;
    row["text"] = e.text;
    row["source"] = KnowledgeSourceName(e.source);
    arr.push_back(std::move(row));
  }
  return arr.dump(2) + "\n";
}

void SaveKnowledge(const KnowledgeBase& kb, const std::filesystem::path& path) {
  WriteFileAtomic(path, DumpKnowledge(kb));
}

}  // namespace medground::forge
