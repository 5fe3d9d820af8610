#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace medground::forge {

enum class KnowledgeSource { kWikipedia, kUmls, kManual };

std::string_view KnowledgeSourceName(KnowledgeSource s);

struct KnowledgeEntry {
  std::string label;
  std::string text;
  KnowledgeSource source = KnowledgeSource::kManual;
  bool operator==(const KnowledgeEntry&) const = default;
};

// Lowercased (ASCII), whitespace-collapsed, trimmed label key.
std::string NormalizeLabel(std::string_view label);

// Label -> knowledge paragraph. Lookups are case-insensitive via
// NormalizeLabel. The file form is a JSON array of
// {"label", "text", "source": "wikipedia" | "umls" | "manual"}.
class KnowledgeBase {
 public:
  // Error(kDuplicateLabel) if the normalized label is already present.
  void Add(KnowledgeEntry entry);

  const KnowledgeEntry* Find(std::string_view label) const;
  // Error(kNotFound) when absent.
  const KnowledgeEntry& Lookup(std::string_view label) const;

  std::size_t size() const { return entries_.size(); }
  // Entries in insertion order.
  std::vector<KnowledgeEntry> entries() const;

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<KnowledgeEntry> entries_;
};

// An empty file (or one holding only whitespace) is an empty base.
// Error(kParseError) on malformed JSON or schema, Error(kDuplicateLabel).
KnowledgeBase LoadKnowledge(const std::filesystem::path& path);
KnowledgeBase ParseKnowledge(std::string_view text);
std::string DumpKnowledge(const KnowledgeBase& kb);
void SaveKnowledge(const KnowledgeBase& kb, const std::filesystem::path& path);

}  // namespace medground::forge
