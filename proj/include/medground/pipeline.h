#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medground/error.h"
#include "medground/forge.h"
#include "medground/json_io.h"

namespace medground::forge {

struct ForgeOptions {
  std::filesystem::path manifest;
  std::filesystem::path knowledge;  // required for P3/P4
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> examples;    // JSON array of strings
  std::optional<std::filesystem::path> exclusions;  // one sample id per line
  std::optional<std::filesystem::path> vqa;  // fifth mix source, JSONL with "id"
  std::uint64_t seed = 0;
  std::vector<Perspective> perspectives = {Perspective::kP1, Perspective::kP2,
                                           Perspective::kP3, Perspective::kP4};
  Strictness strictness = Strictness::kStrict;
  SplitRatios ratios;
  RetryPolicy retry;
  std::size_t workers = 1;
  std::size_t max_in_flight = 4;  // concurrent provider calls
  std::size_t mix_count = 0;      // 0 disables mix.jsonl
  std::array<double, 5> mix_weights = {1, 2, 2, 1, 1};
};

struct SkippedSample {
  std::string image_id;
  Perspective perspective;
  ErrorKind kind;
  std::string message;
};

struct ForgeResult {
  std::map<Perspective, std::vector<Sample>> samples;
  std::map<Perspective, Splits<Sample>> splits;
  std::vector<SkippedSample> skipped;
  std::size_t provider_calls = 0;   // P3/P4 samples attempted
  std::size_t provider_failures = 0;
  Json stats;
};

// Reads the manifest, builds every requested perspective, splits each
// perspective and writes under out_dir:
//   pN.jsonl, pN.{train,val,test}.jsonl   samples (N = 1..4)
//   stats.json                            counts per perspective/modality/split
//   forge_log.jsonl                       skipped samples with reasons
//   mix.jsonl                             {"source", "id"} when mix_count > 0
// Output depends only on the inputs and seed, not on worker count.
// Strict mode fails with Error(kUnknownLabel) before writing anything when a
// label lacks knowledge. Samples whose generation fails are skipped and
// logged.
ForgeResult RunForge(const ForgeOptions& options, CompletionProvider* provider);

std::vector<ImageRecord> LoadManifest(const std::filesystem::path& path);

inline constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val",
                                                                "test"};

// File name for a split, e.g. "p3.val.jsonl".
std::string SplitFileName(Perspective p, std::string_view split);

// Counts of sample rows per perspective, modality and split.
class DatasetStats {
 public:
  void Add(Perspective p, Modality m, std::string_view split);
  Json ToJson() const;
  std::size_t total() const { return total_; }

 private:
  std::map<std::string, std::map<std::string, std::size_t>> perspective_;
  std::map<std::string, std::map<std::string, std::size_t>> modality_;
  std::map<std::string, std::size_t> split_;
  std::size_t total_ = 0;
};

// Scans pN.{train,val,test}.jsonl under `dir`; missing files count as empty.
// Error(kParseError) on malformed rows.
DatasetStats ScanDataset(const std::filesystem::path& dir);

}  // namespace medground::forge
