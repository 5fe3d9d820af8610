#pragma once

// Dataset construction: template-based samples for language-guided
// segmentation (P1) and visual-prompt perceiving (P2), knowledge-based
// generation prompts and provider-backed Q&A for P3/P4, splits and the
// training mixer.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "medground/knowledge.h"
#include "medground/provider.h"
#include "medground/random.h"
#include "medground/sample.h"

namespace medground::forge {

// Entities (and query labels) are joined with this separator.
inline constexpr std::string_view kLabelSeparator = ", ";
inline constexpr std::string_view kMissingKnowledge =
    "No additional knowledge available.";

struct TemplateChoice {
  std::size_t instruction = 0;
  std::size_t response = 0;
};

// Template indices drawn from the seed.
TemplateChoice ChooseP1Templates(std::size_t label_count, std::uint64_t seed);

// Error(kEmptyLabels) when the record has no masks.
Sample MakeP1Sample(const ImageRecord& record, std::uint64_t seed);
Sample MakeP1Sample(const ImageRecord& record, TemplateChoice choice);

enum class PromptKind { kBox, kPoint };

// Box: the prompt is the bounding box of the union of all masks and every
// label is a target. Point: one label is chosen by seed and the prompt is a
// pixel sampled from its mask. Error(kEmptyLabels) without masks,
// Error(kEmptyMask) when a target mask is empty.
Sample MakeP2Sample(const ImageRecord& record, PromptKind kind,
                    std::uint64_t seed);
Sample MakeP2Sample(const ImageRecord& record, PromptKind kind,
                    std::uint64_t seed, TemplateChoice choice);

struct GenerationPrompt {
  Perspective perspective = Perspective::kP3;
  std::vector<std::string> labels;
  std::string knowledge;  // per-label paragraphs, concatenated
  bool multi_label = false;
  std::optional<std::string> in_context_example;

  // Full prompt text sent to the provider.
  std::string Render() const;
};

enum class Strictness { kStrict, kLenient };

// Error(kInvalidArgument) for P1/P2 or an empty label list. In strict mode a
// label missing from the knowledge base is Error(kUnknownLabel); lenient mode
// substitutes kMissingKnowledge. P3 prompts carry one in-context example
// drawn by seed when the pool is non-empty; P4 prompts carry none.
GenerationPrompt BuildGenerationPrompt(Perspective perspective,
                                       const std::vector<std::string>& labels,
                                       const KnowledgeBase& kb,
                                       std::span<const std::string> examples,
                                       std::uint64_t seed,
                                       Strictness strictness = Strictness::kStrict);

struct QaPair {
  std::string question;
  grounded::GroundedResponse answer;
  // For each answer entity (by slot), the index of the matched label.
  std::vector<std::size_t> entity_labels;
};

// Wraps every case-insensitive, word-bounded occurrence of a label in
// "<p>...<SEG></p>", preferring the longest label at each position. Any
// marker strings already present in `answer` are removed first.
QaPair GroundAnswer(std::string question, std::string_view answer,
                    const std::vector<std::string>& labels);

struct RetryPolicy {
  int max_attempts = 3;
};

// Calls the provider (retrying ProviderError up to max_attempts), reads the
// "Question:" and "Answer:" sections and grounds the answer. Throws
// Error(kProviderError) when attempts are exhausted or the completion lacks
// either section, Error(kUngroundableAnswer) when no label is mentioned.
QaPair GenerateQa(const GenerationPrompt& prompt, CompletionProvider& provider,
                  const RetryPolicy& retry = {});

// Builds a P3 or P4 sample around a generated Q&A. The visual prompt for P4
// is derived as in MakeP2Sample. Each answer entity takes the mask of the
// first manifest entry carrying its label.
Sample MakeGeneratedSample(const ImageRecord& record, Perspective perspective,
                           const QaPair& qa,
                           std::optional<mask::VisualPrompt> visual_prompt);

struct SplitRatios {
  double train = 0.99;
  double val = 0.005;
  double test = 0.005;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// |val| = round(val * n), |test| = round(test * n) (capped at what is left),
// the rest train. Error(kBadRatios) unless the ratios are non-negative and
// sum to 1 within 1e-9; Error(kEmptyInput) when n == 0.
SplitSizes ComputeSplitSizes(std::size_t n, const SplitRatios& ratios);

// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> SeededPermutation(std::size_t n, std::uint64_t seed);

template <typename T>
struct Splits {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

template <typename T>
Splits<T> Split(const std::vector<T>& items, const SplitRatios& ratios,
                std::uint64_t seed) {
  const SplitSizes sizes = ComputeSplitSizes(items.size(), ratios);
  const auto perm = SeededPermutation(items.size(), seed);
  Splits<T> out;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const T& item = items[perm[i]];
    if (i < sizes.val) {
      out.val.push_back(item);
    } else if (i < sizes.val + sizes.test) {
      out.test.push_back(item);
    } else {
      out.train.push_back(item);
    }
  }
  return out;
}

// Drops samples whose id is excluded from the val and test splits; these
// stand for evaluation data removed by manual review.
void ApplyExclusions(Splits<Sample>& splits,
                     const std::unordered_set<std::string>& excluded_ids);

struct MixPick {
  std::size_t source = 0;
  std::size_t index = 0;  // position within the source, cycling
  bool operator==(const MixPick&) const = default;
};

// Each draw picks source i with probability weights[i] / sum(weights) and
// takes that source's next item, wrapping around when exhausted.
// Error(kInvalidArgument) on a size mismatch, negative weights or a zero
// total; Error(kEmptySource) when a positively weighted source is empty.
std::vector<MixPick> Mix(std::span<const std::size_t> source_sizes,
                         std::span<const double> weights, std::uint64_t seed,
                         std::size_t count);

}  // namespace medground::forge
