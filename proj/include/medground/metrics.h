#pragma once

// Segmentation and grounding metrics plus a mergeable accumulator that lets
// evaluation run over shards and combine into the single-pass result.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "medground/grounded_text.h"
#include "medground/mask.h"

namespace medground::metrics {

using mask::BinaryMask;

// Mean of per-pair IoU, summed in input order. Error(kEmptyInput) when empty.
double Miou(std::span<const std::pair<BinaryMask, BinaryMask>> pairs);

struct Ap50Counts {
  std::uint64_t matched = 0;
  std::uint64_t pred_total = 0;
  std::uint64_t gold_total = 0;
};

// One-to-one greedy matching in descending IoU order (ties broken by pred
// then gold index); a pair counts when IoU >= threshold.
Ap50Counts MatchAp50(std::span<const BinaryMask> preds,
                     std::span<const BinaryMask> golds,
                     double threshold = 0.5);

// Unscored masks admit no precision/recall curve, so the score is
// matched / max(|preds|, |golds|); 1.0 when both sides are empty.
double Ap50(std::span<const BinaryMask> preds,
            std::span<const BinaryMask> golds);

struct GroundedPrediction {
  grounded::GroundedResponse response;
  std::vector<BinaryMask> masks;  // one per slot
};

// Throws Error(kLengthMismatch) if masks.size() != entity_count.
void Validate(const GroundedPrediction& prediction);

struct GroundingScore {
  std::uint64_t correct = 0;    // E
  std::uint64_t predicted = 0;  // A
  std::uint64_t gold = 0;       // B
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lowercases ASCII, collapses whitespace runs to one space, trims the ends.
std::string NormalizePhrase(std::string_view phrase);

// Size of a maximum matching in a bipartite graph given as an adjacency
// matrix left x right.
std::size_t MaxBipartiteMatching(const std::vector<std::vector<bool>>& adj);

// E is a maximum one-to-one matching of predicted to gold entities where the
// normalized phrases are equal and mask IoU > iou_threshold.
GroundingScore GroundingF1(const GroundedPrediction& pred,
                           const GroundedPrediction& gold,
                           double iou_threshold = 0.5);

// Fixed-point accumulator (2^-96 resolution) whose sum does not depend on
// the order values are added in. Accepts finite values with |v| < 2^30.
class ExactSum {
 public:
  void Add(double value);
  ExactSum& operator+=(const ExactSum& other) {
    acc_ += other.acc_;
    return *this;
  }
  double Value() const;
  bool operator==(const ExactSum&) const = default;

 private:
  __int128 acc_ = 0;
};

struct MetricConfig {
  double f1_iou_threshold = 0.5;  // strict >
  double ap_iou_threshold = 0.5;  // >=
  bool operator==(const MetricConfig&) const = default;
};

// Everything needed to score one sample.
struct EvalItem {
  GroundedPrediction pred;
  GroundedPrediction gold;
  std::optional<std::string> pred_answer;  // closed-ended answers, if any
  std::optional<std::string> gold_answer;
};

struct MetricReport {
  MetricConfig config;
  std::uint64_t samples = 0;
  ExactSum iou_sum;
  std::uint64_t iou_count = 0;
  std::uint64_t ap50_matched = 0;
  std::uint64_t ap50_pred_total = 0;
  std::uint64_t ap50_gold_total = 0;
  std::uint64_t ap50_denominator = 0;  // sum of per-image max(pred, gold)
  std::uint64_t f1_e = 0;
  std::uint64_t f1_a = 0;
  std::uint64_t f1_b = 0;
  ExactSum bleu_sum;
  ExactSum rouge_sum;
  ExactSum meteor_sum;
  std::uint64_t text_count = 0;
  std::uint64_t vqa_correct = 0;
  std::uint64_t vqa_count = 0;

  bool operator==(const MetricReport&) const = default;
};

// Adds one sample. mIoU pairs each gold slot with the predicted mask of the
// same slot (an empty mask when the prediction has fewer slots); text metrics
// compare the marker-free responses.
void Accumulate(MetricReport& report, const EvalItem& item);

// Component-wise sum. Error(kConfigMismatch) if the configs differ.
MetricReport MergeReports(const MetricReport& a, const MetricReport& b);

struct FinalizedReport {
  std::uint64_t samples = 0;
  double miou = 0.0;
  double ap50 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double meteor = 0.0;
  std::optional<double> vqa_accuracy;
  bool operator==(const FinalizedReport&) const = default;
};

FinalizedReport Finalize(const MetricReport& report);

}  // namespace medground::metrics
