#pragma once

// Scoring of prediction files against forged gold samples.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medground/error.h"
#include "medground/json_io.h"
#include "medground/metrics.h"
#include "medground/sample.h"

namespace medground::eval {

// Ids present on only one side.
class IdMismatchError : public Error {
 public:
  IdMismatchError(std::vector<std::string> missing_predictions,
                  std::vector<std::string> missing_gold);
  // Gold ids without a prediction.
  const std::vector<std::string>& missing_predictions() const { return missing_predictions_; }
  // Prediction ids without a gold sample.
  const std::vector<std::string>& missing_gold() const { return missing_gold_; }

 private:
  std::vector<std::string> missing_predictions_;
  std::vector<std::string> missing_gold_;
};

// One model output: {"id", "response", "masks": [RLE...], "answer"?}.
// The response is parsed leniently; text that still fails to parse is scored
// as plain text with its markers removed. Error(kLengthMismatch) when the
// mask count differs from the number of grounded phrases.
struct Prediction {
  std::string id;
  metrics::GroundedPrediction grounded;
  std::optional<std::string> answer;
};

Prediction PredictionFromJson(const Json& j);

struct EvalSet {
  std::vector<forge::Perspective> perspectives;  // per item, from the gold side
  std::vector<metrics::EvalItem> items;          // in gold file order
};

// Pairs rows by id. Gold rows are forged samples, optionally carrying an
// "answer" for closed-ended questions. Error(kParseError) on duplicate ids,
// IdMismatchError on orphans, Error(kEmptyInput) when both sides are empty.
EvalSet AlignById(const std::vector<Json>& predictions, const std::vector<Json>& gold);

struct EvalResult {
  metrics::MetricReport overall;
  std::map<forge::Perspective, metrics::MetricReport> per_perspective;
  bool operator==(const EvalResult&) const = default;
};

// Items are cut into `shards` contiguous ranges, accumulated independently
// (up to `workers` at a time) and merged. The result does not depend on
// either count.
EvalResult Evaluate(const EvalSet& set, const metrics::MetricConfig& config,
                    std::size_t shards = 1, std::size_t workers = 1);

// {"overall": {...}, "perspectives": {"P1": {...}, ...}} over finalized values.
Json EvalResultToJson(const EvalResult& result);

}  // namespace medground::eval
