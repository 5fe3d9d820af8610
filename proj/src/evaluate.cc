#include "medground/evaluate.h"

#include <algorithm>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace medground::eval {

namespace {

std::string JoinIds(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < 10; ++i) {
    if (i > 0) out += ", ";
    out += ids[i];
  }
  if (ids.size() > 10) out += ", ...";
  return out;
}

std::string MismatchMessage(const std::vector<std::string>& missing_predictions,
                            const std::vector<std::string>& missing_gold) {
  std::string msg = "prediction and gold ids differ";
  if (!missing_predictions.empty()) {
    msg += "; no prediction for " + JoinIds(missing_predictions);
  }
  if (!missing_gold.empty()) msg += "; no gold for " + JoinIds(missing_gold);
  return msg;
}

std::string IdOf(const Json& row, std::string_view side) {
  if (!row.is_object() || !row.contains("id") || !row["id"].is_string()) {
    throw Error(ErrorKind::kParseError, std::string(side) + " row without a string id");
  }
  return row["id"].get<std::string>();
}

std::optional<std::string> AnswerOf(const Json& row) {
  if (!row.contains("answer") || row["answer"].is_null()) return std::nullopt;
  if (!row["answer"].is_string()) {
    throw Error(ErrorKind::kParseError, "answer must be a string");
  }
  return row["answer"].get<std::string>();
}

std::string RemoveMarkers(std::string text) {
  for (bool changed = true; changed;) {
    changed = false;
    for (std::string_view m :
         {grounded::kOpenTag, grounded::kCloseTag, grounded::kSegTag}) {
      for (auto pos = text.find(m); pos != std::string::npos; pos = text.find(m)) {
        text.erase(pos, m.size());
        changed = true;
      }
    }
  }
  return text;
}

}  // namespace

IdMismatchError::IdMismatchError(std::vector<std::string> missing_predictions,
                                 std::vector<std::string> missing_gold)
    : Error(ErrorKind::kIdMismatch, MismatchMessage(missing_predictions, missing_gold)),
      missing_predictions_(std::move(missing_predictions)),
      missing_gold_(std::move(missing_gold)) {}

Prediction PredictionFromJson(const Json& j) {
  Prediction p;
  p.id = IdOf(j, "prediction");
  if (!j.contains("response") || !j["response"].is_string()) {
    throw Error(ErrorKind::kParseError, "prediction " + p.id + " has no response");
  }
  const std::string text = j["response"].get<std::string>();
  auto parsed = grounded::ParseGrounded(text, grounded::ParseMode::kLenient);
  if (parsed.response) {
    p.grounded.response = std::move(*parsed.response);
  } else {
    p.grounded.response.AddText(RemoveMarkers(text));
  }
  if (j.contains("masks")) {
    if (!j["masks"].is_array()) {
      throw Error(ErrorKind::kParseError, "prediction " + p.id + ": masks must be a list");
    }
    for (const Json& m : j["masks"]) p.grounded.masks.push_back(MaskFromJson(m));
  }
  try {
    metrics::Validate(p.grounded);
  } catch (const Error& e) {
    throw Error(e.kind(), "prediction " + p.id + ": " + e.what());
  }
  p.answer = AnswerOf(j);
  return p;
}

EvalSet AlignById(const std::vector<Json>& predictions, const std::vector<Json>& gold) {
  if (predictions.empty() && gold.empty()) {
    throw Error(ErrorKind::kEmptyInput, "no predictions and no gold samples");
  }
  std::unordered_map<std::string, std::size_t> pred_index;
  std::vector<std::string> pred_ids;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::string id = IdOf(predictions[i], "prediction");
    if (!pred_index.emplace(id, i).second) {
      throw Error(ErrorKind::kParseError, "duplicate prediction id " + id);
    }
    pred_ids.push_back(std::move(id));
  }
  std::unordered_set<std::string> gold_ids;
  std::vector<std::string> missing_predictions;
  for (const Json& row : gold) {
    std::string id = IdOf(row, "gold");
    if (!gold_ids.insert(id).second) {
      throw Error(ErrorKind::kParseError, "duplicate gold id " + id);
    }
    if (!pred_index.contains(id)) missing_predictions.push_back(std::move(id));
  }
  std::vector<std::string> missing_gold;
  for (const auto& id : pred_ids) {
    if (!gold_ids.contains(id)) missing_gold.push_back(id);
  }
  if (!missing_predictions.empty() || !missing_gold.empty()) {
    throw IdMismatchError(std::move(missing_predictions), std::move(missing_gold));
  }

  EvalSet set;
  for (const Json& row : gold) {
    const forge::Sample sample = SampleFromJson(row);
    Prediction pred = PredictionFromJson(predictions[pred_index.at(sample.id)]);
    metrics::EvalItem item;
    item.pred = std::move(pred.grounded);
    item.gold.response = sample.gold;
    item.gold.masks = sample.gold_masks;
    item.pred_answer = std::move(pred.answer);
    item.gold_answer = AnswerOf(row);
    set.perspectives.push_back(sample.perspective);
    set.items.push_back(std::move(item));
  }
  return set;
}

EvalResult Evaluate(const EvalSet& set, const metrics::MetricConfig& config,
                    std::size_t shards, std::size_t workers) {
  const std::size_t n = set.items.size();
  shards = std::clamp<std::size_t>(shards, 1, std::max<std::size_t>(n, 1));
  workers = std::clamp<std::size_t>(workers, 1, shards);

  std::vector<EvalResult> partial(shards);
  auto run_shard = [&](std::size_t s) {
    EvalResult& r = partial[s];
    r.overall.config = config;
    const std::size_t begin = n * s / shards;
    const std::size_t end = n * (s + 1) / shards;
    for (std::size_t i = begin; i < end; ++i) {
      metrics::Accumulate(r.overall, set.items[i]);
      auto [it, inserted] = r.per_perspective.try_emplace(set.perspectives[i]);
      if (inserted) it->second.config = config;
      metrics::Accumulate(it->second, set.items[i]);
    }
  };
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < shards; s += workers) run_shard(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalResult result = std::move(partial[0]);
  for (std::size_t s = 1; s < shards; ++s) {
    result.overall = metrics::MergeReports(result.overall, partial[s].overall);
    for (const auto& [p, report] : partial[s].per_perspective) {
      auto [it, inserted] = result.per_perspective.try_emplace(p, report);
      if (!inserted) it->second = metrics::MergeReports(it->second, report);
    }
  }
  return result;
}

Json EvalResultToJson(const EvalResult& result) {
  Json j;
  j["overall"] = FinalizedReportToJson(metrics::Finalize(result.overall), result.overall);
  Json per = Json::object();
  for (const auto& [p, report] : result.per_perspective) {
    per[std::string(forge::PerspectiveName(p))] =
        FinalizedReportToJson(metrics::Finalize(report), report);
  }
  j["perspectives"] = std::move(per);
  return j;
}

}  // namespace medground::eval
