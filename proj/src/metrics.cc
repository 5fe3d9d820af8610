#include "medground/metrics.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>

#include "medground/error.h"
#include "medground/text_metrics.h"

namespace medground::metrics {

double Miou(std::span<const std::pair<BinaryMask, BinaryMask>> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::kEmptyInput, "no mask pairs");
  double sum = 0.0;
  for (const auto& [pred, gold] : pairs) sum += mask::Iou(pred, gold);
  return sum / static_cast<double>(pairs.size());
}

Ap50Counts MatchAp50(std::span<const BinaryMask> preds,
                     std::span<const BinaryMask> golds, double threshold) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> candidates;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < golds.size(); ++g) {
      const double iou = mask::Iou(preds[p], golds[g]);
      if (iou >= threshold) candidates.emplace_back(iou, p, g);
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a,
                                                     const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) <
           std::tie(std::get<1>(b), std::get<2>(b));
  });
  std::vector<bool> pred_used(preds.size(), false);
  std::vector<bool> gold_used(golds.size(), false);
  Ap50Counts counts{0, preds.size(), golds.size()};
  for (const auto& [iou, p, g] : candidates) {
    if (pred_used[p] || gold_used[g]) continue;
    pred_used[p] = gold_used[g] = true;
    ++counts.matched;
  }
  return counts;
}

double Ap50(std::span<const BinaryMask> preds,
            std::span<const BinaryMask> golds) {
  const Ap50Counts c = MatchAp50(preds, golds);
  const std::uint64_t denom = std::max(c.pred_total, c.gold_total);
  if (denom == 0) return 1.0;
  return static_cast<double>(c.matched) / static_cast<double>(denom);
}

void Validate(const GroundedPrediction& prediction) {
  if (prediction.masks.size() != prediction.response.entity_count()) {
    throw Error(ErrorKind::kLengthMismatch,
                "mask count " + std::to_string(prediction.masks.size()) +
                    " does not match entity count " +
                    std::to_string(prediction.response.entity_count()));
  }
}

std::string NormalizePhrase(std::string_view phrase) {
  std::string out;
  bool pending_space = false;
  for (char c : phrase) {
    if (c == ' ' || (c >= '\t' && c <= '\r')) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  return out;
}

std::size_t MaxBipartiteMatching(const std::vector<std::vector<bool>>& adj) {
  const std::size_t left = adj.size();
  const std::size_t right = left == 0 ? 0 : adj.front().size();
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> match_right(right, kFree);
  std::vector<bool> visited;

  // Kuhn's augmenting paths; entity counts per response are small.
  std::function<bool(std::size_t)> augment = [&](std::size_t u) {
    for (std::size_t v = 0; v < right; ++v) {
      if (!adj[u][v] || visited[v]) continue;
      visited[v] = true;
      if (match_right[v] == kFree || augment(match_right[v])) {
        match_right[v] = u;
        return true;
      }
    }
    return false;
  };

  std::size_t size = 0;
  for (std::size_t u = 0; u < left; ++u) {
    visited.assign(right, false);
    if (augment(u)) ++size;
  }
  return size;
}

GroundingScore GroundingF1(const GroundedPrediction& pred,
                           const GroundedPrediction& gold,
                           double iou_threshold) {
  Validate(pred);
  Validate(gold);
  const auto pred_entities = grounded::ExtractEntities(pred.response);
  const auto gold_entities = grounded::ExtractEntities(gold.response);

  std::vector<std::vector<bool>> adj(
      pred_entities.size(), std::vector<bool>(gold_entities.size(), false));
  for (std::size_t i = 0; i < pred_entities.size(); ++i) {
    const std::string p = NormalizePhrase(pred_entities[i].first);
    for (std::size_t j = 0; j < gold_entities.size(); ++j) {
      if (p != NormalizePhrase(gold_entities[j].first)) continue;
      adj[i][j] = mask::Iou(pred.masks[pred_entities[i].second],
                            gold.masks[gold_entities[j].second]) >
                  iou_threshold;
    }
  }

  GroundingScore score;
  score.correct = MaxBipartiteMatching(adj);
  score.predicted = pred_entities.size();
  score.gold = gold_entities.size();
  if (score.predicted > 0) {
    score.precision = static_cast<double>(score.correct) /
                      static_cast<double>(score.predicted);
  }
  if (score.gold > 0) {
    score.recall =
        static_cast<double>(score.correct) / static_cast<double>(score.gold);
  }
  if (score.precision + score.recall > 0.0) {
    score.f1 = 2.0 * score.precision * score.recall /
               (score.precision + score.recall);
  }
  return score;
}

void ExactSum::Add(double value) {
  if (!std::isfinite(value) || std::fabs(value) >= 0x1.0p30) {
    throw Error(ErrorKind::kNonFinite, "value outside accumulator range");
  }
  acc_ += static_cast<__int128>(std::nearbyint(std::ldexp(value, 96)));
}

double ExactSum::Value() const {
  return std::ldexp(static_cast<double>(acc_), -96);
}

void Accumulate(MetricReport& report, const EvalItem& item) {
  Validate(item.pred);
  Validate(item.gold);
  ++report.samples;

  for (std::size_t slot = 0; slot < item.gold.masks.size(); ++slot) {
    const BinaryMask& gold_mask = item.gold.masks[slot];
    if (slot < item.pred.masks.size()) {
      report.iou_sum.Add(mask::Iou(item.pred.masks[slot], gold_mask));
    } else {
      report.iou_sum.Add(mask::Iou(
          BinaryMask(gold_mask.height(), gold_mask.width()), gold_mask));
    }
    ++report.iou_count;
  }

  const Ap50Counts ap = MatchAp50(item.pred.masks, item.gold.masks,
                                  report.config.ap_iou_threshold);
  report.ap50_matched += ap.matched;
  report.ap50_pred_total += ap.pred_total;
  report.ap50_gold_total += ap.gold_total;
  report.ap50_denominator += std::max(ap.pred_total, ap.gold_total);

  const GroundingScore g =
      GroundingF1(item.pred, item.gold, report.config.f1_iou_threshold);
  report.f1_e += g.correct;
  report.f1_a += g.predicted;
  report.f1_b += g.gold;

  const std::string cand = grounded::StripMarkup(item.pred.response);
  const std::string ref = grounded::StripMarkup(item.gold.response);
  report.bleu_sum.Add(Bleu4(cand, {ref}));
  report.rouge_sum.Add(RougeL(cand, ref));
  report.meteor_sum.Add(MeteorLite(cand, ref));
  ++report.text_count;

  if (item.gold_answer) {
    ++report.vqa_count;
    if (VqaMatch(item.pred_answer.value_or(cand), *item.gold_answer)) {
      ++report.vqa_correct;
    }
  }
}

MetricReport MergeReports(const MetricReport& a, const MetricReport& b) {
  if (!(a.config == b.config)) {
    throw Error(ErrorKind::kConfigMismatch,
                "cannot merge reports with different metric configs");
  }
  MetricReport out = a;
  out.samples += b.samples;
  out.iou_sum += b.iou_sum;
  out.iou_count += b.iou_count;
  out.ap50_matched += b.ap50_matched;
  out.ap50_pred_total += b.ap50_pred_total;
  out.ap50_gold_total += b.ap50_gold_total;
  out.ap50_denominator += b.ap50_denominator;
  out.f1_e += b.f1_e;
  out.f1_a += b.f1_a;
  out.f1_b += b.f1_b;
  out.bleu_sum += b.bleu_sum;
  out.rouge_sum += b.rouge_sum;
  out.meteor_sum += b.meteor_sum;
  out.text_count += b.text_count;
  out.vqa_correct += b.vqa_correct;
  out.vqa_count += b.vqa_count;
  return out;
}

FinalizedReport Finalize(const MetricReport& r) {
  auto ratio = [](double num, std::uint64_t den) {
    return den == 0 ? 0.0 : num / static_cast<double>(den);
  };
  FinalizedReport f;
  f.samples = r.samples;
  f.miou = ratio(r.iou_sum.Value(), r.iou_count);
  f.ap50 = r.ap50_denominator == 0
               ? (r.samples > 0 ? 1.0 : 0.0)
               : ratio(static_cast<double>(r.ap50_matched), r.ap50_denominator);
  f.precision = ratio(static_cast<double>(r.f1_e), r.f1_a);
  f.recall = ratio(static_cast<double>(r.f1_e), r.f1_b);
  if (f.precision + f.recall > 0.0) {
    f.f1 = 2.0 * f.precision * f.recall / (f.precision + f.recall);
  }
  f.bleu4 = ratio(r.bleu_sum.Value(), r.text_count);
  f.rouge_l = ratio(r.rouge_sum.Value(), r.text_count);
  f.meteor = ratio(r.meteor_sum.Value(), r.text_count);
  if (r.vqa_count > 0) {
    f.vqa_accuracy = ratio(static_cast<double>(r.vqa_correct), r.vqa_count);
  }
  return f;
}

}  // namespace medground::metrics
