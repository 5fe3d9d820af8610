#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <unordered_map>

#include "medground/error.h"
#include "medground/metrics.h"
#include "medground/text_metrics.h"
#include "test_support.h"

using namespace medground;
using namespace medground::metrics;
using mask::BinaryMask;
using testing::MakePrediction;
using testing::RandomPrediction;

namespace {

// Literal BLEU-4: clipped n-gram counts keyed by joined strings, add-one for
// n >= 2, closest-length brevity penalty.
double LiteralBleu4(const std::string& cand_text,
                    const std::vector<std::string>& ref_texts) {
  const auto cand = Tokenize(cand_text);
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : ref_texts) refs.push_back(Tokenize(r));
  auto grams = [](const std::vector<std::string>& t, std::size_t n) {
    std::unordered_map<std::string, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key;
      for (std::size_t k = 0; k < n; ++k) key += t[i + k] + "\x1f";
      ++m[key];
    }
    return m;
  };
  double product = 1.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto c = grams(cand, n);
    double match = 0, total = 0;
    for (const auto& [k, v] : c) {
      int clip = 0;
      for (const auto& r : refs) {
        const auto rg = grams(r, n);
        const auto it = rg.find(k);
        if (it != rg.end()) clip = std::max(clip, it->second);
      }
      match += std::min(v, clip);
      total += v;
    }
    product *= n == 1 ? match / total : (match + 1) / (total + 1);
  }
  double best = 1e9, r_len = 0;
  for (const auto& r : refs) {
    const double d = std::fabs(double(r.size()) - double(cand.size()));
    if (d < best || (d == best && r.size() < r_len)) {
      best = d;
      r_len = static_cast<double>(r.size());
    }
  }
  const double c_len = static_cast<double>(cand.size());
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::pow(product, 0.25);
}

}  // namespace

TEST_CASE("miou") {
  Rng rng(1);
  const BinaryMask m = testing::RectMask(4, 4, 0, 0, 1, 3);
  std::vector<std::pair<BinaryMask, BinaryMask>> one = {{m, m}};
  CHECK(Miou(one) == 1.0);
  std::vector<std::pair<BinaryMask, BinaryMask>> two = {{m, m},
                                                        {m, m.complement()}};
  CHECK(Miou(two) == 0.5);
  CHECK_THROWS_AS(Miou({}), Error);

  std::vector<std::pair<BinaryMask, BinaryMask>> pairs;
  double sum = 0.0;
  for (int i = 0; i < 20; ++i) {
    pairs.emplace_back(testing::RandomMask(rng, 8, 8, 0.5),
                       testing::RandomMask(rng, 8, 8, 0.5));
    sum += testing::NaiveIou(pairs.back().first, pairs.back().second);
  }
  CHECK(Miou(pairs) == sum / 20.0);
}

TEST_CASE("ap50") {
  const std::vector<BinaryMask> golds = {
      testing::RectMask(8, 8, 0, 0, 1, 1), testing::RectMask(8, 8, 4, 4, 7, 7),
      testing::RectMask(8, 8, 0, 4, 2, 7)};
  CHECK(Ap50(golds, golds) == 1.0);

  const std::vector<BinaryMask> disjoint = {testing::RectMask(8, 8, 3, 0, 7, 3)};
  CHECK(Ap50(disjoint, golds) == 0.0);
  CHECK(Ap50({}, {}) == 1.0);
  CHECK(Ap50({}, golds) == 0.0);

  // Pred 0 overlaps gold 1 at 12/16, pred 1 equals gold 0, pred 2 misses.
  const std::vector<BinaryMask> preds = {testing::RectMask(8, 8, 4, 5, 7, 7),
                                         golds[0],
                                         testing::RectMask(8, 8, 3, 0, 3, 2)};
  std::vector<std::vector<bool>> adj(3, std::vector<bool>(3));
  for (int p = 0; p < 3; ++p)
    for (int g = 0; g < 3; ++g)
      adj[p][g] = testing::NaiveIou(preds[p], golds[g]) >= 0.5;
  REQUIRE(testing::BruteForceMatching(adj) == 2);
  CHECK(Ap50(preds, golds) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // Order invariance.
  const std::vector<BinaryMask> shuffled = {preds[2], preds[0], preds[1]};
  const std::vector<BinaryMask> gold_shuffled = {golds[1], golds[2], golds[0]};
  CHECK(Ap50(shuffled, gold_shuffled) == Ap50(preds, golds));
}

TEST_CASE("grounding f1 fixtures") {
  const BinaryMask a = testing::RectMask(4, 4, 0, 0, 1, 1);
  const BinaryMask b = testing::RectMask(4, 4, 2, 2, 3, 3);
  const auto gold = MakePrediction({{"liver", a}, {"spleen", b}});
  const auto same = GroundingF1(gold, gold);
  CHECK(same.precision == 1.0);
  CHECK(same.recall == 1.0);
  CHECK(same.f1 == 1.0);

  const auto none = GroundingF1(MakePrediction({}), gold);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.f1 == 0.0);

  // Only "liver" pairs up: "spleen" has the wrong mask, "heart" is unknown.
  const auto pred = MakePrediction({{"Liver", a}, {"spleen", a}, {"heart", b}});
  const auto s = GroundingF1(pred, gold);
  CHECK(s.correct == 1);
  CHECK(s.predicted == 3);
  CHECK(s.gold == 2);
  CHECK(s.precision == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.recall == 0.5);
  CHECK(s.f1 == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("grounding f1 uses strict IoU > 0.5") {
  const BinaryMask g = testing::RectMask(2, 2, 0, 0, 1, 0);  // 2 px
  const BinaryMask p = testing::RectMask(2, 2, 0, 0, 0, 0);  // IoU 0.5
  const auto s = GroundingF1(MakePrediction({{"x", p}}), MakePrediction({{"x", g}}));
  CHECK(s.correct == 0);
  CHECK(Ap50(std::vector{p}, std::vector{g}) == 1.0);
}

TEST_CASE("property: grounding E equals brute-force matching") {
  Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    const auto pred = RandomPrediction(rng, 6);
    const auto gold = RandomPrediction(rng, 6);
    const auto s = GroundingF1(pred, gold);
    CHECK(s.correct == testing::BruteForceGroundingE(pred, gold));
    CHECK(s.correct <= std::min(s.predicted, s.gold));
    CHECK(s.precision <= 1.0);
    CHECK(s.recall <= 1.0);
    const auto swapped = GroundingF1(gold, pred);
    CHECK(swapped.precision == s.recall);
    CHECK(swapped.recall == s.precision);
  }
}

TEST_CASE("tokenizer") {
  CHECK(Tokenize("The  Heart, (left)\tventricle.") ==
        std::vector<std::string>{"the", "heart", "left", "ventricle"});
  CHECK(Tokenize("a\xC2\xA0" "b\xE3\x80\x80" "c") ==
        std::vector<std::string>{"a", "b", "c"});
  CHECK(Tokenize(" ... ").empty());
  CHECK(Tokenize("don't") == std::vector<std::string>{"don't"});
}

TEST_CASE("bleu4") {
  CHECK(Bleu4("the liver is enlarged today", {"the liver is enlarged today"}) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(Bleu4("alpha beta", {"gamma delta epsilon"}) == 0.0);
  CHECK(Bleu4("", {"x"}) == 0.0);

  const double v = Bleu4("the cat sat on the mat", {"the cat is on the mat"});
  const double hand = std::pow(5.0 / 6.0 * 4.0 / 6.0 * 2.0 / 5.0 * 1.0 / 4.0, 0.25);
  CHECK(std::fabs(v - hand) <= 1e-12);
  CHECK(std::fabs(v - LiteralBleu4("the cat sat on the mat",
                                   {"the cat is on the mat"})) <= 1e-9);

  Rng rng(77);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
  for (int i = 0; i < 100; ++i) {
    auto sentence = [&] {
      std::string s;
      const std::size_t n = 1 + rng.Index(9);
      for (std::size_t k = 0; k < n; ++k) s += words[rng.Index(5)] + " ";
      return s;
    };
    const std::string c = sentence();
    const std::vector<std::string> refs = {sentence(), sentence()};
    CHECK(std::fabs(Bleu4(c, refs) - LiteralBleu4(c, refs)) <= 1e-9);
  }
}

TEST_CASE("rouge-l") {
  CHECK(RougeL("a b c", "a b c") == 1.0);
  CHECK(RougeL("a b", "c d") == 0.0);
  CHECK(RougeL("a b c d", "a c b d") == 0.75);
  CHECK(RougeL("", "a") == 0.0);
}

TEST_CASE("meteor-lite") {
  const double m6 = MeteorLite("one two three four five six",
                               "one two three four five six");
  CHECK(m6 == doctest::Approx(1.0 - 0.5 / 216.0).epsilon(1e-15));
  CHECK(m6 == doctest::Approx(0.997685).epsilon(1e-6));
  CHECK(MeteorLite("alpha", "beta") == 0.0);
  // One match: P = R = 1/2, Fmean = 1/2, penalty 1/2.
  CHECK(MeteorLite("heart beats", "the heart") == doctest::Approx(0.25).epsilon(1e-15));
  // Stem stage matches "vessels" with "vessel".
  CHECK(MeteorLite("vessels", "vessel") == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(Stem("studies") == "study");
  CHECK(Stem("bleeding") == "bleed");
}

TEST_CASE("vqa accuracy") {
  CHECK(VqaAccuracy({"yes", "no"}, {"yes", "no"}) == 1.0);
  CHECK(VqaAccuracy({"no", "yes"}, {"yes", "no"}) == 0.0);
  CHECK(VqaAccuracy({"Yes, it is.", "no"}, {"yes", "yes"}) == 0.5);
  CHECK_FALSE(VqaMatch("not really", "no"));
  CHECK_THROWS_AS(VqaAccuracy({"yes"}, {}), Error);
}

TEST_CASE("exact sum is order independent") {
  Rng rng(99);
  std::vector<double> values(1000);
  for (auto& v : values) v = rng.Unit();
  ExactSum forward, backward;
  for (double v : values) forward.Add(v);
  for (auto it = values.rbegin(); it != values.rend(); ++it) backward.Add(*it);
  CHECK(forward == backward);
  ExactSum ones;
  for (int i = 0; i < 7; ++i) ones.Add(1.0);
  CHECK(ones.Value() == 7.0);
}

TEST_CASE("report merge") {
  Rng rng(314);
  std::vector<EvalItem> items;
  for (int i = 0; i < 100; ++i) {
    EvalItem item;
    item.gold = RandomPrediction(rng, 4);
    item.pred = rng.Index(3) == 0 ? item.gold : RandomPrediction(rng, 4);
    if (i % 5 == 0) {
      item.gold_answer = "yes";
      item.pred_answer = rng.Index(2) ? "Yes." : "no";
    }
    items.push_back(item);
  }

  MetricReport single;
  for (const auto& item : items) Accumulate(single, item);

  std::vector<MetricReport> shards(4);
  for (std::size_t i = 0; i < items.size(); ++i) Accumulate(shards[i % 4], items[i]);
  MetricReport merged;
  for (const auto& s : shards) merged = MergeReports(merged, s);
  CHECK(merged == single);
  CHECK(Finalize(merged) == Finalize(single));

  CHECK(MergeReports(single, MetricReport{}) == single);
  CHECK(Finalize(MergeReports(shards[0], shards[1])) ==
        Finalize(MergeReports(shards[1], shards[0])));
  CHECK(MergeReports(MergeReports(shards[0], shards[1]), shards[2]) ==
        MergeReports(shards[0], MergeReports(shards[1], shards[2])));

  MetricReport other;
  other.config.f1_iou_threshold = 0.7;
  CHECK_THROWS_AS(MergeReports(single, other), Error);
}

TEST_CASE("reflexive report") {
  Rng rng(5);
  MetricReport r;
  for (int i = 0; i < 30; ++i) {
    EvalItem item;
    std::vector<std::pair<std::string, BinaryMask>> ents;
    const std::size_t n = 1 + rng.Index(3);
    for (std::size_t k = 0; k < n; ++k) {
      BinaryMask m = testing::RandomMask(rng, 8, 8, 0.5);
      m.set(0, 0, true);
      ents.emplace_back("organ " + std::to_string(k), m);
    }
    item.gold = MakePrediction(ents);
    item.gold.response.AddText(" are visible in this scan");
    item.pred = item.gold;
    Accumulate(r, item);
  }
  const auto f = Finalize(r);
  CHECK(f.miou == 1.0);
  CHECK(f.ap50 == 1.0);
  CHECK(f.f1 == 1.0);
  CHECK(f.bleu4 == 1.0);
  CHECK(f.rouge_l == 1.0);
}
