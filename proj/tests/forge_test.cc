#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "medground/forge.h"
#include "medground/json_io.h"
#include "medground/pipeline.h"
#include "medground/templates.h"
#include "test_support.h"

using namespace medground;
using namespace medground::forge;
using medground::testing::CountOccurrences;
using medground::testing::RectMask;
using medground::testing::TempDir;
using medground::testing::WriteText;

namespace {

ErrorKind KindOf(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::kInvalidArgument;
}

ImageRecord Record(const std::string& id,
                   std::vector<std::pair<std::string, mask::BinaryMask>> masks) {
  ImageRecord r;
  r.id = id;
  r.image_ref = "images/" + id + ".png";
  r.modality = Modality::kCt;
  for (auto& [label, m] : masks) r.masks.push_back({label, std::move(m)});
  return r;
}

KnowledgeBase SmallKb() {
  KnowledgeBase kb;
  kb.Add({"heart", "The heart pumps blood through the body.", KnowledgeSource::kWikipedia});
  kb.Add({"liver", "The liver filters blood and produces bile.", KnowledgeSource::kUmls});
  kb.Add({"adrenal medulla", "The adrenal medulla secretes adrenaline.",
          KnowledgeSource::kManual});
  return kb;
}

std::map<std::string, std::vector<std::string>> LoadGolden() {
  std::ifstream in(std::string(MEDGROUND_TEST_DATA) + "/templates.golden");
  REQUIRE(in.good());
  std::map<std::string, std::vector<std::string>> sections;
  std::string line, current;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      current = line.substr(1, line.size() - 2);
    } else {
      sections[current].push_back(line);
    }
  }
  return sections;
}

template <std::size_t N>
void CheckFamily(const std::array<std::string_view, N>& actual,
                 const std::vector<std::string>& golden) {
  REQUIRE(actual.size() == golden.size());
  for (std::size_t i = 0; i < N; ++i) {
    CAPTURE(i);
    CHECK(std::string(actual[i]) == golden[i]);
  }
}

class ScriptedProvider : public CompletionProvider {
 public:
  explicit ScriptedProvider(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}
  std::string Complete(const CompletionRequest& request) override {
    last_prompt = request.prompt;
    const std::size_t n = calls++;
    if (n >= replies_.size() || replies_[n].empty()) {
      throw Error(ErrorKind::kProviderError, "timeout");
    }
    return replies_[n];
  }
  std::size_t calls = 0;
  std::string last_prompt;

 private:
  std::vector<std::string> replies_;
};

}  // namespace

TEST_SUITE("knowledge") {
  TEST_CASE("empty file is an empty base") {
    TempDir dir("kb");
    WriteText(dir / "kb.json", "");
    const KnowledgeBase kb = LoadKnowledge(dir / "kb.json");
    CHECK(kb.size() == 0);
    CHECK(KindOf([&] { kb.Lookup("heart"); }) == ErrorKind::kNotFound);
  }

  TEST_CASE("lookup normalizes case and whitespace") {
    const KnowledgeBase kb = ParseKnowledge(
        R"([{"label": "heart", "text": "Pumps blood.", "source": "wikipedia"}])");
    CHECK(kb.Lookup("Heart").text == "Pumps blood.");
    CHECK(kb.Lookup("  HEART ").label == "heart");
    CHECK(kb.Find("lung") == nullptr);
  }

  TEST_CASE("fifty entries round-trip through save and load") {
    KnowledgeBase kb;
    const KnowledgeSource sources[] = {KnowledgeSource::kWikipedia,
                                       KnowledgeSource::kUmls,
                                       KnowledgeSource::kManual};
    for (int i = 0; i < 50; ++i) {
      kb.Add({"Structure " + std::to_string(i),
              "Paragraph \"" + std::to_string(i) + "\" with unicode \xC2\xB5m.",
              sources[i % 3]});
    }
    TempDir dir("kb");
    SaveKnowledge(kb, dir / "kb.json");
    const KnowledgeBase back = LoadKnowledge(dir / "kb.json");
    CHECK(back.entries() == kb.entries());
    for (const auto& e : kb.entries()) CHECK(back.Lookup(e.label) == e);
  }

  TEST_CASE("errors") {
    CHECK(KindOf([] { ParseKnowledge("{not json"); }) == ErrorKind::kParseError);
    CHECK(KindOf([] { ParseKnowledge(R"({"label": "x"})"); }) == ErrorKind::kParseError);
    CHECK(KindOf([] {
            ParseKnowledge(R"([{"label": "x", "text": "a", "source": "books"}])");
          }) == ErrorKind::kParseError);
    CHECK(KindOf([] {
            ParseKnowledge(R"([{"label": "Heart", "text": "a", "source": "manual"},
                               {"label": "heart", "text": "b", "source": "manual"}])");
          }) == ErrorKind::kDuplicateLabel);
  }
}

TEST_SUITE("templates") {
  TEST_CASE("template strings match the golden copy byte for byte") {
    const auto golden = LoadGolden();
    CheckFamily(templates::kP1Instructions, golden.at("p1.instruction"));
    CheckFamily(templates::kP1SingleResponses, golden.at("p1.single"));
    CheckFamily(templates::kP1MultiResponses, golden.at("p1.multi"));
    CheckFamily(templates::kP2BoxInstructions, golden.at("p2.box"));
    CheckFamily(templates::kP2PointInstructions, golden.at("p2.point"));
    CheckFamily(templates::kP2Responses, golden.at("p2.box_response"));
    CheckFamily(templates::kP2Responses, golden.at("p2.point_response"));
  }

  TEST_CASE("fill replaces the single placeholder") {
    CHECK(templates::Fill("a {} b", "x") == "a x b");
    CHECK(KindOf([] { templates::Fill("none", "x"); }) == ErrorKind::kInvalidArgument);
    for (auto t : templates::kP1Instructions) {
      CHECK(CountOccurrences(std::string(t), "{}") == 1);
    }
  }
}

TEST_SUITE("p1") {
  TEST_CASE("first instruction with one label") {
    const auto r = Record("img1", {{"heart", RectMask(8, 8, 1, 1, 4, 4)}});
    const Sample s = MakeP1Sample(r, TemplateChoice{0, 0});
    CHECK(s.query == "Please segment the heart in the image.");
    CHECK(grounded::Serialize(s.gold) ==
          "The image includes <p>heart<SEG></p>. The segmentation result is "
          "shown in the image.");
    CHECK(s.perspective == Perspective::kP1);
    CHECK_FALSE(s.visual_prompt.has_value());
    REQUIRE(s.gold_masks.size() == 1);
    CHECK(s.gold_masks[0] == r.masks[0].mask);
  }

  TEST_CASE("two labels use the multi-label family") {
    const auto r = Record("img2", {{"heart", RectMask(8, 8, 0, 0, 2, 2)},
                                   {"liver", RectMask(8, 8, 4, 4, 7, 7)}});
    const Sample s = MakeP1Sample(r, TemplateChoice{0, 5});
    CHECK(grounded::Serialize(s.gold) ==
          "Within the image, <p>heart<SEG></p>, <p>liver<SEG></p> are present, "
          "and the segmentation results are visible.");
    CHECK(grounded::StripMarkup(s.gold).find("are present") != std::string::npos);
    CHECK(s.query == "Please segment the heart, liver in the image.");
    CHECK(s.gold_masks.size() == 2);
    CHECK(s.gold_masks[1] == r.masks[1].mask);

    // Every seeded choice for a multi-label image stays in that family.
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Sample t = MakeP1Sample(r, seed);
      const std::string text = grounded::StripMarkup(t.gold);
      CHECK(text.find("results") != std::string::npos);
    }
  }

  TEST_CASE("every template instantiates to the filled golden string") {
    const auto golden = LoadGolden();
    const auto r = Record("img", {{"heart", RectMask(4, 4, 0, 0, 1, 1)}});
    for (std::size_t i = 0; i < templates::kP1Instructions.size(); ++i) {
      for (std::size_t j = 0; j < templates::kP1SingleResponses.size(); ++j) {
        const Sample s = MakeP1Sample(r, TemplateChoice{i, j});
        std::string q = golden.at("p1.instruction")[i];
        q.replace(q.find("{}"), 2, "heart");
        std::string a = golden.at("p1.single")[j];
        a.replace(a.find("{}"), 2, "<p>heart<SEG></p>");
        CHECK(s.query == q);
        CHECK(grounded::Serialize(s.gold) == a);
      }
    }
  }

  TEST_CASE("deterministic by seed") {
    const auto r = Record("img", {{"heart", RectMask(8, 8, 1, 1, 4, 4)},
                                  {"liver", RectMask(8, 8, 5, 5, 6, 6)}});
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
      CHECK(SampleToJson(MakeP1Sample(r, seed)).dump() ==
            SampleToJson(MakeP1Sample(r, seed)).dump());
    }
    std::set<std::string> queries;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      queries.insert(MakeP1Sample(r, seed).query);
    }
    CHECK(queries.size() == templates::kP1Instructions.size());
  }

  TEST_CASE("no labels") {
    const auto r = Record("img", {});
    CHECK(KindOf([&] { MakeP1Sample(r, 1); }) == ErrorKind::kEmptyLabels);
  }
}

TEST_SUITE("p2") {
  TEST_CASE("box prompt is the bounding box of the mask") {
    const auto m = RectMask(16, 16, 3, 5, 9, 12);
    const auto r = Record("img", {{"liver", m}});
    const Sample s = MakeP2Sample(r, PromptKind::kBox, 7, TemplateChoice{0, 0});
    REQUIRE(s.visual_prompt.has_value());
    const auto box = std::get<mask::Box>(*s.visual_prompt);
    const auto expect = mask::BboxOf(m);
    CHECK(box.x_min == expect.x_min);
    CHECK(box.y_min == expect.y_min);
    CHECK(box.x_max == expect.x_max);
    CHECK(box.y_max == expect.y_max);
    CHECK(s.query == "Please segment out the organs or lesions in the bounding box.");
    CHECK(grounded::Serialize(s.gold) ==
          "The result of segmentation is <p>liver<SEG></p> and is shown in the image.");
  }

  TEST_CASE("box over several masks covers their union") {
    const auto r = Record("img", {{"heart", RectMask(16, 16, 1, 1, 3, 3)},
                                  {"liver", RectMask(16, 16, 10, 8, 12, 14)}});
    const Sample s = MakeP2Sample(r, PromptKind::kBox, 3);
    const auto box = std::get<mask::Box>(*s.visual_prompt);
    CHECK(box.x_min == 1);
    CHECK(box.y_min == 1);
    CHECK(box.x_max == 12);
    CHECK(box.y_max == 14);
    CHECK(s.gold.entity_count() == 2);
    CHECK(s.gold_masks.size() == 2);
  }

  TEST_CASE("point prompt lies inside the chosen target") {
    medground::Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const auto a = medground::testing::RandomMask(rng, 12, 12, 0.2);
      const auto b = medground::testing::RandomMask(rng, 12, 12, 0.2);
      if (a.empty() || b.empty()) continue;
      const auto r = Record("img", {{"a", a}, {"b", b}});
      const Sample s = MakeP2Sample(r, PromptKind::kPoint, rng.Next());
      const auto p = std::get<mask::Point>(*s.visual_prompt);
      REQUIRE(s.gold_masks.size() == 1);
      CHECK(s.gold_masks[0].at(static_cast<std::size_t>(p.x),
                               static_cast<std::size_t>(p.y)));
      CHECK(s.query.find("point") != std::string::npos);
    }
  }

  TEST_CASE("empty target mask") {
    const auto r = Record("img", {{"liver", mask::BinaryMask(4, 4)}});
    CHECK(KindOf([&] { MakeP2Sample(r, PromptKind::kBox, 1); }) == ErrorKind::kEmptyMask);
    CHECK(KindOf([&] { MakeP2Sample(r, PromptKind::kPoint, 1); }) ==
          ErrorKind::kEmptyMask);
  }
}

TEST_SUITE("generation prompt") {
  TEST_CASE("single label embeds its knowledge verbatim") {
    const KnowledgeBase kb = SmallKb();
    const std::vector<std::string> examples = {"Question: q\nAnswer: a"};
    const auto g = BuildGenerationPrompt(Perspective::kP3, {"heart"}, kb, examples, 5);
    CHECK_FALSE(g.multi_label);
    CHECK(g.knowledge == "The heart pumps blood through the body.");
    CHECK(g.in_context_example == examples[0]);
    const std::string text = g.Render();
    CHECK(text.find("The heart pumps blood through the body.") != std::string::npos);
    CHECK(text.find("interrelationships") == std::string::npos);
  }

  TEST_CASE("three labels use the multi-label skeleton") {
    const KnowledgeBase kb = SmallKb();
    const auto g = BuildGenerationPrompt(
        Perspective::kP3, {"heart", "liver", "adrenal medulla"}, kb, {}, 5);
    CHECK(g.multi_label);
    const std::string text = g.Render();
    for (const auto& e : kb.entries()) {
      CHECK(text.find(e.text) != std::string::npos);
    }
    CHECK(text.find("consider each label and their interrelationships") !=
          std::string::npos);
    CHECK_FALSE(g.in_context_example.has_value());
  }

  TEST_CASE("P4 carries no in-context example") {
    const std::vector<std::string> examples = {"e1", "e2"};
    const auto g =
        BuildGenerationPrompt(Perspective::kP4, {"liver"}, SmallKb(), examples, 1);
    CHECK_FALSE(g.in_context_example.has_value());
    CHECK(g.Render().find("visual prompt") != std::string::npos);
  }

  TEST_CASE("deterministic and seed-driven example choice") {
    const KnowledgeBase kb = SmallKb();
    std::vector<std::string> examples;
    for (int i = 0; i < 10; ++i) examples.push_back("example " + std::to_string(i));
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto a = BuildGenerationPrompt(Perspective::kP3, {"heart"}, kb, examples, seed);
      const auto b = BuildGenerationPrompt(Perspective::kP3, {"heart"}, kb, examples, seed);
      CHECK(a.Render() == b.Render());
      seen.insert(*a.in_context_example);
    }
    CHECK(seen.size() > 1);
  }

  TEST_CASE("missing knowledge") {
    const KnowledgeBase kb = SmallKb();
    CHECK(KindOf([&] {
            BuildGenerationPrompt(Perspective::kP3, {"spleen"}, kb, {}, 1);
          }) == ErrorKind::kUnknownLabel);
    const auto g = BuildGenerationPrompt(Perspective::kP3, {"heart", "spleen"}, kb,
                                         {}, 1, Strictness::kLenient);
    CHECK(g.knowledge.find(std::string("spleen: ") + std::string(kMissingKnowledge)) !=
          std::string::npos);
    CHECK(KindOf([&] {
            BuildGenerationPrompt(Perspective::kP1, {"heart"}, kb, {}, 1);
          }) == ErrorKind::kInvalidArgument);
    CHECK(KindOf([&] { BuildGenerationPrompt(Perspective::kP3, {}, kb, {}, 1); }) ==
          ErrorKind::kEmptyLabels);
  }
}

TEST_SUITE("qa") {
  TEST_CASE("repeated label mentions each get a slot") {
    const std::string answer =
        "The adrenal medulla sits inside the gland; the Adrenal Medulla releases "
        "hormones.";
    const QaPair qa = GroundAnswer("q", answer, {"adrenal medulla"});
    std::string lowered = answer;
    for (auto& c : lowered) c = static_cast<char>(std::tolower(c));
    CHECK(qa.answer.entity_count() == CountOccurrences(lowered, "adrenal medulla"));
    CHECK(qa.answer.entity_count() == 2);
    CHECK(grounded::StripMarkup(qa.answer) == answer);
    const auto reparsed = grounded::ParseGrounded(grounded::Serialize(qa.answer));
    REQUIRE(reparsed.ok());
    CHECK(*reparsed.response == qa.answer);
  }

  TEST_CASE("longest label wins and matches are word-bounded") {
    const QaPair qa = GroundAnswer(
        "q", "The left kidney and kidneys near the kidney.", {"kidney", "left kidney"});
    const auto entities = grounded::ExtractEntities(qa.answer);
    REQUIRE(entities.size() == 2);
    CHECK(entities[0].first == "left kidney");
    CHECK(entities[1].first == "kidney");
    CHECK(qa.entity_labels == std::vector<std::size_t>{1, 0});
  }

  TEST_CASE("answers without a label cannot be grounded") {
    CHECK(KindOf([] { GroundAnswer("q", "Nothing relevant.", {"heart"}); }) ==
          ErrorKind::kUngroundableAnswer);
  }

  TEST_CASE("stub provider completion is parsed and grounded") {
    TempDir dir("stub");
    WriteText(dir / "default.txt",
              "Question: What is shown here?\nAnswer: The {labels} can be seen "
              "clearly.\n");
    StubProvider stub(dir.path());
    const auto g = BuildGenerationPrompt(Perspective::kP3, {"heart", "liver"},
                                         SmallKb(), {}, 1);
    const QaPair qa = GenerateQa(g, stub);
    CHECK(qa.question == "What is shown here?");
    CHECK(grounded::Serialize(qa.answer) ==
          "The <p>heart<SEG></p> and <p>liver<SEG></p> can be seen clearly.");

    // A keyed fixture takes precedence over the default.
    WriteText(dir / (PromptKey(g.Render()) + ".txt"),
              "question: Where?\nanswer: In the liver.");
    const QaPair keyed = GenerateQa(g, stub);
    CHECK(keyed.question == "Where?");
    CHECK(grounded::Serialize(keyed.answer) == "In the <p>liver<SEG></p>.");
  }

  TEST_CASE("provider failures retry and then surface") {
    const auto g = BuildGenerationPrompt(Perspective::kP3, {"heart"}, SmallKb(), {}, 1);
    ScriptedProvider flaky({"", "", "Question: q\nAnswer: the heart."});
    const QaPair qa = GenerateQa(g, flaky, RetryPolicy{3});
    CHECK(flaky.calls == 3);
    CHECK(qa.answer.entity_count() == 1);

    ScriptedProvider dead({});
    CHECK(KindOf([&] { GenerateQa(g, dead, RetryPolicy{4}); }) ==
          ErrorKind::kProviderError);
    CHECK(dead.calls == 4);

    ScriptedProvider garbled({"no sections at all"});
    CHECK(KindOf([&] { GenerateQa(g, garbled); }) == ErrorKind::kProviderError);

    TempDir empty("stub");
    StubProvider missing(empty.path());
    CHECK(KindOf([&] { GenerateQa(g, missing); }) == ErrorKind::kProviderError);
  }

  TEST_CASE("generated sample pairs entities with manifest masks") {
    const auto r = Record("img", {{"heart", RectMask(8, 8, 0, 0, 2, 2)},
                                  {"liver", RectMask(8, 8, 4, 4, 6, 6)}});
    const QaPair qa =
        GroundAnswer("q", "The Liver touches the heart and the liver.", {"heart", "liver"});
    const Sample s = MakeGeneratedSample(r, Perspective::kP3, qa, std::nullopt);
    REQUIRE(s.gold_masks.size() == 3);
    CHECK(s.gold_masks[0] == r.masks[1].mask);
    CHECK(s.gold_masks[1] == r.masks[0].mask);
    CHECK(s.gold_masks[2] == r.masks[1].mask);
    CHECK(KindOf([&] { MakeGeneratedSample(r, Perspective::kP4, qa, std::nullopt); }) ==
          ErrorKind::kInvalidArgument);
  }
}

TEST_CASE("http provider posts the request and reads the reply") {
  httplib::Server server;
  std::string body_seen, auth_seen;
  server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
    body_seen = req.body;
    auth_seen = req.get_header_value("Authorization");
    res.set_content(R"({"text": "Question: q\nAnswer: the heart."})", "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpProvider provider(base + "/v1/complete", "secret");
  CompletionRequest req;
  req.prompt = "hello";
  req.max_tokens = 64;
  req.temperature = 0.25;
  CHECK(provider.Complete(req) == "Question: q\nAnswer: the heart.");
  const auto sent = Json::parse(body_seen);
  CHECK(sent["prompt"] == "hello");
  CHECK(sent["max_tokens"] == 64);
  CHECK(sent["temperature"] == 0.25);
  CHECK(auth_seen == "Bearer secret");

  HttpProvider broken(base + "/broken", "");
  CHECK(KindOf([&] { broken.Complete(req); }) == ErrorKind::kProviderError);

  server.stop();
  thread.join();

  HttpProvider unreachable(base + "/v1/complete", "", std::chrono::milliseconds(200));
  CHECK(KindOf([&] { unreachable.Complete(req); }) == ErrorKind::kProviderError);
}

TEST_SUITE("split") {
  TEST_CASE("sizes") {
    auto sizes = ComputeSplitSizes(1000, {});
    CHECK(sizes.train == 990);
    CHECK(sizes.val == 5);
    CHECK(sizes.test == 5);
    sizes = ComputeSplitSizes(1, {});
    CHECK(sizes.train == 1);
    CHECK(sizes.val == 0);
    CHECK(sizes.test == 0);
    CHECK(KindOf([] { ComputeSplitSizes(10, {0.5, 0.5, 0.5}); }) == ErrorKind::kBadRatios);
    CHECK(KindOf([] { ComputeSplitSizes(10, {1.2, -0.1, -0.1}); }) == ErrorKind::kBadRatios);
    CHECK(KindOf([] { ComputeSplitSizes(0, {}); }) == ErrorKind::kEmptyInput);
  }

  TEST_CASE("fuzzed inputs are partitioned") {
    medground::Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng.Index(3000);
      std::vector<int> items(n);
      for (auto& v : items) v = static_cast<int>(rng.Index(50));  // duplicates
      const double val = rng.Unit() * 0.3;
      const double test = rng.Unit() * 0.3;
      const SplitRatios ratios{1.0 - val - test, val, test};
      const auto s = Split(items, ratios, rng.Next());
      std::multiset<int> joined(s.train.begin(), s.train.end());
      joined.insert(s.val.begin(), s.val.end());
      joined.insert(s.test.begin(), s.test.end());
      CHECK(joined == std::multiset<int>(items.begin(), items.end()));
      CHECK(s.train.size() + s.val.size() + s.test.size() == n);
      CHECK(s.val.size() == std::min<std::size_t>(n, std::llround(val * n)));
    }
  }

  TEST_CASE("positions are disjoint and the shuffle is seeded") {
    std::vector<std::size_t> ids(500);
    std::iota(ids.begin(), ids.end(), 0);
    const auto a = Split(ids, {0.8, 0.1, 0.1}, 9);
    const auto b = Split(ids, {0.8, 0.1, 0.1}, 9);
    const auto c = Split(ids, {0.8, 0.1, 0.1}, 10);
    CHECK(a.val == b.val);
    CHECK(a.val != c.val);
    std::set<std::size_t> seen;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
      for (auto v : *part) CHECK(seen.insert(v).second);
    }
    CHECK(seen.size() == ids.size());
  }

  TEST_CASE("exclusions drop evaluation samples only") {
    Splits<Sample> s;
    for (const char* id : {"a", "b"}) s.train.push_back(Sample{.id = id});
    for (const char* id : {"c", "d"}) s.val.push_back(Sample{.id = id});
    for (const char* id : {"e"}) s.test.push_back(Sample{.id = id});
    ApplyExclusions(s, {"a", "c", "e"});
    CHECK(s.train.size() == 2);
    REQUIRE(s.val.size() == 1);
    CHECK(s.val[0].id == "d");
    CHECK(s.test.empty());
  }
}

TEST_SUITE("mix") {
  const std::array<std::size_t, 5> kSizes = {3, 5, 7, 2, 4};

  TEST_CASE("degenerate weights draw from one source and cycle") {
    const std::array<double, 5> w = {1, 0, 0, 0, 0};
    const auto picks = Mix(kSizes, w, 1, 10);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      CHECK(picks[i].source == 0);
      CHECK(picks[i].index == i % 3);
    }
    const std::array<double, 5> last = {0, 0, 0, 0, 1};
    for (const auto& p : Mix(kSizes, last, 1, 50)) CHECK(p.source == 4);
  }

  TEST_CASE("frequencies converge to the weights") {
    const std::array<double, 5> w = {1, 2, 2, 1, 1};
    const auto picks = Mix(kSizes, w, 77, 70000);
    std::array<double, 5> counts{};
    for (const auto& p : picks) counts[p.source] += 1;
    for (std::size_t i = 0; i < 5; ++i) {
      CAPTURE(i);
      CHECK(std::fabs(counts[i] / 70000.0 - w[i] / 7.0) <= 0.01);
    }
  }

  TEST_CASE("same seed, same sequence") {
    const std::array<double, 5> w = {1, 2, 2, 1, 1};
    CHECK(Mix(kSizes, w, 5, 1000) == Mix(kSizes, w, 5, 1000));
    CHECK(Mix(kSizes, w, 5, 1000) != Mix(kSizes, w, 6, 1000));
  }

  TEST_CASE("errors") {
    const std::array<std::size_t, 5> with_empty = {3, 0, 7, 2, 4};
    const std::array<double, 5> w = {1, 2, 2, 1, 1};
    CHECK(KindOf([&] { Mix(with_empty, w, 1, 10); }) == ErrorKind::kEmptySource);
    const std::array<double, 5> zero = {0, 0, 0, 0, 0};
    CHECK(KindOf([&] { Mix(kSizes, zero, 1, 10); }) == ErrorKind::kInvalidArgument);
    const std::array<double, 4> four = {1, 1, 1, 1};
    CHECK(KindOf([&] { Mix(kSizes, four, 1, 10); }) == ErrorKind::kInvalidArgument);
  }
}

TEST_SUITE("pipeline") {
  void WriteManifest(const std::filesystem::path& path, std::size_t images) {
    medground::Rng rng(3);
    const char* labels[] = {"heart", "liver", "adrenal medulla"};
    std::string text;
    for (std::size_t i = 0; i < images; ++i) {
      ImageRecord r;
      r.id = "img" + std::to_string(i);
      r.image_ref = "images/" + r.id + ".png";
      r.modality = kAllModalities[i % 8];
      const std::size_t count = 1 + i % 3;
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t x0 = rng.Index(10), y0 = rng.Index(10);
        r.masks.push_back({labels[k], RectMask(16, 16, x0, y0, x0 + 1 + rng.Index(5),
                                               y0 + 1 + rng.Index(5))});
      }
      text += ImageRecordToJson(r).dump() + "\n";
    }
    WriteText(path, text);
  }

  TEST_CASE("outputs are valid and independent of worker count") {
    TempDir dir("forge");
    WriteManifest(dir / "manifest.jsonl", 40);
    SaveKnowledge(SmallKb(), dir / "kb.json");
    std::filesystem::create_directories(dir / "stub");
    WriteText(dir / "stub" / "default.txt",
              "Question: What can be seen?\nAnswer: Visible: {labels}.");

    auto run = [&](std::size_t workers, const std::string& out) {
      ForgeOptions o;
      o.manifest = dir / "manifest.jsonl";
      o.knowledge = dir / "kb.json";
      o.out_dir = dir / out;
      o.seed = 42;
      o.workers = workers;
      o.ratios = {0.8, 0.1, 0.1};
      o.mix_count = 100;
      std::filesystem::create_directories(o.out_dir);
      StubProvider stub(dir / "stub");
      return RunForge(o, &stub);
    };
    const ForgeResult one = run(1, "one");
    const ForgeResult many = run(6, "many");
    for (const char* name : {"p1.jsonl", "p2.jsonl", "p3.jsonl", "p4.jsonl",
                             "p3.val.jsonl", "stats.json", "mix.jsonl"}) {
      CAPTURE(name);
      CHECK(medground::testing::ReadText(dir / "one" / name) ==
            medground::testing::ReadText(dir / "many" / name));
    }
    CHECK(one.skipped.empty());
    for (Perspective p : kAllPerspectives) {
      REQUIRE(one.samples.at(p).size() == 40);
      for (const Sample& s : one.samples.at(p)) {
        CHECK(s.visual_prompt.has_value() == NeedsVisualPrompt(p));
        CHECK(s.gold_masks.size() == s.gold.entity_count());
        CHECK(grounded::ParseGrounded(grounded::Serialize(s.gold)).ok());
      }
    }
    CHECK(one.stats["total"] == 160);
    CHECK(ScanDataset(dir / "one").ToJson() == one.stats);
  }

  TEST_CASE("strict mode refuses unknown labels before writing") {
    TempDir dir("forge");
    WriteManifest(dir / "manifest.jsonl", 5);
    KnowledgeBase kb;
    kb.Add({"heart", "text", KnowledgeSource::kManual});
    SaveKnowledge(kb, dir / "kb.json");
    ForgeOptions o;
    o.manifest = dir / "manifest.jsonl";
    o.knowledge = dir / "kb.json";
    o.out_dir = dir.path();
    StubProvider stub(dir / "stub");
    CHECK(KindOf([&] { RunForge(o, &stub); }) == ErrorKind::kUnknownLabel);
    CHECK_FALSE(std::filesystem::exists(dir / "p1.jsonl"));

    // Lenient mode goes ahead; the empty stub dir makes every generation fail.
    o.strictness = Strictness::kLenient;
    o.retry.max_attempts = 2;
    const ForgeResult r = RunForge(o, &stub);
    CHECK(r.samples.at(Perspective::kP1).size() == 5);
    CHECK(r.samples.at(Perspective::kP3).empty());
    CHECK(r.provider_failures == 10);
    CHECK(r.skipped.size() == 10);
    const auto log = ReadJsonl(dir / "forge_log.jsonl");
    REQUIRE(log.size() == 10);
    CHECK(log[0]["error"] == "ProviderError");
  }
}
