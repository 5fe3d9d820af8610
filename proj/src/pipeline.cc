#include "medground/pipeline.h"

#include <atomic>
#include <fstream>
#include <semaphore>
#include <thread>
#include <unordered_set>

namespace medground::forge {

namespace {

std::string Lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> LoadExamples(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(ReadFile(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, "examples: " + std::string(e.what()));
  }
  if (!j.is_array()) throw Error(ErrorKind::kParseError, "examples must be an array");
  std::vector<std::string> out;
  for (const Json& e : j) {
    if (!e.is_string()) throw Error(ErrorKind::kParseError, "examples must be strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::unordered_set<std::string> LoadExclusions(const std::filesystem::path& path) {
  std::unordered_set<std::string> ids;
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty() && line.front() != '#') ids.insert(line);
  }
  return ids;
}

std::vector<std::string> LabelsOf(const ImageRecord& r,
                                  const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(r.masks[i].label);
  return out;
}

PromptKind KindFor(const ImageRecord& r, Perspective p, std::uint64_t seed) {
  Rng rng(DeriveSeed(seed, r.id + "/" + Lower(PerspectiveName(p)) + "/kind"));
  return rng.Index(2) == 0 ? PromptKind::kBox : PromptKind::kPoint;
}

// Target labels and visual prompt for a P4 sample, derived like P2.
struct P4Target {
  mask::VisualPrompt prompt;
  std::vector<std::size_t> targets;
};

P4Target DeriveP4(const ImageRecord& r, std::uint64_t seed, PromptKind kind) {
  const Sample proxy = MakeP2Sample(r, kind, seed, TemplateChoice{});
  P4Target t;
  t.prompt = *proxy.visual_prompt;
  for (const auto& [phrase, slot] : grounded::ExtractEntities(proxy.gold)) {
    for (std::size_t i = 0; i < r.masks.size(); ++i) {
      if (r.masks[i].label == phrase &&
          std::find(t.targets.begin(), t.targets.end(), i) == t.targets.end()) {
        t.targets.push_back(i);
        break;
      }
    }
  }
  return t;
}

}  // namespace

std::vector<ImageRecord> LoadManifest(const std::filesystem::path& path) {
  std::vector<ImageRecord> records;
  std::unordered_set<std::string> ids;
  for (const Json& row : ReadJsonl(path)) {
    records.push_back(ImageRecordFromJson(row));
    if (!ids.insert(records.back().id).second) {
      throw Error(ErrorKind::kParseError,
                  "duplicate manifest id '" + records.back().id + "'");
    }
  }
  return records;
}

std::string SplitFileName(Perspective p, std::string_view split) {
  return Lower(PerspectiveName(p)) + "." + std::string(split) + ".jsonl";
}

void DatasetStats::Add(Perspective p, Modality m, std::string_view split) {
  const std::string s(split);
  ++perspective_[std::string(PerspectiveName(p))][s];
  ++modality_[std::string(ModalityName(m))][s];
  ++split_[s];
  ++total_;
}

Json DatasetStats::ToJson() const {
  auto block = [](const std::map<std::string, std::size_t>* counts) {
    Json j;
    std::size_t total = 0;
    for (std::string_view s : kSplitNames) {
      std::size_t v = 0;
      if (counts) {
        const auto it = counts->find(std::string(s));
        if (it != counts->end()) v = it->second;
      }
      j[std::string(s)] = v;
      total += v;
    }
    j["total"] = total;
    return j;
  };
  Json out;
  out["total"] = total_;
  out["splits"] = block(&split_);
  Json per;
  for (Perspective p : kAllPerspectives) {
    const auto it = perspective_.find(std::string(PerspectiveName(p)));
    per[std::string(PerspectiveName(p))] =
        block(it == perspective_.end() ? nullptr : &it->second);
  }
  out["perspectives"] = std::move(per);
  Json mod;
  for (Modality m : kAllModalities) {
    const auto it = modality_.find(std::string(ModalityName(m)));
    mod[std::string(ModalityName(m))] =
        block(it == modality_.end() ? nullptr : &it->second);
  }
  out["modalities"] = std::move(mod);
  return out;
}

DatasetStats ScanDataset(const std::filesystem::path& dir) {
  DatasetStats stats;
  for (Perspective p : kAllPerspectives) {
    for (std::string_view split : kSplitNames) {
      const auto path = dir / SplitFileName(p, split);
      if (!std::filesystem::exists(path)) continue;
      for (const Json& row : ReadJsonl(path)) {
        if (!row.is_object() || !row.contains("modality") ||
            !row["modality"].is_string()) {
          throw Error(ErrorKind::kParseError,
                      path.string() + ": row without modality");
        }
        Perspective rp = p;
        if (row.contains("perspective") && row["perspective"].is_string()) {
          rp = ParsePerspective(row["perspective"].get<std::string>());
        }
        stats.Add(rp, ParseModality(row["modality"].get<std::string>()), split);
      }
    }
  }
  return stats;
}

ForgeResult RunForge(const ForgeOptions& options, CompletionProvider* provider) {
  const std::vector<ImageRecord> records = LoadManifest(options.manifest);
  const bool needs_generation =
      std::any_of(options.perspectives.begin(), options.perspectives.end(),
                  [](Perspective p) {
                    return p == Perspective::kP3 || p == Perspective::kP4;
                  });

  KnowledgeBase kb;
  std::vector<std::string> examples;
  if (needs_generation) {
    if (options.knowledge.empty()) {
      throw Error(ErrorKind::kInvalidArgument,
                  "P3/P4 generation needs a knowledge base");
    }
    if (provider == nullptr) {
      throw Error(ErrorKind::kInvalidArgument,
                  "P3/P4 generation needs a completion provider");
    }
    kb = LoadKnowledge(options.knowledge);
    if (options.examples) examples = LoadExamples(*options.examples);
    if (options.strictness == Strictness::kStrict) {
      for (const auto& r : records) {
        for (const auto& lm : r.masks) {
          if (kb.Find(lm.label) == nullptr) {
            throw Error(ErrorKind::kUnknownLabel,
                        "image " + r.id + ": no knowledge for label '" +
                            lm.label + "'");
          }
        }
      }
    }
  }
  std::unordered_set<std::string> excluded;
  if (options.exclusions) excluded = LoadExclusions(*options.exclusions);

  struct Outcome {
    std::optional<Sample> sample;
    std::optional<SkippedSample> skipped;
    bool provider_call = false;
    bool provider_failed = false;
  };
  const std::size_t np = options.perspectives.size();
  std::vector<Outcome> outcomes(records.size() * np);
  std::counting_semaphore<> in_flight(
      static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options.max_in_flight)));

  auto build = [&](const ImageRecord& r, Perspective p, Outcome& out) {
    const std::uint64_t seed =
        DeriveSeed(options.seed, r.id + "/" + Lower(PerspectiveName(p)));
    try {
      switch (p) {
        case Perspective::kP1:
          out.sample = MakeP1Sample(r, seed);
          break;
        case Perspective::kP2:
          out.sample = MakeP2Sample(r, KindFor(r, p, options.seed), seed);
          break;
        case Perspective::kP3:
        case Perspective::kP4: {
          std::vector<std::string> labels;
          std::optional<mask::VisualPrompt> vp;
          if (p == Perspective::kP3) {
            if (r.masks.empty()) {
              throw Error(ErrorKind::kEmptyLabels, "image " + r.id + " has no labels");
            }
            for (const auto& lm : r.masks) labels.push_back(lm.label);
          } else {
            const P4Target t = DeriveP4(r, seed, KindFor(r, p, options.seed));
            labels = LabelsOf(r, t.targets);
            vp = t.prompt;
          }
          const GenerationPrompt prompt = BuildGenerationPrompt(
              p, labels, kb, examples, seed, options.strictness);
          out.provider_call = true;
          QaPair qa;
          in_flight.acquire();
          try {
            qa = GenerateQa(prompt, *provider, options.retry);
          } catch (...) {
            in_flight.release();
            throw;
          }
          in_flight.release();
          out.sample = MakeGeneratedSample(r, p, qa, vp);
          break;
        }
      }
      ValidateSample(*out.sample);
      const auto reparsed =
          grounded::ParseGrounded(grounded::Serialize(out.sample->gold));
      if (!reparsed.ok() || !(*reparsed.response == out.sample->gold)) {
        throw Error(ErrorKind::kInvalidArgument, "gold response does not round-trip");
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kUnknownLabel) throw;
      out.sample.reset();
      out.skipped = SkippedSample{r.id, p, e.kind(), e.what()};
      out.provider_failed = e.kind() == ErrorKind::kProviderError;
    }
  };

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t k = next++; k < outcomes.size(); k = next++) {
      try {
        build(records[k / np], options.perspectives[k % np], outcomes[k]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  ForgeResult result;
  for (Perspective p : options.perspectives) result.samples[p];
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    Outcome& o = outcomes[k];
    const Perspective p = options.perspectives[k % np];
    if (o.provider_call) ++result.provider_calls;
    if (o.provider_failed) ++result.provider_failures;
    if (o.sample) result.samples[p].push_back(std::move(*o.sample));
    if (o.skipped) result.skipped.push_back(std::move(*o.skipped));
  }

  DatasetStats stats;
  for (Perspective p : options.perspectives) {
    const auto& all = result.samples[p];
    std::vector<Json> rows;
    for (const auto& s : all) rows.push_back(SampleToJson(s));
    WriteFileAtomic(options.out_dir / (Lower(PerspectiveName(p)) + ".jsonl"),
                    ToJsonl(rows));
    Splits<Sample> splits;
    if (!all.empty()) {
      splits = Split(all, options.ratios,
                     DeriveSeed(options.seed, "split/" + Lower(PerspectiveName(p))));
    }
    ApplyExclusions(splits, excluded);
    const std::vector<Sample>* parts[] = {&splits.train, &splits.val, &splits.test};
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<Json> split_rows;
      for (const auto& s : *parts[i]) {
        split_rows.push_back(SampleToJson(s));
        stats.Add(p, s.modality, kSplitNames[i]);
      }
      WriteFileAtomic(options.out_dir / SplitFileName(p, kSplitNames[i]),
                      ToJsonl(split_rows));
    }
    result.splits[p] = std::move(splits);
  }
  result.stats = stats.ToJson();
  WriteFileAtomic(options.out_dir / "stats.json", result.stats.dump(2) + "\n");

  std::vector<Json> log_rows;
  for (const auto& s : result.skipped) {
    Json row;
    row["image"] = s.image_id;
    row["perspective"] = PerspectiveName(s.perspective);
    row["error"] = ErrorKindName(s.kind);
    row["message"] = s.message;
    log_rows.push_back(std::move(row));
  }
  WriteFileAtomic(options.out_dir / "forge_log.jsonl", ToJsonl(log_rows));

  if (options.mix_count > 0) {
    // Sources: train splits of P1..P4, then the external VQA records.
    std::vector<std::vector<std::string>> ids(5);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto it = result.splits.find(static_cast<Perspective>(i));
      if (it == result.splits.end()) continue;
      for (const auto& s : it->second.train) ids[i].push_back(s.id);
    }
    if (options.vqa) {
      for (const Json& row : ReadJsonl(*options.vqa)) {
        if (!row.contains("id")) throw Error(ErrorKind::kParseError, "VQA row without id");
        ids[4].push_back(row["id"].is_string() ? row["id"].get<std::string>()
                                               : row["id"].dump());
      }
    }
    std::array<std::size_t, 5> sizes{};
    std::array<double, 5> weights = options.mix_weights;
    for (std::size_t i = 0; i < 5; ++i) sizes[i] = ids[i].size();
    // Sources that were not requested drop out instead of failing.
    for (std::size_t i = 0; i < 4; ++i) {
      if (!result.splits.contains(static_cast<Perspective>(i))) weights[i] = 0;
    }
    if (!options.vqa) weights[4] = 0;
    static constexpr std::array<std::string_view, 5> kSourceNames = {
        "P1", "P2", "P3", "P4", "VQA"};
    std::vector<Json> mix_rows;
    for (const MixPick& pick : Mix(sizes, weights,
                                   DeriveSeed(options.seed, "mix"),
                                   options.mix_count)) {
      Json row;
      row["source"] = kSourceNames[pick.source];
      row["id"] = ids[pick.source][pick.index];
      mix_rows.push_back(std::move(row));
    }
    WriteFileAtomic(options.out_dir / "mix.jsonl", ToJsonl(mix_rows));
  }
  return result;
}

}  // namespace medground::forge
