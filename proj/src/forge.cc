#include "medground/forge.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "medground/error.h"
#include "medground/templates.h"

namespace medground::forge {

namespace {

using grounded::GroundedResponse;

std::vector<std::string> Labels(const ImageRecord& record) {
  std::vector<std::string> labels;
  for (const auto& lm : record.masks) labels.push_back(lm.label);
  return labels;
}

std::string Join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

// Fills the template's "{}" with the entities, each grounded to one slot.
GroundedResponse GroundedFromTemplate(std::string_view tmpl,
                                      const std::vector<std::string>& labels) {
  const auto pos = tmpl.find(templates::kPlaceholder);
  GroundedResponse r;
  r.AddText(tmpl.substr(0, pos));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) r.AddText(kLabelSeparator);
    r.AddEntity(labels[i]);
  }
  r.AddText(tmpl.substr(pos + templates::kPlaceholder.size()));
  return r;
}

Sample BaseSample(const ImageRecord& record, Perspective p) {
  Sample s;
  s.id = record.id + "-p" + std::to_string(static_cast<int>(p) + 1);
  s.image_ref = record.image_ref;
  s.modality = record.modality;
  s.perspective = p;
  return s;
}

void RequireMasks(const ImageRecord& record) {
  if (record.masks.empty()) {
    throw Error(ErrorKind::kEmptyLabels, "image " + record.id + " has no labels");
  }
}

struct PromptTarget {
  mask::VisualPrompt prompt;
  std::vector<std::size_t> targets;  // indices into record.masks
};

PromptTarget DerivePrompt(const ImageRecord& record, PromptKind kind,
                          std::uint64_t seed) {
  RequireMasks(record);
  PromptTarget out;
  if (kind == PromptKind::kBox) {
    mask::BinaryMask united = record.masks.front().mask;
    for (std::size_t i = 0; i < record.masks.size(); ++i) {
      if (record.masks[i].mask.empty()) {
        throw Error(ErrorKind::kEmptyMask, "image " + record.id + ": mask for '" +
                                               record.masks[i].label +
                                               "' is empty");
      }
      united = united.united(record.masks[i].mask);
      out.targets.push_back(i);
    }
    out.prompt = mask::BboxOf(united);
  } else {
    Rng rng(seed);
    const std::size_t pick = rng.Index(record.masks.size());
    const auto& target = record.masks[pick];
    if (target.mask.empty()) {
      throw Error(ErrorKind::kEmptyMask, "image " + record.id + ": mask for '" +
                                             target.label + "' is empty");
    }
    out.prompt = mask::SamplePoint(target.mask, rng.Next());
    out.targets.push_back(pick);
  }
  return out;
}

bool IsWordByte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80;
}

bool EqualsIgnoreCase(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) {
      return false;
    }
  }
  return true;
}

std::size_t FindIgnoreCase(std::string_view hay, std::string_view needle,
                           std::size_t from = 0) {
  for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
    if (EqualsIgnoreCase(hay.substr(i, needle.size()), needle)) return i;
  }
  return std::string_view::npos;
}

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string RemoveMarkers(std::string text) {
  bool changed = true;
  while (changed) {
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

TemplateChoice ChooseP1Templates(std::size_t label_count, std::uint64_t seed) {
  Rng rng(seed);
  TemplateChoice c;
  c.instruction = rng.Index(templates::kP1Instructions.size());
  c.response = rng.Index(label_count > 1 ? templates::kP1MultiResponses.size()
                                         : templates::kP1SingleResponses.size());
  return c;
}

Sample MakeP1Sample(const ImageRecord& record, std::uint64_t seed) {
  RequireMasks(record);
  return MakeP1Sample(record, ChooseP1Templates(record.masks.size(), seed));
}

Sample MakeP1Sample(const ImageRecord& record, TemplateChoice choice) {
  RequireMasks(record);
  const auto labels = Labels(record);
  const bool multi = labels.size() > 1;
  Sample s = BaseSample(record, Perspective::kP1);
  s.query = templates::Fill(templates::kP1Instructions.at(choice.instruction),
                            Join(labels, kLabelSeparator));
  s.gold = GroundedFromTemplate(multi ? templates::kP1MultiResponses.at(choice.response)
                                      : templates::kP1SingleResponses.at(choice.response),
                                labels);
  for (const auto& lm : record.masks) s.gold_masks.push_back(lm.mask);
  return s;
}

Sample MakeP2Sample(const ImageRecord& record, PromptKind kind,
                    std::uint64_t seed) {
  Rng rng(seed);
  TemplateChoice choice;
  choice.instruction = rng.Index(kind == PromptKind::kBox
                                     ? templates::kP2BoxInstructions.size()
                                     : templates::kP2PointInstructions.size());
  choice.response = rng.Index(templates::kP2Responses.size());
  return MakeP2Sample(record, kind, rng.Next(), choice);
}

Sample MakeP2Sample(const ImageRecord& record, PromptKind kind,
                    std::uint64_t seed, TemplateChoice choice) {
  const PromptTarget target = DerivePrompt(record, kind, seed);
  Sample s = BaseSample(record, Perspective::kP2);
  s.visual_prompt = target.prompt;
  s.query = std::string(kind == PromptKind::kBox
                            ? templates::kP2BoxInstructions.at(choice.instruction)
                            : templates::kP2PointInstructions.at(choice.instruction));
  std::vector<std::string> labels;
  for (std::size_t i : target.targets) {
    labels.push_back(record.masks[i].label);
    s.gold_masks.push_back(record.masks[i].mask);
  }
  s.gold = GroundedFromTemplate(templates::kP2Responses.at(choice.response), labels);
  return s;
}

std::string GenerationPrompt::Render() const {
  const std::string label_list = Join(labels, kLabelSeparator);
  std::string out;
  out += "You are a medical imaging expert writing instruction data for a "
         "vision-language assistant. You cannot see the image; you are given "
         "the names of the structures segmented in it and background "
         "knowledge about them. Write as if you could see the image.\n\n";
  if (perspective == Perspective::kP3) {
    out += "Task: ask a complex question whose answer requires identifying "
           "the organs or lesions in the image, then answer it with "
           "analytical reasons.\n";
  } else {
    out += "Task: a region of the image is marked by a visual prompt (a box "
           "or a point). Ask a question about the marked region and answer "
           "it with visual analysis and an understanding of its content.\n";
  }
  out += multi_label ? "Segmentation labels: " : "Segmentation label: ";
  out += label_list;
  out += "\n\nKnowledge:\n";
  out += knowledge;
  out += "\n\nRequirements:\n";
  out += "- Mention every label above by its exact name in the answer.\n";
  if (multi_label) {
    out += "- The question and answer must consider each label and their "
           "interrelationships.\n";
  }
  out += "- Do not say that you were given text instead of an image.\n";
  if (in_context_example) {
    out += "\nExample:\n";
    out += *in_context_example;
    out += "\n";
  }
  out += "\nRespond in exactly this format:\nQuestion: <question>\nAnswer: "
         "<answer>\n";
  return out;
}

GenerationPrompt BuildGenerationPrompt(Perspective perspective,
                                       const std::vector<std::string>& labels,
                                       const KnowledgeBase& kb,
                                       std::span<const std::string> examples,
                                       std::uint64_t seed,
                                       Strictness strictness) {
  if (perspective != Perspective::kP3 && perspective != Perspective::kP4) {
    throw Error(ErrorKind::kInvalidArgument,
                "generation prompts exist only for P3 and P4");
  }
  if (labels.empty()) throw Error(ErrorKind::kEmptyLabels, "no labels given");
  GenerationPrompt g;
  g.perspective = perspective;
  g.labels = labels;
  g.multi_label = labels.size() > 1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const KnowledgeEntry* entry = kb.Find(labels[i]);
    if (entry == nullptr && strictness == Strictness::kStrict) {
      throw Error(ErrorKind::kUnknownLabel,
                  "no knowledge for label '" + labels[i] + "'");
    }
    if (i > 0) g.knowledge += "\n";
    if (g.multi_label) g.knowledge += labels[i] + ": ";
    g.knowledge += entry ? entry->text : std::string(kMissingKnowledge);
  }
  if (perspective == Perspective::kP3 && !examples.empty()) {
    Rng rng(seed);
    g.in_context_example = examples[rng.Index(examples.size())];
  }
  return g;
}

QaPair GroundAnswer(std::string question, std::string_view answer_text,
                    const std::vector<std::string>& labels) {
  const std::string answer = RemoveMarkers(std::string(answer_text));
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return labels[a].size() > labels[b].size();
  });

  QaPair qa;
  qa.question = std::move(question);
  std::string plain;
  std::size_t i = 0;
  while (i < answer.size()) {
    bool matched = false;
    if (i == 0 || !IsWordByte(answer[i - 1])) {
      for (std::size_t li : order) {
        const std::string& label = labels[li];
        if (label.empty() || i + label.size() > answer.size()) continue;
        if (!EqualsIgnoreCase(std::string_view(answer).substr(i, label.size()), label)) {
          continue;
        }
        const std::size_t end = i + label.size();
        if (end < answer.size() && IsWordByte(answer[end])) continue;
        try {
          qa.answer.AddText(plain);
          qa.answer.AddEntity(answer.substr(i, label.size()));
        } catch (const Error&) {
          throw Error(ErrorKind::kUngroundableAnswer,
                      "label '" + label + "' cannot be grounded");
        }
        plain.clear();
        qa.entity_labels.push_back(li);
        i = end;
        matched = true;
        break;
      }
    }
    if (!matched) plain += answer[i++];
  }
  try {
    qa.answer.AddText(plain);
  } catch (const Error&) {
    throw Error(ErrorKind::kUngroundableAnswer, "answer text forms a marker");
  }
  if (qa.answer.entity_count() == 0) {
    throw Error(ErrorKind::kUngroundableAnswer,
                "answer mentions none of: " + Join(labels, kLabelSeparator));
  }
  return qa;
}

QaPair GenerateQa(const GenerationPrompt& prompt, CompletionProvider& provider,
                  const RetryPolicy& retry) {
  CompletionRequest request;
  request.prompt = prompt.Render();
  request.labels = prompt.labels;

  std::string completion;
  const int attempts = std::max(1, retry.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      completion = provider.Complete(request);
      break;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kProviderError) throw;
      if (attempt >= attempts) {
        throw Error(ErrorKind::kProviderError,
                    std::string(e.what()) + " (after " +
                        std::to_string(attempts) + " attempts)");
      }
    }
  }

  const std::size_t q = FindIgnoreCase(completion, "question:");
  const std::size_t a =
      FindIgnoreCase(completion, "answer:", q == std::string::npos ? 0 : q);
  if (q == std::string::npos || a == std::string::npos) {
    throw Error(ErrorKind::kProviderError,
                "completion lacks Question:/Answer: sections");
  }
  std::string question =
      Trim(std::string_view(completion).substr(q + 9, a - (q + 9)));
  std::string answer = Trim(std::string_view(completion).substr(a + 7));
  return GroundAnswer(RemoveMarkers(std::move(question)), answer, prompt.labels);
}

Sample MakeGeneratedSample(const ImageRecord& record, Perspective perspective,
                           const QaPair& qa,
                           std::optional<mask::VisualPrompt> visual_prompt) {
  if (perspective != Perspective::kP3 && perspective != Perspective::kP4) {
    throw Error(ErrorKind::kInvalidArgument, "generated samples are P3 or P4");
  }
  Sample s = BaseSample(record, perspective);
  s.query = qa.question;
  s.visual_prompt = std::move(visual_prompt);
  s.gold = qa.answer;
  const auto entities = grounded::ExtractEntities(qa.answer);
  for (const auto& [phrase, slot] : entities) {
    const std::string key = NormalizeLabel(phrase);
    const auto it = std::find_if(record.masks.begin(), record.masks.end(),
                                 [&](const LabeledMask& lm) {
                                   return NormalizeLabel(lm.label) == key;
                                 });
    if (it == record.masks.end()) {
      throw Error(ErrorKind::kUngroundableAnswer,
                  "no mask for entity '" + phrase + "'");
    }
    s.gold_masks.push_back(it->mask);
  }
  ValidateSample(s);
  return s;
}

SplitSizes ComputeSplitSizes(std::size_t n, const SplitRatios& r) {
  for (double v : {r.train, r.val, r.test}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::kBadRatios, "split ratios must be non-negative");
    }
  }
  if (std::fabs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw Error(ErrorKind::kBadRatios, "split ratios must sum to 1");
  }
  if (n == 0) throw Error(ErrorKind::kEmptyInput, "nothing to split");
  SplitSizes s;
  const double dn = static_cast<double>(n);
  s.val = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(r.val * dn)));
  s.test = std::min<std::size_t>(n - s.val,
                                 static_cast<std::size_t>(std::llround(r.test * dn)));
  s.train = n - s.val - s.test;
  return s;
}

std::vector<std::size_t> SeededPermutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.Index(i)]);
  }
  return perm;
}

void ApplyExclusions(Splits<Sample>& splits,
                     const std::unordered_set<std::string>& excluded_ids) {
  auto drop = [&](std::vector<Sample>& v) {
    std::erase_if(v, [&](const Sample& s) { return excluded_ids.contains(s.id); });
  };
  drop(splits.val);
  drop(splits.test);
}

std::vector<MixPick> Mix(std::span<const std::size_t> source_sizes,
                         std::span<const double> weights, std::uint64_t seed,
                         std::size_t count) {
  if (source_sizes.size() != weights.size() || weights.empty()) {
    throw Error(ErrorKind::kInvalidArgument,
                "one weight per mix source is required");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
      throw Error(ErrorKind::kInvalidArgument, "mix weights must be non-negative");
    }
    if (weights[i] > 0.0 && source_sizes[i] == 0) {
      throw Error(ErrorKind::kEmptySource,
                  "mix source " + std::to_string(i) + " is empty");
    }
    total += weights[i];
  }
  if (total <= 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "mix weights sum to zero");
  }

  std::vector<double> cumulative(weights.size());
  std::size_t last_positive = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) last_positive = i;
    acc += weights[i];
    cumulative[i] = acc / total;
  }
  std::vector<std::size_t> cursor(weights.size(), 0);
  std::vector<MixPick> picks;
  picks.reserve(count);
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const double u = rng.Unit();
    std::size_t src = last_positive;
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
      if (weights[i] > 0.0 && u < cumulative[i]) {
        src = i;
        break;
      }
    }
    picks.push_back({src, cursor[src]});
    cursor[src] = (cursor[src] + 1) % source_sizes[src];
  }
  return picks;
}

}  // namespace medground::forge
