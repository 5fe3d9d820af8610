#include "medground/text_metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>

#include "medground/error.h"

namespace medground::metrics {

namespace {

// Length in bytes of a whitespace sequence starting at text[pos], or 0.
std::size_t WhitespaceAt(std::string_view text, std::size_t pos) {
  const auto c = static_cast<unsigned char>(text[pos]);
  if (c == ' ' || (c >= '\t' && c <= '\r')) return 1;
  auto byte = [&](std::size_t i) -> unsigned {
    return pos + i < text.size() ? static_cast<unsigned char>(text[pos + i])
                                 : 0u;
  };
  if (c == 0xC2 && (byte(1) == 0x85 || byte(1) == 0xA0)) return 2;
  if (c == 0xE1 && byte(1) == 0x9A && byte(2) == 0x80) return 3;
  if (c == 0xE2 && byte(1) == 0x80) {
    const unsigned b = byte(2);
    if ((b >= 0x80 && b <= 0x8A) || b == 0xA8 || b == 0xA9 || b == 0xAF) {
      return 3;
    }
  }
  if (c == 0xE2 && byte(1) == 0x81 && byte(2) == 0x9F) return 3;
  if (c == 0xE3 && byte(1) == 0x80 && byte(2) == 0x80) return 3;
  return 0;
}

bool IsAsciiPunct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) ||
         (u >= 91 && u <= 96) || (u >= 123 && u <= 126);
}

char AsciiLower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

using Ngram = std::vector<std::string>;

std::map<Ngram, int> CountNgrams(const std::vector<std::string>& tokens,
                                 std::size_t n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

std::size_t LcsLength(const std::vector<std::string>& a,
                      const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string NormalizeAnswer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t ws = WhitespaceAt(text, i);
    if (ws > 0) {
      pending_space = !out.empty();
      i += ws;
      continue;
    }
    const char c = text[i++];
    if (IsAsciiPunct(c)) continue;
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += AsciiLower(c);
  }
  return out;
}

}  // namespace

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    std::size_t b = 0;
    std::size_t e = current.size();
    while (b < e && IsAsciiPunct(current[b])) ++b;
    while (e > b && IsAsciiPunct(current[e - 1])) --e;
    if (e > b) tokens.push_back(current.substr(b, e - b));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const std::size_t ws = WhitespaceAt(text, i);
    if (ws > 0) {
      flush();
      i += ws;
    } else {
      current += AsciiLower(text[i++]);
    }
  }
  flush();
  return tokens;
}

double Bleu4(std::string_view candidate,
             const std::vector<std::string>& references) {
  const auto cand = Tokenize(candidate);
  if (cand.empty() || references.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(Tokenize(r));

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand_counts = CountNgrams(cand, n);
    std::map<Ngram, int> max_ref;
    for (const auto& ref : refs) {
      for (const auto& [gram, count] : CountNgrams(ref, n)) {
        int& slot = max_ref[gram];
        slot = std::max(slot, count);
      }
    }
    std::int64_t matched = 0;
    std::int64_t total = 0;
    for (const auto& [gram, count] : cand_counts) {
      total += count;
      const auto it = max_ref.find(gram);
      if (it != max_ref.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (n == 1) {
      if (matched == 0) return 0.0;
      precision = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      precision = static_cast<double>(matched + 1) /
                  static_cast<double>(total + 1);
    }
    log_sum += std::log(precision);
  }

  const std::size_t c = cand.size();
  std::size_t r = refs.front().size();
  for (const auto& ref : refs) {
    const auto diff = [&](std::size_t len) {
      return len > c ? len - c : c - len;
    };
    if (diff(ref.size()) < diff(r) ||
        (diff(ref.size()) == diff(r) && ref.size() < r)) {
      r = ref.size();
    }
  }
  const double bp =
      c > r ? 1.0
            : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / 4.0);
}

double RougeL(std::string_view candidate, std::string_view reference) {
  const auto cand = Tokenize(candidate);
  const auto ref = Tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(LcsLength(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

std::string Stem(std::string_view token) {
  static constexpr std::array<std::string_view, 12> kSuffixes = {
      "ational", "ization", "fulness", "ations", "ation", "ness",
      "ing",     "ies",     "ed",      "es",     "ly",    "s"};
  std::string word(token);
  for (std::string_view suffix : kSuffixes) {
    // Keep a stem of at least three bytes.
    if (word.size() >= suffix.size() + 3 && word.ends_with(suffix)) {
      word.resize(word.size() - suffix.size());
      if (suffix == "ies") word += 'y';
      break;
    }
  }
  return word;
}

double MeteorLite(std::string_view candidate, std::string_view reference) {
  const auto cand = Tokenize(candidate);
  const auto ref = Tokenize(reference);
  if (cand.empty() || ref.empty()) return 0.0;

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> align(cand.size(), kNone);  // cand -> ref
  std::vector<bool> ref_used(ref.size(), false);

  // Each stage walks the candidate left to right, preferring the reference
  // position right after the previous alignment so runs stay contiguous.
  auto run_stage = [&](const std::vector<std::string>& c_keys,
                       const std::vector<std::string>& r_keys) {
    std::size_t last = kNone;
    for (std::size_t i = 0; i < c_keys.size(); ++i) {
      if (align[i] != kNone) {
        last = align[i];
        continue;
      }
      std::size_t pick = kNone;
      if (last != kNone && last + 1 < r_keys.size() && !ref_used[last + 1] &&
          r_keys[last + 1] == c_keys[i]) {
        pick = last + 1;
      } else {
        for (std::size_t j = 0; j < r_keys.size(); ++j) {
          if (!ref_used[j] && r_keys[j] == c_keys[i]) {
            pick = j;
            break;
          }
        }
      }
      if (pick != kNone) {
        align[i] = pick;
        ref_used[pick] = true;
        last = pick;
      }
    }
  };
  run_stage(cand, ref);
  std::vector<std::string> cand_stems, ref_stems;
  for (const auto& t : cand) cand_stems.push_back(Stem(t));
  for (const auto& t : ref) ref_stems.push_back(Stem(t));
  run_stage(cand_stems, ref_stems);

  std::size_t matches = 0;
  std::size_t chunks = 0;
  std::size_t prev_c = kNone;
  std::size_t prev_r = kNone;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (align[i] == kNone) continue;
    ++matches;
    if (prev_c == kNone || prev_c + 1 != i || prev_r + 1 != align[i]) {
      ++chunks;
    }
    prev_c = i;
    prev_r = align[i];
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

bool VqaMatch(std::string_view pred, std::string_view gold) {
  const std::string p = NormalizeAnswer(pred);
  const std::string g = NormalizeAnswer(gold);
  if (g.empty()) return p.empty();
  if (p == g) return true;
  const std::string padded_p = " " + p + " ";
  return padded_p.find(" " + g + " ") != std::string::npos;
}

double VqaAccuracy(const std::vector<std::string>& preds,
                   const std::vector<std::string>& golds) {
  if (preds.size() != golds.size()) {
    throw Error(ErrorKind::kLengthMismatch,
                "prediction and gold answer counts differ");
  }
  if (preds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    correct += VqaMatch(preds[i], golds[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

}  // namespace medground::metrics
