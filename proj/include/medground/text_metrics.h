#pragma once

// Sentence-level text metrics over a fixed tokenizer:
//   1. ASCII letters are lowercased (other bytes untouched).
//   2. Split on whitespace: ASCII space, \t \n \v \f \r and the Unicode
//      space separators U+0085 U+00A0 U+1680 U+2000..U+200A U+2028 U+2029
//      U+202F U+205F U+3000.
//   3. Leading and trailing ASCII punctuation is stripped from each token;
//      tokens left empty are dropped.

#include <string>
#include <string_view>
#include <vector>

namespace medground::metrics {

std::vector<std::string> Tokenize(std::string_view text);

// BLEU-4 with uniform weights and brevity penalty against the closest
// reference length (shorter wins ties). Unigram precision is unsmoothed;
// 2- to 4-gram precisions use add-one smoothing (m + 1) / (c + 1).
double Bleu4(std::string_view candidate,
             const std::vector<std::string>& references);

// LCS-based F-measure with equal weighting of precision and recall.
double RougeL(std::string_view candidate, std::string_view reference);

// Exact then stem matching, Fmean = 10PR / (R + 9P), fragmentation penalty
// 0.5 (chunks / matches)^3. No synonym or paraphrase stages.
double MeteorLite(std::string_view candidate, std::string_view reference);

// Closed-answer accuracy. Both sides are normalized (ASCII lowercase, ASCII
// punctuation removed, whitespace collapsed); a prediction is correct when it
// equals the gold answer or contains it as a whole-word token sequence.
// Throws Error(kLengthMismatch) when the sequences differ in length.
double VqaAccuracy(const std::vector<std::string>& preds,
                   const std::vector<std::string>& golds);

bool VqaMatch(std::string_view pred, std::string_view gold);

// Suffix-stripping stemmer used by MeteorLite.
std::string Stem(std::string_view token);

}  // namespace medground::metrics
