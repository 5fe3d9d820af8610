#pragma once

// Generators and independent oracles shared by the unit and acceptance
// suites. Nothing here calls into the code paths it is used to check.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <unistd.h>

#include "medground/error.h"
#include "medground/grounded_text.h"
#include "medground/mask.h"
#include "medground/metrics.h"
#include "medground/random.h"

namespace medground::testing {

inline const std::string kWorkedExample =
    "<p>The central vein of the adrenal medulla<SEG></p> is located in the "
    "<p>adrenal medulla<SEG></p> and is a rare type of blood vessel. Its "
    "structure is different from other veins, in which the "
    "<p>smooth muscle<SEG></p> of the membrane is arranged in obvious "
    "longitudinal bundles.";

inline std::string RandomString(Rng& rng, std::size_t max_len) {
  // Marker characters are over-represented so near-markers get exercised.
  static const std::string kAlphabet = "abcXYZ <>/pSEG.,\t";
  std::string s;
  const std::size_t len = rng.Index(max_len + 1);
  for (std::size_t i = 0; i < len; ++i) {
    s += kAlphabet[rng.Index(kAlphabet.size())];
  }
  return s;
}

inline grounded::GroundedResponse RandomResponse(Rng& rng,
                                                 std::size_t max_segments) {
  grounded::GroundedResponse r;
  const std::size_t n = rng.Index(max_segments + 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    do {
      s = RandomString(rng, 12);
    } while (grounded::ContainsMarker(s));
    if (rng.Index(2) == 0) {
      try {
        r.AddText(s);
      } catch (const Error&) {
        // Would have formed a marker across the join; skip it.
      }
    } else if (!s.empty()) {
      r.AddEntity(s);
    }
  }
  return r;
}

inline mask::BinaryMask RandomMask(Rng& rng, std::size_t h, std::size_t w,
                                   double density) {
  std::vector<std::uint8_t> bits(h * w);
  for (auto& b : bits) b = rng.Unit() < density ? 1 : 0;
  return mask::BinaryMask(h, w, std::move(bits));
}

inline mask::BinaryMask RectMask(std::size_t h, std::size_t w, std::size_t x0,
                                 std::size_t y0, std::size_t x1,
                                 std::size_t y1) {
  mask::BinaryMask m(h, w);
  for (std::size_t y = y0; y <= y1; ++y) {
    for (std::size_t x = x0; x <= x1; ++x) m.set(x, y, true);
  }
  return m;
}

// Pixel-loop IoU with its own counting, for cross-checks.
inline double NaiveIou(const mask::BinaryMask& a, const mask::BinaryMask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t y = 0; y < a.height(); ++y) {
    for (std::size_t x = 0; x < a.width(); ++x) {
      inter += (a.at(x, y) && b.at(x, y)) ? 1 : 0;
      uni += (a.at(x, y) || b.at(x, y)) ? 1 : 0;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Maximum matching by trying every injection of the smaller side into the
// larger one.
inline std::size_t BruteForceMatching(
    const std::vector<std::vector<bool>>& adj) {
  const std::size_t left = adj.size();
  const std::size_t right = left == 0 ? 0 : adj.front().size();
  if (left == 0 || right == 0) return 0;
  const bool transpose = left > right;
  const std::size_t small = transpose ? right : left;
  const std::size_t large = transpose ? left : right;
  auto edge = [&](std::size_t s, std::size_t l) {
    return transpose ? adj[l][s] : adj[s][l];
  };
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t count = 0;
    for (std::size_t s = 0; s < small; ++s) count += edge(s, perm[s]) ? 1 : 0;
    best = std::max(best, count);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline metrics::GroundedPrediction MakePrediction(
    const std::vector<std::pair<std::string, mask::BinaryMask>>& entities) {
  metrics::GroundedPrediction p;
  for (const auto& [phrase, m] : entities) {
    p.response.AddText("see ").AddEntity(phrase);
    p.masks.push_back(m);
  }
  return p;
}

inline metrics::GroundedPrediction RandomPrediction(Rng& rng, std::size_t max_entities) {
  static const std::vector<std::string> kPhrases = {"liver", "Liver",
                                                    "spleen", "left  kidney",
                                                    "left kidney"};
  std::vector<std::pair<std::string, mask::BinaryMask>> ents;
  const std::size_t n = rng.Index(max_entities + 1);
  for (std::size_t i = 0; i < n; ++i) {
    // Coarse 3x3 masks make IoU > 0.5 and exact ties both common.
    ents.emplace_back(kPhrases[rng.Index(kPhrases.size())],
                      testing::RandomMask(rng, 3, 3, 0.6));
  }
  return MakePrediction(ents);
}

// Exhaustive-matching E with its own phrase normalization.
inline std::size_t BruteForceGroundingE(const metrics::GroundedPrediction& pred,
                    const metrics::GroundedPrediction& gold) {
  const auto pe = grounded::ExtractEntities(pred.response);
  const auto ge = grounded::ExtractEntities(gold.response);
  auto norm = [](std::string s) {
    std::string out;
    for (char c : s) {
      if (c == ' ') {
        if (!out.empty() && out.back() != ' ') out += ' ';
      } else {
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
  };
  std::vector<std::vector<bool>> adj(pe.size(),
                                     std::vector<bool>(ge.size(), false));
  for (std::size_t i = 0; i < pe.size(); ++i) {
    for (std::size_t j = 0; j < ge.size(); ++j) {
      adj[i][j] = norm(pe[i].first) == norm(ge[j].first) &&
                  testing::NaiveIou(pred.masks[i], gold.masks[j]) > 0.5;
    }
  }
  return testing::BruteForceMatching(adj);
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("medground-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string ReadText(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Non-overlapping occurrences of `needle` in `hay`.
inline std::size_t CountOccurrences(const std::string& hay,
                                    const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace medground::testing
