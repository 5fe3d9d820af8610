#pragma once

// Binary and soft masks, the run-length wire codec, overlap geometry and the
// per-pixel segmentation losses.

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace medground::mask {

class BinaryMask {
 public:
  // All-false mask. Throws Error(kInvalidArgument) on a zero dimension.
  BinaryMask(std::size_t height, std::size_t width);
  // Throws Error(kLengthMismatch) unless bits.size() == height * width.
  BinaryMask(std::size_t height, std::size_t width,
             std::vector<std::uint8_t> bits);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool at(std::size_t x, std::size_t y) const {
    return bits_[y * width_ + x] != 0;
  }
  void set(std::size_t x, std::size_t y, bool value) {
    bits_[y * width_ + x] = value ? 1 : 0;
  }
  std::span<const std::uint8_t> bits() const { return bits_; }

  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool same_shape(const BinaryMask& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  BinaryMask complement() const;
  BinaryMask united(const BinaryMask& other) const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<std::uint8_t> bits_;  // row-major, 0 or 1
};

class SoftMask {
 public:
  // Throws Error(kLengthMismatch) on a size mismatch and
  // Error(kInvalidArgument) if any probability lies outside [0, 1].
  SoftMask(std::size_t height, std::size_t width, std::vector<double> probs);

  // Probability 1 on true pixels and 0 elsewhere.
  static SoftMask FromBinary(const BinaryMask& mask);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::span<const double> probs() const { return probs_; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> probs_;
};

struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;
  bool operator==(const Point&) const = default;
};

struct Box {
  std::int64_t x_min = 0;
  std::int64_t y_min = 0;
  std::int64_t x_max = 0;
  std::int64_t y_max = 0;
  bool operator==(const Box&) const = default;
};

using VisualPrompt = std::variant<Point, Box>;

bool InBounds(const VisualPrompt& prompt, std::size_t height,
              std::size_t width);

// Row-major runs; the first run counts leading false pixels and may be 0,
// after which runs alternate true/false and are all positive.
using Runs = std::vector<std::uint64_t>;

Runs RleEncode(const BinaryMask& mask);
// Throws Error(kLengthMismatch) when the runs do not cover height * width
// pixels and Error(kMalformedRuns) on a zero-length run after the first.
BinaryMask RleDecode(std::span<const std::uint64_t> runs, std::size_t height,
                     std::size_t width);

struct Overlap {
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  std::uint64_t a_count = 0;
  std::uint64_t b_count = 0;
};

// Throws Error(kDimensionMismatch) for differently shaped masks.
Overlap CountOverlap(const BinaryMask& a, const BinaryMask& b);

// |a & b| / |a | b|, 1.0 when both masks are empty.
double Iou(const BinaryMask& a, const BinaryMask& b);
// 2|a & b| / (|a| + |b|), 1.0 when both masks are empty.
double DiceCoeff(const BinaryMask& a, const BinaryMask& b);

inline constexpr double kDefaultBceEpsilon = 1e-7;
inline constexpr double kDefaultDiceSmooth = 1.0;

// Mean per-pixel binary cross-entropy with probabilities clamped to
// [eps, 1 - eps].
double BceLoss(const SoftMask& pred, const BinaryMask& target,
               double eps = kDefaultBceEpsilon);
// 1 - (2 sum(p t) + smooth) / (sum(p) + sum(t) + smooth).
double DiceLoss(const SoftMask& pred, const BinaryMask& target,
                double smooth = kDefaultDiceSmooth);

// Defaults are a configuration choice, not values from any reference run.
struct LossWeights {
  double lambda_text = 1.0;
  double lambda_bce = 2.0;
  double lambda_dice = 0.5;
};

// Throws Error(kInvalidArgument) on negative or non-finite weights.
void Validate(const LossWeights& weights);

double TotalLoss(double text_loss, double bce, double dice,
                 const LossWeights& weights);

// Tightest box around the true pixels; Error(kEmptyMask) if there are none.
Box BboxOf(const BinaryMask& mask);

// Uniformly chosen true pixel, deterministic in the seed;
// Error(kEmptyMask) if there are none.
Point SamplePoint(const BinaryMask& mask, std::uint64_t seed);

}  // namespace medground::mask
