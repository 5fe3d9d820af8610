#include "medground/mask.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "medground/error.h"
#include "medground/random.h"

namespace medground::mask {

namespace {

void CheckDims(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) {
    throw Error(ErrorKind::kInvalidArgument, "mask dimensions must be positive");
  }
}

void CheckSameShape(std::size_t h1, std::size_t w1, std::size_t h2,
                    std::size_t w2) {
  if (h1 != h2 || w1 != w2) {
    throw Error(ErrorKind::kDimensionMismatch,
                "mask shapes differ: " + std::to_string(h1) + "x" +
                    std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                    std::to_string(w2));
  }
}

}  // namespace

BinaryMask::BinaryMask(std::size_t height, std::size_t width)
    : height_(height), width_(width) {
  CheckDims(height, width);
  bits_.assign(height * width, 0);
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width,
                       std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  CheckDims(height, width);
  if (bits_.size() != height * width) {
    throw Error(ErrorKind::kLengthMismatch, "mask raster has wrong length");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] ^ 1;
  return out;
}

BinaryMask BinaryMask::united(const BinaryMask& other) const {
  CheckSameShape(height_, width_, other.height_, other.width_);
  BinaryMask out(height_, width_);
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    out.bits_[i] = bits_[i] | other.bits_[i];
  }
  return out;
}

SoftMask::SoftMask(std::size_t height, std::size_t width,
                   std::vector<double> probs)
    : height_(height), width_(width), probs_(std::move(probs)) {
  CheckDims(height, width);
  if (probs_.size() != height * width) {
    throw Error(ErrorKind::kLengthMismatch, "soft mask has wrong length");
  }
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorKind::kInvalidArgument,
                  "soft mask probability outside [0, 1]");
    }
  }
}

SoftMask SoftMask::FromBinary(const BinaryMask& mask) {
  std::vector<double> probs(mask.size());
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = bits[i];
  return SoftMask(mask.height(), mask.width(), std::move(probs));
}

bool InBounds(const VisualPrompt& prompt, std::size_t height,
              std::size_t width) {
  const auto h = static_cast<std::int64_t>(height);
  const auto w = static_cast<std::int64_t>(width);
  if (const auto* p = std::get_if<Point>(&prompt)) {
    return p->x >= 0 && p->x < w && p->y >= 0 && p->y < h;
  }
  const auto& b = std::get<Box>(prompt);
  return 0 <= b.x_min && b.x_min <= b.x_max && b.x_max < w && 0 <= b.y_min &&
         b.y_min <= b.y_max && b.y_max < h;
}

Runs RleEncode(const BinaryMask& mask) {
  Runs runs;
  std::uint8_t current = 0;
  std::uint64_t length = 0;
  for (std::uint8_t bit : mask.bits()) {
    if (bit != current) {
      runs.push_back(length);
      current = bit;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

BinaryMask RleDecode(std::span<const std::uint64_t> runs, std::size_t height,
                     std::size_t width) {
  CheckDims(height, width);
  const std::uint64_t total = static_cast<std::uint64_t>(height) * width;
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0 && runs[i] == 0) {
      throw Error(ErrorKind::kMalformedRuns,
                  "zero-length run at index " + std::to_string(i));
    }
    if (runs[i] > total - std::min(sum, total)) {
      throw Error(ErrorKind::kLengthMismatch,
                  "runs cover more than " + std::to_string(total) + " pixels");
    }
    sum += runs[i];
  }
  if (sum != total) {
    throw Error(ErrorKind::kLengthMismatch,
                "runs cover " + std::to_string(sum) + " of " +
                    std::to_string(total) + " pixels");
  }
  std::vector<std::uint8_t> bits;
  bits.reserve(total);
  std::uint8_t value = 0;
  for (std::uint64_t run : runs) {
    bits.insert(bits.end(), run, value);
    value ^= 1;
  }
  return BinaryMask(height, width, std::move(bits));
}

Overlap CountOverlap(const BinaryMask& a, const BinaryMask& b) {
  CheckSameShape(a.height(), a.width(), b.height(), b.width());
  Overlap o;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    o.intersection += ab[i] & bb[i];
    o.union_count += ab[i] | bb[i];
    o.a_count += ab[i];
    o.b_count += bb[i];
  }
  return o;
}

double Iou(const BinaryMask& a, const BinaryMask& b) {
  const Overlap o = CountOverlap(a, b);
  if (o.union_count == 0) return 1.0;
  return static_cast<double>(o.intersection) /
         static_cast<double>(o.union_count);
}

double DiceCoeff(const BinaryMask& a, const BinaryMask& b) {
  const Overlap o = CountOverlap(a, b);
  if (o.a_count + o.b_count == 0) return 1.0;
  return 2.0 * static_cast<double>(o.intersection) /
         static_cast<double>(o.a_count + o.b_count);
}

double BceLoss(const SoftMask& pred, const BinaryMask& target, double eps) {
  CheckSameShape(pred.height(), pred.width(), target.height(), target.width());
  const auto probs = pred.probs();
  const auto bits = target.bits();
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], eps, 1.0 - eps);
    sum += bits[i] ? -std::log(p) : -std::log1p(-p);
  }
  return sum / static_cast<double>(probs.size());
}

double DiceLoss(const SoftMask& pred, const BinaryMask& target,
                double smooth) {
  CheckSameShape(pred.height(), pred.width(), target.height(), target.width());
  const auto probs = pred.probs();
  const auto bits = target.bits();
  double inter = 0.0;
  double p_sum = 0.0;
  double t_sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += probs[i] * bits[i];
    p_sum += probs[i];
    t_sum += bits[i];
  }
  const double denom = p_sum + t_sum + smooth;
  if (denom == 0.0) return 0.0;  // smooth == 0 with both sides empty
  return 1.0 - (2.0 * inter + smooth) / denom;
}

void Validate(const LossWeights& w) {
  for (double v : {w.lambda_text, w.lambda_bce, w.lambda_dice}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorKind::kInvalidArgument,
                  "loss weights must be finite and non-negative");
    }
  }
}

double TotalLoss(double text_loss, double bce, double dice,
                 const LossWeights& w) {
  return w.lambda_text * text_loss + w.lambda_bce * bce + w.lambda_dice * dice;
}

Box BboxOf(const BinaryMask& mask) {
  Box box{std::numeric_limits<std::int64_t>::max(),
          std::numeric_limits<std::int64_t>::max(), -1, -1};
  for (std::size_t y = 0; y < mask.height(); ++y) {
    for (std::size_t x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      const auto xi = static_cast<std::int64_t>(x);
      const auto yi = static_cast<std::int64_t>(y);
      box.x_min = std::min(box.x_min, xi);
      box.y_min = std::min(box.y_min, yi);
      box.x_max = std::max(box.x_max, xi);
      box.y_max = std::max(box.y_max, yi);
    }
  }
  if (box.x_max < 0) throw Error(ErrorKind::kEmptyMask, "mask has no pixels");
  return box;
}

Point SamplePoint(const BinaryMask& mask, std::uint64_t seed) {
  const std::size_t n = mask.count();
  if (n == 0) throw Error(ErrorKind::kEmptyMask, "mask has no pixels");
  Rng rng(seed);
  std::uint64_t k = rng.Index(n);
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] && k-- == 0) {
      return Point{static_cast<std::int64_t>(i % mask.width()),
                   static_cast<std::int64_t>(i / mask.width())};
    }
  }
  return {};  // unreachable
}

}  // namespace medground::mask
