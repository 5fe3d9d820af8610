#pragma once

// Framework-free numeric reference for the prompt encoder, the cross-attention
// input aligner, seg-token projection, a linear-probe mask decoder and the
// composite segmentation loss, with a hand-written backward pass.
//
// Model, per example:
//   x_qv   = (PE(prompt) + type embedding) W_p            visual prompt rows
//   KV     = [x_img; x_qt; x_qv]
//   A      = softmax((X_q W_q)(KV W_k)^T / sqrt(d))     single head
//   O      = A (KV W_v) W_o                               n_q x d
//   h      = mean of the rows of O                        stands in for r_seg
//   L_text = cross-entropy of softmax(h W_vocab) at the target token
//   p      = sigmoid(F (h proj))                          F: one row per pixel
//   loss   = l_text L_text + l_bce BCE(p, gold) + l_dice Dice(p, gold)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medground/mask.h"

namespace medground::aligner {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  // Entries drawn uniformly from [-scale, scale].
  static Matrix Random(std::size_t rows, std::size_t cols, double scale,
                       std::uint64_t seed);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Error(kDimensionMismatch) on incompatible shapes.
Matrix MatMul(const Matrix& a, const Matrix& b);
Matrix MatMulTransB(const Matrix& a, const Matrix& b);  // a b^T
Matrix MatMulTransA(const Matrix& a, const Matrix& b);  // a^T b
Matrix VStack(std::span<const Matrix* const> parts);    // all with equal cols

struct AlignerConfig {
  std::size_t d = 16;       // model width, a multiple of 4
  std::size_t d_dec = 8;    // decoder feature width
  std::size_t n_q = 32;     // learnable queries
  std::size_t vocab = 16;   // toy text head
};

// All learnable tensors. Names are stable and used for reporting and I/O.
struct Params {
  Matrix w_q, w_k, w_v, w_o;  // d x d
  Matrix queries;             // n_q x d
  Matrix w_p;                 // d x d prompt projection
  Matrix point_embed;         // 1 x d
  Matrix corner_embed;        // 2 x d: top-left, bottom-right
  Matrix proj;                // d x d_dec
  Matrix w_vocab;             // d x vocab

  // Uniform in [-1/sqrt(d), 1/sqrt(d)], each tensor from its own derived seed.
  static Params Init(const AlignerConfig& config, std::uint64_t seed);
  // Same shapes as `like`, all zeros.
  static Params ZerosLike(const Params& like);

  void ForEach(const std::function<void(std::string_view, Matrix&)>& fn);
  void ForEach(const std::function<void(std::string_view, const Matrix&)>& fn) const;

  std::size_t d() const { return w_q.rows(); }
  bool operator==(const Params&) const = default;
};

inline constexpr double kMinFrequency = 3.14159265358979323846;
inline constexpr double kFrequencySpan = 1024.0;

// Sinusoidal encoding of the pixel centre normalized to [0, 1]. The first d/2
// channels encode x, the rest y; each half holds d/4 sin then d/4 cos
// channels at frequencies log-spaced from pi to 1024 pi.
// Error(kInvalidArgument) unless d is a positive multiple of 4.
std::vector<double> PositionalEncoding(double x, double y, std::size_t width,
                                       std::size_t height, std::size_t d);

// Point: one row. Box: two rows, for (x_min, y_min) and (x_max, y_max).
// Error(kOutOfBounds) when the prompt leaves the image.
Matrix EncodePrompt(const mask::VisualPrompt& prompt, std::size_t width,
                    std::size_t height, const Params& params);

struct AttentionOutput {
  Matrix keys_values;  // stacked inputs
  Matrix q, k, v;      // projected
  Matrix attention;    // n_q x L, rows sum to 1
  Matrix mixed;        // attention * v
  Matrix output;       // mixed * w_o
};

// `key_mask`, when given, has one flag per stacked row; false rows receive
// zero attention. Error(kDimensionMismatch) on shape errors and
// Error(kInvalidArgument) when every key is masked.
AttentionOutput AlignerForward(const Matrix& x_img, const Matrix& x_qt,
                               const Matrix& x_qv, const Params& params,
                               std::optional<std::vector<bool>> key_mask = {});

double Sigmoid(double x);

// Per-pixel logits F z with z = r_seg proj; probabilities via sigmoid.
mask::SoftMask DecodeMask(const Matrix& pixel_features, std::size_t height,
                          std::size_t width, std::span<const double> r_seg,
                          const Matrix& proj);
std::vector<double> DecodeLogits(const Matrix& pixel_features,
                                 std::span<const double> r_seg, const Matrix& proj);

struct Example {
  Matrix x_img;  // l1 x d
  Matrix x_qt;   // l2 x d
  std::optional<mask::VisualPrompt> prompt;
  std::size_t height = 0;  // decoder grid, also the prompt's image size
  std::size_t width = 0;
  Matrix pixel_features;  // (height * width) x d_dec
  mask::BinaryMask gold{1, 1};
  std::size_t target_token = 0;
};

struct LossConfig {
  mask::LossWeights weights;
  double bce_eps = 1e-7;
  double dice_smooth = 1.0;
};

struct LossTerms {
  double text = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

LossTerms ExampleLoss(const Example& ex, const Params& params, const LossConfig& config);

// Mean of the per-example totals, summed in batch order. With workers > 1 the
// examples run in parallel; the result is identical to the serial one.
double ForwardLoss(std::span<const Example> batch, const Params& params,
                   const LossConfig& config, std::size_t workers = 1);

struct LossAndGrad {
  double loss = 0.0;
  Params grad;
};

LossAndGrad ForwardBackward(std::span<const Example> batch, const Params& params,
                            const LossConfig& config, std::size_t workers = 1);

// Random example with l1 image rows, l2 text rows and an optional prompt
// (box or point, chosen by seed).
Example RandomExample(const AlignerConfig& config, std::size_t l1, std::size_t l2,
                      std::size_t height, std::size_t width, bool with_prompt,
                      std::uint64_t seed);

struct ParamError {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;               // parameter holding the maximum
  std::vector<ParamError> params;  // in Params::ForEach order
};

// Relative error |a - n| / max(|a|, |n|, 1e-8).
double RelativeError(double analytic, double numeric);

// Central differences (f(t + eps) - f(t - eps)) / 2 eps against `analytic`.
// Error(kNonFinite) if any evaluation or analytic entry is not finite.
double GradCheck(const std::function<double(std::span<const double>)>& f,
                 std::vector<double> theta, std::span<const double> analytic,
                 double eps = 1e-5);
GradCheckReport GradCheck(const std::function<double(const Params&)>& f,
                          const Params& params, const Params& analytic,
                          double eps = 1e-5);

// One randomized gradient-check configuration.
struct GradCheckCase {
  std::uint64_t seed = 0;
  AlignerConfig config;
  LossConfig loss;
  std::vector<Example> batch;
};

// `count` cases with varied sizes, loss weights and prompt kinds. The first
// half of the batch examples carry visual prompts in every other case.
std::vector<GradCheckCase> SeededCases(std::size_t count, std::uint64_t seed);

// Checks the analytic gradient of the batch loss at freshly initialized
// parameters. `tamper`, when set, edits the analytic gradient before the
// comparison (fault injection).
GradCheckReport RunGradCheck(const GradCheckCase& c, double eps = 1e-5,
                             const std::function<void(Params&)>& tamper = {});

// {"name": {"rows", "cols", "values"}} in Params::ForEach order.
std::string DumpParams(const Params& params);
Params ParseParams(std::string_view text);
void SaveParams(const Params& params, const std::filesystem::path& path);
Params LoadParams(const std::filesystem::path& path);

}  // namespace medground::aligner
