#include "medground/aligner.h"

#include <algorithm>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "medground/error.h"
#include "medground/json_io.h"
#include "medground/random.h"

namespace medground::aligner {

namespace {

void RequireShape(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::kDimensionMismatch, what);
}

void AddScaled(Matrix& into, const Matrix& from, double scale = 1.0) {
  RequireShape(into.rows() == from.rows() && into.cols() == from.cols(),
               "matrix shapes differ");
  auto dst = into.values();
  auto src = from.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void ParallelFor(std::size_t n, std::size_t workers,
                 const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void CheckFinite(double v, std::string_view what) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::kNonFinite, std::string(what) + " is not finite");
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw Error(ErrorKind::kLengthMismatch, "matrix value count does not match shape");
  }
}

Matrix Matrix::Random(std::size_t rows, std::size_t cols, double scale,
                      std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.Uniform(-scale, scale);
  return m;
}

Matrix MatMul(const Matrix& a, const Matrix& b) {
  RequireShape(a.cols() == b.rows(), "MatMul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix MatMulTransB(const Matrix& a, const Matrix& b) {
  RequireShape(a.cols() == b.cols(), "MatMulTransB: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

Matrix MatMulTransA(const Matrix& a, const Matrix& b) {
  RequireShape(a.rows() == b.rows(), "MatMulTransA: inner dimensions differ");
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

Matrix VStack(std::span<const Matrix* const> parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool have_cols = false;
  for (const Matrix* m : parts) {
    if (m->rows() == 0) continue;
    if (have_cols) RequireShape(m->cols() == cols, "VStack: widths differ");
    cols = m->cols();
    have_cols = true;
    rows += m->rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Matrix* m : parts) {
    for (std::size_t i = 0; i < m->rows(); ++i, ++r) {
      std::copy(m->row(i).begin(), m->row(i).end(), out.row(r).begin());
    }
  }
  return out;
}

Params Params::Init(const AlignerConfig& c, std::uint64_t seed) {
  if (c.d == 0 || c.d % 4 != 0) {
    throw Error(ErrorKind::kInvalidArgument, "model width must be a positive multiple of 4");
  }
  if (c.n_q == 0 || c.d_dec == 0 || c.vocab == 0) {
    throw Error(ErrorKind::kInvalidArgument, "aligner sizes must be positive");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d));
  Params p;
  p.w_q = Matrix(c.d, c.d);
  p.w_k = Matrix(c.d, c.d);
  p.w_v = Matrix(c.d, c.d);
  p.w_o = Matrix(c.d, c.d);
  p.queries = Matrix(c.n_q, c.d);
  p.w_p = Matrix(c.d, c.d);
  p.point_embed = Matrix(1, c.d);
  p.corner_embed = Matrix(2, c.d);
  p.proj = Matrix(c.d, c.d_dec);
  p.w_vocab = Matrix(c.d, c.vocab);
  p.ForEach([&](std::string_view name, Matrix& m) {
    m = Matrix::Random(m.rows(), m.cols(), scale, DeriveSeed(seed, name));
  });
  return p;
}

Params Params::ZerosLike(const Params& like) {
  Params p = like;
  p.ForEach([](std::string_view, Matrix& m) {
    std::fill(m.values().begin(), m.values().end(), 0.0);
  });
  return p;
}

void Params::ForEach(const std::function<void(std::string_view, Matrix&)>& fn) {
  fn("w_q", w_q);
  fn("w_k", w_k);
  fn("w_v", w_v);
  fn("w_o", w_o);
  fn("queries", queries);
  fn("w_p", w_p);
  fn("point_embed", point_embed);
  fn("corner_embed", corner_embed);
  fn("proj", proj);
  fn("w_vocab", w_vocab);
}

void Params::ForEach(
    const std::function<void(std::string_view, const Matrix&)>& fn) const {
  const_cast<Params*>(this)->ForEach(
      [&](std::string_view name, Matrix& m) { fn(name, m); });
}

std::vector<double> PositionalEncoding(double x, double y, std::size_t width,
                                       std::size_t height, std::size_t d) {
  if (d == 0 || d % 4 != 0) {
    throw Error(ErrorKind::kInvalidArgument, "model width must be a positive multiple of 4");
  }
  if (width == 0 || height == 0) {
    throw Error(ErrorKind::kInvalidArgument, "image size must be positive");
  }
  const std::size_t quarter = d / 4;
  std::vector<double> pe(d);
  const double coords[2] = {(x + 0.5) / static_cast<double>(width),
                            (y + 0.5) / static_cast<double>(height)};
  for (std::size_t axis = 0; axis < 2; ++axis) {
    for (std::size_t k = 0; k < quarter; ++k) {
      const double t = quarter == 1 ? 0.0
                                    : static_cast<double>(k) /
                                          static_cast<double>(quarter - 1);
      const double freq = kMinFrequency * std::pow(kFrequencySpan, t);
      pe[axis * 2 * quarter + k] = std::sin(freq * coords[axis]);
      pe[axis * 2 * quarter + quarter + k] = std::cos(freq * coords[axis]);
    }
  }
  return pe;
}

namespace {

// Prompt rows before the projection: positional encoding plus type embedding.
Matrix PromptInputs(const mask::VisualPrompt& prompt, std::size_t width,
                    std::size_t height, const Params& params) {
  if (!mask::InBounds(prompt, height, width)) {
    throw Error(ErrorKind::kOutOfBounds, "visual prompt lies outside the image");
  }
  const std::size_t d = params.d();
  std::vector<std::pair<mask::Point, std::span<const double>>> corners;
  if (const auto* p = std::get_if<mask::Point>(&prompt)) {
    corners.emplace_back(*p, params.point_embed.row(0));
  } else {
    const auto& b = std::get<mask::Box>(prompt);
    corners.emplace_back(mask::Point{b.x_min, b.y_min}, params.corner_embed.row(0));
    corners.emplace_back(mask::Point{b.x_max, b.y_max}, params.corner_embed.row(1));
  }
  Matrix rows(corners.size(), d);
  for (std::size_t r = 0; r < corners.size(); ++r) {
    const auto& [pt, type] = corners[r];
    const auto pe = PositionalEncoding(static_cast<double>(pt.x),
                                       static_cast<double>(pt.y), width, height, d);
    for (std::size_t c = 0; c < d; ++c) rows(r, c) = pe[c] + type[c];
  }
  return rows;
}

}  // namespace

Matrix EncodePrompt(const mask::VisualPrompt& prompt, std::size_t width,
                    std::size_t height, const Params& params) {
  return MatMul(PromptInputs(prompt, width, height, params), params.w_p);
}

AttentionOutput AlignerForward(const Matrix& x_img, const Matrix& x_qt,
                               const Matrix& x_qv, const Params& params,
                               std::optional<std::vector<bool>> key_mask) {
  const std::size_t d = params.d();
  for (const Matrix* m : {&x_img, &x_qt, &x_qv}) {
    RequireShape(m->rows() == 0 || m->cols() == d, "aligner input width differs from d");
  }
  AttentionOutput out;
  const Matrix* parts[] = {&x_img, &x_qt, &x_qv};
  out.keys_values = VStack(parts);
  const std::size_t len = out.keys_values.rows();
  if (len == 0) throw Error(ErrorKind::kInvalidArgument, "aligner has no keys");
  if (key_mask) {
    RequireShape(key_mask->size() == len, "key mask length differs from key count");
    if (std::none_of(key_mask->begin(), key_mask->end(), [](bool b) { return b; })) {
      throw Error(ErrorKind::kInvalidArgument, "every key is masked");
    }
  }
  out.q = MatMul(params.queries, params.w_q);
  out.k = MatMul(out.keys_values, params.w_k);
  out.v = MatMul(out.keys_values, params.w_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  out.attention = Matrix(out.q.rows(), len);
  const Matrix logits = MatMulTransB(out.q, out.k);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double max = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      if (!key_mask || (*key_mask)[j]) max = std::max(max, logits(i, j) * scale);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      if (key_mask && !(*key_mask)[j]) continue;
      const double e = std::exp(logits(i, j) * scale - max);
      out.attention(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < len; ++j) out.attention(i, j) /= sum;
  }
  out.mixed = MatMul(out.attention, out.v);
  out.output = MatMul(out.mixed, params.w_o);
  return out;
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> DecodeLogits(const Matrix& pixel_features,
                                 std::span<const double> r_seg, const Matrix& proj) {
  RequireShape(r_seg.size() == proj.rows(), "r_seg length differs from proj rows");
  RequireShape(pixel_features.cols() == proj.cols(),
               "pixel feature width differs from decoder width");
  std::vector<double> z(proj.cols(), 0.0);
  for (std::size_t k = 0; k < proj.rows(); ++k) {
    for (std::size_t j = 0; j < proj.cols(); ++j) z[j] += r_seg[k] * proj(k, j);
  }
  std::vector<double> logits(pixel_features.rows(), 0.0);
  for (std::size_t i = 0; i < pixel_features.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) s += pixel_features(i, j) * z[j];
    logits[i] = s;
  }
  return logits;
}

mask::SoftMask DecodeMask(const Matrix& pixel_features, std::size_t height,
                          std::size_t width, std::span<const double> r_seg,
                          const Matrix& proj) {
  RequireShape(pixel_features.rows() == height * width,
               "pixel feature rows differ from the grid size");
  std::vector<double> probs = DecodeLogits(pixel_features, r_seg, proj);
  for (double& v : probs) v = Sigmoid(v);
  return mask::SoftMask(height, width, std::move(probs));
}

namespace {

// log(sigmoid(x)) without forming sigmoid(x).
double LogSigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Logit bound matching a probability clamp to [eps, 1 - eps].
double LogitBound(double eps) { return std::log1p(-eps) - std::log(eps); }

double BceFromLogits(std::span<const double> logits, const mask::BinaryMask& gold,
                     double eps) {
  const double bound = LogitBound(eps);
  const auto bits = gold.bits();
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = std::clamp(logits[i], -bound, bound);
    sum += bits[i] ? -LogSigmoid(x) : -LogSigmoid(-x);
  }
  return sum / static_cast<double>(logits.size());
}

struct ForwardState {
  Matrix prompt_inputs;  // empty without a prompt
  AttentionOutput att;
  std::vector<double> h;
  std::vector<double> text_probs;
  std::vector<double> logits;
  std::vector<double> probs;
  LossTerms loss;
};

ForwardState Forward(const Example& ex, const Params& params, const LossConfig& config) {
  ForwardState s;
  Matrix x_qv(0, params.d());
  if (ex.prompt) {
    s.prompt_inputs = PromptInputs(*ex.prompt, ex.width, ex.height, params);
    x_qv = MatMul(s.prompt_inputs, params.w_p);
  }
  s.att = AlignerForward(ex.x_img, ex.x_qt, x_qv, params);

  const std::size_t d = params.d();
  const Matrix& o = s.att.output;
  s.h.assign(d, 0.0);
  for (std::size_t i = 0; i < o.rows(); ++i) {
    for (std::size_t c = 0; c < d; ++c) s.h[c] += o(i, c);
  }
  for (double& v : s.h) v /= static_cast<double>(o.rows());

  // Text head.
  const std::size_t vocab = params.w_vocab.cols();
  if (ex.target_token >= vocab) {
    throw Error(ErrorKind::kOutOfBounds, "target token outside the vocabulary");
  }
  std::vector<double> t(vocab, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < vocab; ++j) t[j] += s.h[k] * params.w_vocab(k, j);
  }
  const double max = *std::max_element(t.begin(), t.end());
  double z = 0.0;
  for (double v : t) z += std::exp(v - max);
  s.text_probs.resize(vocab);
  for (std::size_t j = 0; j < vocab; ++j) s.text_probs[j] = std::exp(t[j] - max) / z;
  s.loss.text = -(t[ex.target_token] - max - std::log(z));

  // Mask decoder. BCE is taken from the logits: log(1 - p) of a rounded p
  // loses most of its digits once p is close to 1.
  RequireShape(ex.pixel_features.rows() == ex.height * ex.width,
               "pixel feature rows differ from the grid size");
  RequireShape(ex.gold.height() == ex.height && ex.gold.width() == ex.width,
               "gold mask size differs from the grid size");
  s.logits = DecodeLogits(ex.pixel_features, s.h, params.proj);
  s.probs.resize(s.logits.size());
  for (std::size_t i = 0; i < s.logits.size(); ++i) s.probs[i] = Sigmoid(s.logits[i]);
  const mask::SoftMask pred(ex.height, ex.width, s.probs);
  s.loss.bce = BceFromLogits(s.logits, ex.gold, config.bce_eps);
  s.loss.dice = mask::DiceLoss(pred, ex.gold, config.dice_smooth);
  s.loss.total = mask::TotalLoss(s.loss.text, s.loss.bce, s.loss.dice, config.weights);
  return s;
}

// Accumulates scale * d(total)/d(params) for one example into `grad`.
void Backward(const Example& ex, const Params& params, const LossConfig& config,
              const ForwardState& s, double scale, Params& grad) {
  const auto& w = config.weights;
  const std::size_t d = params.d();
  const std::size_t n = s.probs.size();
  const auto bits = ex.gold.bits();

  // d loss / d pixel logit.
  double inter = 0.0, p_sum = 0.0, t_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inter += s.probs[i] * bits[i];
    p_sum += s.probs[i];
    t_sum += bits[i];
  }
  const double num = 2.0 * inter + config.dice_smooth;
  const double den = p_sum + t_sum + config.dice_smooth;
  const double bound = LogitBound(config.bce_eps);
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = s.probs[i];
    const double t = bits[i];
    double dp = 0.0;
    if (den != 0.0) dp += w.lambda_dice * -(2.0 * t * den - num) / (den * den);
    double dl = dp * p * (1.0 - p);
    if (std::fabs(s.logits[i]) < bound) {
      dl += w.lambda_bce * (p - t) / static_cast<double>(n);
    }
    g[i] = scale * dl;
  }

  // Through z = h proj and the logits F z.
  const std::size_t d_dec = params.proj.cols();
  std::vector<double> dz(d_dec, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d_dec; ++j) dz[j] += ex.pixel_features(i, j) * g[i];
  }
  std::vector<double> dh(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < d_dec; ++j) {
      grad.proj(k, j) += s.h[k] * dz[j];
      dh[k] += params.proj(k, j) * dz[j];
    }
  }

  // Text head.
  const std::size_t vocab = params.w_vocab.cols();
  for (std::size_t j = 0; j < vocab; ++j) {
    const double dt = scale * w.lambda_text *
                      (s.text_probs[j] - (j == ex.target_token ? 1.0 : 0.0));
    for (std::size_t k = 0; k < d; ++k) {
      grad.w_vocab(k, j) += s.h[k] * dt;
      dh[k] += params.w_vocab(k, j) * dt;
    }
  }

  // Mean over query rows.
  const AttentionOutput& a = s.att;
  const std::size_t nq = a.output.rows();
  Matrix d_out(nq, d);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t c = 0; c < d; ++c) d_out(i, c) = dh[c] / static_cast<double>(nq);
  }

  AddScaled(grad.w_o, MatMulTransA(a.mixed, d_out));
  const Matrix d_mixed = MatMulTransB(d_out, params.w_o);
  const Matrix d_att = MatMulTransB(d_mixed, a.v);
  const Matrix d_v = MatMulTransA(a.attention, d_mixed);

  // Softmax rows.
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix d_logits(d_att.rows(), d_att.cols());
  for (std::size_t i = 0; i < d_att.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d_att.cols(); ++j) dot += a.attention(i, j) * d_att(i, j);
    for (std::size_t j = 0; j < d_att.cols(); ++j) {
      d_logits(i, j) = a.attention(i, j) * (d_att(i, j) - dot) * inv_sqrt_d;
    }
  }
  const Matrix d_q = MatMul(d_logits, a.k);
  const Matrix d_k = MatMulTransA(d_logits, a.q);

  AddScaled(grad.w_q, MatMulTransA(params.queries, d_q));
  AddScaled(grad.queries, MatMulTransB(d_q, params.w_q));
  AddScaled(grad.w_k, MatMulTransA(a.keys_values, d_k));
  AddScaled(grad.w_v, MatMulTransA(a.keys_values, d_v));

  if (!ex.prompt) return;
  Matrix d_kv = MatMulTransB(d_k, params.w_k);
  AddScaled(d_kv, MatMulTransB(d_v, params.w_v));
  const std::size_t offset = ex.x_img.rows() + ex.x_qt.rows();
  Matrix d_qv(s.prompt_inputs.rows(), d);
  for (std::size_t r = 0; r < d_qv.rows(); ++r) {
    std::copy(d_kv.row(offset + r).begin(), d_kv.row(offset + r).end(),
              d_qv.row(r).begin());
  }
  AddScaled(grad.w_p, MatMulTransA(s.prompt_inputs, d_qv));
  const Matrix d_inputs = MatMulTransB(d_qv, params.w_p);
  if (std::holds_alternative<mask::Point>(*ex.prompt)) {
    for (std::size_t c = 0; c < d; ++c) grad.point_embed(0, c) += d_inputs(0, c);
  } else {
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t c = 0; c < d; ++c) grad.corner_embed(r, c) += d_inputs(r, c);
    }
  }
}

void RequireBatch(std::span<const Example> batch, const LossConfig& config) {
  if (batch.empty()) throw Error(ErrorKind::kEmptyInput, "empty batch");
  mask::Validate(config.weights);
}

}  // namespace

LossTerms ExampleLoss(const Example& ex, const Params& params,
                      const LossConfig& config) {
  mask::Validate(config.weights);
  return Forward(ex, params, config).loss;
}

double ForwardLoss(std::span<const Example> batch, const Params& params,
                   const LossConfig& config, std::size_t workers) {
  RequireBatch(batch, config);
  std::vector<double> totals(batch.size());
  ParallelFor(batch.size(), workers, [&](std::size_t i) {
    totals[i] = Forward(batch[i], params, config).loss.total;
  });
  double sum = 0.0;
  for (double v : totals) sum += v;
  return sum / static_cast<double>(batch.size());
}

LossAndGrad ForwardBackward(std::span<const Example> batch, const Params& params,
                            const LossConfig& config, std::size_t workers) {
  RequireBatch(batch, config);
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> totals(batch.size());
  std::vector<Params> grads(batch.size());
  ParallelFor(batch.size(), workers, [&](std::size_t i) {
    const ForwardState s = Forward(batch[i], params, config);
    totals[i] = s.loss.total;
    grads[i] = Params::ZerosLike(params);
    Backward(batch[i], params, config, s, scale, grads[i]);
  });
  LossAndGrad out;
  out.grad = Params::ZerosLike(params);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    sum += totals[i];
    std::vector<const Matrix*> parts;
    grads[i].ForEach([&](std::string_view, const Matrix& m) { parts.push_back(&m); });
    std::size_t k = 0;
    out.grad.ForEach([&](std::string_view, Matrix& m) { AddScaled(m, *parts[k++]); });
  }
  out.loss = sum * scale;
  return out;
}

Example RandomExample(const AlignerConfig& config, std::size_t l1, std::size_t l2,
                      std::size_t height, std::size_t width, bool with_prompt,
                      std::uint64_t seed) {
  Rng rng(seed);
  Example ex;
  ex.height = height;
  ex.width = width;
  // With the default initialization, inputs of this scale give attention
  // logits of roughly unit standard deviation.
  const double scale = 9.0 * std::sqrt(static_cast<double>(config.d));
  ex.x_img = Matrix::Random(l1, config.d, scale, rng.Next());
  ex.x_qt = Matrix::Random(l2, config.d, scale, rng.Next());
  ex.pixel_features = Matrix::Random(height * width, config.d_dec, 1.0, rng.Next());
  ex.gold = mask::BinaryMask(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) ex.gold.set(x, y, rng.Index(2) == 1);
  }
  ex.target_token = rng.Index(config.vocab);
  if (with_prompt) {
    const auto x0 = static_cast<std::int64_t>(rng.Index(width));
    const auto y0 = static_cast<std::int64_t>(rng.Index(height));
    if (rng.Index(2) == 0) {
      ex.prompt = mask::Point{x0, y0};
    } else {
      const auto x1 = x0 + static_cast<std::int64_t>(rng.Index(width - x0));
      const auto y1 = y0 + static_cast<std::int64_t>(rng.Index(height - y0));
      ex.prompt = mask::Box{x0, y0, x1, y1};
    }
  }
  return ex;
}

double RelativeError(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

double GradCheck(const std::function<double(std::span<const double>)>& f,
                 std::vector<double> theta, std::span<const double> analytic,
                 double eps) {
  if (analytic.size() != theta.size()) {
    throw Error(ErrorKind::kLengthMismatch, "gradient length differs from parameters");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    CheckFinite(analytic[i], "analytic gradient");
    const double saved = theta[i];
    theta[i] = saved + eps;
    const double up = f(theta);
    theta[i] = saved - eps;
    const double down = f(theta);
    theta[i] = saved;
    CheckFinite(up, "loss");
    CheckFinite(down, "loss");
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, RelativeError(analytic[i], numeric));
  }
  return worst;
}

GradCheckReport GradCheck(const std::function<double(const Params&)>& f,
                          const Params& params, const Params& analytic,
                          double eps) {
  GradCheckReport report;
  Params probe = params;
  std::vector<std::pair<std::string, const Matrix*>> grads;
  analytic.ForEach([&](std::string_view name, const Matrix& m) {
    grads.emplace_back(std::string(name), &m);
  });
  std::size_t index = 0;
  probe.ForEach([&](std::string_view name, Matrix& m) {
    const Matrix& g = *grads[index++].second;
    RequireShape(g.rows() == m.rows() && g.cols() == m.cols(),
                 "gradient shape differs from parameter");
    ParamError pe{std::string(name), 0.0};
    for (std::size_t i = 0; i < m.size(); ++i) {
      CheckFinite(g.values()[i], "analytic gradient");
      const double saved = m.values()[i];
      m.values()[i] = saved + eps;
      const double up = f(probe);
      m.values()[i] = saved - eps;
      const double down = f(probe);
      m.values()[i] = saved;
      CheckFinite(up, "loss");
      CheckFinite(down, "loss");
      pe.max_rel_error = std::max(
          pe.max_rel_error, RelativeError(g.values()[i], (up - down) / (2.0 * eps)));
    }
    if (report.worst.empty() || pe.max_rel_error > report.max_rel_error) {
      report.max_rel_error = pe.max_rel_error;
      report.worst = pe.name;
    }
    report.params.push_back(std::move(pe));
  });
  return report;
}

std::vector<GradCheckCase> SeededCases(std::size_t count, std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  for (std::size_t i = 0; i < count; ++i) {
    GradCheckCase c;
    c.seed = DeriveSeed(seed, "gradcheck/" + std::to_string(i));
    Rng rng(c.seed);
    c.config.d = 4 * (1 + rng.Index(4));
    c.config.d_dec = 2 + rng.Index(5);
    c.config.n_q = 1 + rng.Index(6);
    c.config.vocab = 3 + rng.Index(6);
    c.loss.weights = {rng.Uniform(0.1, 2.0), rng.Uniform(0.1, 2.0),
                      rng.Uniform(0.1, 2.0)};
    const std::size_t batch = 1 + rng.Index(3);
    const std::size_t height = 2 + rng.Index(4);
    const std::size_t width = 2 + rng.Index(4);
    for (std::size_t b = 0; b < batch; ++b) {
      const bool prompt = i % 2 == 0 || b % 2 == 1;
      c.batch.push_back(RandomExample(c.config, 1 + rng.Index(6), rng.Index(4), height,
                                      width, prompt, rng.Next()));
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

GradCheckReport RunGradCheck(const GradCheckCase& c, double eps,
                             const std::function<void(Params&)>& tamper) {
  const Params params = Params::Init(c.config, DeriveSeed(c.seed, "params"));
  LossAndGrad lg = ForwardBackward(c.batch, params, c.loss);
  if (tamper) tamper(lg.grad);
  return GradCheck(
      [&](const Params& p) { return ForwardLoss(c.batch, p, c.loss); }, params,
      lg.grad, eps);
}

std::string DumpParams(const Params& params) {
  Json j = Json::object();
  params.ForEach([&](std::string_view name, const Matrix& m) {
    Json entry;
    entry["rows"] = m.rows();
    entry["cols"] = m.cols();
    entry["values"] = std::vector<double>(m.values().begin(), m.values().end());
    j[std::string(name)] = std::move(entry);
  });
  return j.dump() + "\n";
}

Params ParseParams(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("params: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kParseError, "params must be an object");
  Params p;
  p.ForEach([&](std::string_view name, Matrix& m) {
    const std::string key(name);
    if (!j.contains(key)) throw Error(ErrorKind::kParseError, "params lack '" + key + "'");
    try {
      const Json& e = j.at(key);
      m = Matrix(e.at("rows").get<std::size_t>(), e.at("cols").get<std::size_t>(),
                 e.at("values").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::kParseError, "params '" + key + "': " + ex.what());
    } catch (const Error& ex) {
      throw Error(ErrorKind::kParseError, "params '" + key + "': " + ex.what());
    }
  });
  const std::size_t d = p.w_q.rows();
  auto shape = [](const Matrix& m, std::size_t r, std::size_t c) {
    return m.rows() == r && m.cols() == c;
  };
  const bool ok = d > 0 && d % 4 == 0 && shape(p.w_q, d, d) && shape(p.w_k, d, d) &&
                  shape(p.w_v, d, d) && shape(p.w_o, d, d) && shape(p.w_p, d, d) &&
                  p.queries.cols() == d && p.queries.rows() > 0 &&
                  shape(p.point_embed, 1, d) && shape(p.corner_embed, 2, d) &&
                  p.proj.rows() == d && p.w_vocab.rows() == d;
  if (!ok) throw Error(ErrorKind::kParseError, "params have inconsistent shapes");
  return p;
}

void SaveParams(const Params& params, const std::filesystem::path& path) {
  WriteFileAtomic(path, DumpParams(params));
}

Params LoadParams(const std::filesystem::path& path) {
  return ParseParams(ReadFile(path));
}

}  // namespace medground::aligner
