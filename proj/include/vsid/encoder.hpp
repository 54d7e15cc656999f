#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vsid/linalg.hpp"
#include "vsid/rng.hpp"

namespace vsid {

struct EncoderShape {
  std::uint32_t dim = 16;
  std::uint32_t hidden = 64;
  std::uint32_t vocab = 64;
  std::uint32_t max_len = 5;
};

// Slots of the encoder inside a flat parameter vector.
//   backbone: x -> rmsnorm(W2 relu^2(W1 x + b1) + b2)
//   token head t:   l_t = Wt h_t + bt               (t = 1..T)
//   codebook t:     C_t (V x hidden), log-scale g_t  (t = 1..T-1)
//   length head t:  eta_t = u_t . h_t + c_t          (t = 1..T)
struct EncoderParams {
  EncoderShape shape;
  Slot w1, b1, w2, b2;
  std::vector<Slot> head_w, head_b, codebook, log_scale, len_w, len_b;

  static EncoderParams build(const EncoderShape& shape, ParamLayout& layout);
  void init(std::span<double> theta, Rng& rng) const;
};

struct SemanticId {
  std::vector<std::uint32_t> tokens;  // exactly length() symbols, no padding
  std::size_t length() const { return tokens.size(); }
  friend bool operator==(const SemanticId&, const SemanticId&) = default;
};

// Forward results for a batch (row b = item b), plus what backward needs.
struct EncoderOutput {
  std::vector<Mat> messages;  // m_t, B x V each
  std::vector<Mat> logits;    // l_t, B x V each
  Mat length_logits;          // B x T
  Mat length_posterior;       // q_L, B x T
  Mat alive;                  // B x T

  // caches
  bool relaxed = false;
  double tau = 1.0;
  Mat x, pre1, act1, pre2;
  std::vector<Mat> hidden;    // stop-features h_1..h_T
  std::vector<Mat> residual;  // pre-norm residuals s_1..s_{T-1}
};

// Draws `count` Gumbel(0, 1) variates.
std::vector<double> sample_gumbel(std::size_t count, Rng& rng);
// B x (T*V) block of Gumbel noise, row-major per item, step-major within a row.
Mat sample_gumbel_block(std::size_t batch, const EncoderShape& shape, Rng& rng);

// softmax((logits + gumbels) / tau). Throws InvalidTemperature for tau <= 0.
Vec gumbel_softmax(const Vec& logits, const Vec& gumbels, double tau);
// rmsnorm(h - exp(log_scale) * C^T m).
Vec residual_update(const Vec& h, const Vec& m, const Mat& codebook, double log_scale);
// a[t] = sum_{k >= t} q[k].
Vec alive_from_length(const Vec& q);
Mat alive_from_length_rows(const Mat& q);

// Relaxed path: Gumbel-Softmax messages at temperature tau with the given noise.
EncoderOutput encode_relaxed_batch(const EncoderParams& p, std::span<const double> theta,
                                   const Mat& x, const Mat& gumbels, double tau);

// Hard path: selector(t, logits) returns the B x V one-hot messages for step t.
using TokenSelector = std::function<Mat(std::size_t step, const Mat& logits)>;
EncoderOutput encode_selected_batch(const EncoderParams& p, std::span<const double> theta,
                                    const Mat& x, const TokenSelector& selector);

// Single-item relaxed encode; noise drawn from rng.
EncoderOutput encode_relaxed(std::span<const double> x, const EncoderParams& p,
                             std::span<const double> theta, double tau, Rng& rng);

// Argmax tokens for every one of the T steps plus the inferred length argmax q_L.
struct HardEncoding {
  std::vector<std::vector<std::uint32_t>> tokens;  // B rows of T tokens
  std::vector<std::size_t> lengths;                // in [1, T]
  std::vector<SemanticId> ids() const;
};

HardEncoding encode_hard_batch(const EncoderParams& p, std::span<const double> theta,
                               const Mat& x);
SemanticId encode_hard(std::span<const double> x, const EncoderParams& p,
                       std::span<const double> theta);

// One-hot rows for the given token indices (width = vocab).
Mat one_hot_rows(std::span<const std::uint32_t> tokens, std::size_t vocab);
// Lowest index of the row maximum.
std::uint32_t argmax_lowest(const Eigen::Ref<const RowVec>& row);

// Gradients flowing into the encoder outputs; empty matrices mean zero.
struct EncoderUpstream {
  std::vector<Mat> d_messages;
  std::vector<Mat> d_logits;
  Mat d_posterior;
  Mat d_alive;
};

// Accumulates dL/dtheta into grad.
void encoder_backward(const EncoderParams& p, std::span<const double> theta,
                      const EncoderOutput& out, const EncoderUpstream& up,
                      std::span<double> grad);

}  // namespace vsid
