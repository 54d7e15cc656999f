#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vsid/encoder.hpp"
#include "vsid/linalg.hpp"

namespace vsid {

struct LossBreakdown {
  double recon = 0.0;
  double vocab_reg = 0.0;
  double length_reg = 0.0;
  double total = 0.0;
  double tau = 1.0;
  double beta = 0.0;
  double lambda = 0.0;
};

// Length prior and vocabulary settings. alpha and lambda describe the same
// truncated geometric prior: lambda = -log(1 - alpha).
struct PriorConfig {
  double lambda = 0.0;
  std::size_t max_len = 5;
  std::size_t vocab = 64;
  double free_bits = 0.0;  // delta

  static PriorConfig from_alpha(double alpha, std::size_t max_len, std::size_t vocab,
                                double free_bits);
  double alpha() const;
};

double lambda_from_alpha(double alpha);
double alpha_from_lambda(double lambda);

// p(L) = (1-a)^(L-1) a / (1 - (1-a)^T), L = 1..T.
std::vector<double> geometric_prior(double alpha, std::size_t max_len);

inline constexpr double kLengthMix = 0.9;

// 0.9 q + 0.1 / T; used by the reconstruction term only.
Vec smoothed_length(const Vec& q);

double reconstruction_loss(std::span<const double> x, const std::vector<Vec>& recon, const Vec& q);
double vocab_regularizer(const std::vector<Vec>& logits, const Vec& alive, std::size_t vocab,
                         double free_bits);
double length_regularizer(const Vec& q, double lambda);

// recon + beta (vocab + length), single item.
LossBreakdown total_loss(std::span<const double> x, const EncoderOutput& enc,
                         const std::vector<Vec>& recon, const PriorConfig& cfg, double tau,
                         double beta);

// Linear from 1 to tau_min over total_steps, then flat.
double tau_schedule(std::size_t step, std::size_t total_steps, double tau_min);
// Cosine ramp 0 -> beta_max over warmup_steps, then flat.
double beta_schedule(std::size_t step, std::size_t warmup_steps, double beta_max);

// Batch objective: per-item terms scaled by `weight` and summed, with gradients
// with respect to the encoder and decoder outputs.
struct BatchObjective {
  LossBreakdown sum;       // weighted sums of each term
  double expected_length = 0.0;  // weighted sum of E_q[L]
  EncoderUpstream enc_grad;
  std::vector<Mat> d_recon;
};

BatchObjective batch_objective(const Mat& x, const EncoderOutput& enc,
                               const std::vector<Mat>& recon, const PriorConfig& cfg,
                               double beta, double weight, bool want_grad);

}  // namespace vsid
