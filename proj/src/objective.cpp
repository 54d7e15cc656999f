#include "vsid/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vsid/error.hpp"

namespace vsid {

double lambda_from_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidPrior, "alpha must be in (0, 1)");
  return -std::log1p(-alpha);
}

double alpha_from_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw Error(ErrorCode::InvalidPrior, "lambda must be positive and finite for an alpha");
  return -std::expm1(-lambda);
}

PriorConfig PriorConfig::from_alpha(double alpha, std::size_t max_len, std::size_t vocab,
                                    double free_bits) {
  return PriorConfig{lambda_from_alpha(alpha), max_len, vocab, free_bits};
}

double PriorConfig::alpha() const { return alpha_from_lambda(lambda); }

std::vector<double> geometric_prior(double alpha, std::size_t max_len) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidPrior, "alpha must be in (0, 1)");
  require(max_len >= 1, "max_len must be >= 1");
  std::vector<double> p(max_len);
  const double z = -std::expm1(static_cast<double>(max_len) * std::log1p(-alpha));
  double survive = 1.0;
  for (std::size_t l = 0; l < max_len; ++l) {
    p[l] = survive * alpha / z;
    survive *= 1.0 - alpha;
  }
  return p;
}

Vec smoothed_length(const Vec& q) {
  return (kLengthMix * q.array() + (1.0 - kLengthMix) / static_cast<double>(q.size())).matrix();
}

double reconstruction_loss(std::span<const double> x, const std::vector<Vec>& recon, const Vec& q) {
  require(recon.size() == static_cast<std::size_t>(q.size()), "one reconstruction per prefix");
  const Vec w = smoothed_length(q);
  double acc = 0.0;
  for (std::size_t t = 0; t < recon.size(); ++t) {
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - recon[t](static_cast<Eigen::Index>(i));
      err += d * d;
    }
    acc += w(static_cast<Eigen::Index>(t)) * err;
  }
  return acc;
}

namespace {

// KL(softmax(l) || uniform) = log V - H.
double kl_to_uniform(const Eigen::Ref<const RowVec>& logits, std::size_t vocab) {
  Mat l = logits;
  const Mat p = softmax_rows(l);
  return std::log(static_cast<double>(vocab)) - row_entropy(p)(0);
}

double entropy(const Vec& q) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i)
    if (q(i) > 0.0) h -= q(i) * std::log(q(i));
  return h;
}

}  // namespace

double vocab_regularizer(const std::vector<Vec>& logits, const Vec& alive, std::size_t vocab,
                         double free_bits) {
  require(logits.size() == static_cast<std::size_t>(alive.size()), "one logit vector per step");
  double acc = 0.0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const double kl = kl_to_uniform(logits[t].transpose(), vocab);
    acc += alive(static_cast<Eigen::Index>(t)) * std::max(0.0, kl - free_bits);
  }
  return acc;
}

double length_regularizer(const Vec& q, double lambda) {
  double expected = 0.0;
  for (Eigen::Index t = 0; t < q.size(); ++t) expected += static_cast<double>(t + 1) * q(t);
  return lambda * expected - entropy(q);
}

LossBreakdown total_loss(std::span<const double> x, const EncoderOutput& enc,
                         const std::vector<Vec>& recon, const PriorConfig& cfg, double tau,
                         double beta) {
  require(enc.length_posterior.rows() == 1, "total_loss takes a single item");
  const Vec q = enc.length_posterior.row(0).transpose();
  const Vec a = enc.alive.row(0).transpose();
  std::vector<Vec> logits;
  for (const Mat& l : enc.logits) logits.push_back(l.row(0).transpose());
  LossBreakdown out;
  out.recon = reconstruction_loss(x, recon, q);
  out.vocab_reg = vocab_regularizer(logits, a, cfg.vocab, cfg.free_bits);
  out.length_reg = length_regularizer(q, cfg.lambda);
  out.total = out.recon + beta * (out.vocab_reg + out.length_reg);
  out.tau = tau;
  out.beta = beta;
  out.lambda = cfg.lambda;
  return out;
}

double tau_schedule(std::size_t step, std::size_t total_steps, double tau_min) {
  if (total_steps == 0 || step >= total_steps) return tau_min;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return 1.0 + (tau_min - 1.0) * frac;
}

double beta_schedule(std::size_t step, std::size_t warmup_steps, double beta_max) {
  if (warmup_steps == 0 || step >= warmup_steps) return beta_max;
  const double frac = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return beta_max * 0.5 * (1.0 - std::cos(std::numbers::pi * frac));
}

BatchObjective batch_objective(const Mat& x, const EncoderOutput& enc,
                               const std::vector<Mat>& recon, const PriorConfig& cfg,
                               double beta, double weight, bool want_grad) {
  const Eigen::Index B = x.rows();
  const auto T = static_cast<Eigen::Index>(recon.size());
  const Eigen::Index V = enc.logits.front().cols();
  require(T == enc.length_posterior.cols(), "prefix count must equal max length");
  const double log_v = std::log(static_cast<double>(V));
  const double uniform_mix = (1.0 - kLengthMix) / static_cast<double>(T);

  BatchObjective out;
  out.sum.beta = beta;
  out.sum.lambda = cfg.lambda;
  if (want_grad) {
    out.d_recon.assign(static_cast<std::size_t>(T), Mat::Zero(B, x.cols()));
    out.enc_grad.d_logits.assign(static_cast<std::size_t>(T), Mat::Zero(B, V));
    out.enc_grad.d_posterior = Mat::Zero(B, T);
    out.enc_grad.d_alive = Mat::Zero(B, T);
  }

  std::vector<Mat> probs(static_cast<std::size_t>(T));
  std::vector<Vec> kl(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    probs[t] = softmax_rows(enc.logits[t]);
    kl[t] = (log_v - row_entropy(probs[t]).array()).matrix();
  }

  for (Eigen::Index b = 0; b < B; ++b) {
    const auto q = enc.length_posterior.row(b);
    const auto a = enc.alive.row(b);
    double recon_b = 0.0, vocab_b = 0.0, expected = 0.0, h_len = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double err = (x.row(b) - recon[t].row(b)).squaredNorm();
      const double w = kLengthMix * q(t) + uniform_mix;
      recon_b += w * err;
      const double excess = kl[t](b) - cfg.free_bits;
      vocab_b += a(t) * std::max(0.0, excess);
      expected += static_cast<double>(t + 1) * q(t);
      if (q(t) > 0.0) h_len -= q(t) * std::log(q(t));

      if (want_grad) {
        out.d_recon[t].row(b) = (weight * w * 2.0) * (recon[t].row(b) - x.row(b));
        out.enc_grad.d_posterior(b, t) += weight * kLengthMix * err;
        out.enc_grad.d_alive(b, t) += weight * beta * std::max(0.0, excess);
        if (excess > 0.0) {
          // dKL/dl_i = p_i (log p_i + H)
          const auto p = probs[t].row(b);
          const double h = log_v - kl[t](b);
          for (Eigen::Index i = 0; i < V; ++i) {
            const double pi = p(i);
            const double lp = pi > 0.0 ? std::log(pi) : 0.0;
            out.enc_grad.d_logits[t](b, i) = weight * beta * a(t) * pi * (lp + h);
          }
        }
        const double lq = q(t) > 0.0 ? std::log(q(t)) : 0.0;
        out.enc_grad.d_posterior(b, t) +=
            weight * beta * (cfg.lambda * static_cast<double>(t + 1) + lq + 1.0);
      }
    }
    const double length_b = cfg.lambda * expected - h_len;
    out.sum.recon += weight * recon_b;
    out.sum.vocab_reg += weight * vocab_b;
    out.sum.length_reg += weight * length_b;
    out.sum.total += weight * (recon_b + beta * (vocab_b + length_b));
    out.expected_length += weight * expected;
  }
  return out;
}

}  // namespace vsid
