#include "vsid/model.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include <omp.h>

#include "vsid/error.hpp"

namespace vsid {

DvaeModel::DvaeModel(const ModelShape& shape) : shape_(shape) {
  encoder_ = EncoderParams::build({shape.dim, shape.hidden, shape.vocab, shape.max_len}, layout_);
  decoder_ = DecoderParams::build(
      {shape.vocab, shape.model_dim, shape.n_layers, shape.ffn_dim, shape.max_len, shape.dim},
      layout_);
}

ParamVector DvaeModel::init_params(Rng& rng) const {
  ParamVector theta(layout_.size(), 0.0);
  encoder_.init(theta, rng);
  decoder_.init(theta, rng);
  return theta;
}

namespace {

BatchLoss chunk_loss(const DvaeModel& model, std::span<const double> theta, const Mat& x,
                     const Mat& gumbels, const StepSettings& s, double weight,
                     std::span<double> grad) {
  const bool want_grad = !grad.empty();
  EncoderOutput enc = encode_relaxed_batch(model.encoder(), theta, x, gumbels, s.tau);
  DecoderOutput dec = decode_prefixes(model.decoder(), theta, enc.messages);
  BatchObjective obj = batch_objective(x, enc, dec.recon, s.prior, s.beta, weight, want_grad);
  if (want_grad) {
    obj.enc_grad.d_messages = decoder_backward(model.decoder(), theta, dec, obj.d_recon, grad);
    encoder_backward(model.encoder(), theta, enc, obj.enc_grad, grad);
  }
  BatchLoss out;
  out.mean = obj.sum;
  out.mean.tau = s.tau;
  out.expected_length = obj.expected_length;
  return out;
}

void check_batch(const DvaeModel& model, const Mat& x, const Mat& gumbels) {
  const auto& sh = model.shape();
  if (x.cols() != Eigen::Index{sh.dim} || gumbels.rows() != x.rows() ||
      gumbels.cols() != Eigen::Index{sh.max_len} * sh.vocab)
    throw Error(ErrorCode::ShapeMismatch, "batch or gumbel block shape");
  require(x.rows() > 0, "empty batch");
}

void accumulate(BatchLoss& into, const BatchLoss& part) {
  into.mean.recon += part.mean.recon;
  into.mean.vocab_reg += part.mean.vocab_reg;
  into.mean.length_reg += part.mean.length_reg;
  into.mean.total += part.mean.total;
  into.expected_length += part.expected_length;
}

}  // namespace

BatchLoss loss_and_grad_serial(const DvaeModel& model, std::span<const double> theta,
                               const Mat& x, const Mat& gumbels, const StepSettings& s,
                               std::span<double> grad) {
  check_batch(model, x, gumbels);
  return chunk_loss(model, theta, x, gumbels, s, 1.0 / static_cast<double>(x.rows()), grad);
}

BatchLoss loss_and_grad_parallel(const DvaeModel& model, std::span<const double> theta,
                                 const Mat& x, const Mat& gumbels, const StepSettings& s,
                                 std::span<double> grad, std::size_t chunks) {
  check_batch(model, x, gumbels);
  const auto B = static_cast<std::size_t>(x.rows());
  const std::size_t K = std::clamp<std::size_t>(chunks, 1, B);
  const double weight = 1.0 / static_cast<double>(B);
  const bool want_grad = !grad.empty();

  std::vector<BatchLoss> parts(K);
  std::vector<ParamVector> grads(want_grad ? K : 0);
  std::vector<std::exception_ptr> errors(K);

#pragma omp parallel for schedule(static)
  for (std::size_t k = 0; k < K; ++k) {
    try {
      const auto lo = static_cast<Eigen::Index>(k * B / K);
      const auto hi = static_cast<Eigen::Index>((k + 1) * B / K);
      std::span<double> g;
      if (want_grad) {
        grads[k].assign(grad.size(), 0.0);
        g = grads[k];
      }
      parts[k] = chunk_loss(model, theta, x.middleRows(lo, hi - lo),
                            gumbels.middleRows(lo, hi - lo), s, weight, g);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchLoss out;
  out.mean.tau = s.tau;
  out.mean.beta = s.beta;
  out.mean.lambda = s.prior.lambda;
  for (std::size_t k = 0; k < K; ++k) {
    accumulate(out, parts[k]);
    if (want_grad)
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += grads[k][i];
  }
  return out;
}

namespace {

Mat replicate_rows(std::span<const double> x, Eigen::Index n) {
  Mat out(n, static_cast<Eigen::Index>(x.size()));
  for (Eigen::Index b = 0; b < n; ++b)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(b, j) = x[static_cast<std::size_t>(j)];
  return out;
}

struct HardPass {
  EncoderOutput enc;
  DecoderOutput dec;
};

HardPass hard_pass(const DvaeModel& model, std::span<const double> theta, const Mat& x,
                   const std::vector<std::vector<std::uint32_t>>& tokens) {
  const std::size_t V = model.shape().vocab;
  TokenSelector given = [&](std::size_t t, const Mat& logits) {
    std::vector<std::uint32_t> col(static_cast<std::size_t>(logits.rows()));
    for (std::size_t b = 0; b < col.size(); ++b) col[b] = tokens[b][t];
    return one_hot_rows(col, V);
  };
  HardPass p;
  p.enc = encode_selected_batch(model.encoder(), theta, x, given);
  p.dec = decode_prefixes(model.decoder(), theta, p.enc.messages);
  return p;
}

// Per-item terms assembled from the scalar objective primitives.
LossBreakdown item_breakdown(const Mat& x, const HardPass& p, Eigen::Index b,
                             const StepSettings& s) {
  const auto T = p.dec.recon.size();
  std::vector<Vec> recon(T), logits(T);
  for (std::size_t t = 0; t < T; ++t) {
    recon[t] = p.dec.recon[t].row(b).transpose();
    logits[t] = p.enc.logits[t].row(b).transpose();
  }
  const Vec q = p.enc.length_posterior.row(b).transpose();
  const Vec a = p.enc.alive.row(b).transpose();
  const Vec xb = x.row(b).transpose();
  LossBreakdown out;
  out.recon = reconstruction_loss(std::span<const double>(xb.data(), static_cast<std::size_t>(xb.size())), recon, q);
  out.vocab_reg = vocab_regularizer(logits, a, s.prior.vocab, s.prior.free_bits);
  out.length_reg = length_regularizer(q, s.prior.lambda);
  out.total = out.recon + s.beta * (out.vocab_reg + out.length_reg);
  out.tau = s.tau;
  out.beta = s.beta;
  out.lambda = s.prior.lambda;
  return out;
}

}  // namespace

std::vector<LossBreakdown> hard_trajectory_losses(
    const DvaeModel& model, std::span<const double> theta, const Mat& x,
    const std::vector<std::vector<std::uint32_t>>& tokens, const StepSettings& s) {
  require(tokens.size() == static_cast<std::size_t>(x.rows()), "one token row per item");
  const HardPass p = hard_pass(model, theta, x, tokens);
  std::vector<LossBreakdown> out(tokens.size());
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    out[static_cast<std::size_t>(b)] = item_breakdown(x, p, b, s);
  return out;
}

ElboOracle elbo_enumeration_oracle(const DvaeModel& model, std::span<const double> theta,
                                   std::span<const double> x, const StepSettings& s) {
  const std::size_t V = model.shape().vocab;
  const std::size_t T = model.shape().max_len;
  std::size_t count = 1;
  for (std::size_t t = 0; t < T; ++t) {
    count *= V;
    if (count > 4096)
      throw Error(ErrorCode::EnumerationTooLarge, "V^T exceeds 4096 trajectories");
  }
  std::vector<std::vector<std::uint32_t>> tokens(count, std::vector<std::uint32_t>(T));
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t code = i;
    for (std::size_t t = 0; t < T; ++t) {
      tokens[i][t] = static_cast<std::uint32_t>(code % V);
      code /= V;
    }
  }
  const Mat xs = replicate_rows(x, static_cast<Eigen::Index>(count));
  const HardPass p = hard_pass(model, theta, xs, tokens);

  std::vector<Mat> probs;
  for (const Mat& l : p.enc.logits) probs.push_back(softmax_rows(l));

  // KL(q_L || p_L) = length_reg - lambda - log p_L(1)
  const double lambda = s.prior.lambda;
  const double log_p1 = lambda > 0.0
                            ? std::log(geometric_prior(alpha_from_lambda(lambda), T).front())
                            : -std::log(static_cast<double>(T));

  ElboOracle out;
  out.trajectories = count;
  for (std::size_t i = 0; i < count; ++i) {
    double prob = 1.0;
    for (std::size_t t = 0; t < T; ++t)
      prob *= probs[t](static_cast<Eigen::Index>(i), tokens[i][t]);
    const LossBreakdown l = item_breakdown(xs, p, static_cast<Eigen::Index>(i), s);
    out.expected_loss += prob * l.total;
    out.expected_kl += prob * (l.vocab_reg + l.length_reg - lambda - log_p1);
  }
  return out;
}

Mat decode_hard_prefixes(const DvaeModel& model, std::span<const double> theta,
                         const std::vector<std::vector<std::uint32_t>>& tokens,
                         std::span<const std::size_t> prefix_len) {
  require(tokens.size() == prefix_len.size() && !tokens.empty(), "one prefix length per row");
  const std::size_t V = model.shape().vocab;
  const auto B = static_cast<Eigen::Index>(tokens.size());
  const std::size_t n = *std::max_element(prefix_len.begin(), prefix_len.end());
  require(n >= 1 && n <= model.shape().max_len, "prefix length out of range");
  std::vector<Mat> messages(n, Mat::Zero(B, static_cast<Eigen::Index>(V)));
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto len = prefix_len[static_cast<std::size_t>(b)];
    require(len >= 1 && len <= tokens[static_cast<std::size_t>(b)].size(), "prefix longer than code");
    for (std::size_t t = 0; t < len; ++t) messages[t](b, tokens[static_cast<std::size_t>(b)][t]) = 1.0;
  }
  const DecoderOutput dec = decode_prefixes(model.decoder(), theta, messages);
  Mat out(B, model.shape().dim);
  for (Eigen::Index b = 0; b < B; ++b)
    out.row(b) = dec.recon[prefix_len[static_cast<std::size_t>(b)] - 1].row(b);
  return out;
}

}  // namespace vsid
