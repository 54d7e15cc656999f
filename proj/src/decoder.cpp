#include "vsid/decoder.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "vsid/error.hpp"

namespace vsid {

namespace {

constexpr double kNormFloor = 1e-24;

void fill_normal(std::span<double> theta, const Slot& s, double std, Rng& rng) {
  for (std::size_t i = 0; i < s.size(); ++i) theta[s.offset + i] = std * rng.normal();
}

}  // namespace

DecoderParams DecoderParams::build(const DecoderShape& shape, ParamLayout& layout) {
  require(shape.vocab >= 1 && shape.model_dim >= 1 && shape.ffn_dim >= 1 &&
              shape.max_len >= 1 && shape.out_dim >= 1,
          "decoder shape must be positive");
  DecoderParams p;
  p.shape = shape;
  const std::size_t D = shape.model_dim;
  p.input_embed = layout.add("dec.input_embed", shape.vocab, D);
  p.bos = layout.add("dec.bos", 1, D);
  p.position = layout.add("dec.position", shape.max_len + 1, D);
  for (std::uint32_t l = 0; l < shape.n_layers; ++l) {
    const auto tag = std::to_string(l);
    DecoderBlockSlots b;
    b.wq = layout.add("dec.wq." + tag, D, D);
    b.wk = layout.add("dec.wk." + tag, D, D);
    b.wv = layout.add("dec.wv." + tag, D, D);
    b.wo = layout.add("dec.wo." + tag, D, D);
    b.w_up = layout.add("dec.w_up." + tag, shape.ffn_dim, D);
    b.w_down = layout.add("dec.w_down." + tag, D, shape.ffn_dim);
    p.blocks.push_back(b);
  }
  p.out_w = layout.add("dec.out_w", shape.out_dim, D);
  p.out_b = layout.add("dec.out_b", 1, shape.out_dim);
  return p;
}

void DecoderParams::init(std::span<double> theta, Rng& rng) const {
  const double d_scale = 1.0 / std::sqrt(double(shape.model_dim));
  fill_normal(theta, input_embed, 0.02, rng);
  fill_normal(theta, bos, 0.02, rng);
  fill_normal(theta, position, 0.02, rng);
  for (const auto& b : blocks) {
    fill_normal(theta, b.wq, d_scale, rng);
    fill_normal(theta, b.wk, d_scale, rng);
    fill_normal(theta, b.wv, d_scale, rng);
    fill_normal(theta, b.wo, 0.02, rng);
    fill_normal(theta, b.w_up, d_scale, rng);
    fill_normal(theta, b.w_down, 0.02, rng);
  }
  fill_normal(theta, out_w, d_scale, rng);
}

DecoderOutput decode_prefixes(const DecoderParams& p, std::span<const double> theta,
                              const std::vector<Mat>& messages) {
  const auto& sh = p.shape;
  const std::size_t n = messages.size();
  if (n == 0 || n > sh.max_len)
    throw Error(ErrorCode::ShapeMismatch, "decoder needs 1..max_len messages, got " +
                                              std::to_string(n));
  const Eigen::Index B = messages[0].rows();
  for (const Mat& m : messages)
    if (m.rows() != B || m.cols() != Eigen::Index{sh.vocab})
      throw Error(ErrorCode::ShapeMismatch, "message matrix shape");

  const double* th = theta.data();
  const Eigen::Index S = static_cast<Eigen::Index>(n + 1);
  const Eigen::Index D = sh.model_dim;
  DecoderOutput out;
  out.batch = static_cast<std::size_t>(B);
  out.seq = static_cast<std::size_t>(S);
  out.messages = messages;

  const auto pos = view(th, p.position);
  const auto embed = view(th, p.input_embed);
  Mat u(B * S, D);
  for (Eigen::Index b = 0; b < B; ++b) u.row(b * S) = view(th, p.bos).row(0) + pos.row(0);
  for (std::size_t t = 0; t < n; ++t) {
    const Mat e = messages[t] * embed;
    const auto s = static_cast<Eigen::Index>(t + 1);
    for (Eigen::Index b = 0; b < B; ++b) u.row(b * S + s) = e.row(b) + pos.row(s);
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(double(D));
  for (const auto& slots : p.blocks) {
    DecoderBlockCache c;
    c.input = u;
    c.norm1 = rmsnorm_rows(u);
    c.q = c.norm1 * view(th, slots.wq).transpose();
    c.k = c.norm1 * view(th, slots.wk).transpose();
    c.v = c.norm1 * view(th, slots.wv).transpose();
    c.attn = Mat::Zero(B * S, S);
    c.mixed.resize(B * S, D);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto qb = c.q.middleRows(b * S, S);
      const auto kb = c.k.middleRows(b * S, S);
      Mat scores = (qb * kb.transpose()) * inv_sqrt_d;
      for (Eigen::Index i = 0; i < S; ++i)
        for (Eigen::Index j = i + 1; j < S; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
      c.attn.middleRows(b * S, S) = softmax_rows(scores);
      c.mixed.middleRows(b * S, S) = c.attn.middleRows(b * S, S) * c.v.middleRows(b * S, S);
    }
    c.mid = u + c.mixed * view(th, slots.wo).transpose();
    c.norm2 = rmsnorm_rows(c.mid);
    c.up = c.norm2 * view(th, slots.w_up).transpose();
    u = c.mid + relu_squared(c.up) * view(th, slots.w_down).transpose();
    out.blocks.push_back(std::move(c));
  }

  out.final_in = u;
  out.final_norm = rmsnorm_rows(u);
  out.raw = out.final_norm * view(th, p.out_w).transpose();
  out.raw.rowwise() += view(th, p.out_b).row(0);
  if (!out.raw.allFinite()) throw Error(ErrorCode::NumericalOverflow, "non-finite decoder output");

  out.recon.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    Mat r(B, sh.out_dim);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto y = out.raw.row(b * S + static_cast<Eigen::Index>(t + 1));
      r.row(b) = y / std::sqrt(y.squaredNorm() + kNormFloor);
    }
    out.recon[t] = std::move(r);
  }
  return out;
}

std::vector<Mat> decoder_backward(const DecoderParams& p, std::span<const double> theta,
                                  const DecoderOutput& out, const std::vector<Mat>& d_recon,
                                  std::span<double> grad) {
  const auto& sh = p.shape;
  const double* th = theta.data();
  double* g = grad.data();
  const auto B = static_cast<Eigen::Index>(out.batch);
  const auto S = static_cast<Eigen::Index>(out.seq);
  const Eigen::Index D = sh.model_dim;
  const std::size_t n = out.recon.size();

  Mat draw = Mat::Zero(B * S, sh.out_dim);
  for (std::size_t t = 0; t < n && t < d_recon.size(); ++t) {
    if (!d_recon[t].size()) continue;
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index r = b * S + static_cast<Eigen::Index>(t + 1);
      const auto y = out.raw.row(r);
      const double norm = std::sqrt(y.squaredNorm() + kNormFloor);
      const auto dx = d_recon[t].row(b);
      draw.row(r) = dx / norm - y * (y.dot(dx) / (norm * norm * norm));
    }
  }
  view(g, p.out_w) += draw.transpose() * out.final_norm;
  view(g, p.out_b).row(0) += draw.colwise().sum();
  Mat du = rmsnorm_rows_backward(out.final_in, draw * view(th, p.out_w));

  const double inv_sqrt_d = 1.0 / std::sqrt(double(D));
  for (std::size_t l = p.blocks.size(); l-- > 0;) {
    const auto& slots = p.blocks[l];
    const auto& c = out.blocks[l];
    // feed-forward
    const Mat act = relu_squared(c.up);
    view(g, slots.w_down) += du.transpose() * act;
    const Mat dup = relu_squared_backward(c.up, du * view(th, slots.w_down));
    view(g, slots.w_up) += dup.transpose() * c.norm2;
    Mat dmid = du + rmsnorm_rows_backward(c.mid, dup * view(th, slots.w_up));
    // attention
    view(g, slots.wo) += dmid.transpose() * c.mixed;
    const Mat dmixed = dmid * view(th, slots.wo);
    Mat dq(B * S, D), dk(B * S, D), dv(B * S, D);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto a = c.attn.middleRows(b * S, S);
      const auto dmb = dmixed.middleRows(b * S, S);
      dv.middleRows(b * S, S) = a.transpose() * dmb;
      const Mat da = dmb * c.v.middleRows(b * S, S).transpose();
      const Mat dscores = softmax_rows_backward(a, da) * inv_sqrt_d;
      dq.middleRows(b * S, S) = dscores * c.k.middleRows(b * S, S);
      dk.middleRows(b * S, S) = dscores.transpose() * c.q.middleRows(b * S, S);
    }
    view(g, slots.wq) += dq.transpose() * c.norm1;
    view(g, slots.wk) += dk.transpose() * c.norm1;
    view(g, slots.wv) += dv.transpose() * c.norm1;
    const Mat dnorm1 = dq * view(th, slots.wq) + dk * view(th, slots.wk) + dv * view(th, slots.wv);
    du = dmid + rmsnorm_rows_backward(c.input, dnorm1);
  }

  const auto embed = view(th, p.input_embed);
  for (Eigen::Index b = 0; b < B; ++b) {
    view(g, p.bos).row(0) += du.row(b * S);
    for (Eigen::Index s = 0; s < S; ++s) view(g, p.position).row(s) += du.row(b * S + s);
  }
  std::vector<Mat> dm(n);
  for (std::size_t t = 0; t < n; ++t) {
    Mat dut(B, D);
    const auto s = static_cast<Eigen::Index>(t + 1);
    for (Eigen::Index b = 0; b < B; ++b) dut.row(b) = du.row(b * S + s);
    view(g, p.input_embed) += out.messages[t].transpose() * dut;
    dm[t] = dut * embed.transpose();
  }
  return dm;
}

double reconstruction_error(std::span<const double> x, std::span<const double> xhat) {
  require(x.size() == xhat.size(), "reconstruction_error size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - xhat[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace vsid
