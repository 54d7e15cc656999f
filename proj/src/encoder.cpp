#include "vsid/encoder.hpp"

#include <cmath>
#include <string>

#include "vsid/error.hpp"

namespace vsid {

EncoderParams EncoderParams::build(const EncoderShape& shape, ParamLayout& layout) {
  require(shape.dim >= 1 && shape.hidden >= 1 && shape.vocab >= 1 && shape.max_len >= 1,
          "encoder shape must be positive");
  EncoderParams p;
  p.shape = shape;
  p.w1 = layout.add("enc.w1", shape.hidden, shape.dim);
  p.b1 = layout.add("enc.b1", 1, shape.hidden);
  p.w2 = layout.add("enc.w2", shape.hidden, shape.hidden);
  p.b2 = layout.add("enc.b2", 1, shape.hidden);
  for (std::uint32_t t = 0; t < shape.max_len; ++t) {
    const auto tag = std::to_string(t + 1);
    p.head_w.push_back(layout.add("enc.head_w." + tag, shape.vocab, shape.hidden));
    p.head_b.push_back(layout.add("enc.head_b." + tag, 1, shape.vocab));
    p.len_w.push_back(layout.add("enc.len_w." + tag, 1, shape.hidden));
    p.len_b.push_back(layout.add("enc.len_b." + tag, 1, 1));
    if (t + 1 < shape.max_len) {
      p.codebook.push_back(layout.add("enc.codebook." + tag, shape.vocab, shape.hidden));
      p.log_scale.push_back(layout.add("enc.log_scale." + tag, 1, 1));
    }
  }
  return p;
}

namespace {

void fill_normal(std::span<double> theta, const Slot& s, double std, Rng& rng) {
  for (std::size_t i = 0; i < s.size(); ++i) theta[s.offset + i] = std * rng.normal();
}

void check_finite(const Mat& m, std::size_t step) {
  if (!m.allFinite())
    throw Error(ErrorCode::NumericalOverflow, "non-finite encoder state at step " +
                                                  std::to_string(step));
}

}  // namespace

void EncoderParams::init(std::span<double> theta, Rng& rng) const {
  fill_normal(theta, w1, 1.0 / std::sqrt(double(shape.dim)), rng);
  fill_normal(theta, w2, 1.0 / std::sqrt(double(shape.hidden)), rng);
  for (const auto* group : {&head_w, &codebook, &len_w})
    for (const Slot& s : *group) fill_normal(theta, s, 0.02, rng);
  // biases and log-scales start at zero (theta arrives zeroed)
}

std::vector<double> sample_gumbel(std::size_t count, Rng& rng) {
  std::vector<double> g(count);
  for (double& v : g) v = rng.gumbel();
  return g;
}

Mat sample_gumbel_block(std::size_t batch, const EncoderShape& shape, Rng& rng) {
  Mat g(static_cast<Eigen::Index>(batch), Eigen::Index{shape.max_len} * shape.vocab);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.gumbel();
  return g;
}

Vec gumbel_softmax(const Vec& logits, const Vec& gumbels, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidTemperature, "tau must be positive");
  Mat z = ((logits + gumbels) / tau).transpose();
  return softmax_rows(z).transpose();
}

Vec residual_update(const Vec& h, const Vec& m, const Mat& codebook, double log_scale) {
  Mat s = (h - std::exp(log_scale) * (codebook.transpose() * m)).transpose();
  return rmsnorm_rows(s).transpose();
}

Vec alive_from_length(const Vec& q) {
  Vec a(q.size());
  double acc = 0.0;
  for (Eigen::Index t = q.size() - 1; t >= 0; --t) {
    acc += q(t);
    a(t) = acc;
  }
  return a;
}

Mat alive_from_length_rows(const Mat& q) {
  Mat a(q.rows(), q.cols());
  for (Eigen::Index b = 0; b < q.rows(); ++b) {
    double acc = 0.0;
    for (Eigen::Index t = q.cols() - 1; t >= 0; --t) {
      acc += q(b, t);
      a(b, t) = acc;
    }
  }
  return a;
}

std::uint32_t argmax_lowest(const Eigen::Ref<const RowVec>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = j;
  return static_cast<std::uint32_t>(best);
}

Mat one_hot_rows(std::span<const std::uint32_t> tokens, std::size_t vocab) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(vocab));
  for (std::size_t b = 0; b < tokens.size(); ++b) m(static_cast<Eigen::Index>(b), tokens[b]) = 1.0;
  return m;
}

namespace {

EncoderOutput forward_impl(const EncoderParams& p, std::span<const double> theta, const Mat& x,
                           bool relaxed, const Mat* gumbels, double tau,
                           const TokenSelector* selector) {
  const auto& sh = p.shape;
  if (x.cols() != Eigen::Index{sh.dim})
    throw Error(ErrorCode::ShapeMismatch, "encoder input has " + std::to_string(x.cols()) +
                                              " columns, expected " + std::to_string(sh.dim));
  if (!x.allFinite()) throw Error(ErrorCode::NumericalOverflow, "non-finite encoder input");
  if (relaxed && !(tau > 0.0)) throw Error(ErrorCode::InvalidTemperature, "tau must be positive");
  const Eigen::Index B = x.rows();
  const Eigen::Index T = sh.max_len;
  const Eigen::Index V = sh.vocab;
  if (relaxed && (gumbels->rows() != B || gumbels->cols() != T * V))
    throw Error(ErrorCode::ShapeMismatch, "gumbel block shape");
  const double* th = theta.data();

  EncoderOutput out;
  out.relaxed = relaxed;
  out.tau = tau;
  out.x = x;
  out.pre1 = x * view(th, p.w1).transpose();
  out.pre1.rowwise() += view(th, p.b1).row(0);
  out.act1 = relu_squared(out.pre1);
  out.pre2 = out.act1 * view(th, p.w2).transpose();
  out.pre2.rowwise() += view(th, p.b2).row(0);
  Mat h = rmsnorm_rows(out.pre2);
  check_finite(h, 0);

  out.length_logits.resize(B, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    Mat logits = h * view(th, p.head_w[t]).transpose();
    logits.rowwise() += view(th, p.head_b[t]).row(0);
    Mat m = relaxed ? softmax_rows((logits + gumbels->middleCols(t * V, V)) / tau)
                    : (*selector)(static_cast<std::size_t>(t), logits);
    out.length_logits.col(t) =
        h * view(th, p.len_w[t]).row(0).transpose() +
        Vec::Constant(B, view(th, p.len_b[t])(0, 0));
    out.hidden.push_back(h);
    if (t + 1 < T) {
      const double scale = std::exp(view(th, p.log_scale[t])(0, 0));
      Mat s = h - scale * (m * view(th, p.codebook[t]));
      h = rmsnorm_rows(s);
      check_finite(h, static_cast<std::size_t>(t + 1));
      out.residual.push_back(std::move(s));
    }
    out.logits.push_back(std::move(logits));
    out.messages.push_back(std::move(m));
  }
  check_finite(out.length_logits, static_cast<std::size_t>(T));
  out.length_posterior = softmax_rows(out.length_logits);
  out.alive = alive_from_length_rows(out.length_posterior);
  return out;
}

}  // namespace

EncoderOutput encode_relaxed_batch(const EncoderParams& p, std::span<const double> theta,
                                   const Mat& x, const Mat& gumbels, double tau) {
  return forward_impl(p, theta, x, true, &gumbels, tau, nullptr);
}

EncoderOutput encode_selected_batch(const EncoderParams& p, std::span<const double> theta,
                                    const Mat& x, const TokenSelector& selector) {
  return forward_impl(p, theta, x, false, nullptr, 1.0, &selector);
}

EncoderOutput encode_relaxed(std::span<const double> x, const EncoderParams& p,
                             std::span<const double> theta, double tau, Rng& rng) {
  Mat xm = ConstVecMap(x.data(), static_cast<Eigen::Index>(x.size())).transpose();
  Mat g = sample_gumbel_block(1, p.shape, rng);
  return encode_relaxed_batch(p, theta, xm, g, tau);
}

std::vector<SemanticId> HardEncoding::ids() const {
  std::vector<SemanticId> out(tokens.size());
  for (std::size_t b = 0; b < tokens.size(); ++b)
    out[b].tokens.assign(tokens[b].begin(), tokens[b].begin() + static_cast<long>(lengths[b]));
  return out;
}

HardEncoding encode_hard_batch(const EncoderParams& p, std::span<const double> theta,
                               const Mat& x) {
  HardEncoding enc;
  enc.tokens.assign(static_cast<std::size_t>(x.rows()), {});
  TokenSelector argmax = [&](std::size_t, const Mat& logits) {
    std::vector<std::uint32_t> picks(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
      picks[static_cast<std::size_t>(b)] = argmax_lowest(logits.row(b));
      enc.tokens[static_cast<std::size_t>(b)].push_back(picks[static_cast<std::size_t>(b)]);
    }
    return one_hot_rows(picks, static_cast<std::size_t>(logits.cols()));
  };
  const EncoderOutput out = encode_selected_batch(p, theta, x, argmax);
  enc.lengths.resize(enc.tokens.size());
  for (Eigen::Index b = 0; b < x.rows(); ++b)
    enc.lengths[static_cast<std::size_t>(b)] = argmax_lowest(out.length_posterior.row(b)) + 1;
  return enc;
}

SemanticId encode_hard(std::span<const double> x, const EncoderParams& p,
                       std::span<const double> theta) {
  Mat xm = ConstVecMap(x.data(), static_cast<Eigen::Index>(x.size())).transpose();
  return encode_hard_batch(p, theta, xm).ids().front();
}

void encoder_backward(const EncoderParams& p, std::span<const double> theta,
                      const EncoderOutput& out, const EncoderUpstream& up,
                      std::span<double> grad) {
  const double* th = theta.data();
  double* g = grad.data();
  const Eigen::Index B = out.x.rows();
  const Eigen::Index T = p.shape.max_len;

  Mat dq = up.d_posterior.size() ? up.d_posterior : Mat::Zero(B, T);
  if (up.d_alive.size()) {
    // a[t] = sum_{k>=t} q[k]  =>  dq[k] += sum_{t<=k} da[t]
    for (Eigen::Index b = 0; b < B; ++b) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < T; ++k) {
        acc += up.d_alive(b, k);
        dq(b, k) += acc;
      }
    }
  }
  const Mat deta = softmax_rows_backward(out.length_posterior, dq);

  Mat dh_next;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Mat& h = out.hidden[t];
    const Mat& m = out.messages[t];
    Mat dh = deta.col(t) * view(th, p.len_w[t]).row(0);
    view(g, p.len_w[t]).row(0) += deta.col(t).transpose() * h;
    view(g, p.len_b[t])(0, 0) += deta.col(t).sum();

    Mat dm = (static_cast<std::size_t>(t) < up.d_messages.size() && up.d_messages[t].size())
                 ? up.d_messages[t]
                 : Mat::Zero(B, m.cols());
    if (t + 1 < T) {
      const Mat ds = rmsnorm_rows_backward(out.residual[t], dh_next);
      dh += ds;
      const double scale = std::exp(view(th, p.log_scale[t])(0, 0));
      const auto C = view(th, p.codebook[t]);
      const Mat e = m * C;
      view(g, p.log_scale[t])(0, 0) += -scale * ds.cwiseProduct(e).sum();
      const Mat de = -scale * ds;
      dm += de * C.transpose();
      view(g, p.codebook[t]) += m.transpose() * de;
    }
    Mat dl = (static_cast<std::size_t>(t) < up.d_logits.size() && up.d_logits[t].size())
                 ? up.d_logits[t]
                 : Mat::Zero(B, m.cols());
    if (out.relaxed) dl += softmax_rows_backward(m, dm) / out.tau;
    view(g, p.head_w[t]) += dl.transpose() * h;
    view(g, p.head_b[t]).row(0) += dl.colwise().sum();
    dh += dl * view(th, p.head_w[t]);
    dh_next = std::move(dh);
  }

  const Mat dpre2 = rmsnorm_rows_backward(out.pre2, dh_next);
  view(g, p.w2) += dpre2.transpose() * out.act1;
  view(g, p.b2).row(0) += dpre2.colwise().sum();
  const Mat dpre1 = relu_squared_backward(out.pre1, dpre2 * view(th, p.w2));
  view(g, p.w1) += dpre1.transpose() * out.x;
  view(g, p.b1).row(0) += dpre1.colwise().sum();
}

}  // namespace vsid
