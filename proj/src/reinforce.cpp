#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <omp.h>

#include "vsid/baselines.hpp"
#include "vsid/error.hpp"

namespace vsid {

ModelShape reinforce_shape(const TrainConfig& cfg, std::uint32_t dim, bool varlen) {
  ModelShape s = cfg.shape(dim);
  if (varlen) s.vocab += 1;
  return s;
}

std::uint32_t eos_symbol(const ModelState& state) {
  require(state.kind == ModelKind::ReinforceVarlen, "EOS exists only in varlen mode");
  return state.shape.vocab - 1;
}

namespace {

std::size_t draw_categorical(const Eigen::Ref<const RowVec>& p, double u) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    acc += p(i);
    if (u < acc) return static_cast<std::size_t>(i);
  }
  // u landed in the rounding gap above the last cumulative value
  Eigen::Index last = p.size() - 1;
  while (last > 0 && p(last) == 0.0) --last;
  return static_cast<std::size_t>(last);
}

}  // namespace

SenderRollout sender_rollout(const DvaeModel& net, std::span<const double> theta, const Mat& x,
                             bool varlen, Rng* rng) {
  const auto B = static_cast<std::size_t>(x.rows());
  const std::size_t T = net.shape().max_len;
  const std::size_t V = net.shape().vocab;
  const std::uint32_t eos = static_cast<std::uint32_t>(V - 1);
  SenderRollout r;
  r.tokens.assign(B, std::vector<std::uint32_t>(T, 0));
  r.lengths.assign(B, T);
  r.log_prob.assign(B, 0.0);
  r.entropy.assign(B, 0.0);
  std::vector<bool> stopped(B, false);

  TokenSelector pick = [&](std::size_t t, const Mat& logits) {
    const Mat p = softmax_rows(logits);
    std::vector<std::uint32_t> chosen(B, 0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = p.row(static_cast<Eigen::Index>(b));
      const std::uint32_t z =
          rng ? static_cast<std::uint32_t>(draw_categorical(row, rng->uniform()))
              : argmax_lowest(logits.row(static_cast<Eigen::Index>(b)));
      if (stopped[b]) continue;
      chosen[b] = z;
      r.tokens[b][t] = z;
      r.log_prob[b] += std::log(std::max(row(z), 1e-300));
      double h = 0.0;
      for (Eigen::Index i = 0; i < row.size(); ++i)
        if (row(i) > 0.0) h -= row(i) * std::log(row(i));
      r.entropy[b] += h;
      if (varlen && z == eos) {
        stopped[b] = true;
        r.lengths[b] = t + 1;
      }
    }
    return one_hot_rows(chosen, V);
  };
  r.enc = encode_selected_batch(net.encoder(), theta, x, pick);
  return r;
}

void sender_policy_gradient(const DvaeModel& net, std::span<const double> theta,
                            const SenderRollout& rollout, const Advantages& adv, double weight,
                            std::span<double> grad) {
  const auto B = static_cast<Eigen::Index>(rollout.tokens.size());
  const std::size_t T = net.shape().max_len;
  EncoderUpstream up;
  up.d_logits.assign(T, Mat::Zero(B, net.shape().vocab));
  for (std::size_t t = 0; t < T; ++t) {
    const Mat p = softmax_rows(rollout.enc.logits[t]);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      if (t >= rollout.lengths[bi]) continue;
      const double a = adv.recon[bi] + adv.entropy[bi] + adv.length[bi];
      if (a == 0.0) continue;
      // d log pi(z) / d logits = onehot(z) - p
      up.d_logits[t].row(b) = -(weight * a) * p.row(b);
      up.d_logits[t](b, rollout.tokens[bi][t]) += weight * a;
    }
  }
  encoder_backward(net.encoder(), theta, rollout.enc, up, grad);
}

double reinforce_entropy_weight(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.anneal_steps == 0 || step >= cfg.anneal_steps) return cfg.entropy_end;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.anneal_steps);
  return cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * frac;
}

double reinforce_length_penalty(const TrainConfig& cfg, std::uint64_t step, bool varlen) {
  if (!varlen) return 0.0;
  if (cfg.anneal_steps == 0 || step >= cfg.anneal_steps) return cfg.length_penalty_end;
  return cfg.length_penalty_end * static_cast<double>(step) / static_cast<double>(cfg.anneal_steps);
}

ModelState reinforce_init(const TrainConfig& cfg, std::uint32_t dim, bool varlen) {
  ModelState s;
  s.kind = varlen ? ModelKind::ReinforceVarlen : ModelKind::ReinforceFixed;
  s.shape = reinforce_shape(cfg, dim, varlen);
  s.config = cfg;
  Rng init(cfg.seed, Stream::Init);
  s.params = DvaeModel(s.shape).init_params(init);
  s.adam_m.assign(s.params.size(), 0.0);
  s.adam_v.assign(s.params.size(), 0.0);
  s.data_rng = Rng(cfg.seed, Stream::Data);
  s.gumbel_rng = Rng(cfg.seed, Stream::Gumbel);
  return s;
}

namespace {

struct ReceiverResult {
  std::vector<double> recon;
};

// Reconstruction of the realized prefix; receiver gradients go into grad.
ReceiverResult receiver_step(const DvaeModel& net, std::span<const double> theta, const Mat& x,
                             const SenderRollout& r, double weight, std::span<double> grad) {
  const auto B = static_cast<Eigen::Index>(r.tokens.size());
  const std::size_t T = net.shape().max_len;
  const std::size_t V = net.shape().vocab;
  std::vector<Mat> messages(T, Mat::Zero(B, static_cast<Eigen::Index>(V)));
  for (Eigen::Index b = 0; b < B; ++b)
    for (std::size_t t = 0; t < r.lengths[static_cast<std::size_t>(b)]; ++t)
      messages[t](b, r.tokens[static_cast<std::size_t>(b)][t]) = 1.0;
  const DecoderOutput dec = decode_prefixes(net.decoder(), theta, messages);
  ReceiverResult out;
  out.recon.resize(static_cast<std::size_t>(B));
  std::vector<Mat> d_recon(T, Mat::Zero(B, net.shape().dim));
  for (Eigen::Index b = 0; b < B; ++b) {
    const std::size_t L = r.lengths[static_cast<std::size_t>(b)];
    const auto xhat = dec.recon[L - 1].row(b);
    out.recon[static_cast<std::size_t>(b)] = (x.row(b) - xhat).squaredNorm();
    d_recon[L - 1].row(b) = (2.0 * weight) * (xhat - x.row(b));
  }
  decoder_backward(net.decoder(), theta, dec, d_recon, grad);
  return out;
}

}  // namespace

void reinforce_train_until(ModelState& state, const Catalog& catalog, std::uint64_t until,
                           const MetricsSink& sink) {
  require(state.kind != ModelKind::Dvae, "reinforce_train_until needs a REINFORCE state");
  const bool varlen = state.kind == ModelKind::ReinforceVarlen;
  const TrainConfig& cfg = state.config;
  require(catalog.dim == state.shape.dim, "catalog dim does not match the model");
  until = std::min<std::uint64_t>(until, cfg.total_steps(catalog));
  if (state.step >= until) return;

  omp_set_num_threads(static_cast<int>(std::max<std::size_t>(cfg.threads, 1)));
  const DvaeModel net(state.shape);
  const ItemSampler sampler = training_sampler(catalog, cfg.sampling);
  ParamVector grad(state.params.size());
  RunningMean means[3] = {RunningMean(cfg.baseline_decay, state.baselines[0], state.step > 0),
                          RunningMean(cfg.baseline_decay, state.baselines[1], state.step > 0),
                          RunningMean(cfg.baseline_decay, state.baselines[2], state.step > 0)};
  const double weight = 1.0 / static_cast<double>(cfg.batch_size);

  while (state.step < until) {
    Rng data_rng = state.data_rng;
    Rng sample_rng = state.gumbel_rng;
    const auto idx = sample_batch(sampler, cfg.batch_size, data_rng);
    const Mat x = catalog.rows(idx);
    const double w_ent = reinforce_entropy_weight(cfg, state.step);
    const double len_coef = reinforce_length_penalty(cfg, state.step, varlen);

    std::fill(grad.begin(), grad.end(), 0.0);
    const SenderRollout r = sender_rollout(net, state.params, x, varlen, &sample_rng);
    const ReceiverResult rec = receiver_step(net, state.params, x, r, weight, grad);

    const std::size_t B = cfg.batch_size;
    Advantages adv;
    adv.recon.resize(B);
    adv.entropy.resize(B);
    adv.length.resize(B);
    std::vector<std::array<double, 3>> signals(B);
    double mean_signal[3] = {0.0, 0.0, 0.0};
    double mean_len = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      signals[b] = {rec.recon[b], -w_ent * r.entropy[b],
                    len_coef * static_cast<double>(r.lengths[b])};
      for (int c = 0; c < 3; ++c) mean_signal[c] += signals[b][c] / static_cast<double>(B);
      mean_len += static_cast<double>(r.lengths[b]) / static_cast<double>(B);
    }
    // Before the first update the batch mean stands in for the running mean.
    double base[3];
    for (int c = 0; c < 3; ++c) base[c] = means[c].seeded() ? means[c].value() : mean_signal[c];
    for (std::size_t b = 0; b < B; ++b) {
      adv.recon[b] = signals[b][0] - base[0];
      adv.entropy[b] = signals[b][1] - base[1];
      adv.length[b] = signals[b][2] - base[2];
    }
    sender_policy_gradient(net, state.params, r, adv, weight, grad);

    double total = mean_signal[0] + mean_signal[1] + mean_signal[2];
    bool finite = std::isfinite(total);
    for (double g : grad) finite = finite && std::isfinite(g);
    if (!finite)
      throw Error(ErrorCode::NumericalOverflow,
                  "non-finite REINFORCE step " + std::to_string(state.step));

    for (int c = 0; c < 3; ++c) means[c].update(mean_signal[c]);
    adamw_update(state.params, grad, state.adam_m, state.adam_v, state.step + 1, cfg);
    for (int c = 0; c < 3; ++c) state.baselines[static_cast<std::size_t>(c)] = means[c].value();
    state.data_rng = data_rng;
    state.gumbel_rng = sample_rng;
    if (sink)
      sink(StepMetrics{state.step, mean_signal[0], mean_signal[1], mean_signal[2], total, 0.0,
                       w_ent, mean_len});
    ++state.step;
  }
}

ModelState reinforce_train(const Catalog& catalog, const TrainConfig& cfg, bool varlen,
                           const MetricsSink& sink) {
  require(!catalog.train_items().empty(), "catalog has no training items");
  ModelState state = reinforce_init(cfg, catalog.dim, varlen);
  reinforce_train_until(state, catalog, cfg.total_steps(catalog), sink);
  return state;
}

std::vector<SemanticId> reinforce_encode_batch(const ModelState& state, const Mat& x) {
  const bool varlen = state.kind == ModelKind::ReinforceVarlen;
  const DvaeModel net(state.shape);
  const SenderRollout r = sender_rollout(net, state.params, x, varlen, nullptr);
  std::vector<SemanticId> ids(r.tokens.size());
  for (std::size_t b = 0; b < ids.size(); ++b)
    ids[b].tokens.assign(r.tokens[b].begin(), r.tokens[b].begin() + static_cast<long>(r.lengths[b]));
  return ids;
}

std::vector<std::vector<std::uint32_t>> reinforce_encode_untruncated(const ModelState& state,
                                                                     const Mat& x) {
  const bool varlen = state.kind == ModelKind::ReinforceVarlen;
  const DvaeModel net(state.shape);
  std::vector<std::vector<std::uint32_t>> tokens(static_cast<std::size_t>(x.rows()));
  TokenSelector greedy = [&](std::size_t, const Mat& logits) {
    Mat masked = logits;
    if (varlen) masked.col(masked.cols() - 1).setConstant(-std::numeric_limits<double>::infinity());
    std::vector<std::uint32_t> z(tokens.size());
    for (std::size_t b = 0; b < z.size(); ++b) {
      z[b] = argmax_lowest(masked.row(static_cast<Eigen::Index>(b)));
      tokens[b].push_back(z[b]);
    }
    return one_hot_rows(z, static_cast<std::size_t>(logits.cols()));
  };
  encode_selected_batch(net.encoder(), state.params, x, greedy);
  return tokens;
}

}  // namespace vsid
