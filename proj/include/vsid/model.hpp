#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vsid/decoder.hpp"
#include "vsid/encoder.hpp"
#include "vsid/objective.hpp"

namespace vsid {

struct ModelShape {
  std::uint32_t dim = 16;
  std::uint32_t hidden = 64;
  std::uint32_t vocab = 64;
  std::uint32_t max_len = 5;
  std::uint32_t model_dim = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t ffn_dim = 128;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Encoder + decoder slots over one flat parameter vector.
class DvaeModel {
 public:
  explicit DvaeModel(const ModelShape& shape);

  const ModelShape& shape() const { return shape_; }
  const ParamLayout& layout() const { return layout_; }
  const EncoderParams& encoder() const { return encoder_; }
  const DecoderParams& decoder() const { return decoder_; }
  std::size_t n_params() const { return layout_.size(); }

  ParamVector init_params(Rng& rng) const;

 private:
  ModelShape shape_;
  ParamLayout layout_;
  EncoderParams encoder_;
  DecoderParams decoder_;
};

struct StepSettings {
  double tau = 1.0;
  double beta = 0.0;
  PriorConfig prior;
};

struct BatchLoss {
  LossBreakdown mean;
  double expected_length = 0.0;
};

// Loss (mean over rows of x) and, when grad is non-empty, its gradient added into grad.
// gumbels is B x (T*V). Single pass over the whole batch; the serial reference.
BatchLoss loss_and_grad_serial(const DvaeModel& model, std::span<const double> theta,
                               const Mat& x, const Mat& gumbels, const StepSettings& s,
                               std::span<double> grad);

// Same quantity split into `chunks` fixed row ranges processed in parallel and
// reduced in chunk order, so the result depends on the chunk count but not on
// the number of threads.
BatchLoss loss_and_grad_parallel(const DvaeModel& model, std::span<const double> theta,
                                 const Mat& x, const Mat& gumbels, const StepSettings& s,
                                 std::span<double> grad, std::size_t chunks = 16);

// Loss of a fixed hard token trajectory (one item per row, T tokens each).
std::vector<LossBreakdown> hard_trajectory_losses(
    const DvaeModel& model, std::span<const double> theta, const Mat& x,
    const std::vector<std::vector<std::uint32_t>>& tokens, const StepSettings& s);

// Exact expectation of the hard-path loss over q(z | x) by enumerating all V^T
// token sequences. Throws EnumerationTooLarge when V^T > 4096.
struct ElboOracle {
  double expected_loss = 0.0;
  double expected_kl = 0.0;  // expectation of beta-free vocab + length regularizers
  std::size_t trajectories = 0;
};
ElboOracle elbo_enumeration_oracle(const DvaeModel& model, std::span<const double> theta,
                                   std::span<const double> x, const StepSettings& s);

// Reconstructions x-hat at prefix length prefix_len[b] for hard token rows
// (tokens past the prefix are ignored).
Mat decode_hard_prefixes(const DvaeModel& model, std::span<const double> theta,
                         const std::vector<std::vector<std::uint32_t>>& tokens,
                         std::span<const std::size_t> prefix_len);

}  // namespace vsid
