#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vsid/linalg.hpp"
#include "vsid/rng.hpp"

namespace vsid {

struct DecoderShape {
  std::uint32_t vocab = 64;
  std::uint32_t model_dim = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t ffn_dim = 128;
  std::uint32_t max_len = 5;
  std::uint32_t out_dim = 16;
};

struct DecoderBlockSlots {
  Slot wq, wk, wv, wo, w_up, w_down;
};

// Causal single-head transformer over the sequence (bos, m_1, ..., m_n).
// Position t >= 1 reads m_t through a soft lookup m_t^T E plus a learned position
// vector; its output, after a final RMSNorm and affine head, is the
// l2-normalized reconstruction from the prefix m_1..m_t.
struct DecoderParams {
  DecoderShape shape;
  Slot input_embed, bos, position;
  std::vector<DecoderBlockSlots> blocks;
  Slot out_w, out_b;

  static DecoderParams build(const DecoderShape& shape, ParamLayout& layout);
  void init(std::span<double> theta, Rng& rng) const;
};

struct DecoderBlockCache {
  Mat input, norm1, q, k, v, attn, mixed, mid, norm2, up;
};

struct DecoderOutput {
  std::vector<Mat> recon;  // xhat_1..xhat_n, B x out_dim each, unit rows

  // caches
  std::size_t batch = 0;
  std::size_t seq = 0;  // n + 1
  std::vector<Mat> messages;
  std::vector<DecoderBlockCache> blocks;
  Mat final_in, final_norm, raw;  // raw = head output before l2 normalization
};

// Reconstructions for every prefix in one pass. Each messages[t] is B x vocab.
DecoderOutput decode_prefixes(const DecoderParams& p, std::span<const double> theta,
                              const std::vector<Mat>& messages);

// Accumulates parameter gradients into grad and returns dL/dm_t.
std::vector<Mat> decoder_backward(const DecoderParams& p, std::span<const double> theta,
                                  const DecoderOutput& out, const std::vector<Mat>& d_recon,
                                  std::span<double> grad);

// Squared Euclidean distance; equals 2 (1 - cos) for unit vectors.
double reconstruction_error(std::span<const double> x, std::span<const double> xhat);

}  // namespace vsid
