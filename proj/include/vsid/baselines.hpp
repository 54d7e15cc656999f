#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vsid/catalog.hpp"
#include "vsid/encoder.hpp"
#include "vsid/trainer.hpp"

namespace vsid {

// ---- R-KMeans ---------------------------------------------------------------

struct RKMeansModel {
  std::uint32_t max_len = 0;
  std::uint32_t vocab = 0;
  std::uint32_t dim = 0;
  std::vector<Mat> centroids;  // one V x dim matrix per level

  friend bool operator==(const RKMeansModel&, const RKMeansModel&) = default;
};

// Lloyd objective (sum of squared distances to the assigned centroid) after each sweep.
struct KMeansTrace {
  std::vector<double> objective;
  std::size_t reseeded = 0;  // empty clusters repaired at the farthest point
};

// One level of k-means: k-means++ seeding then up to `iters` Lloyd sweeps.
// Each sweep assigns then recomputes means, so the returned centroids are the
// means of the final assignment.
Mat kmeans_fit(const Mat& points, std::size_t k, std::size_t iters, Rng& rng,
               KMeansTrace* trace = nullptr);

// Nearest centroid per row (lowest index on ties); OpenMP over rows.
std::vector<std::uint32_t> assign_nearest(const Mat& points, const Mat& centroids);
// Plain single-threaded scan used as the reference.
std::vector<std::uint32_t> assign_nearest_serial(const Mat& points, const Mat& centroids);

RKMeansModel rkmeans_fit(const Catalog& catalog, std::uint32_t max_len, std::uint32_t vocab,
                         std::size_t iters, std::uint64_t seed,
                         std::vector<KMeansTrace>* traces = nullptr);

// Greedy per-level nearest centroid on the running residual; length is always T.
SemanticId rkmeans_encode(std::span<const double> x, const RKMeansModel& model);
std::vector<SemanticId> rkmeans_encode_batch(const Mat& x, const RKMeansModel& model);
// Sum of the first k assigned centroids (not renormalized).
Mat rkmeans_reconstruct(const RKMeansModel& model,
                        const std::vector<std::vector<std::uint32_t>>& tokens,
                        std::span<const std::size_t> prefix_len);

inline constexpr char kRKMeansMagic[4] = {'V', 'S', 'K', 'M'};
inline constexpr std::uint32_t kRKMeansVersion = 1;
void save_rkmeans(const RKMeansModel& model, const std::filesystem::path& path);
RKMeansModel load_rkmeans(const std::filesystem::path& path);

// ---- REINFORCE sender / receiver --------------------------------------------

// Exponential moving average with fixed decay; the first observation seeds it.
class RunningMean {
 public:
  explicit RunningMean(double decay = 0.99, double value = 0.0, bool seeded = false)
      : decay_(decay), value_(value), seeded_(seeded) {}
  void update(double x) {
    value_ = seeded_ ? decay_ * value_ + (1.0 - decay_) * x : x;
    seeded_ = true;
  }
  double value() const { return value_; }
  bool seeded() const { return seeded_; }

 private:
  double decay_;
  double value_;
  bool seeded_;
};

// REINFORCE networks reuse the dVAE shapes; in varlen mode the vocabulary gains
// an EOS symbol with index V.
ModelShape reinforce_shape(const TrainConfig& cfg, std::uint32_t dim, bool varlen);
std::uint32_t eos_symbol(const ModelState& state);  // V in varlen mode

// Hard messages sampled (or chosen greedily) by the sender.
struct SenderRollout {
  EncoderOutput enc;
  std::vector<std::vector<std::uint32_t>> tokens;  // T per item; positions past the stop are 0
  std::vector<std::size_t> lengths;                // realized lengths in [1, T]
  std::vector<double> log_prob;                    // sum over realized positions
  std::vector<double> entropy;                     // sum over realized positions
};

SenderRollout sender_rollout(const DvaeModel& net, std::span<const double> theta, const Mat& x,
                             bool varlen, Rng* rng);

// Per-component advantages for each item: (signal - running mean).
struct Advantages {
  std::vector<double> recon, entropy, length;
};

// Adds d/dtheta of the surrogate sum_b w * A_b * log pi(z_b) into grad, with
// A_b the sum of the three components.
void sender_policy_gradient(const DvaeModel& net, std::span<const double> theta,
                            const SenderRollout& rollout, const Advantages& adv, double weight,
                            std::span<double> grad);

// Entropy weight and length penalty for a step (linear anneal).
double reinforce_entropy_weight(const TrainConfig& cfg, std::uint64_t step);
double reinforce_length_penalty(const TrainConfig& cfg, std::uint64_t step, bool varlen);

ModelState reinforce_init(const TrainConfig& cfg, std::uint32_t dim, bool varlen);
void reinforce_train_until(ModelState& state, const Catalog& catalog, std::uint64_t until,
                           const MetricsSink& sink = {});
ModelState reinforce_train(const Catalog& catalog, const TrainConfig& cfg, bool varlen,
                           const MetricsSink& sink = {});

// Greedy inference: argmax tokens, stopping at the first EOS in varlen mode.
std::vector<SemanticId> reinforce_encode_batch(const ModelState& state, const Mat& x);
// Tokens for all T positions with EOS masked out.
std::vector<std::vector<std::uint32_t>> reinforce_encode_untruncated(const ModelState& state,
                                                                     const Mat& x);

}  // namespace vsid
