#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vsid/catalog.hpp"
#include "vsid/model.hpp"
#include "vsid/rng.hpp"

namespace vsid {

struct TrainConfig {
  std::size_t batch_size = 8192;
  std::size_t epochs = 5;
  std::size_t steps = 0;  // > 0 overrides epochs * ceil(interactions / batch)
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  std::uint32_t max_len = 5;
  std::uint32_t vocab = 4096;
  std::uint32_t hidden = 64;
  std::uint32_t model_dim = 64;
  std::uint32_t n_layers = 2;
  std::uint32_t ffn_dim = 128;
  double tau_min = 0.5;
  double beta_max = 0.002;
  double warmup_fraction = 0.2;
  double lambda = 0.0;
  double free_bits = 0.0;
  std::uint64_t seed = 0;
  DistributionKind sampling = DistributionKind::DataUnigram;
  std::size_t chunks = 16;
  std::size_t threads = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // REINFORCE baseline settings
  double entropy_start = 0.03;
  double entropy_end = 1e-3;
  double length_penalty_end = 0.02;
  std::size_t anneal_steps = 6000;
  double baseline_decay = 0.99;

  ModelShape shape(std::uint32_t dim) const;
  std::size_t total_steps(const Catalog& c) const;
  std::size_t warmup_steps(const Catalog& c) const;

  std::map<std::string, std::string> to_map() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

enum class ModelKind : std::uint32_t { Dvae = 1, ReinforceFixed = 2, ReinforceVarlen = 3 };

struct ModelState {
  ModelKind kind = ModelKind::Dvae;
  ModelShape shape;
  TrainConfig config;
  ParamVector params;
  ParamVector adam_m;
  ParamVector adam_v;
  std::uint64_t step = 0;
  Rng data_rng;
  Rng gumbel_rng;
  // REINFORCE running means: reconstruction, entropy, length.
  std::array<double, 3> baselines{0.0, 0.0, 0.0};

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double recon = 0.0;
  double vocab_reg = 0.0;
  double length_reg = 0.0;
  double total = 0.0;
  double tau = 0.0;
  double beta = 0.0;
  double expected_length = 0.0;
};

// `step recon vocab length total tau beta E[L]`, tab-separated.
std::string format_metrics(const StepMetrics& m);
using MetricsSink = std::function<void(const StepMetrics&)>;

ModelState init_model(const TrainConfig& cfg, std::uint32_t dim);

// Decoupled weight decay Adam step; step_number is 1-based.
void adamw_update(std::span<double> params, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step_number, const TrainConfig& cfg);

// Draws a minibatch of item indices from the configured distribution.
std::vector<std::size_t> sample_batch(const ItemSampler& sampler, std::size_t batch, Rng& rng);
ItemSampler training_sampler(const Catalog& c, DistributionKind kind);

// Runs steps until state.step reaches `until` (capped at the configured total).
// On a non-finite loss or gradient the state is left at the last good step and
// NumericalOverflow is thrown.
void train_until(ModelState& state, const Catalog& catalog, std::uint64_t until,
                 const MetricsSink& sink = {});
ModelState train(const Catalog& catalog, const TrainConfig& cfg, const MetricsSink& sink = {});

// Central-difference check of an arbitrary scalar function.
// rel_err = |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline constexpr double kGradCheckFloor = 1e-6;
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};
GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> theta,
                                        std::span<const double> analytic, double eps,
                                        std::size_t stride = 1);

// Sample for grad_check: items and frozen Gumbel noise.
struct GradSample {
  Mat x;
  Mat gumbels;
  StepSettings settings;
};
GradCheckReport grad_check(const DvaeModel& model, std::span<const double> theta,
                           const GradSample& sample, double eps, std::size_t stride = 1);

inline constexpr char kCheckpointMagic[4] = {'V', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const ModelState& state);
ModelState deserialize_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace vsid
