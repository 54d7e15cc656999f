#include "vsid/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "vsid/error.hpp"

namespace vsid {

ModelShape TrainConfig::shape(std::uint32_t dim) const {
  return ModelShape{dim, hidden, vocab, max_len, model_dim, n_layers, ffn_dim};
}

std::size_t TrainConfig::total_steps(const Catalog& c) const {
  if (steps > 0) return steps;
  std::uint64_t interactions = 0;
  for (std::size_t i = 0; i < c.n_items; ++i)
    if (!c.is_cold(i)) interactions += c.popularity[i];
  const std::size_t per_epoch = (interactions + batch_size - 1) / batch_size;
  return epochs * per_epoch;
}

std::size_t TrainConfig::warmup_steps(const Catalog& c) const {
  return static_cast<std::size_t>(std::llround(warmup_fraction * double(total_steps(c))));
}

namespace {

std::string fmt_double(double v) {
  // shortest text that reads back to the same double
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string kind_name(DistributionKind k) {
  return k == DistributionKind::DataUnigram ? "data-unigram" : "catalog-uniform";
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"batch", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"steps", std::to_string(steps)},
      {"lr", fmt_double(learning_rate)},
      {"wd", fmt_double(weight_decay)},
      {"maxlen", std::to_string(max_len)},
      {"vocab", std::to_string(vocab)},
      {"hidden", std::to_string(hidden)},
      {"model-dim", std::to_string(model_dim)},
      {"layers", std::to_string(n_layers)},
      {"ffn-dim", std::to_string(ffn_dim)},
      {"tau-min", fmt_double(tau_min)},
      {"beta-max", fmt_double(beta_max)},
      {"warmup", fmt_double(warmup_fraction)},
      {"lambda", fmt_double(lambda)},
      {"free-bits", fmt_double(free_bits)},
      {"seed", std::to_string(seed)},
      {"sampling", kind_name(sampling)},
      {"chunks", std::to_string(chunks)},
      {"threads", std::to_string(threads)},
      {"adam-beta1", fmt_double(adam_beta1)},
      {"adam-beta2", fmt_double(adam_beta2)},
      {"adam-eps", fmt_double(adam_eps)},
      {"entropy-start", fmt_double(entropy_start)},
      {"entropy-end", fmt_double(entropy_end)},
      {"length-penalty", fmt_double(length_penalty_end)},
      {"anneal-steps", std::to_string(anneal_steps)},
      {"baseline-decay", fmt_double(baseline_decay)},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv) {
    try {
      if (key == "batch") c.batch_size = std::stoull(value);
      else if (key == "epochs") c.epochs = std::stoull(value);
      else if (key == "steps") c.steps = std::stoull(value);
      else if (key == "lr") c.learning_rate = std::stod(value);
      else if (key == "wd") c.weight_decay = std::stod(value);
      else if (key == "maxlen") c.max_len = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "vocab") c.vocab = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "hidden") c.hidden = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "model-dim") c.model_dim = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "layers") c.n_layers = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "ffn-dim") c.ffn_dim = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "tau-min") c.tau_min = std::stod(value);
      else if (key == "beta-max") c.beta_max = std::stod(value);
      else if (key == "warmup") c.warmup_fraction = std::stod(value);
      else if (key == "lambda") c.lambda = std::stod(value);
      else if (key == "free-bits") c.free_bits = std::stod(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "sampling") {
        if (value == "data-unigram") c.sampling = DistributionKind::DataUnigram;
        else if (value == "catalog-uniform") c.sampling = DistributionKind::CatalogUniform;
        else throw Error(ErrorCode::InvalidArgument, "unknown sampling '" + value + "'");
      } else if (key == "chunks") c.chunks = std::stoull(value);
      else if (key == "threads") c.threads = std::stoull(value);
      else if (key == "adam-beta1") c.adam_beta1 = std::stod(value);
      else if (key == "adam-beta2") c.adam_beta2 = std::stod(value);
      else if (key == "adam-eps") c.adam_eps = std::stod(value);
      else if (key == "entropy-start") c.entropy_start = std::stod(value);
      else if (key == "entropy-end") c.entropy_end = std::stod(value);
      else if (key == "length-penalty") c.length_penalty_end = std::stod(value);
      else if (key == "anneal-steps") c.anneal_steps = std::stoull(value);
      else if (key == "baseline-decay") c.baseline_decay = std::stod(value);
      else throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "bad value for '" + key + "': " + value);
    }
  }
  return c;
}

std::string format_metrics(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g",
                static_cast<unsigned long long>(m.step), m.recon, m.vocab_reg, m.length_reg,
                m.total, m.tau, m.beta, m.expected_length);
  return buf;
}

ModelState init_model(const TrainConfig& cfg, std::uint32_t dim) {
  ModelState s;
  s.kind = ModelKind::Dvae;
  s.shape = cfg.shape(dim);
  s.config = cfg;
  Rng init(cfg.seed, Stream::Init);
  s.params = DvaeModel(s.shape).init_params(init);
  s.adam_m.assign(s.params.size(), 0.0);
  s.adam_v.assign(s.params.size(), 0.0);
  s.data_rng = Rng(cfg.seed, Stream::Data);
  s.gumbel_rng = Rng(cfg.seed, Stream::Gumbel);
  return s;
}

void adamw_update(std::span<double> params, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, std::uint64_t step_number, const TrainConfig& cfg) {
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_number));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_number));
  const double lr = cfg.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    params[i] -= lr * (update + cfg.weight_decay * params[i]);
  }
}

std::vector<std::size_t> sample_batch(const ItemSampler& sampler, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = sampler(rng.uniform());
  return idx;
}

ItemSampler training_sampler(const Catalog& c, DistributionKind kind) {
  auto [uniform, data] = empirical_distributions(c);
  return ItemSampler(kind == DistributionKind::DataUnigram ? data : uniform);
}

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

void train_until(ModelState& state, const Catalog& catalog, std::uint64_t until,
                 const MetricsSink& sink) {
  require(state.kind == ModelKind::Dvae, "train_until drives the dVAE only");
  const TrainConfig& cfg = state.config;
  require(catalog.dim == state.shape.dim, "catalog dim does not match the model");
  const std::size_t total = cfg.total_steps(catalog);
  const std::size_t warmup = cfg.warmup_steps(catalog);
  until = std::min<std::uint64_t>(until, total);
  if (state.step >= until) return;

  omp_set_num_threads(static_cast<int>(std::max<std::size_t>(cfg.threads, 1)));
  const DvaeModel model(state.shape);
  const ItemSampler sampler = training_sampler(catalog, cfg.sampling);
  ParamVector grad(state.params.size());

  while (state.step < until) {
    StepSettings s;
    s.tau = tau_schedule(state.step, total, cfg.tau_min);
    s.beta = beta_schedule(state.step, warmup, cfg.beta_max);
    s.prior = PriorConfig{cfg.lambda, cfg.max_len, cfg.vocab, cfg.free_bits};

    Rng data_rng = state.data_rng;
    Rng gumbel_rng = state.gumbel_rng;
    const auto idx = sample_batch(sampler, cfg.batch_size, data_rng);
    const Mat x = catalog.rows(idx);
    const Mat g = sample_gumbel_block(cfg.batch_size, model.encoder().shape, gumbel_rng);

    std::fill(grad.begin(), grad.end(), 0.0);
    const BatchLoss loss = loss_and_grad_parallel(model, state.params, x, g, s, grad, cfg.chunks);
    if (!std::isfinite(loss.mean.total) || !all_finite(grad))
      throw Error(ErrorCode::NumericalOverflow,
                  "non-finite loss or gradient at step " + std::to_string(state.step));

    adamw_update(state.params, grad, state.adam_m, state.adam_v, state.step + 1, cfg);
    state.data_rng = data_rng;
    state.gumbel_rng = gumbel_rng;
    if (sink)
      sink(StepMetrics{state.step, loss.mean.recon, loss.mean.vocab_reg, loss.mean.length_reg,
                       loss.mean.total, s.tau, s.beta, loss.expected_length});
    ++state.step;
  }
}

ModelState train(const Catalog& catalog, const TrainConfig& cfg, const MetricsSink& sink) {
  require(!catalog.train_items().empty(), "catalog has no training items");
  ModelState state = init_model(cfg, catalog.dim);
  train_until(state, catalog, cfg.total_steps(catalog), sink);
  return state;
}

GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> theta,
                                        std::span<const double> analytic, double eps,
                                        std::size_t stride) {
  require(theta.size() == analytic.size(), "analytic gradient size mismatch");
  require(eps > 0.0 && stride >= 1, "eps must be positive and stride >= 1");
  std::vector<double> probe(theta.begin(), theta.end());
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); i += stride) {
    const double keep = probe[i];
    probe[i] = keep + eps;
    const double fp = f(probe);
    probe[i] = keep - eps;
    const double fm = f(probe);
    probe[i] = keep;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    ++report.checked;
    if (rel >= report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

GradCheckReport grad_check(const DvaeModel& model, std::span<const double> theta,
                           const GradSample& sample, double eps, std::size_t stride) {
  std::vector<double> grad(theta.size(), 0.0);
  loss_and_grad_serial(model, theta, sample.x, sample.gumbels, sample.settings, grad);
  auto f = [&](std::span<const double> t) {
    return loss_and_grad_serial(model, t, sample.x, sample.gumbels, sample.settings, {}).mean.total;
  };
  return finite_difference_check(f, theta, grad, eps, stride);
}

}  // namespace vsid
