#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "vsid/baselines.hpp"
#include "vsid/trainer.hpp"

using namespace vsid;

namespace {

struct LossFixture {
  ModelShape shape{16, 64, 64, 5, 64, 2, 128};
  DvaeModel model{shape};
  ParamVector theta;
  Mat x;
  Mat gumbels;
  StepSettings settings;

  explicit LossFixture(std::size_t batch) {
    TrainConfig cfg;
    cfg.vocab = shape.vocab;
    cfg.max_len = shape.max_len;
    theta = init_model(cfg, shape.dim).params;
    Rng rng(11, Stream::Data);
    x.resize(static_cast<Eigen::Index>(batch), shape.dim);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
      x.row(i).normalize();
    }
    gumbels = sample_gumbel_block(batch, model.encoder().shape, rng);
    settings.tau = 0.8;
    settings.beta = 0.002;
    settings.prior = PriorConfig{2.0, shape.max_len, shape.vocab, 0.0};
  }
};

void BM_LossSerial(benchmark::State& state) {
  LossFixture f(static_cast<std::size_t>(state.range(0)));
  ParamVector grad(f.theta.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(loss_and_grad_serial(f.model, f.theta, f.x, f.gumbels, f.settings, grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_LossParallel(benchmark::State& state) {
  LossFixture f(static_cast<std::size_t>(state.range(0)));
  omp_set_num_threads(static_cast<int>(state.range(1)));
  ParamVector grad(f.theta.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(
        loss_and_grad_parallel(f.model, f.theta, f.x, f.gumbels, f.settings, grad, 16));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

Mat unit_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed, Stream::Data);
  Mat m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

void BM_AssignSerial(benchmark::State& state) {
  const Mat pts = unit_rows(state.range(0), 16, 1);
  const Mat cents = unit_rows(256, 16, 2);
  for (auto _ : state) benchmark::DoNotOptimize(assign_nearest_serial(pts, cents));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_AssignParallel(benchmark::State& state) {
  const Mat pts = unit_rows(state.range(0), 16, 1);
  const Mat cents = unit_rows(256, 16, 2);
  omp_set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(assign_nearest(pts, cents));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

const int kMaxThreads = omp_get_num_procs();

void thread_sweep(benchmark::internal::Benchmark* b, long n) {
  for (int t = 1; t <= kMaxThreads; t *= 2) b->Args({n, t});
  if (kMaxThreads & (kMaxThreads - 1)) b->Args({n, kMaxThreads});
}

}  // namespace

BENCHMARK(BM_LossSerial)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossParallel)->Apply([](auto* b) { thread_sweep(b, 256); })->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignSerial)->Arg(50000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignParallel)->Apply([](auto* b) { thread_sweep(b, 50000); })->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
