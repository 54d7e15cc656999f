#include <doctest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "vsid/baselines.hpp"
#include "vsid/error.hpp"

using namespace vsid;

namespace {

Catalog small_catalog(std::uint32_t n = 64, std::uint64_t seed = 1) {
  SynthOptions o;
  o.n_items = n;
  o.dim = 8;
  o.n_clusters = 8;
  o.seed = seed;
  return normalize_embeddings(synth_zipf_catalog(o));
}

TrainConfig desk_config(std::size_t steps) {
  TrainConfig c;
  c.batch_size = 32;
  c.steps = steps;
  c.vocab = 8;
  c.max_len = 3;
  c.hidden = 16;
  c.model_dim = 16;
  c.ffn_dim = 32;
  c.chunks = 4;
  c.anneal_steps = 200;
  return c;
}

}  // namespace

TEST_CASE("rkmeans: two separated pairs give the pair means") {
  Mat p(4, 2);
  p << 0, 0, 0.2, 0, 5, 5, 5, 5.4;
  Rng rng(1);
  KMeansTrace tr;
  Mat c = kmeans_fit(p, 2, 20, rng, &tr);
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  CHECK(c(0, 0) == doctest::Approx(0.1));
  CHECK(c(0, 1) == doctest::Approx(0.0));
  CHECK(c(1, 0) == doctest::Approx(5.0));
  CHECK(c(1, 1) == doctest::Approx(5.2));
  // brute force over the three 2-partitions of 4 points (each split into two pairs or 1+3)
  double best = 1e300;
  for (unsigned mask = 1; mask < 15; ++mask) {
    double cost = 0;
    for (int side = 0; side < 2; ++side) {
      RowVec mean = RowVec::Zero(2);
      int n = 0;
      for (int i = 0; i < 4; ++i)
        if (((mask >> i) & 1u) == unsigned(side)) mean += p.row(i), ++n;
      mean /= n;
      for (int i = 0; i < 4; ++i)
        if (((mask >> i) & 1u) == unsigned(side)) cost += (p.row(i) - mean).squaredNorm();
    }
    best = std::min(best, cost);
  }
  CHECK(tr.objective.back() == doctest::Approx(best));
}

TEST_CASE("rkmeans: V = 1 gives the mean embedding") {
  const Catalog cat = small_catalog(50);
  const RKMeansModel m = rkmeans_fit(cat, 1, 1, 10, 3);
  const Mat x = cat.rows(cat.train_items());
  const RowVec mean = x.colwise().mean();
  for (Eigen::Index j = 0; j < mean.size(); ++j) CHECK(m.centroids[0](0, j) == doctest::Approx(mean[j]).epsilon(1e-6));
}

TEST_CASE("rkmeans: Lloyd objective never increases") {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const Mat p = test::random_unit_rows(300, 6, rng);
    KMeansTrace tr;
    kmeans_fit(p, 12, 30, rng, &tr);
    REQUIRE(tr.objective.size() >= 2);
    for (std::size_t i = 1; i < tr.objective.size(); ++i) CHECK(tr.objective[i] <= tr.objective[i - 1] + 1e-12);
  }
  std::vector<KMeansTrace> traces;
  rkmeans_fit(small_catalog(200), 3, 8, 20, 1, &traces);
  CHECK(traces.size() == 3);
  for (const auto& tr : traces)
    for (std::size_t i = 1; i < tr.objective.size(); ++i) CHECK(tr.objective[i] <= tr.objective[i - 1] + 1e-12);
}

TEST_CASE("rkmeans: empty clusters are re-seeded") {
  Mat p(6, 1);
  p << 0, 0, 0, 0, 0, 1;  // fewer distinct points than clusters
  Rng rng(4);
  KMeansTrace tr;
  const Mat c = kmeans_fit(p, 3, 5, rng, &tr);
  CHECK(c.allFinite());
}

TEST_CASE("rkmeans: assignments match a brute-force scan, parallel and serial") {
  Rng rng(5);
  const Mat cents = test::random_unit_rows(64, 16, rng);
  const Mat q = test::random_unit_rows(1000, 16, rng);
  const auto par = assign_nearest(q, cents);
  const auto ser = assign_nearest_serial(q, cents);
  CHECK(par == ser);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Eigen::Index best = 0;
    double bd = 1e300;
    for (Eigen::Index k = 0; k < cents.rows(); ++k) {
      const double d = (q.row(i) - cents.row(k)).squaredNorm();
      if (d < bd) bd = d, best = k;
    }
    CHECK(par[i] == std::uint32_t(best));
  }
  Mat tie(2, 1);
  tie << -1, 1;
  Mat zero = Mat::Zero(1, 1);
  CHECK(assign_nearest(zero, tie)[0] == 0);
}

TEST_CASE("rkmeans: encode, prefix monotonicity, determinism and file round trip") {
  const Catalog cat = small_catalog(300, 2);
  const RKMeansModel m = rkmeans_fit(cat, 4, 8, 25, 7);
  CHECK(m == rkmeans_fit(cat, 4, 8, 25, 7));
  const Mat x = cat.all_rows();
  const auto ids = rkmeans_encode_batch(x, m);
  std::vector<std::vector<std::uint32_t>> toks;
  for (const auto& id : ids) {
    CHECK(id.length() == 4);
    toks.push_back(id.tokens);
  }
  // single items may get worse at a level (the nearest centroid can be farther
  // than the zero vector); the catalog mean may not
  double prev = 1e300;
  for (std::size_t k = 1; k <= 4; ++k) {
    std::vector<std::size_t> len(x.rows(), k);
    const Mat r = rkmeans_reconstruct(m, toks, len);
    double mean = 0;
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      // direct recomputation: sum of the first k assigned centroids
      RowVec s = RowVec::Zero(x.cols());
      for (std::size_t t = 0; t < k; ++t) s += m.centroids[t].row(toks[b][t]);
      CHECK((s - r.row(b)).norm() < 1e-12);
      mean += (x.row(b) - r.row(b)).squaredNorm() / double(x.rows());
    }
    CHECK(mean <= prev + 1e-12);
    prev = mean;
  }
  const Vec x0 = x.row(0).transpose();
  CHECK(rkmeans_encode(std::span<const double>(x0.data(), x0.size()), m) == ids[0]);

  const auto path = test::temp_path("model.vskm");
  save_rkmeans(m, path);
  CHECK(load_rkmeans(path) == m);

  // a point equal to a level-1 centroid encodes to it with zero residual
  const RKMeansModel one = rkmeans_fit(cat, 1, 8, 25, 7);
  for (Eigen::Index k = 0; k < 8; ++k) {
    const Vec c = one.centroids[0].row(k).transpose();
    const SemanticId id = rkmeans_encode(std::span<const double>(c.data(), c.size()), one);
    CHECK(id.tokens[0] == std::uint32_t(k));
  }
}

TEST_CASE("reinforce: running mean") {
  RunningMean m(0.99);
  CHECK_FALSE(m.seeded());
  m.update(3.0);
  CHECK(m.value() == 3.0);
  RunningMean c(0.99, 0.0, true);
  for (int i = 0; i < 1000; ++i) c.update(2.5);
  CHECK(std::abs(c.value() - 2.5) <= 0.01 * 2.5);
}

TEST_CASE("reinforce: zero advantage gives an exactly zero sender gradient") {
  const TrainConfig cfg = desk_config(1);
  for (bool varlen : {false, true}) {
    const ModelState s = reinforce_init(cfg, 8, varlen);
    const DvaeModel net(s.shape);
    Rng rng(3);
    const Mat x = test::random_unit_rows(16, 8, rng);
    const SenderRollout r = sender_rollout(net, s.params, x, varlen, &rng);
    Advantages adv{std::vector<double>(16, 0.0), std::vector<double>(16, 0.0), std::vector<double>(16, 0.0)};
    std::vector<double> grad(s.params.size(), 0.0);
    sender_policy_gradient(net, s.params, r, adv, 1.0 / 16, grad);
    CHECK(std::all_of(grad.begin(), grad.end(), [](double g) { return g == 0.0; }));
    adv.recon[3] = 1.0;
    sender_policy_gradient(net, s.params, r, adv, 1.0 / 16, grad);
    CHECK(std::any_of(grad.begin(), grad.end(), [](double g) { return g != 0.0; }));
  }
}

TEST_CASE("reinforce: lengths and EOS") {
  const TrainConfig cfg = desk_config(1);
  Rng rng(6);
  const Mat x = test::random_unit_rows(200, 8, rng);
  const ModelState fixed = reinforce_init(cfg, 8, false);
  CHECK(fixed.shape.vocab == cfg.vocab);
  const SenderRollout rf = sender_rollout(DvaeModel(fixed.shape), fixed.params, x, false, &rng);
  for (std::size_t L : rf.lengths) CHECK(L == cfg.max_len);

  ModelState var = reinforce_init(cfg, 8, true);
  CHECK(var.shape.vocab == cfg.vocab + 1);
  const std::uint32_t eos = eos_symbol(var);
  CHECK(eos == cfg.vocab);
  // push the EOS logit up so stops happen at every position
  const DvaeModel net(var.shape);
  for (std::size_t t = 0; t < cfg.max_len; ++t) view(var.params.data(), net.encoder().head_b[t])(0, eos) = 2.0;
  const SenderRollout rv = sender_rollout(net, var.params, x, true, &rng);
  std::vector<std::size_t> seen(cfg.max_len + 1, 0);
  for (std::size_t b = 0; b < rv.lengths.size(); ++b) {
    const std::size_t L = rv.lengths[b];
    REQUIRE(L >= 1);
    REQUIRE(L <= cfg.max_len);
    ++seen[L];
    std::size_t first_eos = cfg.max_len;
    for (std::size_t t = 0; t < cfg.max_len; ++t)
      if (rv.tokens[b][t] == eos) {
        first_eos = t;
        break;
      }
    CHECK(L == std::min<std::size_t>(first_eos + 1, cfg.max_len));
  }
  for (std::size_t L = 1; L <= cfg.max_len; ++L) CHECK(seen[L] > 0);
  for (const auto& id : reinforce_encode_batch(var, x)) {
    CHECK(id.length() >= 1);
    CHECK(id.length() <= cfg.max_len);
  }
  for (const auto& row : reinforce_encode_untruncated(var, x))
    for (std::uint32_t t : row) CHECK(t != eos);
}

TEST_CASE("reinforce: schedules") {
  TrainConfig c;
  CHECK(reinforce_entropy_weight(c, 0) == 0.03);
  CHECK(reinforce_entropy_weight(c, 6000) == 1e-3);
  CHECK(reinforce_entropy_weight(c, 3000) == doctest::Approx(0.0155));
  CHECK(reinforce_length_penalty(c, 0, true) == 0.0);
  CHECK(reinforce_length_penalty(c, 6000, true) == 0.02);
  CHECK(reinforce_length_penalty(c, 3000, false) == 0.0);
}

TEST_CASE("reinforce: receiver loss falls on a 64-item catalog; runs are deterministic") {
  const Catalog cat = small_catalog();
  for (bool varlen : {false, true}) {
    std::vector<double> recon;
    const ModelState s = reinforce_train(cat, desk_config(501), varlen,
                                         [&](const StepMetrics& m) { recon.push_back(m.recon); });
    REQUIRE(recon.size() == 501);
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) head += recon[i], tail += recon[481 + i];
    CHECK(tail < head);
    CHECK(recon[500] < recon[0]);
    CHECK(serialize_checkpoint(s) == serialize_checkpoint(reinforce_train(cat, desk_config(501), varlen)));
    CHECK(deserialize_checkpoint(serialize_checkpoint(s)) == s);
  }
}
