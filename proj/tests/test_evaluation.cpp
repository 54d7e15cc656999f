#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "vsid/error.hpp"
#include "vsid/evaluation.hpp"

using namespace vsid;

namespace {

SemanticId id_of(std::initializer_list<std::uint32_t> t) { return SemanticId{std::vector<std::uint32_t>(t)}; }

std::vector<SemanticId> fixed_ids(std::size_t n, std::size_t L, std::size_t V, Rng& rng) {
  std::vector<SemanticId> ids(n);
  for (auto& id : ids)
    for (std::size_t t = 0; t < L; ++t) id.tokens.push_back(std::uint32_t(rng.below(V)));
  return ids;
}

// x-hat = x whatever the tokens say; tokens are the item index.
class IdentityModel final : public IdModel {
 public:
  explicit IdentityModel(const Catalog& c) : c_(c) {}
  std::string name() const override { return "identity"; }
  std::size_t max_length() const override { return 2; }
  std::size_t vocab_size() const override { return c_.n_items; }
  std::vector<SemanticId> encode(const Mat& x) const override {
    std::vector<SemanticId> out;
    for (auto& t : encode_untruncated(x)) out.push_back(SemanticId{{t[0]}});
    return out;
  }
  std::vector<std::vector<std::uint32_t>> encode_untruncated(const Mat& x) const override {
    std::vector<std::vector<std::uint32_t>> out;
    const Mat all = c_.all_rows();
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      Eigen::Index k;
      (all.rowwise() - x.row(b)).rowwise().squaredNorm().minCoeff(&k);
      out.push_back({std::uint32_t(k), 0});
    }
    return out;
  }
  Mat reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                  std::span<const std::size_t>) const override {
    std::vector<std::size_t> idx;
    for (const auto& t : tokens) idx.push_back(t[0]);
    return c_.rows(idx);
  }

 private:
  const Catalog& c_;
};

Catalog small_catalog(std::uint32_t n, std::uint64_t seed, double cold = 0.0) {
  SynthOptions o;
  o.n_items = n;
  o.dim = 8;
  o.n_clusters = 6;
  o.cold_fraction = cold;
  o.seed = seed;
  return normalize_embeddings(synth_zipf_catalog(o));
}

double brute_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) less += w < v[i], equal += w == v[i];
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = double(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("eval: identity model reconstructs perfectly") {
  const Catalog cat = small_catalog(40, 1);
  const IdentityModel m(cat);
  CHECK(eval_reconstruction(m, cat, empirical_distributions(cat).second) == 0.0);
}

TEST_CASE("eval: reconstruction is the weighted mean of per-item errors") {
  const Catalog cat = small_catalog(120, 2, 0.1);
  const RKMeansIdModel m(rkmeans_fit(cat, 3, 4, 10, 1));
  const auto [u, d] = empirical_distributions(cat);
  const auto errs = item_errors(m, cat, std::vector<std::size_t>{0, 1, 2});
  for (std::size_t i = 0; i < 3; ++i) {
    ItemDistribution point{std::vector<double>(cat.n_items, 0.0), DistributionKind::DataUnigram};
    point.weights[i] = 1.0;
    CHECK(eval_reconstruction(m, cat, point) == errs[i]);
  }
  for (const auto& dist : {u, d, cold_distributions(cat).second}) {
    std::vector<std::size_t> all(cat.n_items);
    std::iota(all.begin(), all.end(), 0);
    const auto e = item_errors(m, cat, all);
    double ref = 0;
    for (std::size_t i = 0; i < cat.n_items; ++i) ref += dist.weights[i] * e[i];
    CHECK(std::abs(eval_reconstruction(m, cat, dist) - ref) < 1e-9);
  }
  ItemDistribution empty{std::vector<double>(cat.n_items, 0.0), DistributionKind::DataUnigram};
  try {
    eval_reconstruction(m, cat, empty);
    FAIL("expected EmptySlice");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySlice);
  }
}

TEST_CASE("eval: micro perplexity") {
  CHECK(micro_ppl({id_of({3, 3}), id_of({3})}, 8) == doctest::Approx(1.0));
  CHECK(micro_ppl({id_of({0}), id_of({1})}, 2) == 2.0);
  std::vector<SemanticId> all;
  for (std::uint32_t v = 0; v < 4096; ++v) all.push_back(id_of({v}));
  CHECK(std::abs(micro_ppl(all, 4096) - 4096.0) < 1e-6);
  CHECK_THROWS_AS(micro_ppl({}, 4), Error);
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t V = 1 + rng.below(30);
    const auto ids = fixed_ids(1 + rng.below(40), 1 + rng.below(5), V, rng);
    const double p = micro_ppl(ids, V);
    CHECK(p >= 1.0 - 1e-12);
    CHECK(p <= double(V) + 1e-9);
  }
}

TEST_CASE("eval: positional perplexity and participation") {
  Rng rng(5);
  const auto fixed = fixed_ids(30, 4, 6, rng);
  const auto pf = positional_ppl(fixed, 6, 4);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(pf.participants[t] == 30);
    REQUIRE(pf.ppl[t].has_value());
    CHECK(*pf.ppl[t] >= 1.0);
    CHECK(*pf.ppl[t] <= 6.0);
  }
  const auto ones = fixed_ids(10, 1, 6, rng);
  const auto p1 = positional_ppl(ones, 6, 3);
  CHECK(p1.ppl[0].has_value());
  CHECK_FALSE(p1.ppl[1].has_value());
  CHECK_FALSE(p1.ppl[2].has_value());

  for (int rep = 0; rep < 20; ++rep) {
    std::vector<SemanticId> ids;
    for (int i = 0; i < 50; ++i) {
      const auto one = fixed_ids(1, 1 + rng.below(5), 7, rng);
      ids.push_back(one[0]);
    }
    const auto p = positional_ppl(ids, 7, 5);
    for (std::size_t t = 0; t < 5; ++t) {
      std::size_t count = 0;
      for (const auto& id : ids) count += id.length() >= t + 1;
      CHECK(p.participants[t] == count);
      CHECK(p.ppl[t].has_value() == (count > 0));
      if (p.ppl[t]) CHECK(*p.ppl[t] <= 7.0 + 1e-9);
    }
  }
}

TEST_CASE("eval: length popularity table") {
  Rng rng(6);
  const auto ids = fixed_ids(5, 3, 4, rng);
  const std::vector<std::uint64_t> pop{1, 2, 3, 4, 10};
  const auto b = length_popularity_table(ids, pop, 3);
  CHECK(b[0].count == 0);
  CHECK(b[1].count == 0);
  CHECK(b[2].count == 5);
  CHECK(b[2].mean_popularity == 4.0);
  CHECK(b[2].max_popularity == 10);

  std::vector<SemanticId> mixed;
  std::vector<std::uint64_t> pp;
  for (int i = 0; i < 100; ++i) {
    mixed.push_back(fixed_ids(1, 1 + rng.below(5), 4, rng)[0]);
    pp.push_back(rng.below(1000));
  }
  std::size_t total = 0;
  for (const auto& k : length_popularity_table(mixed, pp, 5)) total += k.count;
  CHECK(total == 100);
}

TEST_CASE("eval: average length") {
  Rng rng(7);
  const auto five = fixed_ids(6, 5, 4, rng);
  ItemDistribution any{{0.1, 0.2, 0.3, 0.1, 0.2, 0.1}, DistributionKind::DataUnigram};
  CHECK(avg_length(five, any) == doctest::Approx(5.0));
  ItemDistribution d{{0.75, 0.25}, DistributionKind::DataUnigram};
  CHECK(avg_length({id_of({1}), id_of({1, 2, 3, 0, 1})}, d) == doctest::Approx(2.0));
  std::vector<SemanticId> ids;
  double plain = 0;
  for (int i = 0; i < 10; ++i) {
    ids.push_back(fixed_ids(1, 1 + rng.below(5), 4, rng)[0]);
    plain += double(ids.back().length());
  }
  ItemDistribution u{std::vector<double>(10, 0.1), DistributionKind::CatalogUniform};
  CHECK(avg_length(ids, u) == doctest::Approx(plain / 10));
}

TEST_CASE("eval: ZLA Spearman") {
  const std::vector<std::size_t> dec{5, 4, 3, 2, 1};
  const std::vector<std::uint64_t> pop{1, 2, 3, 4, 5};
  CHECK(*zla_spearman(dec, pop) == doctest::Approx(-1.0));
  const std::vector<std::size_t> same{3, 3, 3, 3, 3};
  CHECK_FALSE(zla_spearman(same, pop).has_value());
  CHECK_THROWS_AS(zla_spearman(std::vector<std::size_t>{1, 2}, std::vector<std::uint64_t>{1, 2}), Error);

  Rng rng(8);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 3 + rng.below(200);
    std::vector<std::size_t> len(n);
    std::vector<std::uint64_t> p(n);
    std::vector<double> la(n), pa(n);
    for (std::size_t i = 0; i < n; ++i) {
      len[i] = 1 + rng.below(5);
      p[i] = rng.below(20);
      la[i] = double(len[i]);
      pa[i] = double(p[i]);
    }
    const auto r = zla_spearman(len, p);
    if (!r) continue;
    CHECK(std::abs(*r - brute_spearman(la, pa)) < 1e-12);
    if (n > 150) CHECK(std::abs(*r) < 0.3);
  }
}

TEST_CASE("eval: prefix reconstruction table") {
  const Catalog cat = small_catalog(200, 9, 0.1);
  const RKMeansIdModel m(rkmeans_fit(cat, 4, 8, 15, 2));
  const auto d = empirical_distributions(cat).second;
  const auto table = prefix_recon_table(m, cat, d);
  REQUIRE(table.size() == 4);
  for (std::size_t k = 1; k < 4; ++k) CHECK(table[k] <= table[k - 1] + 1e-12);
  CHECK(std::abs(table[3] - eval_reconstruction(m, cat, d)) < 1e-12);
  const auto train = cat.train_items();
  for (std::size_t k = 1; k <= 4; ++k) {
    const auto e = item_errors(m, cat, train, k);
    double ref = 0;
    for (std::size_t j = 0; j < train.size(); ++j) ref += d.weights[train[j]] * e[j];
    CHECK(std::abs(ref - table[k - 1]) < 1e-9);
  }
}

TEST_CASE("eval: budget statistics") {
  Rng rng(10);
  const auto ids = fixed_ids(50, 5, 8, rng);
  std::vector<std::size_t> cand(50);
  std::iota(cand.begin(), cand.end(), 0);
  std::vector<std::vector<std::size_t>> hist(7);
  for (auto& h : hist)
    for (std::size_t i = 0; i < 86 + rng.below(100); ++i) h.push_back(rng.below(50));
  const auto s = budget_stats(ids, hist, 512, cand);
  CHECK(s.l_cand == 6.0);
  CHECK(s.avg_events == 85.0);
  CHECK(s.avg_tokens == 510.0);

  const auto empty = budget_stats(ids, {}, 512, cand);
  CHECK(empty.avg_tokens == 0.0);
  CHECK(empty.avg_events == 0.0);
  CHECK(empty.l_cand == 6.0);
  const auto blank = budget_stats(ids, {{}}, 512, cand);
  CHECK(blank.avg_events == 0.0);
  CHECK_THROWS_AS(budget_stats(ids, hist, 5, cand), Error);

  // variable lengths: never over budget, whole items only, longest suffix
  std::vector<SemanticId> var;
  for (int i = 0; i < 50; ++i) var.push_back(fixed_ids(1, 1 + rng.below(5), 8, rng)[0]);
  const auto dist = ItemDistribution{std::vector<double>(50, 0.02), DistributionKind::DataUnigram};
  const auto users = synth_histories(dist, 40, 50, 300, rng);
  for (const auto& h : users) {
    const auto one = budget_stats(var, {h}, 64, cand);
    CHECK(one.avg_tokens <= 64.0);
    std::size_t used = 0, n = 0;
    for (auto it = h.rbegin(); it != h.rend() && used + var[*it].length() + 1 <= 64; ++it)
      used += var[*it].length() + 1, ++n;
    CHECK(one.avg_tokens == double(used));
    CHECK(one.avg_events == double(n));
    if (n < h.size()) CHECK(used + var[h[h.size() - 1 - n]].length() + 1 > 64);
  }
}

TEST_CASE("eval: synthetic histories follow the distribution") {
  ItemDistribution d{{0.0, 0.25, 0.75}, DistributionKind::DataUnigram};
  Rng rng(11);
  const auto h = synth_histories(d, 200, 10, 20, rng);
  std::vector<double> counts(3, 0);
  double total = 0;
  for (const auto& u : h) {
    CHECK(u.size() >= 10);
    CHECK(u.size() <= 20);
    for (auto i : u) counts[i] += 1, total += 1;
  }
  CHECK(counts[0] == 0.0);
  CHECK(counts[2] / total == doctest::Approx(0.75).epsilon(0.05));
}

TEST_CASE("eval: report on an R-KMeans model and text formats") {
  const Catalog cat = small_catalog(150, 12, 0.1);
  const RKMeansIdModel m(rkmeans_fit(cat, 5, 6, 10, 3));
  EvalOptions opt;
  opt.users = 20;
  const EvalReport r = evaluate(m, cat, opt);
  CHECK(r.e_len_catalog == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(r.e_len_data == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(r.budget.l_cand == 6.0);
  CHECK(r.budget.avg_tokens <= 512.0);
  CHECK(std::fmod(r.budget.avg_tokens, 6.0) == 0.0);
  CHECK(r.micro_ppl >= 1.0);
  CHECK(r.micro_ppl <= 6.0);
  CHECK_FALSE(r.zla_spearman.has_value());
  REQUIRE(r.recon_cold.has_value());
  std::size_t total = 0;
  for (const auto& b : r.length_buckets) total += b.count;
  CHECK(total == cat.n_items);

  const auto kv = parse_eval_report(format_eval_report(r));
  CHECK(kv.at("model") == "rkmeans");
  CHECK(std::stod(kv.at("recon")) == r.recon);
  CHECK(kv.at("zla_spearman") == "NA");
  CHECK(std::stod(kv.at("L_cand")) == 6.0);
  CHECK(kv.count("prefix_recon.5") == 1);
  CHECK_THROWS_AS(parse_eval_report("# vsid-eval v9\nrecon\t1\n"), Error);
  const std::string buckets = format_length_buckets(r.length_buckets);
  CHECK(buckets.rfind(kBucketHeader, 0) == 0);
  CHECK(std::count(buckets.begin(), buckets.end(), '\n') == 2 + 5);
}
