#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "helpers.hpp"
#include "vsid/catalog.hpp"
#include "vsid/error.hpp"

using namespace vsid;

namespace {

std::vector<std::uint8_t> raw_catalog(std::uint32_t version = 1) {
  std::vector<std::uint8_t> b;
  auto put = [&b](const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    b.insert(b.end(), c, c + n);
  };
  put("VSID", 4);
  const std::uint32_t n = 2, d = 3;
  put(&version, 4);
  put(&n, 4);
  put(&d, 4);
  const float e[6] = {1, 2, 3, 4, 5, 6};
  put(e, sizeof e);
  const std::uint64_t pop[2] = {7, 9};
  put(pop, sizeof pop);
  const std::uint8_t cold[2] = {0, 1};
  put(cold, 2);
  return b;
}

double gini(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  double num = 0, total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    num += (2.0 * double(i + 1) - double(v.size()) - 1.0) * double(v[i]);
    total += double(v[i]);
  }
  return num / (double(v.size()) * total);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("catalog: hand-built file with 2 items of dim 3 loads as stored") {
  const Catalog c = deserialize_catalog(raw_catalog());
  CHECK(c.n_items == 2);
  CHECK(c.dim == 3);
  CHECK(c.embeddings == std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(c.popularity == std::vector<std::uint64_t>{7, 9});
  CHECK_FALSE(c.is_cold(0));
  CHECK(c.is_cold(1));
  CHECK(serialize_catalog(c) == raw_catalog());
}

TEST_CASE("catalog: format errors have distinct codes") {
  auto bytes = raw_catalog();
  bytes[0] = 'X';
  CHECK(code_of([&] { deserialize_catalog(bytes); }) == ErrorCode::BadMagic);
  CHECK(code_of([&] { deserialize_catalog(raw_catalog(2)); }) == ErrorCode::VersionMismatch);
  auto cut = raw_catalog();
  cut.pop_back();
  CHECK(code_of([&] { deserialize_catalog(cut); }) == ErrorCode::Truncated);
  CHECK(code_of([&] { load_catalog(test::temp_path("does_not_exist.vsid")); }) == ErrorCode::Io);
}

TEST_CASE("catalog: save then load is bitwise identity on a 1000-item catalog") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthOptions o;
    o.n_items = 1000;
    o.cold_fraction = 0.1;
    o.seed = seed;
    const Catalog c = synth_zipf_catalog(o);
    const auto path = test::temp_path("roundtrip.vsid");
    save_catalog(c, path);
    const Catalog back = load_catalog(path);
    CHECK(back == c);
    CHECK(std::memcmp(back.embeddings.data(), c.embeddings.data(), c.embeddings.size() * 4) == 0);
  }
}

TEST_CASE("catalog: normalize_embeddings") {
  Catalog c;
  c.n_items = 2;
  c.dim = 2;
  c.embeddings = {3, 4, 0.6f, 0.8f};
  c.popularity = {1, 1};
  c.cold = {0, 0};
  const Catalog n = normalize_embeddings(c);
  CHECK(n.embeddings[0] == doctest::Approx(0.6));
  CHECK(n.embeddings[1] == doctest::Approx(0.8));
  CHECK(n.embeddings[2] == c.embeddings[2]);
  CHECK(n.embeddings[3] == c.embeddings[3]);

  c.embeddings = {1, 0, 0, 0};
  try {
    normalize_embeddings(c);
    FAIL("expected ZeroEmbedding");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroEmbedding);
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("catalog: synthetic rows are unit norm and synthesis is deterministic") {
  SynthOptions o;
  o.n_items = 300;
  o.n_clusters = 7;
  o.seed = 11;
  const Catalog a = synth_zipf_catalog(o);
  CHECK(a == synth_zipf_catalog(o));
  const Mat x = a.all_rows();
  for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(x.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));
  o.seed = 12;
  CHECK_FALSE(a == synth_zipf_catalog(o));
}

TEST_CASE("catalog: zipf shares") {
  const auto s = zipf_shares(2, 1.0);
  CHECK(s[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("catalog: exponent 0 gives uniform popularity within 3 sigma") {
  SynthOptions o;
  o.n_items = 500;
  o.zipf_exponent = 0.0;
  o.interactions_per_item = 200;
  o.seed = 5;
  const Catalog c = synth_zipf_catalog(o);
  const double total = std::accumulate(c.popularity.begin(), c.popularity.end(), 0.0);
  const double expect = total / o.n_items;
  double chi2 = 0;
  for (auto p : c.popularity) chi2 += (double(p) - expect) * (double(p) - expect) / expect;
  const double df = o.n_items - 1.0;
  CHECK(std::abs(chi2 - df) <= 3.0 * std::sqrt(2.0 * df));
}

TEST_CASE("catalog: larger exponent gives larger Gini on the same seed") {
  SynthOptions o;
  o.n_items = 1000;
  o.seed = 3;
  double prev = -1;
  for (double a : {0.0, 0.5, 1.0, 1.5}) {
    o.zipf_exponent = a;
    const double g = gini(synth_zipf_catalog(o).popularity);
    CHECK(g > prev);
    prev = g;
  }
}

TEST_CASE("catalog: cold fraction flags floor(f n) items") {
  SynthOptions o;
  o.n_items = 1000;
  o.cold_fraction = 0.1;
  const Catalog c = synth_zipf_catalog(o);
  CHECK(c.cold_items().size() == 100);
  CHECK(c.train_items().size() == 900);
}

TEST_CASE("catalog: empirical distributions") {
  Catalog c;
  c.n_items = 2;
  c.dim = 1;
  c.embeddings = {1, 1};
  c.popularity = {1, 3};
  c.cold = {0, 0};
  auto [u, d] = empirical_distributions(c);
  CHECK(d.weights[0] == doctest::Approx(0.25));
  CHECK(d.weights[1] == doctest::Approx(0.75));
  CHECK(d.kind == DistributionKind::DataUnigram);
  CHECK(u.kind == DistributionKind::CatalogUniform);

  c.n_items = 4;
  c.embeddings = {1, 1, 1, 1};
  c.popularity = {1, 2, 3, 4};
  c.cold = {0, 0, 0, 0};
  u = empirical_distributions(c).first;
  for (double w : u.weights) CHECK(w == doctest::Approx(0.25));

  c.n_items = 3;
  c.embeddings = {1, 1, 1};
  c.popularity = {1, 1, 100};
  c.cold = {0, 0, 1};
  d = empirical_distributions(c).second;
  CHECK(d.weights == std::vector<double>{0.5, 0.5, 0.0});

  c.popularity = {0, 0, 100};
  CHECK(code_of([&] { empirical_distributions(c); }) == ErrorCode::NoInteractions);
  CHECK(cold_distributions(c).second.weights[2] == 1.0);
  c.cold = {0, 0, 0};
  c.popularity = {1, 1, 1};
  CHECK(code_of([&] { cold_distributions(c); }) == ErrorCode::EmptySlice);
}

TEST_CASE("catalog: distributions sum to one and exclude cold items (random catalogs)") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthOptions o;
    o.n_items = 200;
    o.cold_fraction = 0.2;
    o.zipf_exponent = 0.3 * double(seed);
    o.seed = seed;
    const Catalog c = synth_zipf_catalog(o);
    const auto [u, d] = empirical_distributions(c);
    CHECK(std::accumulate(u.weights.begin(), u.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::accumulate(d.weights.begin(), d.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t i : c.cold_items()) {
      CHECK(u.weights[i] == 0.0);
      CHECK(d.weights[i] == 0.0);
    }
  }
}

TEST_CASE("catalog: item sampler skips zero-mass items") {
  ItemDistribution d{{0.0, 0.5, 0.0, 0.5, 0.0}, DistributionKind::DataUnigram};
  ItemSampler s(d);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto k = s(rng.uniform());
    CHECK((k == 1 || k == 3));
  }
  CHECK(s(0.0) == 1);
  CHECK(s(std::nextafter(1.0, 0.0)) == 3);
}
