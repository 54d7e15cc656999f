#include "vsid/catalog.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "binary_io.hpp"
#include "vsid/error.hpp"
#include "vsid/rng.hpp"

namespace vsid {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written as host little-endian");

Mat Catalog::rows(std::span<const std::size_t> items) const {
  Mat out(static_cast<Eigen::Index>(items.size()), dim);
  for (std::size_t r = 0; r < items.size(); ++r) {
    const auto src = row(items[r]);
    for (std::uint32_t j = 0; j < dim; ++j) out(static_cast<Eigen::Index>(r), j) = src[j];
  }
  return out;
}

Mat Catalog::all_rows() const {
  std::vector<std::size_t> all(n_items);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return rows(all);
}

std::vector<std::size_t> Catalog::train_items() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_items; ++i)
    if (!is_cold(i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> Catalog::cold_items() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_items; ++i)
    if (is_cold(i)) out.push_back(i);
  return out;
}

std::vector<std::uint8_t> serialize_catalog(const Catalog& c) {
  require(c.embeddings.size() == std::size_t{c.n_items} * c.dim, "embedding size mismatch");
  require(c.popularity.size() == c.n_items && c.cold.size() == c.n_items,
          "per-item array size mismatch");
  io::Writer out;
  out.put_bytes(kCatalogMagic, 4);
  out.put(kCatalogVersion);
  out.put(c.n_items);
  out.put(c.dim);
  out.put_array(std::span<const float>(c.embeddings));
  out.put_array(std::span<const std::uint64_t>(c.popularity));
  out.put_array(std::span<const std::uint8_t>(c.cold));
  return std::move(out.bytes());
}

Catalog deserialize_catalog(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes, ErrorCode::Truncated);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kCatalogMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "not a VSID catalog");
  const auto version = in.get<std::uint32_t>();
  if (version != kCatalogVersion)
    throw Error(ErrorCode::VersionMismatch, "catalog version " + std::to_string(version));
  Catalog c;
  c.n_items = in.get<std::uint32_t>();
  c.dim = in.get<std::uint32_t>();
  const std::size_t n = c.n_items;
  c.embeddings = in.get_array<float>(n * c.dim);
  c.popularity = in.get_array<std::uint64_t>(n);
  c.cold = in.get_array<std::uint8_t>(n);
  return c;
}

void save_catalog(const Catalog& c, const std::filesystem::path& path) {
  io::write_file(path, serialize_catalog(c));
}

Catalog load_catalog(const std::filesystem::path& path) {
  return deserialize_catalog(io::read_file(path));
}

Catalog normalize_embeddings(Catalog c) {
  for (std::size_t i = 0; i < c.n_items; ++i) {
    float* r = c.embeddings.data() + i * c.dim;
    double ss = 0.0;
    for (std::uint32_t j = 0; j < c.dim; ++j) ss += double{r[j]} * r[j];
    if (ss == 0.0)
      throw Error(ErrorCode::ZeroEmbedding, "row " + std::to_string(i) + " has zero norm");
    const double norm = std::sqrt(ss);
    for (std::uint32_t j = 0; j < c.dim; ++j) r[j] = static_cast<float>(r[j] / norm);
  }
  return c;
}

std::vector<double> zipf_shares(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = std::pow(static_cast<double>(r + 1), -exponent);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

Catalog synth_zipf_catalog(const SynthOptions& opt) {
  require(opt.n_items >= 1 && opt.dim >= 1, "n_items and dim must be positive");
  require(opt.n_clusters >= 1 && opt.n_clusters <= opt.n_items, "need 1 <= n_clusters <= n_items");
  require(opt.zipf_exponent >= 0.0, "zipf exponent must be >= 0");
  require(opt.cold_fraction >= 0.0 && opt.cold_fraction < 1.0, "cold fraction must be in [0, 1)");
  require(opt.cluster_popularity >= 0.0 && opt.cluster_popularity <= 1.0,
          "cluster popularity weight must be in [0, 1]");

  Rng rng(opt.seed, Stream::Synth);
  Catalog c;
  c.n_items = opt.n_items;
  c.dim = opt.dim;

  Mat centers(opt.n_clusters, opt.dim);
  for (Eigen::Index k = 0; k < centers.rows(); ++k) {
    do {
      for (Eigen::Index j = 0; j < centers.cols(); ++j) centers(k, j) = rng.normal();
    } while (centers.row(k).norm() == 0.0);
    centers.row(k).normalize();
  }

  c.embeddings.resize(std::size_t{opt.n_items} * opt.dim);
  std::vector<std::size_t> cluster_of(opt.n_items);
  for (std::size_t i = 0; i < opt.n_items; ++i) {
    // The first n_clusters items seed every cluster; the rest pick uniformly.
    const std::size_t k = i < opt.n_clusters ? i : rng.below(opt.n_clusters);
    cluster_of[i] = k;
    RowVec e(opt.dim);
    do {
      for (std::uint32_t j = 0; j < opt.dim; ++j)
        e(j) = centers(static_cast<Eigen::Index>(k), j) + opt.noise * rng.normal();
    } while (e.norm() == 0.0);
    e.normalize();
    for (std::uint32_t j = 0; j < opt.dim; ++j)
      c.embeddings[i * opt.dim + j] = static_cast<float>(e(j));
  }

  // Rank by a noisy appeal score; the cluster part is shared by all members.
  std::vector<double> appeal(opt.n_clusters);
  for (double& a : appeal) a = rng.normal();
  const double wc = std::sqrt(opt.cluster_popularity);
  const double wi = std::sqrt(1.0 - opt.cluster_popularity);
  std::vector<double> score(opt.n_items);
  for (std::size_t i = 0; i < opt.n_items; ++i) score[i] = wc * appeal[cluster_of[i]] + wi * rng.normal();
  std::vector<std::size_t> by_rank(opt.n_items);
  std::iota(by_rank.begin(), by_rank.end(), std::size_t{0});
  std::stable_sort(by_rank.begin(), by_rank.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  ItemDistribution rank_dist{zipf_shares(opt.n_items, opt.zipf_exponent),
                             DistributionKind::DataUnigram};
  ItemSampler sampler(rank_dist);
  c.popularity.assign(opt.n_items, 0);
  const std::uint64_t draws = opt.interactions_per_item * opt.n_items;
  for (std::uint64_t d = 0; d < draws; ++d) ++c.popularity[by_rank[sampler(rng.uniform())]];

  c.cold.assign(opt.n_items, 0);
  const auto n_cold = static_cast<std::size_t>(std::floor(opt.cold_fraction * opt.n_items));
  std::vector<std::size_t> order(opt.n_items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < n_cold; ++i) {
    std::swap(order[i], order[i + rng.below(opt.n_items - i)]);
    c.cold[order[i]] = 1;
  }
  return c;
}

namespace {

std::pair<ItemDistribution, ItemDistribution> slice_distributions(const Catalog& c,
                                                                  bool want_cold) {
  ItemDistribution uniform{std::vector<double>(c.n_items, 0.0), DistributionKind::CatalogUniform};
  ItemDistribution data{std::vector<double>(c.n_items, 0.0), DistributionKind::DataUnigram};
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < c.n_items; ++i) {
    if (c.is_cold(i) != want_cold) continue;
    ++count;
    total += static_cast<double>(c.popularity[i]);
  }
  if (count == 0) throw Error(ErrorCode::EmptySlice, want_cold ? "no cold items" : "no train items");
  if (total == 0.0) throw Error(ErrorCode::NoInteractions, "slice has zero total popularity");
  for (std::size_t i = 0; i < c.n_items; ++i) {
    if (c.is_cold(i) != want_cold) continue;
    uniform.weights[i] = 1.0 / static_cast<double>(count);
    data.weights[i] = static_cast<double>(c.popularity[i]) / total;
  }
  return {std::move(uniform), std::move(data)};
}

}  // namespace

std::pair<ItemDistribution, ItemDistribution> empirical_distributions(const Catalog& c) {
  return slice_distributions(c, false);
}

std::pair<ItemDistribution, ItemDistribution> cold_distributions(const Catalog& c) {
  return slice_distributions(c, true);
}

ItemSampler::ItemSampler(const ItemDistribution& dist) : cdf_(dist.weights.size()) {
  std::partial_sum(dist.weights.begin(), dist.weights.end(), cdf_.begin());
  require(!cdf_.empty() && cdf_.back() > 0.0, "sampler needs positive mass");
}

std::size_t ItemSampler::operator()(double u) const {
  const double target = u * cdf_.back();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
  auto idx = static_cast<std::size_t>(it - cdf_.begin());
  if (idx >= cdf_.size()) {
    // Rounding pushed target past the end; fall back to the last item with mass.
    idx = cdf_.size() - 1;
    while (idx > 0 && cdf_[idx] == cdf_[idx - 1]) --idx;
  }
  return idx;
}

}  // namespace vsid
