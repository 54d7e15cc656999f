#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "vsid/linalg.hpp"

namespace vsid {

// Item universe: embeddings, interaction counts and the cold (held-out) mask.
// Immutable once built; safe to share read-only across threads.
struct Catalog {
  std::uint32_t n_items = 0;
  std::uint32_t dim = 0;
  std::vector<float> embeddings;       // n_items x dim, row-major
  std::vector<std::uint64_t> popularity;
  std::vector<std::uint8_t> cold;      // bit 0 set = held out of training

  std::span<const float> row(std::size_t i) const {
    return {embeddings.data() + i * dim, dim};
  }
  bool is_cold(std::size_t i) const { return (cold[i] & 1u) != 0; }

  // Rows `items` as a double matrix.
  Mat rows(std::span<const std::size_t> items) const;
  Mat all_rows() const;
  std::vector<std::size_t> train_items() const;
  std::vector<std::size_t> cold_items() const;

  friend bool operator==(const Catalog&, const Catalog&) = default;
};

enum class DistributionKind { CatalogUniform, DataUnigram };

struct ItemDistribution {
  std::vector<double> weights;  // one per catalog item, sums to 1
  DistributionKind kind = DistributionKind::CatalogUniform;
};

inline constexpr char kCatalogMagic[4] = {'V', 'S', 'I', 'D'};
inline constexpr std::uint32_t kCatalogVersion = 1;

void save_catalog(const Catalog& c, const std::filesystem::path& path);
Catalog load_catalog(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_catalog(const Catalog& c);
Catalog deserialize_catalog(std::span<const std::uint8_t> bytes);

// Divides each row by its Euclidean norm. Throws ZeroEmbedding naming the row.
Catalog normalize_embeddings(Catalog c);

struct SynthOptions {
  std::uint32_t n_items = 1000;
  std::uint32_t dim = 16;
  double zipf_exponent = 1.0;
  std::uint32_t n_clusters = 10;
  double cold_fraction = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t interactions_per_item = 100;
  double noise = 0.1;  // per-coordinate std of the within-cluster scatter
  // Weight in [0, 1] of a shared per-cluster appeal in the popularity ranking;
  // 0 gives a random permutation, 1 ranks whole clusters together.
  double cluster_popularity = 0.0;
};

// Expected popularity share of rank r (0-based) under exponent a: (r+1)^-a normalized.
std::vector<double> zipf_shares(std::size_t n, double exponent);

// Cluster-structured unit embeddings with Zipfian popularity counts.
Catalog synth_zipf_catalog(const SynthOptions& opt);

// (catalog-uniform, data-unigram) over non-cold items; cold items get weight 0.
std::pair<ItemDistribution, ItemDistribution> empirical_distributions(const Catalog& c);
// Same pair restricted to cold items, data weights from the held-out ledger.
std::pair<ItemDistribution, ItemDistribution> cold_distributions(const Catalog& c);

// Inverse-CDF sampler over a discrete distribution.
class ItemSampler {
 public:
  explicit ItemSampler(const ItemDistribution& dist);
  // Maps u in [0, 1) to an item index.
  std::size_t operator()(double u) const;

 private:
  std::vector<double> cdf_;
};

}  // namespace vsid
