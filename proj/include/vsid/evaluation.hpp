#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vsid/baselines.hpp"
#include "vsid/catalog.hpp"
#include "vsid/encoder.hpp"
#include "vsid/trainer.hpp"

namespace vsid {

// Anything that turns embeddings into semantic IDs and IDs back into embeddings.
class IdModel {
 public:
  virtual ~IdModel() = default;
  virtual std::string name() const = 0;
  virtual std::size_t max_length() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<SemanticId> encode(const Mat& x) const = 0;
  // T tokens per row, ignoring the model's own stopping decision.
  virtual std::vector<std::vector<std::uint32_t>> encode_untruncated(const Mat& x) const = 0;
  // Reconstruction from the first prefix_len[b] tokens of row b.
  virtual Mat reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                          std::span<const std::size_t> prefix_len) const = 0;
};

class DvaeIdModel final : public IdModel {
 public:
  explicit DvaeIdModel(ModelState state);
  std::string name() const override { return "dvae"; }
  std::size_t max_length() const override { return state_.shape.max_len; }
  std::size_t vocab_size() const override { return state_.shape.vocab; }
  std::vector<SemanticId> encode(const Mat& x) const override;
  std::vector<std::vector<std::uint32_t>> encode_untruncated(const Mat& x) const override;
  Mat reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                  std::span<const std::size_t> prefix_len) const override;

 private:
  ModelState state_;
  DvaeModel net_;
};

class RKMeansIdModel final : public IdModel {
 public:
  explicit RKMeansIdModel(RKMeansModel model) : model_(std::move(model)) {}
  std::string name() const override { return "rkmeans"; }
  std::size_t max_length() const override { return model_.max_len; }
  std::size_t vocab_size() const override { return model_.vocab; }
  std::vector<SemanticId> encode(const Mat& x) const override;
  std::vector<std::vector<std::uint32_t>> encode_untruncated(const Mat& x) const override;
  Mat reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                  std::span<const std::size_t> prefix_len) const override;

 private:
  RKMeansModel model_;
};

class ReinforceIdModel final : public IdModel {
 public:
  explicit ReinforceIdModel(ModelState state);
  std::string name() const override;
  std::size_t max_length() const override { return state_.shape.max_len; }
  // Includes the EOS symbol in varlen mode.
  std::size_t vocab_size() const override { return state_.shape.vocab; }
  std::vector<SemanticId> encode(const Mat& x) const override;
  std::vector<std::vector<std::uint32_t>> encode_untruncated(const Mat& x) const override;
  Mat reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                  std::span<const std::size_t> prefix_len) const override;

 private:
  ModelState state_;
  DvaeModel net_;
};

// Opens a VSCK checkpoint (dVAE or REINFORCE) or a VSKM R-KMeans file.
std::unique_ptr<IdModel> load_id_model(const std::filesystem::path& path);

// Semantic IDs for every catalog item, encoded in fixed-size chunks.
std::vector<SemanticId> encode_catalog(const IdModel& model, const Catalog& catalog);

// Reconstruction error of each listed item from its own ID (or from a fixed
// prefix length k when k > 0, ignoring the model's stop).
std::vector<double> item_errors(const IdModel& model, const Catalog& catalog,
                                std::span<const std::size_t> items, std::size_t k = 0);

// Weighted mean over items with positive weight. Throws EmptySlice if none.
double eval_reconstruction(const IdModel& model, const Catalog& catalog,
                           const ItemDistribution& dist);

double micro_ppl(const std::vector<SemanticId>& ids, std::size_t vocab);

struct PositionalPpl {
  std::vector<std::optional<double>> ppl;  // absent where no item reaches the position
  std::vector<std::size_t> participants;   // |{i : L_i >= t}|
};
PositionalPpl positional_ppl(const std::vector<SemanticId>& ids, std::size_t vocab,
                             std::size_t max_len);

struct LengthBucket {
  std::size_t length = 0;
  std::size_t count = 0;
  double mean_popularity = 0.0;
  std::uint64_t max_popularity = 0;
};
// ids[i] belongs to the item with popularity[i].
std::vector<LengthBucket> length_popularity_table(const std::vector<SemanticId>& ids,
                                                  std::span<const std::uint64_t> popularity,
                                                  std::size_t max_len);

// sum_i dist[i] * L_i, ids aligned with dist.
double avg_length(const std::vector<SemanticId>& ids, const ItemDistribution& dist);

// Spearman correlation (average ranks on ties) between popularity and length.
// Returns nullopt when all lengths are equal.
std::optional<double> zla_spearman(std::span<const std::size_t> lengths,
                                   std::span<const std::uint64_t> popularity);

// Dist-weighted error decoding each item's first k tokens, k = 1..T.
std::vector<double> prefix_recon_table(const IdModel& model, const Catalog& catalog,
                                       const ItemDistribution& dist);

struct BudgetStats {
  double avg_tokens = 0.0;
  double avg_events = 0.0;
  double l_cand = 0.0;
};
// Each event costs L_i + 1 tokens (ID plus a unique-identifier token). For every
// history the longest suffix fitting the budget is kept. ids are indexed by item;
// `candidates` lists the items whose mean length defines L_cand.
BudgetStats budget_stats(const std::vector<SemanticId>& ids,
                         const std::vector<std::vector<std::size_t>>& histories,
                         std::size_t budget, std::span<const std::size_t> candidates);

// i.i.d. item sequences drawn from dist, lengths uniform in [min_len, max_len].
std::vector<std::vector<std::size_t>> synth_histories(const ItemDistribution& dist,
                                                      std::size_t users, std::size_t min_len,
                                                      std::size_t max_len, Rng& rng);

struct EvalOptions {
  std::size_t users = 1000;
  std::size_t history_min = 100;
  std::size_t history_max = 400;
  std::size_t budget = 512;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::string model;
  std::size_t max_len = 0;
  std::size_t vocab = 0;
  double recon = 0.0;
  std::optional<double> recon_cold;          // cold slice, data-weighted
  std::optional<double> recon_cold_uniform;  // cold slice, catalog-uniform
  double e_len_catalog = 0.0;
  double e_len_data = 0.0;
  std::optional<double> e_len_cold_catalog;
  std::optional<double> e_len_cold_data;
  double micro_ppl = 0.0;
  PositionalPpl positional;
  std::vector<LengthBucket> length_buckets;
  std::optional<double> zla_spearman;
  std::vector<double> prefix_recon;
  BudgetStats budget;
};

EvalReport evaluate(const IdModel& model, const Catalog& catalog, const EvalOptions& opt);

inline constexpr const char* kEvalHeader = "# vsid-eval v1";
inline constexpr const char* kBucketHeader = "# vsid-buckets v1";
// `metric<TAB>value` lines; absent values are written as `NA`.
std::string format_eval_report(const EvalReport& r);
// `length<TAB>count<TAB>mean_popularity<TAB>max_popularity` rows.
std::string format_length_buckets(const std::vector<LengthBucket>& buckets);
std::map<std::string, std::string> parse_eval_report(const std::string& text);

}  // namespace vsid
