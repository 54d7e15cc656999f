#include "vsid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "vsid/error.hpp"

namespace vsid {

namespace {

constexpr std::size_t kEvalChunk = 512;

std::vector<std::vector<std::uint32_t>> padded_tokens(const std::vector<SemanticId>& ids,
                                                      std::size_t T) {
  std::vector<std::vector<std::uint32_t>> out(ids.size());
  for (std::size_t b = 0; b < ids.size(); ++b) {
    out[b] = ids[b].tokens;
    out[b].resize(std::max(T, out[b].size()), 0);
  }
  return out;
}

// Runs f(begin, end) over fixed chunks of [0, n); exceptions are rethrown after the loop.
template <class F>
void for_chunks(std::size_t n, F&& f) {
  const std::ptrdiff_t chunks = static_cast<std::ptrdiff_t>((n + kEvalChunk - 1) / kEvalChunk);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    try {
      const std::size_t lo = static_cast<std::size_t>(c) * kEvalChunk;
      f(lo, std::min(n, lo + kEvalChunk));
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

double token_ppl(const std::vector<std::size_t>& counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

std::vector<std::size_t> positive_items(const ItemDistribution& dist) {
  std::vector<std::size_t> items;
  for (std::size_t i = 0; i < dist.weights.size(); ++i)
    if (dist.weights[i] > 0.0) items.push_back(i);
  return items;
}

double weighted_sum(const ItemDistribution& dist, std::span<const std::size_t> items,
                    const std::vector<double>& values) {
  Vec w(items.size());
  for (std::size_t j = 0; j < items.size(); ++j) w[j] = dist.weights[items[j]];
  return w.dot(ConstVecMap(values.data(), static_cast<Eigen::Index>(values.size())));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); }

}  // namespace

// ---- model adapters ---------------------------------------------------------

DvaeIdModel::DvaeIdModel(ModelState state) : state_(std::move(state)), net_(state_.shape) {
  require(state_.kind == ModelKind::Dvae, "DvaeIdModel needs a dVAE checkpoint");
}

std::vector<SemanticId> DvaeIdModel::encode(const Mat& x) const {
  return encode_hard_batch(net_.encoder(), state_.params, x).ids();
}

std::vector<std::vector<std::uint32_t>> DvaeIdModel::encode_untruncated(const Mat& x) const {
  return encode_hard_batch(net_.encoder(), state_.params, x).tokens;
}

Mat DvaeIdModel::reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                             std::span<const std::size_t> prefix_len) const {
  return decode_hard_prefixes(net_, state_.params, tokens, prefix_len);
}

std::vector<SemanticId> RKMeansIdModel::encode(const Mat& x) const {
  return rkmeans_encode_batch(x, model_);
}

std::vector<std::vector<std::uint32_t>> RKMeansIdModel::encode_untruncated(const Mat& x) const {
  std::vector<std::vector<std::uint32_t>> out;
  for (auto& id : rkmeans_encode_batch(x, model_)) out.push_back(std::move(id.tokens));
  return out;
}

Mat RKMeansIdModel::reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                                std::span<const std::size_t> prefix_len) const {
  return rkmeans_reconstruct(model_, tokens, prefix_len);
}

ReinforceIdModel::ReinforceIdModel(ModelState state)
    : state_(std::move(state)), net_(state_.shape) {
  require(state_.kind != ModelKind::Dvae, "ReinforceIdModel needs a REINFORCE checkpoint");
}

std::string ReinforceIdModel::name() const {
  return state_.kind == ModelKind::ReinforceVarlen ? "reinforce-varlen" : "reinforce-fixed";
}

std::vector<SemanticId> ReinforceIdModel::encode(const Mat& x) const {
  return reinforce_encode_batch(state_, x);
}

std::vector<std::vector<std::uint32_t>> ReinforceIdModel::encode_untruncated(const Mat& x) const {
  return reinforce_encode_untruncated(state_, x);
}

Mat ReinforceIdModel::reconstruct(const std::vector<std::vector<std::uint32_t>>& tokens,
                                  std::span<const std::size_t> prefix_len) const {
  return decode_hard_prefixes(net_, state_.params, tokens, prefix_len);
}

std::unique_ptr<IdModel> load_id_model(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, kRKMeansMagic))
    return std::make_unique<RKMeansIdModel>(load_rkmeans(path));
  ModelState state = deserialize_checkpoint(bytes);
  if (state.kind == ModelKind::Dvae) return std::make_unique<DvaeIdModel>(std::move(state));
  return std::make_unique<ReinforceIdModel>(std::move(state));
}

// ---- metrics ----------------------------------------------------------------

std::vector<SemanticId> encode_catalog(const IdModel& model, const Catalog& catalog) {
  std::vector<SemanticId> ids(catalog.n_items);
  for_chunks(catalog.n_items, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> items(hi - lo);
    std::iota(items.begin(), items.end(), lo);
    auto chunk = model.encode(catalog.rows(items));
    for (std::size_t j = 0; j < chunk.size(); ++j) ids[lo + j] = std::move(chunk[j]);
  });
  return ids;
}

std::vector<double> item_errors(const IdModel& model, const Catalog& catalog,
                                std::span<const std::size_t> items, std::size_t k) {
  require(k <= model.max_length(), "prefix length exceeds the model's maximum length");
  std::vector<double> err(items.size());
  for_chunks(items.size(), [&](std::size_t lo, std::size_t hi) {
    const Mat x = catalog.rows(items.subspan(lo, hi - lo));
    std::vector<std::vector<std::uint32_t>> tokens;
    std::vector<std::size_t> len(hi - lo, k);
    if (k == 0) {
      const auto ids = model.encode(x);
      for (std::size_t j = 0; j < ids.size(); ++j) len[j] = ids[j].length();
      tokens = padded_tokens(ids, model.max_length());
    } else {
      tokens = model.encode_untruncated(x);
    }
    const Mat xhat = model.reconstruct(tokens, len);
    for (Eigen::Index b = 0; b < x.rows(); ++b)
      err[lo + static_cast<std::size_t>(b)] = (x.row(b) - xhat.row(b)).squaredNorm();
  });
  return err;
}

double eval_reconstruction(const IdModel& model, const Catalog& catalog,
                           const ItemDistribution& dist) {
  require(dist.weights.size() == catalog.n_items, "distribution does not match the catalog");
  const auto items = positive_items(dist);
  if (items.empty()) throw Error(ErrorCode::EmptySlice, "no items with positive weight");
  return weighted_sum(dist, items, item_errors(model, catalog, items));
}

double micro_ppl(const std::vector<SemanticId>& ids, std::size_t vocab) {
  std::vector<std::size_t> counts(vocab, 0);
  std::size_t total = 0;
  for (const auto& id : ids)
    for (std::uint32_t t : id.tokens) {
      require(t < vocab, "token outside the vocabulary");
      ++counts[t];
      ++total;
    }
  require(total > 0, "micro_ppl needs at least one token");
  return token_ppl(counts);
}

PositionalPpl positional_ppl(const std::vector<SemanticId>& ids, std::size_t vocab,
                             std::size_t max_len) {
  PositionalPpl out;
  out.ppl.resize(max_len);
  out.participants.assign(max_len, 0);
  for (std::size_t t = 0; t < max_len; ++t) {
    std::vector<std::size_t> counts(vocab, 0);
    for (const auto& id : ids) {
      if (id.length() <= t) continue;
      require(id.tokens[t] < vocab, "token outside the vocabulary");
      ++counts[id.tokens[t]];
      ++out.participants[t];
    }
    if (out.participants[t] > 0) out.ppl[t] = token_ppl(counts);
  }
  return out;
}

std::vector<LengthBucket> length_popularity_table(const std::vector<SemanticId>& ids,
                                                  std::span<const std::uint64_t> popularity,
                                                  std::size_t max_len) {
  require(ids.size() == popularity.size(), "ids must be aligned with the catalog");
  std::vector<LengthBucket> buckets(max_len);
  std::vector<double> sums(max_len, 0.0);
  for (std::size_t l = 0; l < max_len; ++l) buckets[l].length = l + 1;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t L = ids[i].length();
    require(L >= 1 && L <= max_len, "semantic ID length out of range");
    auto& b = buckets[L - 1];
    ++b.count;
    sums[L - 1] += static_cast<double>(popularity[i]);
    b.max_popularity = std::max(b.max_popularity, popularity[i]);
  }
  for (std::size_t l = 0; l < max_len; ++l)
    if (buckets[l].count > 0) buckets[l].mean_popularity = sums[l] / buckets[l].count;
  return buckets;
}

double avg_length(const std::vector<SemanticId>& ids, const ItemDistribution& dist) {
  require(ids.size() == dist.weights.size(), "ids must be aligned with the distribution");
  double s = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i)
    s += dist.weights[i] * static_cast<double>(ids[i].length());
  return s;
}

std::optional<double> zla_spearman(std::span<const std::size_t> lengths,
                                   std::span<const std::uint64_t> popularity) {
  require(lengths.size() == popularity.size(), "lengths and popularity differ in size");
  require(lengths.size() >= 3, "zla_spearman needs at least 3 items");
  std::vector<double> l(lengths.begin(), lengths.end());
  std::vector<double> p(popularity.begin(), popularity.end());
  const auto rl = average_ranks(l);
  const auto rp = average_ranks(p);
  const double n = static_cast<double>(rl.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rl.size(); ++i) {
    sxy += (rl[i] - mean) * (rp[i] - mean);
    sxx += (rl[i] - mean) * (rl[i] - mean);
    syy += (rp[i] - mean) * (rp[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;  // DegenerateRanks
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> prefix_recon_table(const IdModel& model, const Catalog& catalog,
                                       const ItemDistribution& dist) {
  require(dist.weights.size() == catalog.n_items, "distribution does not match the catalog");
  const auto items = positive_items(dist);
  if (items.empty()) throw Error(ErrorCode::EmptySlice, "no items with positive weight");
  std::vector<double> out;
  for (std::size_t k = 1; k <= model.max_length(); ++k)
    out.push_back(weighted_sum(dist, items, item_errors(model, catalog, items, k)));
  return out;
}

BudgetStats budget_stats(const std::vector<SemanticId>& ids,
                         const std::vector<std::vector<std::size_t>>& histories,
                         std::size_t budget, std::span<const std::size_t> candidates) {
  require(!candidates.empty(), "budget_stats needs at least one candidate");
  std::size_t max_cost = 0;
  for (const auto& id : ids) max_cost = std::max(max_cost, id.length() + 1);
  require(budget >= max_cost, "budget is smaller than the largest per-item cost");

  BudgetStats s;
  double len_sum = 0.0;
  for (std::size_t i : candidates) len_sum += static_cast<double>(ids.at(i).length());
  s.l_cand = 1.0 + len_sum / static_cast<double>(candidates.size());
  if (histories.empty()) return s;

  double tokens = 0.0, events = 0.0;
  for (const auto& h : histories) {
    std::size_t used = 0, n = 0;
    for (auto it = h.rbegin(); it != h.rend(); ++it) {
      const std::size_t cost = ids.at(*it).length() + 1;
      if (used + cost > budget) break;
      used += cost;
      ++n;
    }
    tokens += static_cast<double>(used);
    events += static_cast<double>(n);
  }
  s.avg_tokens = tokens / static_cast<double>(histories.size());
  s.avg_events = events / static_cast<double>(histories.size());
  return s;
}

std::vector<std::vector<std::size_t>> synth_histories(const ItemDistribution& dist,
                                                      std::size_t users, std::size_t min_len,
                                                      std::size_t max_len, Rng& rng) {
  require(min_len <= max_len, "history_min must not exceed history_max");
  const ItemSampler sampler(dist);
  std::vector<std::vector<std::size_t>> out(users);
  for (auto& h : out) {
    const std::size_t n = min_len + static_cast<std::size_t>(rng.below(max_len - min_len + 1));
    h.resize(n);
    for (auto& item : h) item = sampler(rng.uniform());
  }
  return out;
}

EvalReport evaluate(const IdModel& model, const Catalog& catalog, const EvalOptions& opt) {
  EvalReport r;
  r.model = model.name();
  r.max_len = model.max_length();
  r.vocab = model.vocab_size();

  const auto ids = encode_catalog(model, catalog);
  const auto [uniform, data] = empirical_distributions(catalog);
  r.recon = eval_reconstruction(model, catalog, data);
  r.e_len_catalog = avg_length(ids, uniform);
  r.e_len_data = avg_length(ids, data);
  if (!catalog.cold_items().empty()) {
    const auto [cu, cd] = cold_distributions(catalog);
    r.recon_cold = eval_reconstruction(model, catalog, cd);
    r.recon_cold_uniform = eval_reconstruction(model, catalog, cu);
    r.e_len_cold_catalog = avg_length(ids, cu);
    r.e_len_cold_data = avg_length(ids, cd);
  }
  r.micro_ppl = micro_ppl(ids, r.vocab);
  r.positional = positional_ppl(ids, r.vocab, r.max_len);
  r.length_buckets = length_popularity_table(ids, catalog.popularity, r.max_len);

  const auto train = catalog.train_items();
  std::vector<std::size_t> lengths;
  std::vector<std::uint64_t> pop;
  for (std::size_t i : train) {
    lengths.push_back(ids[i].length());
    pop.push_back(catalog.popularity[i]);
  }
  if (train.size() >= 3) r.zla_spearman = zla_spearman(lengths, pop);
  r.prefix_recon = prefix_recon_table(model, catalog, data);

  Rng rng(opt.seed, Stream::Eval);
  const auto histories = synth_histories(data, opt.users, opt.history_min, opt.history_max, rng);
  r.budget = budget_stats(ids, histories, opt.budget, train);
  return r;
}

std::string format_eval_report(const EvalReport& r) {
  std::ostringstream os;
  os << kEvalHeader << '\n';
  os << "model\t" << r.model << '\n';
  os << "max_len\t" << r.max_len << '\n';
  os << "vocab\t" << r.vocab << '\n';
  os << "recon\t" << fmt(r.recon) << '\n';
  os << "recon_cold\t" << fmt(r.recon_cold) << '\n';
  os << "recon_cold_uniform\t" << fmt(r.recon_cold_uniform) << '\n';
  os << "E_len_catalog\t" << fmt(r.e_len_catalog) << '\n';
  os << "E_len_data\t" << fmt(r.e_len_data) << '\n';
  os << "E_len_cold_catalog\t" << fmt(r.e_len_cold_catalog) << '\n';
  os << "E_len_cold_data\t" << fmt(r.e_len_cold_data) << '\n';
  os << "micro_ppl\t" << fmt(r.micro_ppl) << '\n';
  for (std::size_t t = 0; t < r.positional.ppl.size(); ++t) {
    os << "positional_ppl." << t + 1 << '\t' << fmt(r.positional.ppl[t]) << '\n';
    os << "positional_participants." << t + 1 << '\t' << r.positional.participants[t] << '\n';
  }
  os << "zla_spearman\t" << fmt(r.zla_spearman) << '\n';
  for (std::size_t k = 0; k < r.prefix_recon.size(); ++k)
    os << "prefix_recon." << k + 1 << '\t' << fmt(r.prefix_recon[k]) << '\n';
  os << "budget_avg_tokens\t" << fmt(r.budget.avg_tokens) << '\n';
  os << "budget_avg_events\t" << fmt(r.budget.avg_events) << '\n';
  os << "L_cand\t" << fmt(r.budget.l_cand) << '\n';
  return os.str();
}

std::string format_length_buckets(const std::vector<LengthBucket>& buckets) {
  std::ostringstream os;
  os << kBucketHeader << '\n' << "length\tcount\tmean_popularity\tmax_popularity\n";
  for (const auto& b : buckets)
    os << b.length << '\t' << b.count << '\t' << fmt(b.mean_popularity) << '\t'
       << b.max_popularity << '\n';
  return os.str();
}

std::map<std::string, std::string> parse_eval_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kEvalHeader)
    throw Error(ErrorCode::VersionMismatch, "missing or unknown eval report header");
  std::map<std::string, std::string> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "malformed report line: " + line);
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

}  // namespace vsid
