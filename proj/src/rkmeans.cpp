#include <algorithm>
#include <cstring>
#include <limits>

#include "binary_io.hpp"
#include "vsid/baselines.hpp"
#include "vsid/error.hpp"

namespace vsid {

namespace {

double squared_distance(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index j) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < a.cols(); ++d) {
    const double diff = a(i, d) - b(j, d);
    acc += diff * diff;
  }
  return acc;
}

std::uint32_t nearest(const Mat& points, Eigen::Index i, const Mat& centroids, double* best_out) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = squared_distance(points, i, centroids, k);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

// float32 storage round-trips exactly through the model file.
void round_to_float(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(m.data()[i]);
}

}  // namespace

std::vector<std::uint32_t> assign_nearest(const Mat& points, const Mat& centroids) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(points.rows()));
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out[static_cast<std::size_t>(i)] = nearest(points, i, centroids, nullptr);
  return out;
}

std::vector<std::uint32_t> assign_nearest_serial(const Mat& points, const Mat& centroids) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out[static_cast<std::size_t>(i)] = nearest(points, i, centroids, nullptr);
  return out;
}

Mat kmeans_fit(const Mat& points, std::size_t k, std::size_t iters, Rng& rng, KMeansTrace* trace) {
  const Eigen::Index n = points.rows();
  require(k >= 1 && static_cast<Eigen::Index>(k) <= n, "k-means needs 1 <= k <= n points");
  const auto K = static_cast<Eigen::Index>(k);
  Mat centroids(K, points.cols());

  // k-means++ seeding
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  for (Eigen::Index c = 0; c < K; ++c) {
    centroids.row(c) = points.row(pick);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& di = d2[static_cast<std::size_t>(i)];
      di = std::min(di, squared_distance(points, i, centroids, c));
      total += di;
    }
    if (c + 1 == K) break;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      continue;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = n - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += d2[static_cast<std::size_t>(i)];
      if (acc > target && d2[static_cast<std::size_t>(i)] > 0.0) {
        pick = i;
        break;
      }
    }
  }

  std::vector<std::uint32_t> assign;
  for (std::size_t sweep = 0; sweep < std::max<std::size_t>(iters, 1); ++sweep) {
    auto next = assign_nearest(points, centroids);
    double objective = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      objective += squared_distance(points, i, centroids, next[static_cast<std::size_t>(i)]);
    if (trace) trace->objective.push_back(objective);
    const bool converged = next == assign;
    assign = std::move(next);

    Mat sums = Mat::Zero(K, points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[assign[static_cast<std::size_t>(i)]];
    }
    for (Eigen::Index c = 0; c < K; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = squared_distance(points, i, centroids, assign[static_cast<std::size_t>(i)]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids.row(c) = points.row(far);
      if (trace) ++trace->reseeded;
    }
    if (converged) break;
  }
  return centroids;
}

RKMeansModel rkmeans_fit(const Catalog& catalog, std::uint32_t max_len, std::uint32_t vocab,
                         std::size_t iters, std::uint64_t seed, std::vector<KMeansTrace>* traces) {
  const auto train = catalog.train_items();
  require(max_len >= 1, "max_len must be >= 1");
  require(vocab >= 1 && vocab <= train.size(), "R-KMeans needs 1 <= V <= number of train items");
  RKMeansModel model;
  model.max_len = max_len;
  model.vocab = vocab;
  model.dim = catalog.dim;
  Rng rng(seed, Stream::Init);
  Mat residual = catalog.rows(train);
  for (std::uint32_t t = 0; t < max_len; ++t) {
    KMeansTrace trace;
    Mat c = kmeans_fit(residual, vocab, iters, rng, &trace);
    round_to_float(c);
    const auto assign = assign_nearest(residual, c);
    for (Eigen::Index i = 0; i < residual.rows(); ++i)
      residual.row(i) -= c.row(assign[static_cast<std::size_t>(i)]);
    model.centroids.push_back(std::move(c));
    if (traces) traces->push_back(std::move(trace));
  }
  return model;
}

std::vector<SemanticId> rkmeans_encode_batch(const Mat& x, const RKMeansModel& model) {
  require(x.cols() == Eigen::Index{model.dim}, "R-KMeans input dim mismatch");
  std::vector<SemanticId> ids(static_cast<std::size_t>(x.rows()));
  Mat residual = x;
  for (const Mat& c : model.centroids) {
    const auto assign = assign_nearest(residual, c);
    for (Eigen::Index i = 0; i < residual.rows(); ++i) {
      const auto a = assign[static_cast<std::size_t>(i)];
      ids[static_cast<std::size_t>(i)].tokens.push_back(a);
      residual.row(i) -= c.row(a);
    }
  }
  return ids;
}

SemanticId rkmeans_encode(std::span<const double> x, const RKMeansModel& model) {
  Mat xm = ConstVecMap(x.data(), static_cast<Eigen::Index>(x.size())).transpose();
  return rkmeans_encode_batch(xm, model).front();
}

Mat rkmeans_reconstruct(const RKMeansModel& model,
                        const std::vector<std::vector<std::uint32_t>>& tokens,
                        std::span<const std::size_t> prefix_len) {
  require(tokens.size() == prefix_len.size(), "one prefix length per row");
  Mat out = Mat::Zero(static_cast<Eigen::Index>(tokens.size()), model.dim);
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    require(prefix_len[b] >= 1 && prefix_len[b] <= tokens[b].size(), "prefix out of range");
    for (std::size_t t = 0; t < prefix_len[b]; ++t)
      out.row(static_cast<Eigen::Index>(b)) += model.centroids[t].row(tokens[b][t]);
  }
  return out;
}

void save_rkmeans(const RKMeansModel& model, const std::filesystem::path& path) {
  io::Writer out;
  out.put_bytes(kRKMeansMagic, 4);
  out.put(kRKMeansVersion);
  out.put(model.max_len);
  out.put(model.vocab);
  out.put(model.dim);
  for (const Mat& c : model.centroids)
    for (Eigen::Index i = 0; i < c.size(); ++i) out.put(static_cast<float>(c.data()[i]));
  io::write_file(path, out.bytes());
}

RKMeansModel load_rkmeans(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::Reader in(bytes, ErrorCode::Truncated);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kRKMeansMagic, 4) != 0) throw Error(ErrorCode::BadMagic, "not a VSKM model");
  const auto version = in.get<std::uint32_t>();
  if (version != kRKMeansVersion)
    throw Error(ErrorCode::VersionMismatch, "R-KMeans version " + std::to_string(version));
  RKMeansModel m;
  m.max_len = in.get<std::uint32_t>();
  m.vocab = in.get<std::uint32_t>();
  m.dim = in.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < m.max_len; ++t) {
    const auto values = in.get_array<float>(std::size_t{m.vocab} * m.dim);
    Mat c(m.vocab, m.dim);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = values[static_cast<std::size_t>(i)];
    m.centroids.push_back(std::move(c));
  }
  return m;
}

}  // namespace vsid
