#include "vsid/linalg.hpp"

#include <cmath>

namespace vsid {

Slot ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  Slot s{size_, rows, cols};
  size_ += rows * cols;
  slots_.emplace_back(std::move(name), s);
  return s;
}

Mat rmsnorm_rows(const Mat& x, double eps) {
  Mat y(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double r = std::sqrt(x.row(i).squaredNorm() / n + eps);
    y.row(i) = x.row(i) / r;
  }
  return y;
}

Mat rmsnorm_rows_backward(const Mat& x, const Mat& dy, double eps) {
  Mat dx(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double r = std::sqrt(x.row(i).squaredNorm() / n + eps);
    const double proj = x.row(i).dot(dy.row(i));
    dx.row(i) = dy.row(i) / r - x.row(i) * (proj / (n * r * r * r));
  }
  return dx;
}

Mat softmax_rows(const Mat& logits) {
  Mat y(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    y.row(i) = (logits.row(i).array() - mx).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
  Mat dz(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const double s = y.row(i).dot(dy.row(i));
    dz.row(i) = (y.row(i).array() * (dy.row(i).array() - s)).matrix();
  }
  return dz;
}

Mat relu_squared(const Mat& x) { return x.array().max(0.0).square().matrix(); }

Mat relu_squared_backward(const Mat& x, const Mat& dy) {
  return (dy.array() * 2.0 * x.array().max(0.0)).matrix();
}

Vec row_entropy(const Mat& p) {
  Vec h(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      if (v > 0.0) acc -= v * std::log(v);
    }
    h(i) = acc;
  }
  return h;
}

}  // namespace vsid
