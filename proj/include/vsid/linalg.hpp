#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vsid {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

inline constexpr double kRmsEps = 1e-8;

// Vectorized reductions split off a head that depends on the address, so a
// buffer's alignment can change the summation order. Parameter and gradient
// storage is always 64-byte aligned to keep runs reproducible.
template <class T>
struct CacheAlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  CacheAlignedAllocator() = default;
  template <class U>
  CacheAlignedAllocator(const CacheAlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  friend bool operator==(const CacheAlignedAllocator&, const CacheAlignedAllocator<U>&) {
    return true;
  }
};
using ParamVector = std::vector<double, CacheAlignedAllocator<double>>;

// A named rows x cols block inside a flat parameter vector.
struct Slot {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Assigns consecutive offsets; every model's parameters live in one flat vector so
// the optimizer, checkpointing and gradient checks treat them uniformly.
class ParamLayout {
 public:
  Slot add(std::string name, std::size_t rows, std::size_t cols);
  std::size_t size() const { return size_; }
  const std::vector<std::pair<std::string, Slot>>& slots() const { return slots_; }

 private:
  std::size_t size_ = 0;
  std::vector<std::pair<std::string, Slot>> slots_;
};

inline MatMap view(double* base, const Slot& s) {
  return MatMap(base + s.offset, static_cast<Eigen::Index>(s.rows),
                static_cast<Eigen::Index>(s.cols));
}
inline ConstMatMap view(const double* base, const Slot& s) {
  return ConstMatMap(base + s.offset, static_cast<Eigen::Index>(s.rows),
                     static_cast<Eigen::Index>(s.cols));
}

// Row-wise parameter-free RMSNorm: y = x / sqrt(mean(x^2) + eps).
Mat rmsnorm_rows(const Mat& x, double eps = kRmsEps);
// Given x and dL/dy, returns dL/dx for rmsnorm_rows.
Mat rmsnorm_rows_backward(const Mat& x, const Mat& dy, double eps = kRmsEps);

Mat softmax_rows(const Mat& logits);
// Given y = softmax(z) and dL/dy, returns dL/dz.
Mat softmax_rows_backward(const Mat& y, const Mat& dy);

// max(0, x)^2 and its derivative factor 2 max(0, x).
Mat relu_squared(const Mat& x);
Mat relu_squared_backward(const Mat& x, const Mat& dy);

// Entropy of each row of a probability matrix (0 log 0 = 0).
Vec row_entropy(const Mat& p);

}  // namespace vsid
