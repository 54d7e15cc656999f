#pragma once

#include <filesystem>
#include <string>

#include "vsid/linalg.hpp"
#include "vsid/model.hpp"
#include "vsid/rng.hpp"

namespace vsid::test {

inline Mat random_unit_rows(std::size_t n, std::size_t dim, Rng& rng) {
  Mat x(n, dim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  x.rowwise().normalize();
  return x;
}

// Parameters away from the small init so every path carries signal.
inline ParamVector perturbed_params(const DvaeModel& m, Rng& rng, double scale = 0.3) {
  auto theta = m.init_params(rng);
  for (double& v : theta) v += scale * rng.normal();
  return theta;
}

inline std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "vsid_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline ModelShape tiny_shape(std::uint32_t vocab = 5, std::uint32_t max_len = 3) {
  return ModelShape{4, 8, vocab, max_len, 8, 2, 16};
}

}  // namespace vsid::test
