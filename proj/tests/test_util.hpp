#pragma once

#include <filesystem>
#include <string>

#include "lfs/rng.hpp"
#include "lfs/tensor.hpp"

namespace lfs::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0,
                            bool requires_grad = false) {
  Rng rng(seed);
  Eigen::ArrayXd data(shape_size(shape));
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = rng.uniform(lo, hi);
  return Tensor::from_array(std::move(shape), std::move(data), requires_grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  return (a.values() - b.values()).abs().maxCoeff();
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape())) return false;
  for (Eigen::Index i = 0; i < a.values().size(); ++i) {
    if (a.values()[i] != b.values()[i]) return false;
  }
  return true;
}

/// Fresh scratch directory under the build tree.
inline std::string scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "lfs_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace lfs::test
