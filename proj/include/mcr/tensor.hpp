#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mcr {

/// Dense row-major tensor of 64-bit reals with explicit shape metadata.
/// Rank 1 tensors are vectors, rank 2 are matrices; scalars use shape {1}.
class DenseTensor {
 public:
  DenseTensor() = default;
  DenseTensor(std::vector<std::size_t> shape, std::vector<double> data);

  static DenseTensor zeros(std::vector<std::size_t> shape);
  static DenseTensor full(std::vector<std::size_t> shape, double value);
  static DenseTensor scalar(double value);
  static DenseTensor row_vector(std::vector<double> data);
  static DenseTensor matrix(std::size_t rows, std::size_t cols,
                            std::vector<double> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }

  // 2-D accessors; a rank-1 tensor of length d is treated as a 1 x d row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  bool same_shape(const DenseTensor& other) const noexcept;
  bool all_finite() const noexcept;
  bool bit_equal(const DenseTensor& other) const noexcept;

  /// Scalar value of a single-element tensor; throws otherwise.
  double scalar_value() const;

  /// Rows [begin, end) of a 2-D tensor as a new tensor.
  DenseTensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Rows picked by index list, in order (with repetition allowed).
  DenseTensor gather_rows(std::span<const std::size_t> idx) const;
  /// Stack rows of `top` over rows of `bottom` (equal column counts).
  static DenseTensor vstack(const DenseTensor& top, const DenseTensor& bottom);
  /// Concatenate columns of two tensors with equal row counts.
  static DenseTensor hstack(const DenseTensor& left, const DenseTensor& right);

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Maps parameter leaf ids to their gradient tensors.
struct GradientRecord {
  std::vector<int> ids;
  std::vector<DenseTensor> grads;

  const DenseTensor* find(int id) const;
};

}  // namespace mcr
