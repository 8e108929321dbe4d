#include "mcr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mcr {

namespace {
std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}
}  // namespace

DenseTensor::DenseTensor(std::vector<std::size_t> shape,
                         std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw std::invalid_argument("DenseTensor: empty shape");
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("DenseTensor: zero extent");
  }
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("DenseTensor: data length " +
                                std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
}

DenseTensor DenseTensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_numel(shape);
  return DenseTensor(std::move(shape), std::vector<double>(n, 0.0));
}

DenseTensor DenseTensor::full(std::vector<std::size_t> shape, double value) {
  std::size_t n = shape_numel(shape);
  return DenseTensor(std::move(shape), std::vector<double>(n, value));
}

DenseTensor DenseTensor::scalar(double value) {
  return DenseTensor({1}, {value});
}

DenseTensor DenseTensor::row_vector(std::vector<double> data) {
  std::size_t n = data.size();
  return DenseTensor({n}, std::move(data));
}

DenseTensor DenseTensor::matrix(std::size_t rows, std::size_t cols,
                                std::vector<double> data) {
  return DenseTensor({rows, cols}, std::move(data));
}

std::size_t DenseTensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape_[0];
  throw std::invalid_argument("DenseTensor::rows: rank > 2");
}

std::size_t DenseTensor::cols() const {
  if (rank() == 1) return shape_[0];
  if (rank() == 2) return shape_[1];
  throw std::invalid_argument("DenseTensor::cols: rank > 2");
}

double& DenseTensor::at(std::size_t i, std::size_t j) {
  return data_[i * cols() + j];
}

double DenseTensor::at(std::size_t i, std::size_t j) const {
  return data_[i * cols() + j];
}

bool DenseTensor::same_shape(const DenseTensor& other) const noexcept {
  return shape_ == other.shape_;
}

bool DenseTensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool DenseTensor::bit_equal(const DenseTensor& other) const noexcept {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_.data(), other.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

double DenseTensor::scalar_value() const {
  if (numel() != 1) {
    throw std::invalid_argument("scalar_value: tensor has " +
                                std::to_string(numel()) + " elements");
  }
  return data_[0];
}

DenseTensor DenseTensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (rank() != 2 || begin >= end || end > rows()) {
    throw std::invalid_argument("slice_rows: bad range on " + shape_string());
  }
  std::size_t c = cols();
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          data_.begin() + static_cast<std::ptrdiff_t>(end * c));
  return DenseTensor({end - begin, c}, std::move(out));
}

DenseTensor DenseTensor::gather_rows(std::span<const std::size_t> idx) const {
  if (rank() != 2) throw std::invalid_argument("gather_rows: rank != 2");
  std::size_t c = cols();
  std::vector<double> out;
  out.reserve(idx.size() * c);
  for (std::size_t i : idx) {
    if (i >= rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.insert(out.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * c),
               data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
  }
  return DenseTensor({idx.size(), c}, std::move(out));
}

DenseTensor DenseTensor::vstack(const DenseTensor& top,
                                const DenseTensor& bottom) {
  if (top.cols() != bottom.cols()) {
    throw std::invalid_argument("vstack: column mismatch " +
                                top.shape_string() + " vs " +
                                bottom.shape_string());
  }
  std::vector<double> out;
  out.reserve(top.numel() + bottom.numel());
  out.insert(out.end(), top.data_.begin(), top.data_.end());
  out.insert(out.end(), bottom.data_.begin(), bottom.data_.end());
  return DenseTensor({top.rows() + bottom.rows(), top.cols()}, std::move(out));
}

DenseTensor DenseTensor::hstack(const DenseTensor& left,
                                const DenseTensor& right) {
  if (left.rows() != right.rows()) {
    throw std::invalid_argument("hstack: row mismatch " + left.shape_string() +
                                " vs " + right.shape_string());
  }
  std::size_t r = left.rows(), cl = left.cols(), cr = right.cols();
  std::vector<double> out(r * (cl + cr));
  for (std::size_t i = 0; i < r; ++i) {
    std::memcpy(&out[i * (cl + cr)], left.raw() + i * cl, cl * sizeof(double));
    std::memcpy(&out[i * (cl + cr) + cl], right.raw() + i * cr,
                cr * sizeof(double));
  }
  return DenseTensor({r, cl + cr}, std::move(out));
}

std::string DenseTensor::shape_string() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << " x ";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

const DenseTensor* GradientRecord::find(int id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return &grads[i];
  }
  return nullptr;
}

}  // namespace mcr
