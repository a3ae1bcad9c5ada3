#include "dtkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace dtkd {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {
void check_shape(const Shape& shape) {
  require(!shape.empty(), ErrorKind::ShapeMismatch, "tensor shape must have at least one dimension");
  for (auto d : shape)
    require(d > 0, ErrorKind::ShapeMismatch, "tensor dimensions must be positive, got " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  require(shape_numel(shape_) == data_.size(), ErrorKind::ShapeMismatch,
          "shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  require(r > 0, ErrorKind::ShapeMismatch, "matrix needs at least one row");
  const std::size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, ErrorKind::ShapeMismatch, "ragged matrix rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorKind::NotScalar, "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  require(index.size() == shape_.size(), ErrorKind::IndexOutOfRange, "index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    require(i < shape_[axis], ErrorKind::IndexOutOfRange, "index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

Tensor Tensor::reshape(Shape new_shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshape(std::move(new_shape));
}

Tensor Tensor::reshape(Shape new_shape) && {
  check_shape(new_shape);
  require(shape_numel(new_shape) == data_.size(), ErrorKind::ShapeMismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(new_shape));
  Tensor out;
  out.shape_ = std::move(new_shape);
  out.data_ = std::move(data_);
  out.requires_grad_ = requires_grad_;
  out.grad_ = std::move(grad_);
  return out;
}

const std::vector<double>& Tensor::grad() const {
  require(grad_.has_value(), ErrorKind::DomainError, "tensor has no gradient");
  return *grad_;
}

std::vector<double>& Tensor::grad() {
  require(grad_.has_value(), ErrorKind::DomainError, "tensor has no gradient");
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

void Tensor::set_grad(std::vector<double> g) {
  require(g.size() == data_.size(), ErrorKind::ShapeMismatch, "gradient length does not match tensor");
  grad_ = std::move(g);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 || std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace dtkd
