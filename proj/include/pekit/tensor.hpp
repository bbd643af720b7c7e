#pragma once

// Dense row-major double tensor.  Copies are shallow (shared buffer); all
// operations in autodiff.hpp produce fresh buffers, so tensors are treated as
// immutable once they participate in a recorded graph.

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pekit {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

class Tape;  // defined in autodiff.hpp

class Tensor {
 public:
  Tensor() : shape_{0}, data_(std::make_shared<std::vector<double>>()) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    check_shape();
    if (static_cast<std::int64_t>(data_->size()) != shape_numel(shape_)) {
      throw std::invalid_argument("tensor: value count " +
                                  std::to_string(data_->size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_.at(i); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_->size()); }

  const double* data() const { return data_->data(); }
  const std::vector<double>& values() const { return *data_; }

  // Only valid before the tensor is shared or recorded on a tape.
  double* mutable_data() { return data_->data(); }

  double item() const {
    if (size() != 1) {
      throw std::invalid_argument("tensor: item() on shape " + shape_str(shape_));
    }
    return (*data_)[0];
  }

  double at(std::initializer_list<std::int64_t> idx) const {
    return (*data_)[offset(idx)];
  }
  double& at_mut(std::initializer_list<std::int64_t> idx) {
    return (*data_)[offset(idx)];
  }

  // Autodiff bookkeeping: which tape node produced this value, if any.
  std::int64_t node() const { return node_; }
  const Tape* tape() const { return tape_; }
  void bind(const Tape* tape, std::int64_t node) {
    tape_ = tape;
    node_ = node;
  }

 private:
  void check_shape() const {
    for (auto d : shape_) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim in " + shape_str(shape_));
    }
  }

  std::int64_t offset(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<std::int64_t>(idx.size()) != rank()) {
      throw std::invalid_argument("tensor: index rank mismatch for " + shape_str(shape_));
    }
    std::int64_t off = 0;
    std::int64_t i = 0;
    for (auto v : idx) {
      if (v < 0 || v >= shape_[i]) {
        throw std::out_of_range("tensor: index out of range for " + shape_str(shape_));
      }
      off = off * shape_[i] + v;
      ++i;
    }
    return off;
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  const Tape* tape_ = nullptr;
  std::int64_t node_ = -1;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

}  // namespace pekit
