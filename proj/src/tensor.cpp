#include "recbase/tensor.hpp"

#include "recbase/error.hpp"

namespace recbase::nn {

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (count(shape_) != data_.size()) {
    throw ShapeError("Tensor", shape_, {data_.size()});
  }
}

void Tensor::reshape(std::vector<size_t> shape) {
  if (count(shape) != data_.size()) throw ShapeError("reshape", shape_, shape);
  shape_ = std::move(shape);
}

void expect_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace recbase::nn
