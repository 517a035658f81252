#include "lfs/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace lfs {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::int64_t shape_size(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

const Tensor::Data& Tensor::data() const {
  if (!d_) throw ArgumentError("use of undefined tensor");
  return *d_;
}

Tensor::Data& Tensor::data() {
  if (!d_) throw ArgumentError("use of undefined tensor");
  return *d_;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::int64_t n = shape_size(shape);
  auto d = std::make_shared<Data>();
  d->shape = std::move(shape);
  d->values = Eigen::ArrayXd::Zero(n);
  d->requires_grad = requires_grad;
  d->id = g_next_id.fetch_add(1);
  return Tensor(std::move(d));
}

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
  const std::int64_t n = shape_size(shape);
  auto d = std::make_shared<Data>();
  d->shape = std::move(shape);
  d->values = Eigen::ArrayXd::Constant(n, value);
  d->requires_grad = requires_grad;
  d->id = g_next_id.fetch_add(1);
  return Tensor(std::move(d));
}

Tensor Tensor::from_array(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
  const std::int64_t n = shape_size(shape);
  if (values.size() != n) {
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto d = std::make_shared<Data>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  d->id = g_next_id.fetch_add(1);
  return Tensor(std::move(d));
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values,
                           bool requires_grad) {
  Eigen::ArrayXd a(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) a[i++] = v;
  return from_array(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_array(Shape{}, Eigen::ArrayXd::Constant(1, value), requires_grad);
}

const Shape& Tensor::shape() const { return data().shape; }

std::int64_t Tensor::size() const { return data().values.size(); }

std::int64_t Tensor::extent(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ArgumentError("axis " + std::to_string(axis) + " out of range for shape " +
                        shape_str(s));
  }
  return s[axis];
}

bool Tensor::requires_grad() const { return data().requires_grad; }

const Eigen::ArrayXd& Tensor::values() const { return data().values; }

Eigen::ArrayXd& Tensor::mutable_values() { return data().values; }

double Tensor::value() const {
  if (size() != 1) throw ArgumentError("value() on non-scalar tensor " + shape_str(shape()));
  return data().values[0];
}

std::int64_t Tensor::flat_index(std::initializer_list<std::int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) {
    throw ArgumentError("index rank " + std::to_string(idx.size()) +
                        " does not match tensor rank " + std::to_string(s.size()));
  }
  std::int64_t flat = 0;
  std::size_t a = 0;
  for (std::int64_t i : idx) {
    if (i < 0 || i >= s[a]) {
      throw ArgumentError("index " + std::to_string(i) + " out of range for axis " +
                          std::to_string(a) + " of " + shape_str(s));
    }
    flat = flat * s[a] + i;
    ++a;
  }
  return flat;
}

bool Tensor::has_grad() const { return d_ && d_->grad_valid; }

const Eigen::ArrayXd& Tensor::grad() const {
  const Data& d = data();
  if (!d.grad_valid) throw ArgumentError("tensor has no gradient; run backward first");
  return d.grad;
}

std::uint64_t Tensor::id() const { return data().id; }

Eigen::ArrayXd& Tensor::grad_buffer() {
  Data& d = data();
  if (!d.grad_valid || d.grad.size() != d.values.size()) {
    d.grad = Eigen::ArrayXd::Zero(d.values.size());
    d.grad_valid = true;
  }
  return d.grad;
}

void Tensor::reset_grad() {
  Data& d = data();
  d.grad = Eigen::ArrayXd::Zero(d.values.size());
  d.grad_valid = true;
}

void Tensor::check_finite(std::string_view op_name) const {
  if (!data().values.allFinite()) {
    throw NumericError("non-finite value produced by " + std::string(op_name));
  }
}

void Tape::record(std::string name, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> pull) {
  nodes_.push_back(Node{std::move(name), std::move(inputs), std::move(output), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw ArgumentError("backward already ran on this tape; call reset() before reuse");
  }
  if (!loss.defined() || loss.size() != 1) {
    throw ArgumentError("backward requires a scalar loss");
  }
  consumed_ = true;

  // Zero every participating gradient buffer exactly once.
  std::unordered_set<std::uint64_t> seen;
  auto prepare = [&seen](Tensor& t) {
    if (!t.requires_grad()) return;
    if (seen.insert(t.id()).second) t.reset_grad();
  };
  for (Node& node : nodes_) {
    for (Tensor& in : node.inputs) prepare(in);
    prepare(node.output);
  }
  Tensor seed = loss;
  if (seed.requires_grad() && seen.insert(seed.id()).second) seed.reset_grad();
  if (seed.requires_grad()) seed.grad_buffer()[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->pull();
    for (const Tensor& in : it->inputs) {
      if (in.requires_grad() && !in.grad().allFinite()) {
        throw NumericError("non-finite gradient from backward of " + it->name);
      }
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace lfs
