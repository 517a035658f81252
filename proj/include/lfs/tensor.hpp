#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lfs/errors.hpp"

namespace lfs {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
/// Copies are shallow: the storage is shared and treated as immutable once
/// the tensor participates in a Tape. Gradient buffers are owned by the
/// tensor but written only by Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value, bool requires_grad = false);
  static Tensor from_array(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t size() const;
  std::int64_t extent(int axis) const;
  bool requires_grad() const;

  const Eigen::ArrayXd& values() const;
  /// Mutable access for filling a freshly created tensor. Never mutate a
  /// tensor after it has been recorded on a tape.
  Eigen::ArrayXd& mutable_values();
  /// Scalar read; requires size() == 1.
  double value() const;

  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const;
  template <class... I>
  double at(I... idx) const {
    return values()[flat_index({static_cast<std::int64_t>(idx)...})];
  }
  template <class... I>
  void set(double v, I... idx) {
    mutable_values()[flat_index({static_cast<std::int64_t>(idx)...})] = v;
  }

  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;

  /// Stable identity of the underlying storage.
  std::uint64_t id() const;

  // Tape internals.
  Eigen::ArrayXd& grad_buffer();  // allocates zero-filled if absent
  void reset_grad();
  void check_finite(std::string_view op_name) const;

 private:
  struct Data;
  explicit Tensor(std::shared_ptr<Data> d) : d_(std::move(d)) {}

  struct Data {
    Shape shape;
    Eigen::ArrayXd values;
    Eigen::ArrayXd grad;  // size 0 when absent
    bool requires_grad = false;
    bool grad_valid = false;
    std::uint64_t id = 0;
  };

  const Data& data() const;
  Data& data();

  std::shared_ptr<Data> d_;
};

/// Ordered record of differentiable operations. Single writer while
/// recording; backward replays the record in reverse exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Appends one operation. `pull` must read output.grad() and accumulate
  /// into the grad buffers of those inputs that require gradients.
  void record(std::string name, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> pull);

  /// Reverse-mode sweep from a scalar loss. Zeroes all participating
  /// gradient buffers, seeds d(loss)/d(loss) = 1 and runs every recorded
  /// backward rule in reverse order. Errors on a non-scalar loss, on a
  /// second call without reset(), and on non-finite gradients (naming the
  /// offending operation).
  void backward(const Tensor& loss);

  void reset();
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::string name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> pull;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace lfs
