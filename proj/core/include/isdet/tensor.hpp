#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace isdet {

/// Element precision of a tensor's arithmetic. Storage is always double;
/// f32 tensors round every operation through IEEE float, so overflow to
/// inf/NaN behaves exactly as it would in single precision.
enum class DType { f32, f64 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);  // e.g. "1x24x32x32"
std::vector<int64_t> row_major_strides(const Shape& shape);

namespace detail {
struct Node;
}

class BackwardContext;

/// Dense row-major N-d tensor, optionally recorded into a reverse-mode
/// autodiff graph. Values are immutable by convention once a tensor is fed
/// into an operation; values_mut() exists for parameter initialization and
/// optimizer updates (single writer).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::f64);

  static Tensor zeros(Shape shape, DType dtype = DType::f64);
  static Tensor full(Shape shape, double value, DType dtype = DType::f64);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t ndim() const;
  int64_t numel() const;
  int64_t dim(int64_t axis) const;
  DType dtype() const;

  std::span<const double> values() const;
  std::span<double> values_mut();
  double scalar() const;                       // requires numel() == 1
  double at(std::span<const int64_t> idx) const;
  double at(std::initializer_list<int64_t> idx) const;

  Tensor& set_requires_grad(bool on);
  bool requires_grad() const;
  bool is_leaf() const;

  /// Gradient accumulated by the last backward() pass; zeros if this tensor
  /// was never reached.
  Tensor grad() const;
  bool has_grad() const;
  void clear_grad();

  /// Value copy detached from any recorded graph.
  Tensor detach() const;

  /// Stable identity of the underlying node (for keying gradient maps).
  const void* id() const;

 private:
  friend struct detail::Node;
  friend class BackwardContext;
  friend Tensor make_op(Shape, std::vector<double>, DType, std::vector<Tensor>,
                        std::function<void(BackwardContext&)>);
  friend void backward(const Tensor&);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// View of one recorded op during the backward sweep. Backward functions read
/// the output gradient and accumulate into parent gradients.
class BackwardContext {
 public:
  std::span<const double> out_grad() const;
  std::span<const double> out_values() const;
  const Shape& out_shape() const;
  size_t num_parents() const;
  std::span<const double> parent_values(size_t i) const;
  const Shape& parent_shape(size_t i) const;
  bool parent_needs_grad(size_t i) const;
  /// Lazily zero-initialized accumulation buffer for parent i.
  std::span<double> parent_grad(size_t i);

 private:
  friend void backward(const Tensor&);
  explicit BackwardContext(detail::Node* node) : node_(node) {}
  detail::Node* node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Records a new graph node. Parents and backward function are kept only if
/// some parent is gradient-tracked; otherwise the result is a plain constant.
Tensor make_op(Shape shape, std::vector<double> values, DType dtype,
               std::vector<Tensor> parents, BackwardFn backward_fn);

DType promote(const Tensor& a, const Tensor& b);

// --- elementary operations ---------------------------------------------

/// Batched matrix product: a […×m×n] times b […×n×p]; leading axes equal.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Reorders axes, physically rearranging data to row-major order.
Tensor permute(const Tensor& x, const std::vector<int64_t>& order);

/// Reinterprets the row-major buffer under a new shape (element count kept).
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// Full reduction to a one-element tensor.
Tensor sum(const Tensor& x);

/// Contiguous slice [start, start+length) along one axis.
Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length);

Tensor concat(const std::vector<Tensor>& parts, int64_t axis);

/// Reverse-mode sweep from a one-element loss. Gradients accumulate into
/// every gradient-tracked node reachable from the loss; read them back via
/// Tensor::grad(). Leaves not on the path report zero.
void backward(const Tensor& loss);

bool all_finite(const Tensor& x);

}  // namespace isdet
