#include "isdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace isdet {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward reaches this node
  DType dtype = DType::f64;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
};

}  // namespace detail

using detail::Node;

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size());
  int64_t acc = 1;
  for (int64_t i = static_cast<int64_t>(shape.size()) - 1; i >= 0; --i) {
    strides[i] = acc;
    acc *= shape[i];
  }
  return strides;
}

namespace {

void check_shape_valid(const Shape& shape) {
  for (int64_t d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor shape extents must be positive, got " +
                                  shape_str(shape));
    }
  }
}

double quantize(double v, DType dt) {
  return dt == DType::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values, DType dtype) {
  check_shape_valid(shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("tensor construction: shape " + shape_str(shape) +
                                " expects " + std::to_string(shape_numel(shape)) +
                                " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  if (dtype == DType::f32) {
    for (double& v : values) v = quantize(v, dtype);
  }
  node->values = std::move(values);
  return node;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : node_(new_node(std::move(shape), std::move(values), dtype)) {}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  std::vector<double> values(static_cast<size_t>(shape_numel(shape)), 0.0);
  return Tensor(std::move(shape), std::move(values), dtype);
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::vector<double> values(static_cast<size_t>(shape_numel(shape)), value);
  return Tensor(std::move(shape), std::move(values), dtype);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::ndim() const { return static_cast<int64_t>(node_->shape.size()); }
int64_t Tensor::numel() const { return node_->numel(); }

int64_t Tensor::dim(int64_t axis) const {
  if (axis < 0 || axis >= ndim()) throw std::invalid_argument("axis out of range");
  return node_->shape[static_cast<size_t>(axis)];
}

DType Tensor::dtype() const { return node_->dtype; }

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::values_mut() { return node_->values; }

double Tensor::scalar() const {
  if (numel() != 1) {
    throw std::invalid_argument("scalar() requires a one-element tensor, shape is " +
                                shape_str(shape()));
  }
  return node_->values[0];
}

double Tensor::at(std::span<const int64_t> idx) const {
  if (static_cast<int64_t>(idx.size()) != ndim()) {
    throw std::invalid_argument("index rank mismatch");
  }
  auto strides = row_major_strides(shape());
  int64_t flat = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= shape()[i]) throw std::invalid_argument("index out of range");
    flat += idx[i] * strides[i];
  }
  return node_->values[static_cast<size_t>(flat)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  return at(std::span<const int64_t>(idx.begin(), idx.size()));
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (on && !is_leaf()) {
    throw std::invalid_argument("set_requires_grad: only leaf tensors can be marked");
  }
  node_->requires_grad = on;
  return *this;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->parents.empty(); }

Tensor Tensor::grad() const {
  if (node_->grad.empty()) {
    return Tensor(shape(), std::vector<double>(static_cast<size_t>(numel()), 0.0));
  }
  return Tensor(shape(), node_->grad);
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::clear_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->values, dtype()); }

const void* Tensor::id() const { return node_.get(); }

// --- BackwardContext -----------------------------------------------------

std::span<const double> BackwardContext::out_grad() const { return node_->grad; }
std::span<const double> BackwardContext::out_values() const { return node_->values; }
const Shape& BackwardContext::out_shape() const { return node_->shape; }
size_t BackwardContext::num_parents() const { return node_->parents.size(); }

std::span<const double> BackwardContext::parent_values(size_t i) const {
  return node_->parents.at(i)->values;
}

const Shape& BackwardContext::parent_shape(size_t i) const {
  return node_->parents.at(i)->shape;
}

bool BackwardContext::parent_needs_grad(size_t i) const {
  return node_->parents.at(i)->requires_grad;
}

std::span<double> BackwardContext::parent_grad(size_t i) {
  Node& p = *node_->parents.at(i);
  if (p.grad.empty()) p.grad.assign(p.values.size(), 0.0);
  return p.grad;
}

// --- graph recording ------------------------------------------------------

Tensor make_op(Shape shape, std::vector<double> values, DType dtype,
               std::vector<Tensor> parents, BackwardFn backward_fn) {
  auto node = new_node(std::move(shape), std::move(values), dtype);
  bool tracked = false;
  for (const Tensor& p : parents) {
    if (p.defined() && p.requires_grad()) tracked = true;
  }
  if (tracked) {
    node->requires_grad = true;
    node->backward_fn = std::move(backward_fn);
    node->parents.reserve(parents.size());
    for (Tensor& p : parents) node->parents.push_back(std::move(p.node_));
  }
  return Tensor(std::move(node));
}

DType promote(const Tensor& a, const Tensor& b) {
  return (a.dtype() == DType::f32 && b.dtype() == DType::f32) ? DType::f32 : DType::f64;
}

// --- backward sweep -------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must have exactly one element, shape is " +
                                shape_str(loss.shape()));
  }
  // Iterative post-order over parents; reverse gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  Node* root = loss.node_.get();
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    BackwardContext ctx(node);
    node->backward_fn(ctx);
  }
}

bool all_finite(const Tensor& x) {
  for (double v : x.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// --- kernels --------------------------------------------------------------

namespace {

// Arithmetic carried out entirely in S so that f32 overflow semantics are
// faithful (double storage of float values is exact).
template <typename S>
void gemm(const double* a, const double* b, double* c, int64_t batch, int64_t m,
          int64_t n, int64_t p) {
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* ab = a + bi * m * n;
    const double* bb = b + bi * n * p;
    double* cb = c + bi * m * p;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < p; ++j) {
        S acc = S(0);
        for (int64_t k = 0; k < n; ++k) {
          acc += static_cast<S>(ab[i * n + k]) * static_cast<S>(bb[k * p + j]);
        }
        cb[i * p + j] = static_cast<double>(acc);
      }
    }
  }
}

// c[m×n] += a[m×p]·b[p×n], with optional transposes; used by matmul backward.
void gemm_acc_f64(const double* a, bool ta, const double* b, bool tb, double* c,
                  int64_t m, int64_t p, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < p; ++k) {
        double av = ta ? a[k * m + i] : a[i * p + k];
        double bv = tb ? b[j * p + k] : b[k * n + j];
        acc += av * bv;
      }
      c[i * n + j] += acc;
    }
  }
}

template <typename S, typename F>
void map2(std::span<const double> a, std::span<const double> b, std::span<double> out, F f) {
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(f(static_cast<S>(a[i]), static_cast<S>(b[i])));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2 || a.ndim() != b.ndim()) {
    throw std::invalid_argument("matmul: operands must have equal rank >= 2, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  size_t nd = sa.size();
  for (size_t i = 0; i + 2 < nd; ++i) {
    if (sa[i] != sb[i]) {
      throw std::invalid_argument("matmul: leading axes differ, " + shape_str(sa) + " vs " +
                                  shape_str(sb));
    }
  }
  int64_t m = sa[nd - 2], n = sa[nd - 1], p = sb[nd - 1];
  if (sb[nd - 2] != n) {
    throw std::invalid_argument("matmul: trailing axes incompatible, " + shape_str(sa) +
                                " times " + shape_str(sb));
  }
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < nd; ++i) batch *= sa[i];

  Shape out_shape(sa.begin(), sa.end());
  out_shape[nd - 1] = p;
  DType dt = promote(a, b);
  std::vector<double> out(static_cast<size_t>(batch * m * p));
  if (dt == DType::f32) {
    gemm<float>(a.values().data(), b.values().data(), out.data(), batch, m, n, p);
  } else {
    gemm<double>(a.values().data(), b.values().data(), out.data(), batch, m, n, p);
  }

  return make_op(std::move(out_shape), std::move(out), dt, {a, b},
                 [batch, m, n, p](BackwardContext& ctx) {
                   const double* g = ctx.out_grad().data();
                   const double* av = ctx.parent_values(0).data();
                   const double* bv = ctx.parent_values(1).data();
                   if (ctx.parent_needs_grad(0)) {
                     double* da = ctx.parent_grad(0).data();
                     for (int64_t bi = 0; bi < batch; ++bi) {
                       // dA = dY · Bᵀ
                       gemm_acc_f64(g + bi * m * p, false, bv + bi * n * p, true,
                                    da + bi * m * n, m, p, n);
                     }
                   }
                   if (ctx.parent_needs_grad(1)) {
                     double* db = ctx.parent_grad(1).data();
                     for (int64_t bi = 0; bi < batch; ++bi) {
                       // dB = Aᵀ · dY
                       gemm_acc_f64(av + bi * m * n, true, g + bi * m * p, false,
                                    db + bi * n * p, n, m, p);
                     }
                   }
                 });
}

namespace {

std::vector<int64_t> inverse_permutation(const std::vector<int64_t>& order) {
  std::vector<int64_t> inv(order.size());
  for (size_t i = 0; i < order.size(); ++i) inv[static_cast<size_t>(order[i])] = static_cast<int64_t>(i);
  return inv;
}

void permute_data(std::span<const double> in, std::span<double> out, const Shape& in_shape,
                  const std::vector<int64_t>& order) {
  size_t nd = in_shape.size();
  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[static_cast<size_t>(order[i])];
  auto in_strides = row_major_strides(in_shape);
  auto out_strides = row_major_strides(out_shape);
  std::vector<int64_t> idx(nd, 0);
  int64_t n = shape_numel(in_shape);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t out_flat = 0;
    for (size_t i = 0; i < nd; ++i) {
      out_flat += idx[static_cast<size_t>(order[i])] * out_strides[i];
    }
    out[static_cast<size_t>(out_flat)] = in[static_cast<size_t>(flat)];
    for (int64_t i = static_cast<int64_t>(nd) - 1; i >= 0; --i) {
      if (++idx[static_cast<size_t>(i)] < in_shape[static_cast<size_t>(i)]) break;
      idx[static_cast<size_t>(i)] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int64_t>& order) {
  size_t nd = static_cast<size_t>(x.ndim());
  if (order.size() != nd) throw std::invalid_argument("permute: order rank mismatch");
  std::vector<bool> used(nd, false);
  for (int64_t o : order) {
    if (o < 0 || o >= static_cast<int64_t>(nd) || used[static_cast<size_t>(o)]) {
      throw std::invalid_argument("permute: order is not a permutation of axes");
    }
    used[static_cast<size_t>(o)] = true;
  }
  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = x.shape()[static_cast<size_t>(order[i])];
  std::vector<double> out(static_cast<size_t>(x.numel()));
  permute_data(x.values(), out, x.shape(), order);
  Shape in_shape = x.shape();
  return make_op(std::move(out_shape), std::move(out), x.dtype(), {x},
                 [order, in_shape](BackwardContext& ctx) {
                   if (!ctx.parent_needs_grad(0)) return;
                   // Gradient flows through the inverse axis order.
                   std::vector<double> tmp(ctx.out_grad().begin(), ctx.out_grad().end());
                   std::vector<double> back(tmp.size());
                   permute_data(tmp, back, ctx.out_shape(), inverse_permutation(order));
                   auto pg = ctx.parent_grad(0);
                   for (size_t i = 0; i < back.size(); ++i) pg[i] += back[i];
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape_valid(shape);
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: element count mismatch, " + shape_str(x.shape()) +
                                " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), x.dtype(), {x},
                 [](BackwardContext& ctx) {
                   if (!ctx.parent_needs_grad(0)) return;
                   auto g = ctx.out_grad();
                   auto pg = ctx.parent_grad(0);
                   for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  DType dt = promote(a, b);
  std::vector<double> out(static_cast<size_t>(a.numel()));
  if (dt == DType::f32) {
    map2<float>(a.values(), b.values(), out, [](float x, float y) { return x + y; });
  } else {
    map2<double>(a.values(), b.values(), out, [](double x, double y) { return x + y; });
  }
  return make_op(a.shape(), std::move(out), dt, {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    for (size_t p = 0; p < 2; ++p) {
      if (!ctx.parent_needs_grad(p)) continue;
      auto pg = ctx.parent_grad(p);
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  DType dt = promote(a, b);
  std::vector<double> out(static_cast<size_t>(a.numel()));
  if (dt == DType::f32) {
    map2<float>(a.values(), b.values(), out, [](float x, float y) { return x * y; });
  } else {
    map2<double>(a.values(), b.values(), out, [](double x, double y) { return x * y; });
  }
  return make_op(a.shape(), std::move(out), dt, {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    auto av = ctx.parent_values(0);
    auto bv = ctx.parent_values(1);
    if (ctx.parent_needs_grad(0)) {
      auto pg = ctx.parent_grad(0);
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bv[i];
    }
    if (ctx.parent_needs_grad(1)) {
      auto pg = ctx.parent_grad(1);
      for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(static_cast<size_t>(x.numel()));
  auto xv = x.values();
  if (x.dtype() == DType::f32) {
    float f = static_cast<float>(factor);
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<double>(static_cast<float>(xv[i]) * f);
    }
  } else {
    for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  }
  return make_op(x.shape(), std::move(out), x.dtype(), {x}, [factor](BackwardContext& ctx) {
    if (!ctx.parent_needs_grad(0)) return;
    auto g = ctx.out_grad();
    auto pg = ctx.parent_grad(0);
    for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * factor;
  });
}

Tensor sum(const Tensor& x) {
  auto xv = x.values();
  double acc = 0.0;
  if (x.dtype() == DType::f32) {
    float facc = 0.0f;
    for (double v : xv) facc += static_cast<float>(v);
    acc = static_cast<double>(facc);
  } else {
    for (double v : xv) acc += v;
  }
  return make_op({1}, {acc}, x.dtype(), {x}, [](BackwardContext& ctx) {
    if (!ctx.parent_needs_grad(0)) return;
    double g = ctx.out_grad()[0];
    auto pg = ctx.parent_grad(0);
    for (size_t i = 0; i < pg.size(); ++i) pg[i] += g;
  });
}

namespace {

// Iterates slices for narrow/concat: outer = product of axes before `axis`,
// inner = product after.
struct AxisSplit {
  int64_t outer, axis_dim, inner;
};

AxisSplit split_at(const Shape& shape, int64_t axis) {
  AxisSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int64_t i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor narrow(const Tensor& x, int64_t axis, int64_t start, int64_t length) {
  if (axis < 0 || axis >= x.ndim()) throw std::invalid_argument("narrow: axis out of range");
  int64_t dim = x.dim(axis);
  if (start < 0 || length <= 0 || start + length > dim) {
    throw std::invalid_argument("narrow: slice [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") exceeds axis extent " +
                                std::to_string(dim));
  }
  AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  auto xv = x.values();
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t j = 0; j < length; ++j) {
      const double* src = xv.data() + (o * s.axis_dim + start + j) * s.inner;
      double* dst = out.data() + (o * length + j) * s.inner;
      std::copy(src, src + s.inner, dst);
    }
  }
  return make_op(std::move(out_shape), std::move(out), x.dtype(), {x},
                 [s, start, length](BackwardContext& ctx) {
                   if (!ctx.parent_needs_grad(0)) return;
                   auto g = ctx.out_grad();
                   auto pg = ctx.parent_grad(0);
                   for (int64_t o = 0; o < s.outer; ++o) {
                     for (int64_t j = 0; j < length; ++j) {
                       const double* src = g.data() + (o * length + j) * s.inner;
                       double* dst = pg.data() + (o * s.axis_dim + start + j) * s.inner;
                       for (int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& base = parts[0].shape();
  if (axis < 0 || axis >= parts[0].ndim()) throw std::invalid_argument("concat: axis out of range");
  int64_t total = 0;
  for (const Tensor& t : parts) {
    if (t.ndim() != parts[0].ndim()) throw std::invalid_argument("concat: rank mismatch");
    for (size_t i = 0; i < base.size(); ++i) {
      if (static_cast<int64_t>(i) != axis && t.shape()[i] != base[i]) {
        throw std::invalid_argument("concat: non-axis extents differ");
      }
    }
    total += t.dim(axis);
  }
  Shape out_shape = base;
  out_shape[static_cast<size_t>(axis)] = total;
  AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  std::vector<int64_t> offsets;
  int64_t offset = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(offset);
    int64_t len = t.dim(axis);
    auto tv = t.values();
    for (int64_t o = 0; o < s.outer; ++o) {
      const double* src = tv.data() + o * len * s.inner;
      double* dst = out.data() + (o * total + offset) * s.inner;
      std::copy(src, src + len * s.inner, dst);
    }
    offset += len;
  }
  DType dt = DType::f32;
  for (const Tensor& t : parts) {
    if (t.dtype() == DType::f64) dt = DType::f64;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  std::vector<int64_t> lengths;
  for (const Tensor& t : parts) lengths.push_back(t.dim(axis));
  return make_op(std::move(out_shape), std::move(out), dt, std::move(parents),
                 [s, offsets, lengths, total](BackwardContext& ctx) {
                   auto g = ctx.out_grad();
                   for (size_t p = 0; p < ctx.num_parents(); ++p) {
                     if (!ctx.parent_needs_grad(p)) continue;
                     auto pg = ctx.parent_grad(p);
                     int64_t len = lengths[p];
                     for (int64_t o = 0; o < s.outer; ++o) {
                       const double* src = g.data() + (o * total + offsets[p]) * s.inner;
                       double* dst = pg.data() + o * len * s.inner;
                       for (int64_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

}  // namespace isdet
