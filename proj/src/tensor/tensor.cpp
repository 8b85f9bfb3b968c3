#include "emag/tensor.hpp"

#include "emag/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace emag::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMat<Scalar>>;

// Column-major (inner x outer) view of a flat buffer: column j holds the
// j-th contiguous run of `inner` elements.
template <typename Scalar>
using ColArr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using ColMap = Eigen::Map<ColArr<Scalar>>;
template <typename Scalar>
using ConstColMap = Eigen::Map<const ColArr<Scalar>>;

int normalize_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(ndim));
  }
  return a;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename Scalar>
void require_defined(const Tensor<Scalar>& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

}  // namespace

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
void Node<Scalar>::accumulate(const Array& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

// --- Tensor ----------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(std::make_shared<Node<Scalar>>()) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + ad::to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("shape " + ad::to_string(shape) + " holds " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values, bool requires_grad)
    : Tensor(std::move(shape), Array::Map(values.begin(), static_cast<Index>(values.size())),
             requires_grad) {}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar fill, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, fill), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar v, bool requires_grad) {
  return full({}, v, requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_vector(Shape shape, const std::vector<Scalar>& values,
                                           bool requires_grad) {
  return Tensor(std::move(shape), Array::Map(values.data(), static_cast<Index>(values.size())),
                requires_grad);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  return node_->shape[static_cast<std::size_t>(normalize_axis(axis, ndim()))];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + ad::to_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  require_defined(*this, "backward");
  if (size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + ad::to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<Scalar>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node<Scalar>* n : order) {
    if (!n->is_leaf()) n->grad.resize(0);
  }
  node_->accumulate(Array::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (!n->is_leaf() && n->grad.size() > 0) n->backward(*n);
  }
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Tensor<Scalar>::Array value,
                           const std::vector<Tensor<Scalar>>& inputs,
                           std::function<void(Node<Scalar>&)> backward) {
  Tensor<Scalar> out(std::move(shape), std::move(value), false);
  if (!NoGradGuard::grad_enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<Scalar>& t) { return t.requires_grad(); });
  if (!any) return out;
  Node<Scalar>* n = out.node();
  n->requires_grad = true;
  n->parents.reserve(inputs.size());
  for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
  n->backward = std::move(backward);
  return out;
}

// --- linear algebra -------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (b.ndim() != 2 || a.ndim() < 1 || a.dim(-1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const Index k = b.dim(0), n = b.dim(1), m = a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  typename Tensor<Scalar>::Array out(m * n);
  RowMap<Scalar>(out.data(), m, n).noalias() =
      ConstRowMap<Scalar>(a.value().data(), m, k) * ConstRowMap<Scalar>(b.value().data(), k, n);
  return make_result<Scalar>(std::move(out_shape), std::move(out), {a, b},
                             [m, k, n](Node<Scalar>& self) {
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               ConstRowMap<Scalar> g(self.grad.data(), m, n);
                               if (pa.requires_grad) {
                                 typename Node<Scalar>::Array ga(m * k);
                                 RowMap<Scalar>(ga.data(), m, k).noalias() =
                                     g * ConstRowMap<Scalar>(pb.value.data(), k, n).transpose();
                                 pa.accumulate(ga);
                               }
                               if (pb.requires_grad) {
                                 typename Node<Scalar>::Array gb(k * n);
                                 RowMap<Scalar>(gb.data(), k, n).noalias() =
                                     ConstRowMap<Scalar>(pa.value.data(), m, k).transpose() * g;
                                 pb.accumulate(gb);
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  const bool ok = a.ndim() >= 2 && a.ndim() == b.ndim() && a.dim(-1) == b.dim(-2) &&
                  std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  if (!ok) {
    throw DimensionError("bmm: cannot multiply " + to_string(a.shape()) + " by " +
                         to_string(b.shape()));
  }
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const Index batch = a.size() / (m * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  typename Tensor<Scalar>::Array out(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    RowMap<Scalar>(out.data() + i * m * n, m, n).noalias() =
        ConstRowMap<Scalar>(a.value().data() + i * m * k, m, k) *
        ConstRowMap<Scalar>(b.value().data() + i * k * n, k, n);
  }
  return make_result<Scalar>(
      std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n](Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          typename Node<Scalar>::Array ga(batch * m * k);
          for (Index i = 0; i < batch; ++i) {
            RowMap<Scalar>(ga.data() + i * m * k, m, k).noalias() =
                ConstRowMap<Scalar>(self.grad.data() + i * m * n, m, n) *
                ConstRowMap<Scalar>(pb.value.data() + i * k * n, k, n).transpose();
          }
          pa.accumulate(ga);
        }
        if (pb.requires_grad) {
          typename Node<Scalar>::Array gb(batch * k * n);
          for (Index i = 0; i < batch; ++i) {
            RowMap<Scalar>(gb.data() + i * k * n, k, n).noalias() =
                ConstRowMap<Scalar>(pa.value.data() + i * m * k, m, k).transpose() *
                ConstRowMap<Scalar>(self.grad.data() + i * m * n, m, n);
          }
          pb.accumulate(gb);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes) {
  require_defined(x, "permute");
  const int nd = x.ndim();
  if (static_cast<int>(axes.size()) != nd) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for rank " +
                         std::to_string(nd));
  }
  std::vector<int> perm(axes.size());
  std::vector<bool> seen(axes.size(), false);
  for (int i = 0; i < nd; ++i) {
    perm[i] = normalize_axis(axes[i], nd);
    if (seen[perm[i]]) throw DimensionError("permute: repeated axis");
    seen[perm[i]] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(nd);
  std::vector<Index> in_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  // Strides of the input, reordered to walk the output in row-major order.
  std::vector<Index> walk(nd);
  for (int i = 0; i < nd; ++i) {
    out_shape[i] = in_shape[perm[i]];
    walk[i] = in_strides[perm[i]];
  }
  const Index n = x.size();
  // gather[j] = flat input index feeding flat output index j
  auto gather = std::make_shared<std::vector<Index>>(n);
  {
    std::vector<Index> counter(nd, 0);
    Index src = 0;
    for (Index j = 0; j < n; ++j) {
      (*gather)[j] = src;
      for (int d = nd - 1; d >= 0; --d) {
        if (++counter[d] < out_shape[d]) {
          src += walk[d];
          break;
        }
        src -= walk[d] * (out_shape[d] - 1);
        counter[d] = 0;
      }
    }
  }
  typename Tensor<Scalar>::Array out(n);
  const Scalar* in = x.value().data();
  for (Index j = 0; j < n; ++j) out[j] = in[(*gather)[j]];
  return make_result<Scalar>(std::move(out_shape), std::move(out), {x},
                             [gather](Node<Scalar>& self) {
                               auto& p = *self.parents[0];
                               typename Node<Scalar>::Array g(self.grad.size());
                               for (Index j = 0; j < g.size(); ++j) g[(*gather)[j]] = self.grad[j];
                               p.accumulate(g);
                             });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  require_defined(x, "transpose");
  const int nd = x.ndim();
  if (nd < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  if (nd == 2 || numel(Shape(x.shape().begin(), x.shape().end() - 2)) == 1) {
    // Fast path: single matrix.
    const Index r = x.dim(-2), c = x.dim(-1);
    Shape out_shape = x.shape();
    std::swap(out_shape[nd - 1], out_shape[nd - 2]);
    typename Tensor<Scalar>::Array out(x.size());
    RowMap<Scalar>(out.data(), c, r) = ConstRowMap<Scalar>(x.value().data(), r, c).transpose();
    return make_result<Scalar>(std::move(out_shape), std::move(out), {x},
                               [r, c](Node<Scalar>& self) {
                                 typename Node<Scalar>::Array g(self.grad.size());
                                 RowMap<Scalar>(g.data(), r, c) =
                                     ConstRowMap<Scalar>(self.grad.data(), c, r).transpose();
                                 self.parents[0]->accumulate(g);
                               });
  }
  const Index r = x.dim(-2), c = x.dim(-1), batch = x.size() / (r * c);
  Shape out_shape = x.shape();
  std::swap(out_shape[nd - 1], out_shape[nd - 2]);
  typename Tensor<Scalar>::Array out(x.size());
  for (Index i = 0; i < batch; ++i) {
    RowMap<Scalar>(out.data() + i * r * c, c, r) =
        ConstRowMap<Scalar>(x.value().data() + i * r * c, r, c).transpose();
  }
  return make_result<Scalar>(std::move(out_shape), std::move(out), {x},
                             [r, c, batch](Node<Scalar>& self) {
                               typename Node<Scalar>::Array g(self.grad.size());
                               for (Index i = 0; i < batch; ++i) {
                                 RowMap<Scalar>(g.data() + i * r * c, r, c) =
                                     ConstRowMap<Scalar>(self.grad.data() + i * r * c, c, r)
                                         .transpose();
                               }
                               self.parents[0]->accumulate(g);
                             });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return make_result<Scalar>(std::move(shape), x.value(), {x}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

// --- elementwise ----------------------------------------------------------

namespace {

enum class BinOp { kAdd, kSub, kMul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinOp op,
                      const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  using Array = typename Tensor<Scalar>::Array;
  if (a.shape() == b.shape()) {
    Array out;
    switch (op) {
      case BinOp::kAdd: out = a.value() + b.value(); break;
      case BinOp::kSub: out = a.value() - b.value(); break;
      case BinOp::kMul: out = a.value() * b.value(); break;
    }
    return make_result<Scalar>(a.shape(), std::move(out), {a, b}, [op](Node<Scalar>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      switch (op) {
        case BinOp::kAdd:
          if (pa.requires_grad) pa.accumulate(self.grad);
          if (pb.requires_grad) pb.accumulate(self.grad);
          break;
        case BinOp::kSub:
          if (pa.requires_grad) pa.accumulate(self.grad);
          if (pb.requires_grad) pb.accumulate(-self.grad);
          break;
        case BinOp::kMul:
          if (pa.requires_grad) pa.accumulate(self.grad * pb.value);
          if (pb.requires_grad) pb.accumulate(self.grad * pa.value);
          break;
      }
    });
  }

  const bool b_small = is_suffix(b.shape(), a.shape());
  if (!b_small && !is_suffix(a.shape(), b.shape())) {
    throw DimensionError(std::string(name) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " do not broadcast");
  }
  const Tensor<Scalar>& big = b_small ? a : b;
  const Tensor<Scalar>& small = b_small ? b : a;
  const Index inner = small.size(), outer = big.size() / inner;
  Array out(big.size());
  ColMap<Scalar> o(out.data(), inner, outer);
  ConstColMap<Scalar> B(big.value().data(), inner, outer);
  const auto& s = small.value();
  switch (op) {
    case BinOp::kAdd: o = B.colwise() + s; break;
    case BinOp::kSub: o = b_small ? (B.colwise() - s).eval() : ((-B).colwise() + s).eval(); break;
    case BinOp::kMul: o = B.colwise() * s; break;
  }
  return make_result<Scalar>(big.shape(), std::move(out), {a, b},
                             [op, b_small, inner, outer](Node<Scalar>& self) {
                               Node<Scalar>& pbig = *self.parents[b_small ? 0 : 1];
                               Node<Scalar>& psmall = *self.parents[b_small ? 1 : 0];
                               ConstColMap<Scalar> g(self.grad.data(), inner, outer);
                               // Sign of d(out)/d(operand) for subtraction.
                               const Scalar sign_big = (op == BinOp::kSub && !b_small) ? -1 : 1;
                               const Scalar sign_small = (op == BinOp::kSub && b_small) ? -1 : 1;
                               if (pbig.requires_grad) {
                                 if (op == BinOp::kMul) {
                                   ColArr<Scalar> gb = g.colwise() * psmall.value;
                                   pbig.accumulate(gb.reshaped());
                                 } else {
                                   pbig.accumulate(sign_big * self.grad);
                                 }
                               }
                               if (psmall.requires_grad) {
                                 if (op == BinOp::kMul) {
                                   ConstColMap<Scalar> bv(pbig.value.data(), inner, outer);
                                   psmall.accumulate((g * bv).rowwise().sum());
                                 } else {
                                   psmall.accumulate(sign_small * g.rowwise().sum());
                                 }
                               }
                             });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, BinOp::kAdd, "add");
}
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, BinOp::kSub, "sub");
}
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary(a, b, BinOp::kMul, "mul");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar s) {
  require_defined(x, "scale");
  return make_result<Scalar>(x.shape(), x.value() * s, {x}, [s](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar s) {
  require_defined(x, "add_scalar");
  return make_result<Scalar>(x.shape(), x.value() + s, {x}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  require_defined(x, "relu");
  return make_result<Scalar>(x.shape(), x.value().max(Scalar(0)), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.accumulate((p.value > Scalar(0)).select(self.grad, Scalar(0)));
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  require_defined(x, "sigmoid");
  typename Tensor<Scalar>::Array y = (Scalar(1) + (-x.value()).exp()).inverse();
  return make_result<Scalar>(x.shape(), std::move(y), {x}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad * self.value * (Scalar(1) - self.value));
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  require_defined(x, "tanh");
  return make_result<Scalar>(x.shape(), x.value().tanh(), {x}, [](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad * (Scalar(1) - self.value.square()));
  });
}

template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, const Mask& mask, Scalar fill) {
  require_defined(x, "masked_fill");
  if (static_cast<Index>(mask.size()) != x.size()) {
    throw DimensionError("masked_fill: mask of " + std::to_string(mask.size()) +
                         " elements for tensor " + to_string(x.shape()));
  }
  auto keep = std::make_shared<Mask>(mask);
  typename Tensor<Scalar>::Array out = x.value();
  for (Index i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = fill;
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x}, [keep](Node<Scalar>& self) {
    typename Node<Scalar>::Array g = self.grad;
    for (Index i = 0; i < g.size(); ++i) {
      if ((*keep)[i]) g[i] = Scalar(0);
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, Scalar p, bool train, std::mt19937_64& rng) {
  require_defined(x, "dropout");
  if (p < Scalar(0) || p >= Scalar(1)) {
    throw ContractError("dropout probability must lie in [0, 1)");
  }
  if (!train || p == Scalar(0)) return x;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - p);
  typename Tensor<Scalar>::Array m(x.size());
  for (Index i = 0; i < m.size(); ++i) m[i] = uni(rng) >= static_cast<double>(p) ? keep_scale : 0;
  typename Tensor<Scalar>::Array out = x.value() * m;
  return make_result<Scalar>(x.shape(), std::move(out), {x},
                             [m = std::move(m)](Node<Scalar>& self) {
                               self.parents[0]->accumulate(self.grad * m);
                             });
}

// --- last-axis normalizations ----------------------------------------------

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  require_defined(x, "softmax");
  if (x.ndim() < 1) throw DimensionError("softmax needs rank >= 1");
  const Index n = x.dim(-1), rows = x.size() / n;
  typename Tensor<Scalar>::Array out(x.size());
  ConstColMap<Scalar> in(x.value().data(), n, rows);
  ColMap<Scalar> o(out.data(), n, rows);
  for (Index r = 0; r < rows; ++r) {
    o.col(r) = (in.col(r) - in.col(r).maxCoeff()).exp();
    o.col(r) /= o.col(r).sum();
  }
  return make_result<Scalar>(x.shape(), std::move(out), {x}, [n, rows](Node<Scalar>& self) {
    ConstColMap<Scalar> y(self.value.data(), n, rows);
    ConstColMap<Scalar> g(self.grad.data(), n, rows);
    typename Node<Scalar>::Array gx(self.grad.size());
    ColMap<Scalar> gxm(gx.data(), n, rows);
    const auto dots = (g * y).colwise().sum();
    gxm = y * (g.rowwise() - dots);
    self.parents[0]->accumulate(gx);
  });
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps) {
  require_defined(x, "layer_norm");
  const Index n = x.dim(-1), rows = x.size() / n;
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " +
                         to_string(bias.shape()) + " for input " + to_string(x.shape()));
  }
  if (!(eps > Scalar(0))) throw ContractError("layer_norm: eps must be positive");
  using Array = typename Tensor<Scalar>::Array;
  auto xhat = std::make_shared<Array>(x.size());
  auto inv_std = std::make_shared<Array>(rows);
  ConstColMap<Scalar> in(x.value().data(), n, rows);
  ColMap<Scalar> xh(xhat->data(), n, rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = in.col(r).mean();
    const Scalar var = (in.col(r) - mu).square().mean();
    (*inv_std)[r] = Scalar(1) / std::sqrt(var + eps);
    xh.col(r) = (in.col(r) - mu) * (*inv_std)[r];
  }
  Array out(x.size());
  ColMap<Scalar>(out.data(), n, rows) = (xh.colwise() * gain.value()).colwise() + bias.value();
  return make_result<Scalar>(
      x.shape(), std::move(out), {x, gain, bias}, [n, rows, xhat, inv_std](Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        ConstColMap<Scalar> g(self.grad.data(), n, rows);
        ConstColMap<Scalar> xh(xhat->data(), n, rows);
        if (px.requires_grad) {
          ColArr<Scalar> dxhat = g.colwise() * pg.value;
          const auto mean_d = dxhat.colwise().mean();
          const auto mean_dx = (dxhat * xh).colwise().mean();
          ColArr<Scalar> dx = ((dxhat.rowwise() - mean_d) - xh.rowwise() * mean_dx).rowwise() *
                              inv_std->transpose();
          px.accumulate(dx.reshaped());
        }
        if (pg.requires_grad) pg.accumulate((g * xh).rowwise().sum());
        if (pb.requires_grad) pb.accumulate(g.rowwise().sum());
      });
}

// --- structure ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  for (const auto& p : parts) require_defined(p, "concat");
  const int nd = parts[0].ndim();
  const int ax = normalize_axis(axis, nd);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.ndim() == nd;
    for (int d = 0; ok && d < nd; ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: " + to_string(p.shape()) + " incompatible with " +
                           to_string(parts[0].shape()) + " along axis " + std::to_string(ax));
    }
    out_shape[ax] += p.shape()[ax];
  }
  const Index outer = numel(Shape(out_shape.begin(), out_shape.begin() + ax));
  const Index inner = numel(Shape(out_shape.begin() + ax + 1, out_shape.end()));
  std::vector<Index> chunk;
  chunk.reserve(parts.size());
  for (const auto& p : parts) chunk.push_back(p.shape()[ax] * inner);
  const Index row = out_shape[ax] * inner;
  typename Tensor<Scalar>::Array out(outer * row);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Scalar* src = parts[i].value().data();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(src + o * chunk[i], chunk[i], out.data() + o * row + offset);
    }
    offset += chunk[i];
  }
  return make_result<Scalar>(std::move(out_shape), std::move(out), parts,
                             [outer, row, chunk](Node<Scalar>& self) {
                               Index off = 0;
                               for (std::size_t i = 0; i < chunk.size(); ++i) {
                                 auto& p = *self.parents[i];
                                 if (p.requires_grad) {
                                   typename Node<Scalar>::Array g(outer * chunk[i]);
                                   for (Index o = 0; o < outer; ++o) {
                                     std::copy_n(self.grad.data() + o * row + off, chunk[i],
                                                 g.data() + o * chunk[i]);
                                   }
                                   p.accumulate(g);
                                 }
                                 off += chunk[i];
                               }
                             });
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index start, Index length) {
  require_defined(x, "slice");
  const int ax = normalize_axis(axis, x.ndim());
  const Index extent = x.shape()[ax];
  if (start < 0 || length <= 0 || start + length > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for axis " +
                         std::to_string(ax) + " of " + to_string(x.shape()));
  }
  const Index outer = numel(Shape(x.shape().begin(), x.shape().begin() + ax));
  const Index inner = numel(Shape(x.shape().begin() + ax + 1, x.shape().end()));
  const Index row = extent * inner, chunk = length * inner, off = start * inner;
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  typename Tensor<Scalar>::Array out(outer * chunk);
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(x.value().data() + o * row + off, chunk, out.data() + o * chunk);
  }
  return make_result<Scalar>(std::move(out_shape), std::move(out), {x},
                             [outer, row, chunk, off](Node<Scalar>& self) {
                               auto& p = *self.parents[0];
                               typename Node<Scalar>::Array g =
                                   Node<Scalar>::Array::Zero(outer * row);
                               for (Index o = 0; o < outer; ++o) {
                                 std::copy_n(self.grad.data() + o * chunk, chunk,
                                             g.data() + o * row + off);
                               }
                               p.accumulate(g);
                             });
}

// --- reductions -------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  require_defined(x, "sum");
  const Index n = x.size();
  return make_result<Scalar>({}, Tensor<Scalar>::Array::Constant(1, x.value().sum()), {x},
                             [n](Node<Scalar>& self) {
                               self.parents[0]->accumulate(
                                   Node<Scalar>::Array::Constant(n, self.grad[0]));
                             });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  require_defined(x, "mean");
  const Index n = x.size();
  return make_result<Scalar>({}, Tensor<Scalar>::Array::Constant(1, x.value().mean()), {x},
                             [n](Node<Scalar>& self) {
                               self.parents[0]->accumulate(Node<Scalar>::Array::Constant(
                                   n, self.grad[0] / static_cast<Scalar>(n)));
                             });
}

#define EMAG_INSTANTIATE(S)                                                                     \
  template struct Node<S>;                                                                      \
  template class Tensor<S>;                                                                     \
  template Tensor<S> make_result<S>(Shape, Tensor<S>::Array, const std::vector<Tensor<S>>&,    \
                                    std::function<void(Node<S>&)>);                             \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> bmm(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> transpose(const Tensor<S>&);                                               \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                        \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                          \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> scale(const Tensor<S>&, S);                                                \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                           \
  template Tensor<S> relu(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                 \
  template Tensor<S> tanh(const Tensor<S>&);                                                    \
  template Tensor<S> masked_fill(const Tensor<S>&, const Mask&, S);                             \
  template Tensor<S> dropout(const Tensor<S>&, S, bool, std::mt19937_64&);                      \
  template Tensor<S> softmax(const Tensor<S>&);                                                 \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);       \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                                \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                                \
  template Tensor<S> sum(const Tensor<S>&);                                                     \
  template Tensor<S> mean(const Tensor<S>&);

EMAG_INSTANTIATE(double)
EMAG_INSTANTIATE(float)

#undef EMAG_INSTANTIATE

}  // namespace emag::ad
