#include "egnmt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "egnmt/errors.hpp"

namespace egnmt {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool recording = true;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

void require(bool condition, const std::string& message) {
  if (!condition) throw ShapeError(message);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

bool grad_enabled() { return recording; }

NoGradGuard::NoGradGuard() : previous_(recording) { recording = false; }
NoGradGuard::~NoGradGuard() { recording = previous_; }

template <typename T>
void check_finite(std::span<const T> values, const char* what) {
  // x * 0 is NaN exactly when x is NaN or infinite; the sum vectorizes.
  T probe = T(0);
  for (T v : values) probe += v * T(0);
  if (probe != probe) throw NumericError(std::string("non-finite value produced by ") + what);
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(shape_size(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values, bool requires_grad) {
  for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + shape_string(shape));
  require(shape_size(shape) == values.size(),
          "shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node<T>>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->leaf = true;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  require(index.size() == rank(), "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    require(i < node_->shape[axis], "index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> value, std::vector<const Tensor*> parents,
                                 std::function<void(Node<T>&)> backward_fn) {
  check_finite<T>(value, "forward operation");
  Tensor out = from(shape, std::move(value), false);
  bool needs = false;
  if (recording) {
    for (auto* p : parents) needs = needs || p->requires_grad();
  }
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->leaf = false;
    for (auto* p : parents) out.node_->parents.push_back(p->node_);
    out.node_->backward = std::move(backward_fn);
  }
  return out;
}

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1 || rank() != 0) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Node ids increase with creation, so descending id is reverse execution order.
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });
  for (auto* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), T(0));
  }
  node_->grad_buffer()[0] += T(1);
  for (auto* n : order) {
    if (!n->leaf && n->backward) n->backward(*n);
  }
}

namespace ops {

namespace {

template <typename T>
bool wants(const Node<T>& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

template <typename T>
std::vector<T>& parent_grad(Node<T>& self, std::size_t parent) {
  return self.parents[parent]->grad_buffer();
}

template <typename T>
const std::vector<T>& parent_value(Node<T>& self, std::size_t parent) {
  return self.parents[parent]->value;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
  std::vector<T> out(m * n);
  MutMap<T>(out.data(), m, n).noalias() = ConstMap<T>(a.data().data(), m, k) * ConstMap<T>(b.data().data(), k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    ConstMap<T> grad_out(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MutMap<T>(parent_grad(self, 0).data(), m, k).noalias() +=
          grad_out * ConstMap<T>(parent_value(self, 1).data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      MutMap<T>(parent_grad(self, 1).data(), k, n).noalias() +=
          ConstMap<T>(parent_value(self, 0).data(), m, k).transpose() * grad_out;
    }
  });
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3, "batched_matmul expects 3-D operands");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  require(b.dim(0) == batch, "batched_matmul batch sizes disagree");
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == k, "batched_matmul inner dimensions disagree: " +
                                                         shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<T> out(batch * m * n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap<T> c(out.data() + i * m * n, m, n);
    ConstMap<T> ai(pa + i * m * k, m, k);
    if (transpose_b) {
      c.noalias() = ai * ConstMap<T>(pb + i * n * k, n, k).transpose();
    } else {
      c.noalias() = ai * ConstMap<T>(pb + i * k * n, k, n);
    }
  }
  return Tensor<T>::make_result({batch, m, n}, std::move(out), {&a, &b}, [=](Node<T>& self) {
    const T* va = parent_value(self, 0).data();
    const T* vb = parent_value(self, 1).data();
    const bool ga = wants(self, 0), gb = wants(self, 1);
    T* da = ga ? parent_grad(self, 0).data() : nullptr;
    T* db = gb ? parent_grad(self, 1).data() : nullptr;
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap<T> g(self.grad.data() + i * m * n, m, n);
      if (transpose_b) {
        // c = a b^T: da = g b, db = g^T a
        if (ga) MutMap<T>(da + i * m * k, m, k).noalias() += g * ConstMap<T>(vb + i * n * k, n, k);
        if (gb) MutMap<T>(db + i * n * k, n, k).noalias() += g.transpose() * ConstMap<T>(va + i * m * k, m, k);
      } else {
        if (ga) MutMap<T>(da + i * m * k, m, k).noalias() += g * ConstMap<T>(vb + i * k * n, k, n).transpose();
        if (gb) MutMap<T>(db + i * k * n, k, n).noalias() += ConstMap<T>(va + i * m * k, m, k).transpose() * g;
      }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, "transpose expects a 2-D tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  MutMap<T>(out.data(), n, m) = ConstMap<T>(a.data().data(), m, n).transpose();
  return Tensor<T>::make_result({n, m}, std::move(out), {&a}, [m, n](Node<T>& self) {
    MutMap<T>(parent_grad(self, 0).data(), m, n) += ConstMap<T>(self.grad.data(), n, m).transpose();
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = parent_grad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "sub shape mismatch");
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = parent_grad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "mul shape mismatch");
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const auto& va = parent_value(self, 0);
    const auto& vb = parent_value(self, 1);
    if (wants(self, 0)) {
      auto& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * vb[i];
    }
    if (wants(self, 1)) {
      auto& g = parent_grad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * va[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {&a}, [factor](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  require(bias.rank() == 1 && a.rank() >= 1 && a.shape().back() == bias.dim(0),
          "add_row: bias " + shape_string(bias.shape()) + " does not match " + shape_string(a.shape()));
  const std::size_t n = bias.dim(0);
  const std::size_t rows = a.size() / n;
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vb = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += vb[j];
  return Tensor<T>::make_result(a.shape(), std::move(out), {&a, &bias}, [rows, n](Node<T>& self) {
    if (wants(self, 0)) {
      auto& g = parent_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = parent_grad(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return Tensor<T>::make_result(a.shape(), std::move(out), {&a}, [](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    const auto& x = parent_value(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return Tensor<T>::make_result(Shape{}, {total}, {&a}, [](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  require(shape_size(shape) == a.size(), "reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::make_result(shape, std::move(out), {&a}, [](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> swap_middle_axes(const Tensor<T>& a) {
  require(a.rank() == 4, "swap_middle_axes expects a 4-D tensor");
  const std::size_t d0 = a.dim(0), d1 = a.dim(1), d2 = a.dim(2), d3 = a.dim(3);
  std::vector<T> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j)
      for (std::size_t k = 0; k < d2; ++k) {
        const T* src = in.data() + ((i * d1 + j) * d2 + k) * d3;
        T* dst = out.data() + ((i * d2 + k) * d1 + j) * d3;
        std::copy(src, src + d3, dst);
      }
  return Tensor<T>::make_result({d0, d2, d1, d3}, std::move(out), {&a}, [=](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < d0; ++i)
      for (std::size_t j = 0; j < d1; ++j)
        for (std::size_t k = 0; k < d2; ++k) {
          T* dst = g.data() + ((i * d1 + j) * d2 + k) * d3;
          const T* src = self.grad.data() + ((i * d2 + k) * d1 + j) * d3;
          for (std::size_t l = 0; l < d3; ++l) dst[l] += src[l];
        }
  });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& a, std::span<const std::size_t> rows) {
  require(a.rank() >= 1 && !rows.empty(), "index_select needs a non-empty row list");
  const std::size_t stride = a.size() / a.dim(0);
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  std::vector<T> out(picked.size() * stride);
  auto in = a.data();
  for (std::size_t r = 0; r < picked.size(); ++r) {
    require(picked[r] < a.dim(0), "index_select row out of range");
    std::copy_n(in.data() + picked[r] * stride, stride, out.data() + r * stride);
  }
  Shape shape = a.shape();
  shape[0] = picked.size();
  return Tensor<T>::make_result(shape, std::move(out), {&a}, [picked, stride](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t r = 0; r < picked.size(); ++r)
      for (std::size_t j = 0; j < stride; ++j) g[picked[r] * stride + j] += self.grad[r * stride + j];
  });
}

namespace {

template <typename T>
void softmax_backward_rows(Node<T>& self, std::size_t n) {
  auto& g = parent_grad(self, 0);
  const std::size_t rows = self.value.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* y = self.value.data() + r * n;
    const T* dy = self.grad.data() + r * n;
    T dot = T(0);
    for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
    T* dx = g.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require(x.rank() >= 1, "softmax_rows needs at least one axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * n;
    T hi = *std::max_element(row, row + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) total += (row[j] = std::exp(row[j] - hi));
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {&x},
                                [n](Node<T>& self) { softmax_backward_rows(self, n); });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const AttentionMask& mask, std::size_t heads) {
  require(scores.rank() == 3, "masked_softmax expects [batch*heads, queries, keys]");
  const std::size_t bh = scores.dim(0), nq = scores.dim(1), nk = scores.dim(2);
  require(heads > 0 && bh == mask.batch * heads && nq == mask.queries && nk == mask.keys,
          "attention mask does not match scores " + shape_string(scores.shape()));
  require(mask.key_valid.empty() || mask.key_valid.size() == mask.batch * nk, "attention key mask size");
  std::vector<T> out(scores.size(), T(0));
  auto in = scores.data();
  for (std::size_t i = 0; i < bh; ++i) {
    const std::size_t b = i / heads;
    for (std::size_t q = 0; q < nq; ++q) {
      const T* s = in.data() + (i * nq + q) * nk;
      T* o = out.data() + (i * nq + q) * nk;
      T hi = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < nk; ++k)
        if (mask.allowed(b, q, k)) hi = std::max(hi, s[k]);
      if (hi == -std::numeric_limits<T>::infinity()) continue;  // no visible key: all-zero row
      T total = T(0);
      for (std::size_t k = 0; k < nk; ++k)
        if (mask.allowed(b, q, k)) total += (o[k] = std::exp(s[k] - hi));
      for (std::size_t k = 0; k < nk; ++k) o[k] /= total;
    }
  }
  return Tensor<T>::make_result(scores.shape(), std::move(out), {&scores},
                                [nk](Node<T>& self) { softmax_backward_rows(self, nk); });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(gain.rank() == 1 && bias.rank() == 1 && x.rank() >= 1 && x.shape().back() == gain.dim(0) &&
              bias.dim(0) == gain.dim(0),
          "layer_norm dimension mismatch");
  const std::size_t d = gain.dim(0);
  const std::size_t rows = x.size() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.size());
  auto in = x.data();
  auto vg = gain.data();
  auto vb = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = vg[j] * h + vb[j];
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                                [d, rows, xhat, rstd](Node<T>& self) {
    const auto& vg = parent_value(self, 1);
    const T* dy = self.grad.data();
    if (wants(self, 0)) {
      auto& dx = parent_grad(self, 0);
      std::vector<T> dh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dh = T(0), mean_dh_h = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = dy[r * d + j] * vg[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * (*xhat)[r * d + j];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j)
          dx[r * d + j] += (*rstd)[r] * (dh[j] - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
      }
    }
    if (wants(self, 1)) {
      auto& dg = parent_grad(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
    }
    if (wants(self, 2)) {
      auto& dbias = parent_grad(self, 2);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) dbias[j] += dy[r * d + j];
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require(table.rank() == 2, "embedding table must be 2-D");
  require(!ids.empty(), "embedding lookup of an empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  std::vector<T> out(rows.size() * d);
  auto in = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab)
      throw InputError("token id " + std::to_string(rows[i]) + " outside vocabulary of size " + std::to_string(vocab));
    std::copy_n(in.data() + rows[i] * d, d, out.data() + i * d);
  }
  return Tensor<T>::make_result({rows.size(), d}, std::move(out), {&table}, [rows, d](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[i * d + j];
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw ContractError("dropout rate must be below 1");
  auto keep = std::make_shared<std::vector<T>>(x.size());
  const T factor = T(1) / (T(1) - rate);
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*keep)[i] = rng.uniform() >= static_cast<double>(rate) ? factor : T(0);
    out[i] = in[i] * (*keep)[i];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {&x}, [keep](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*keep)[i];
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, std::int32_t ignore_index) {
  require(logits.rank() == 2 && logits.dim(0) == targets.size(), "cross_entropy: logits rows must match targets");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  auto probs = std::make_shared<std::vector<T>>(logits.size());
  std::vector<std::int32_t> gold(targets.begin(), targets.end());
  auto in = logits.data();
  T total = T(0);
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * vocab;
    T* p = probs->data() + r * vocab;
    T hi = *std::max_element(row, row + vocab);
    T z = T(0);
    for (std::size_t j = 0; j < vocab; ++j) z += (p[j] = std::exp(row[j] - hi));
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    if (gold[r] == ignore_index) continue;
    if (gold[r] < 0 || static_cast<std::size_t>(gold[r]) >= vocab) throw InputError("target id outside vocabulary");
    total += -(row[gold[r]] - hi - std::log(z));
    ++counted;
  }
  const T denom = counted ? static_cast<T>(counted) : T(1);
  return Tensor<T>::make_result(Shape{}, {total / denom}, {&logits},
                                [probs, gold, rows, vocab, ignore_index, denom](Node<T>& self) {
    auto& g = parent_grad(self, 0);
    const T upstream = self.grad[0] / denom;
    for (std::size_t r = 0; r < rows; ++r) {
      if (gold[r] == ignore_index) continue;
      const T* p = probs->data() + r * vocab;
      T* dr = g.data() + r * vocab;
      for (std::size_t j = 0; j < vocab; ++j) dr[j] += upstream * p[j];
      dr[gold[r]] -= upstream;
    }
  });
}

#define EGNMT_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool);                            \
  template Tensor<T> transpose(const Tensor<T>&);                                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                                          \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                               \
  template Tensor<T> mean(const Tensor<T>&);                                                              \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                             \
  template Tensor<T> swap_middle_axes(const Tensor<T>&);                                                  \
  template Tensor<T> index_select(const Tensor<T>&, std::span<const std::size_t>);                        \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                      \
  template Tensor<T> masked_softmax(const Tensor<T>&, const AttentionMask&, std::size_t);                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                 \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);                          \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng&);                                                  \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, std::int32_t);

EGNMT_INSTANTIATE_OPS(float)
EGNMT_INSTANTIATE_OPS(double)
#undef EGNMT_INSTANTIATE_OPS

}  // namespace ops

template class Tensor<float>;
template class Tensor<double>;
template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);

}  // namespace egnmt
