#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "egnmt/rng.hpp"

namespace egnmt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Gradient buffer, allocated (zeroed) on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Recording is on by default; decoding turns it off for the current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor with reverse-mode differentiation. Copies share the
// same node, so a copy is an alias, not a clone.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct writes are only meaningful on leaves (parameters, inputs).
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const;
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Runs reverse-mode accumulation from this scalar. Leaf gradients add onto
  // whatever is already in their buffers.
  void backward() const;

  static Tensor make_result(Shape shape, std::vector<T> value,
                            std::vector<const Tensor*> parents,
                            std::function<void(Node<T>&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

// Validity of attention keys: key_valid[b * keys + k] != 0 marks a real key
// for batch row b. `causal` additionally hides keys after the query position.
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> key_valid;
  bool causal = false;

  bool allowed(std::size_t b, std::size_t q, std::size_t k) const {
    if (causal && k > q) return false;
    return key_valid.empty() || key_valid[b * keys + k] != 0;
  }
};

namespace ops {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a: [B, m, k], b: [B, k, n] (or [B, n, k] when transpose_b).
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// Adds a [n] vector to every last-axis slice of a.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);
// [d0, d1, d2, d3] -> [d0, d2, d1, d3]
template <typename T> Tensor<T> swap_middle_axes(const Tensor<T>& a);
// Rows of a [n, ...] tensor picked by index along axis 0.
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, std::span<const std::size_t> rows);

template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
// scores: [batch * heads, queries, keys]; masked entries get weight exactly 0.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const AttentionMask& mask, std::size_t heads);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-6));

// table: [vocab, d]; returns [ids.size(), d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T> Tensor<T> dropout(const Tensor<T>& x, T rate, Rng& rng);

// Token-mean cross-entropy over rows whose target != ignore_index.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::int32_t ignore_index);

}  // namespace ops

// Throws NumericError when any value is NaN or infinite.
template <typename T>
void check_finite(std::span<const T> values, const char* what);

}  // namespace egnmt
