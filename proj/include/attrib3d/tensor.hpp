#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace attrib3d::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle with reverse-mode autodiff. Copies share the
/// underlying node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Extent of axis i; negative i counts from the end.
  std::size_t dim(int i) const;
  std::size_t numel() const { return node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  /// Allocates (if needed) and zero-fills the gradient buffer.
  void zero_grad();

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Recorded ops reachable from a root, inputs before outputs.
template <typename T>
struct Tape {
  std::vector<Node<T>*> order;

  static Tape build(const Tensor<T>& root);
  /// Runs backward closures in reverse topological order; each node once.
  void run() const;
};

/// Seeds d(loss)/d(loss) = 1 and back-propagates. Throws ShapeError unless
/// `loss` has exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

/// Gradient recording is on by default; disabled per thread inside a guard.
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

// ---- ops ----------------------------------------------------------------

/// a [..., M, K] x b. If b is 2-D [K, N] it is shared across the leading
/// axes of a; otherwise b must be [..., K, N] with the same leading axes
/// ([..., N, K] when transpose_b).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// x [..., K] * w [K, N] + bias [N].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Same shapes, or b 1-D matching the last axis of a (bias add).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
/// Swaps two axes (materialised).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1);
/// Prepends a new leading axis of extent n by repetition.
template <typename T>
Tensor<T> tile(const Tensor<T>& x, std::size_t n);

/// Mean over one axis; the axis is removed.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, int axis);
/// Sum of all elements, shape {}.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Rows of `table` [N, d] selected by ids -> [ids.size(), d].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::uint32_t>& ids);
/// Mean of table rows per bag; bag b owns ids[offsets[b] .. offsets[b+1]).
/// Empty bags give zero rows.
template <typename T>
Tensor<T> embedding_bag(const Tensor<T>& table, const std::vector<std::uint32_t>& ids,
                        const std::vector<std::size_t>& offsets);

/// Normalises the last axis, then gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);
/// Softmax over the last axis with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);
/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// Inverted dropout; identity when !training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t seed, bool training);
/// Mean negative log-likelihood of logits [B, C] at labels. Throws LabelError.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::uint32_t>& labels);

/// Attention scores [B, H, Tq, Tk]: keys with valid[b * Tk + k] == 0 get a
/// large negative score and no gradient.
template <typename T>
Tensor<T> mask_keys(const Tensor<T>& scores, const std::vector<std::uint8_t>& valid);

/// Throws NumericError naming `where` if any element is NaN or infinite.
template <typename T>
const Tensor<T>& check_finite(const Tensor<T>& x, const std::string& where);

/// Element-wise cast; the result is a new leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x);

}  // namespace attrib3d::nn
