#include "attrib3d/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "attrib3d/errors.hpp"
#include "attrib3d/rng.hpp"

namespace attrib3d::nn {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

template <typename T>
using Ptr = std::shared_ptr<Node<T>>;

// Creates the result node; records parents/backward only when some parent
// needs a gradient and recording is on.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op, std::vector<Ptr<T>> parents,
                      std::function<void(Node<T>&)> bw) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool track = g_grad_enabled;
  if (track) {
    track = std::any_of(parents.begin(), parents.end(), [](const Ptr<T>& p) { return p->requires_grad; });
  }
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return Tensor<T>(std::move(node));
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// out index -> in index map for an axis permutation.
std::vector<std::size_t> permute_map(const Shape& in_shape, const std::vector<std::size_t>& perm, Shape& out_shape) {
  const std::size_t r = in_shape.size();
  out_shape.resize(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_st = strides_of(in_shape);
  std::vector<std::size_t> src_st(r);
  for (std::size_t i = 0; i < r; ++i) src_st[i] = in_st[perm[i]];
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < out_shape[k]) {
        src += src_st[k];
        break;
      }
      src -= src_st[k] * (idx[k] - 1);
      idx[k] = 0;
    }
  }
  return map;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(nn::numel(shape), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != nn::numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
std::size_t Tensor<T>::dim(int i) const {
  return node_->shape[norm_axis(i, node_->shape.size(), "dim")];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
Tape<T> Tape<T>::build(const Tensor<T>& root) {
  Tape tape;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      tape.order.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::run() const {
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  const Tape<T> tape = Tape<T>::build(loss);
  loss.node()->ensure_grad()[0] += T(1);
  tape.run();
}

// ---- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t K = a.dim(-1), M = a.dim(-2);
  const std::size_t bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::size_t N = transpose_b ? b.dim(-2) : b.dim(-1);
  if (bk != K) shape_fail("matmul", a.shape(), b.shape());
  Shape out_shape = a.shape();
  out_shape.back() = N;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

  if (b.rank() == 2) {
    const std::size_t rows = a.numel() / K;
    std::vector<T> out(rows * N);
    CMapR<T> A(a.data().data(), ei(rows), ei(K));
    CMapR<T> B(b.data().data(), ei(b.dim(0)), ei(b.dim(1)));
    MapR<T> C(out.data(), ei(rows), ei(N));
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
    auto pa = a.node_ptr(), pb = b.node_ptr();
    return make_result<T>(out_shape, std::move(out), "matmul", {pa, pb}, [pa, pb, rows, K, N, transpose_b, ei](Node<T>& o) {
      CMapR<T> dC(o.grad.data(), ei(rows), ei(N));
      CMapR<T> B(pb->data.data(), ei(pb->shape[0]), ei(pb->shape[1]));
      if (pa->requires_grad) {
        MapR<T> dA(pa->ensure_grad().data(), ei(rows), ei(K));
        if (transpose_b) {
          dA.noalias() += dC * B;
        } else {
          dA.noalias() += dC * B.transpose();
        }
      }
      if (pb->requires_grad) {
        CMapR<T> A(pa->data.data(), ei(rows), ei(K));
        MapR<T> dB(pb->ensure_grad().data(), ei(pb->shape[0]), ei(pb->shape[1]));
        if (transpose_b) {
          dB.noalias() += dC.transpose() * A;
        } else {
          dB.noalias() += A.transpose() * dC;
        }
      }
    });
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = a.numel() / (M * K);
  const std::size_t br = transpose_b ? N : K, bc = transpose_b ? K : N;
  std::vector<T> out(batch * M * N);
  for (std::size_t i = 0; i < batch; ++i) {
    CMapR<T> A(a.data().data() + i * M * K, ei(M), ei(K));
    CMapR<T> B(b.data().data() + i * K * N, ei(br), ei(bc));
    MapR<T> C(out.data() + i * M * N, ei(M), ei(N));
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<T>(out_shape, std::move(out), "matmul", {pa, pb},
                        [pa, pb, batch, M, K, N, br, bc, transpose_b, ei](Node<T>& o) {
                          for (std::size_t i = 0; i < batch; ++i) {
                            CMapR<T> dC(o.grad.data() + i * M * N, ei(M), ei(N));
                            CMapR<T> B(pb->data.data() + i * K * N, ei(br), ei(bc));
                            CMapR<T> A(pa->data.data() + i * M * K, ei(M), ei(K));
                            if (pa->requires_grad) {
                              MapR<T> dA(pa->ensure_grad().data() + i * M * K, ei(M), ei(K));
                              if (transpose_b) {
                                dA.noalias() += dC * B;
                              } else {
                                dA.noalias() += dC * B.transpose();
                              }
                            }
                            if (pb->requires_grad) {
                              MapR<T> dB(pb->ensure_grad().data() + i * K * N, ei(br), ei(bc));
                              if (transpose_b) {
                                dB.noalias() += dC.transpose() * A;
                              } else {
                                dB.noalias() += A.transpose() * dC;
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0)) shape_fail("linear", x.shape(), w.shape());
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) shape_fail("linear", w.shape(), bias.shape());
  const std::size_t K = w.dim(0), N = w.dim(1), rows = x.numel() / K;
  const auto ei = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  Shape out_shape = x.shape();
  out_shape.back() = N;
  std::vector<T> out(rows * N);
  CMapR<T> X(x.data().data(), ei(rows), ei(K));
  CMapR<T> W(w.data().data(), ei(K), ei(N));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data().data(), ei(N));
  MapR<T> Y(out.data(), ei(rows), ei(N));
  Y.noalias() = X * W;
  Y.rowwise() += b;
  auto px = x.node_ptr(), pw = w.node_ptr(), pb = bias.node_ptr();
  return make_result<T>(out_shape, std::move(out), "linear", {px, pw, pb}, [px, pw, pb, rows, K, N, ei](Node<T>& o) {
    CMapR<T> dY(o.grad.data(), ei(rows), ei(N));
    if (px->requires_grad) {
      CMapR<T> W(pw->data.data(), ei(K), ei(N));
      MapR<T> dX(px->ensure_grad().data(), ei(rows), ei(K));
      dX.noalias() += dY * W.transpose();
    }
    if (pw->requires_grad) {
      CMapR<T> X(px->data.data(), ei(rows), ei(K));
      MapR<T> dW(pw->ensure_grad().data(), ei(K), ei(N));
      dW.noalias() += X.transpose() * dY;
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < N; ++j) g[j] += o.grad[r * N + j];
      }
    }
  });
}

// ---- element-wise ---------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() == 1 && a.rank() >= 1 && a.dim(-1) == b.dim(0);
  if (!same && !bias) shape_fail("add", a.shape(), b.shape());
  std::vector<T> out = a.data();
  const std::size_t nb = b.numel();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[same ? i : i % nb];
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), "add", {pa, pb}, [pa, pb, same, nb](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[same ? i : i % nb] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.node_ptr(), pb = b.node_ptr();
  return make_result<T>(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb](Node<T>& o) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.data());
  for (auto& v : out) v *= s;
  auto px = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), "scale", {px}, [px, s](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
  });
}

// ---- structural -----------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_fail("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != s0[i]) shape_fail("concat", s0, s);
    }
    total += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[ax] = total;
  std::vector<T> out(numel(out_shape));
  std::vector<Ptr<T>> nodes;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[ax] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total * inner + off));
    }
    off += w;
    nodes.push_back(p.node_ptr());
    widths.push_back(w);
  }
  auto captured = nodes;
  return make_result<T>(out_shape, std::move(out), "concat", std::move(nodes),
                        [captured, widths, outer, row = total * inner](Node<T>& o) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < captured.size(); ++k) {
                            const std::size_t w = widths[k];
                            if (captured[k]->requires_grad) {
                              auto& g = captured[k]->ensure_grad();
                              for (std::size_t r = 0; r < outer; ++r) {
                                for (std::size_t j = 0; j < w; ++j) g[r * w + j] += o.grad[r * row + off + j];
                              }
                            }
                            off += w;
                          }
                        });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "slice");
  if (start + length > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[ax] = length;
  const std::size_t row_in = s[ax] * inner, row_out = length * inner, off = start * inner;
  std::vector<T> out(outer * row_out);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(o * row_in + off), row_out,
                out.begin() + static_cast<std::ptrdiff_t>(o * row_out));
  }
  auto px = x.node_ptr();
  return make_result<T>(out_shape, std::move(out), "slice", {px}, [px, outer, row_in, row_out, off](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < outer; ++r) {
      for (std::size_t j = 0; j < row_out; ++j) g[r * row_in + off + j] += o.grad[r * row_out + j];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  auto px = x.node_ptr();
  return make_result<T>(shape, x.data(), "reshape", {px}, [px](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis0, int axis1) {
  const std::size_t r = x.rank();
  const std::size_t a0 = norm_axis(axis0, r, "transpose"), a1 = norm_axis(axis1, r, "transpose");
  std::vector<std::size_t> perm(r);
  for (std::size_t i = 0; i < r; ++i) perm[i] = i;
  std::swap(perm[a0], perm[a1]);
  Shape out_shape;
  auto map = std::make_shared<std::vector<std::size_t>>(permute_map(x.shape(), perm, out_shape));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[(*map)[i]];
  auto px = x.node_ptr();
  return make_result<T>(out_shape, std::move(out), "transpose", {px}, [px, map](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*map)[i]] += o.grad[i];
  });
}

template <typename T>
Tensor<T> tile(const Tensor<T>& x, std::size_t n) {
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
  const std::size_t m = x.numel();
  std::vector<T> out(n * m);
  for (std::size_t k = 0; k < n; ++k) std::copy(x.data().begin(), x.data().end(), out.begin() + static_cast<std::ptrdiff_t>(k * m));
  auto px = x.node_ptr();
  return make_result<T>(out_shape, std::move(out), "tile", {px}, [px, n, m](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < m; ++i) g[i] += o.grad[k * m + i];
    }
  });
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, int axis) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "mean_pool");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  if (n == 0) throw ShapeError("mean_pool: empty axis in " + shape_str(s));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const T* src = x.data().data() + (o * n + k) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j];
    }
  }
  const T inv = T(1) / static_cast<T>(n);
  for (auto& v : out) v *= inv;
  auto px = x.node_ptr();
  return make_result<T>(out_shape, std::move(out), "mean_pool", {px}, [px, outer, inner, n, inv](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < outer; ++r) {
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = 0; j < inner; ++j) g[(r * n + k) * inner + j] += o.grad[r * inner + j] * inv;
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  auto px = x.node_ptr();
  return make_result<T>({}, {s}, "sum", {px}, [px](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (auto& v : g) v += o.grad[0];
  });
}

// ---- embeddings -----------------------------------------------------------

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<std::uint32_t>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= n) throw InputError("embedding_lookup: id " + std::to_string(ids[i]) + " >= " + std::to_string(n));
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto pt = table.node_ptr();
  return make_result<T>({ids.size(), d}, std::move(out), "embedding_lookup", {pt}, [pt, ids, d](Node<T>& o) {
    auto& g = pt->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) g[ids[i] * d + j] += o.grad[i * d + j];
    }
  });
}

template <typename T>
Tensor<T> embedding_bag(const Tensor<T>& table, const std::vector<std::uint32_t>& ids,
                        const std::vector<std::size_t>& offsets) {
  if (table.rank() != 2) throw ShapeError("embedding_bag: table must be 2-D, got " + shape_str(table.shape()));
  if (offsets.empty() || offsets.back() != ids.size()) throw ShapeError("embedding_bag: offsets do not cover ids");
  const std::size_t n = table.dim(0), d = table.dim(1), bags = offsets.size() - 1;
  std::vector<T> out(bags * d, T(0));
  for (std::size_t b = 0; b < bags; ++b) {
    const std::size_t lo = offsets[b], hi = offsets[b + 1];
    if (hi < lo) throw ShapeError("embedding_bag: offsets must be non-decreasing");
    for (std::size_t i = lo; i < hi; ++i) {
      if (ids[i] >= n) throw InputError("embedding_bag: id " + std::to_string(ids[i]) + " >= " + std::to_string(n));
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += table.data()[ids[i] * d + j];
    }
    if (hi > lo) {
      const T inv = T(1) / static_cast<T>(hi - lo);
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv;
    }
  }
  auto pt = table.node_ptr();
  return make_result<T>({bags, d}, std::move(out), "embedding_bag", {pt}, [pt, ids, offsets, d, bags](Node<T>& o) {
    auto& g = pt->ensure_grad();
    for (std::size_t b = 0; b < bags; ++b) {
      const std::size_t lo = offsets[b], hi = offsets[b + 1];
      if (hi == lo) continue;
      const T inv = T(1) / static_cast<T>(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        for (std::size_t j = 0; j < d; ++j) g[ids[i] * d + j] += o.grad[b * d + j] * inv;
      }
    }
  });
}

// ---- normalisation / activations -------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), gamma.shape());
  if (beta.shape() != Shape{d}) shape_fail("layer_norm", x.shape(), beta.shape());
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    double mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += src[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = static_cast<T>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = static_cast<T>((src[j] - mean) * rs);
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gamma.data()[j] + beta.data()[j];
    }
  }
  auto px = x.node_ptr(), pg = gamma.node_ptr(), pb = beta.node_ptr();
  return make_result<T>(x.shape(), std::move(out), "layer_norm", {px, pg, pb},
                        [px, pg, pb, xhat, rstd, rows, d](Node<T>& o) {
                          if (pg->requires_grad || pb->requires_grad) {
                            auto& gg = pg->ensure_grad();
                            auto& gb = pb->ensure_grad();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < d; ++j) {
                                gg[j] += o.grad[r * d + j] * (*xhat)[r * d + j];
                                gb[j] += o.grad[r * d + j];
                              }
                            }
                          }
                          if (!px->requires_grad) return;
                          auto& gx = px->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            double mg = 0, mgx = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const double g = o.grad[r * d + j] * pg->data[j];
                              mg += g;
                              mgx += g * (*xhat)[r * d + j];
                            }
                            mg /= static_cast<double>(d);
                            mgx /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              const double g = o.grad[r * d + j] * pg->data[j];
                              gx[r * d + j] += static_cast<T>((*rstd)[r] * (g - mg - (*xhat)[r * d + j] * mgx));
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t d = x.dim(-1), rows = x.numel() / d;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * d;
    T* dst = out.data() + r * d;
    const T mx = *std::max_element(src, src + d);
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = static_cast<T>(std::exp(static_cast<double>(src[j] - mx)));
      s += dst[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<T>(dst[j] * inv);
  }
  auto px = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), "softmax", {px}, [px, rows, d](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.data.data() + r * d;
      const T* dy = o.grad.data() + r * d;
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(dy[j]) * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += static_cast<T>(y[j] * (dy[j] - dot));
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const double rs2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * rs2)));
  }
  auto px = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), "gelu", {px}, [px, rs2](Node<T>& o) {
    auto& g = px->ensure_grad();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = px->data[i];
      const double dv = 0.5 * (1.0 + std::erf(v * rs2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += static_cast<T>(o.grad[i] * dv);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t seed, bool training) {
  if (!training || p <= 0.0) return x;
  auto mask = std::make_shared<std::vector<T>>(x.numel(), T(0));
  if (p < 1.0) {
    Rng rng(seed);
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : *mask) m = rng.bernoulli(p) ? T(0) : keep;
  }
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * (*mask)[i];
  auto px = x.node_ptr();
  return make_result<T>(x.shape(), std::move(out), "dropout", {px}, [px, mask](Node<T>& o) {
    auto& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::uint32_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  for (auto y : labels) {
    if (y >= C) throw LabelError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
  }
  auto probs = std::make_shared<std::vector<double>>(B * C);
  double total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = logits.data().data() + b * C;
    const std::size_t jmax = static_cast<std::size_t>(std::max_element(z, z + C) - z);
    double rest = 0;  // sum of exp(z_j - max) over j != argmax, for a log1p-accurate lse
    for (std::size_t j = 0; j < C; ++j) {
      const double e = std::exp(static_cast<double>(z[j]) - z[jmax]);
      (*probs)[b * C + j] = e;
      if (j != jmax) rest += e;
    }
    const double lse = static_cast<double>(z[jmax]) + std::log1p(rest);
    for (std::size_t j = 0; j < C; ++j) (*probs)[b * C + j] /= (1.0 + rest);
    total += lse - z[labels[b]];
  }
  auto pl = logits.node_ptr();
  return make_result<T>({}, {static_cast<T>(total / static_cast<double>(B))}, "cross_entropy", {pl},
                        [pl, probs, labels, B, C](Node<T>& o) {
                          auto& g = pl->ensure_grad();
                          const double s = static_cast<double>(o.grad[0]) / static_cast<double>(B);
                          for (std::size_t b = 0; b < B; ++b) {
                            for (std::size_t j = 0; j < C; ++j) {
                              const double t = (*probs)[b * C + j] - (j == labels[b] ? 1.0 : 0.0);
                              g[b * C + j] += static_cast<T>(s * t);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mask_keys(const Tensor<T>& scores, const std::vector<std::uint8_t>& valid) {
  if (scores.rank() != 4 || valid.size() != scores.dim(0) * scores.dim(3)) {
    throw ShapeError("mask_keys: scores " + shape_str(scores.shape()) + " vs mask of " + std::to_string(valid.size()));
  }
  const std::size_t B = scores.dim(0), rows = scores.dim(1) * scores.dim(2), Tk = scores.dim(3);
  constexpr T kMasked = T(-1e9);
  std::vector<T> out(scores.data());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < Tk; ++k) {
        if (!valid[b * Tk + k]) out[(b * rows + r) * Tk + k] = kMasked;
      }
    }
  }
  auto ps = scores.node_ptr();
  return make_result<T>(scores.shape(), std::move(out), "mask_keys", {ps}, [ps, valid, B, rows, Tk](Node<T>& o) {
    auto& g = ps->ensure_grad();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < Tk; ++k) {
          if (valid[b * Tk + k]) g[(b * rows + r) * Tk + k] += o.grad[(b * rows + r) * Tk + k];
        }
      }
    }
  });
}

template <typename T>
const Tensor<T>& check_finite(const Tensor<T>& x, const std::string& where) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(where + ": non-finite value in tensor " + shape_str(x.shape()));
  }
  return x;
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return Tensor<To>::from(x.shape(), std::move(out), x.requires_grad());
}

#define ATTRIB3D_INSTANTIATE(T)                                                                                  \
  template class Tensor<T>;                                                                                      \
  template struct Tape<T>;                                                                                       \
  template void backward<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool);                                         \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                               \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                                               \
  template Tensor<T> slice<T>(const Tensor<T>&, int, std::size_t, std::size_t);                                   \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                                                  \
  template Tensor<T> transpose<T>(const Tensor<T>&, int, int);                                                    \
  template Tensor<T> tile<T>(const Tensor<T>&, std::size_t);                                                      \
  template Tensor<T> mean_pool<T>(const Tensor<T>&, int);                                                         \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> embedding_lookup<T>(const Tensor<T>&, const std::vector<std::uint32_t>&);                    \
  template Tensor<T> embedding_bag<T>(const Tensor<T>&, const std::vector<std::uint32_t>&,                        \
                                      const std::vector<std::size_t>&);                                          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                                \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                   \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, std::uint64_t, bool);                                   \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<std::uint32_t>&);                       \
  template Tensor<T> mask_keys<T>(const Tensor<T>&, const std::vector<std::uint8_t>&);                            \
  template const Tensor<T>& check_finite<T>(const Tensor<T>&, const std::string&);

ATTRIB3D_INSTANTIATE(float)
ATTRIB3D_INSTANTIATE(double)
#undef ATTRIB3D_INSTANTIATE

template Tensor<double> cast<double, float>(const Tensor<float>&);
template Tensor<float> cast<float, double>(const Tensor<double>&);

}  // namespace attrib3d::nn
