#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double-precision arrays. Every op records a backward closure on its output
// node while gradient recording is enabled; Tensor::backward() replays the
// closures in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mgalign {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Zero-initialized gradient buffer of this node, allocated on demand.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Size along `axis`; negative axes count from the back.
  int size(int axis) const;
  std::size_t numel() const { return values().size(); }

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  // Seeds d(self)/d(self) = 1 for a one-element tensor and propagates.
  void backward() const;

  // New leaf holding a copy of the values, detached from the graph.
  Tensor detach() const;
  // Same values viewed with a different shape; differentiable.
  Tensor reshape(Shape shape) const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. When recording is enabled and an input needs a
// gradient, the inputs are retained and `backward` is attached to the node.
using BackwardFn = std::function<void(detail::Node& self)>;
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

// Gradient accumulator of an input node, or nullptr if it needs none.
double* grad_target(const Tensor& t);

// ---- elementwise and linear algebra -------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
// x[..., C] + bias[C]
Tensor add_bias(const Tensor& x, const Tensor& bias);
// a[n, k] @ b[k, m]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] @ w[in, out] (+ b[out])
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
// Row i of x[R, C] multiplied by factors[i].
Tensor scale_rows(const Tensor& x, std::span<const double> factors);

// ---- convolution (NHWC activations) -------------------------------------

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

// x[N, H, W, Cin], w[k*k*Cin, Cout], bias[Cout] -> [N, Ho, Wo, Cout]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, ConvGeometry g);
// x[N, H, W, Cin], w[Cin, k*k*Cout], bias[Cout] -> [N, Ho, Wo, Cout] with
// Ho = (H - 1) * stride - 2 * pad + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* bias, ConvGeometry g);

// ---- normalization -------------------------------------------------------

// Per-channel normalization over all leading axes of x[..., C]. In training
// mode batch statistics are used and the running buffers updated in place.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// ---- sequence ops ---------------------------------------------------------

// weight[V, D] rows selected by ids; result shape = ids_shape + [D].
Tensor embedding(const Tensor& weight, std::span<const int> ids, Shape ids_shape);
// Rows [0, L) of table[maxL, D] broadcast over a batch: [B, L, D].
Tensor broadcast_rows(const Tensor& table, int batch, int length);
// Multi-head scaled dot-product attention on already-projected q/k/v.
// key_valid[b * Lk + j] != 0 marks usable keys; every batch row must have
// at least one usable key.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const unsigned char> key_valid, int heads);
// Concatenate [B, La, D] and [B, Lb, D] along the sequence axis.
Tensor concat_seq(const Tensor& a, const Tensor& b);
// Positions [start, start + len) of x[B, L, D].
Tensor slice_seq(const Tensor& x, int start, int len);
// Rows of x viewed as [R, D].
Tensor gather_rows(const Tensor& x, std::span<const int> rows);

}  // namespace mgalign
