#include "mgalign/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "mgalign/error.hpp"

namespace mgalign {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

// out[j] += sum over r of g[r, j]. Plain loops: Eigen's reductions peel by
// pointer alignment, which would make results depend on where buffers land.
void add_column_sums(const double* g, int rows, int cols, double* out) {
  std::vector<double> acc(static_cast<std::size_t>(cols), 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* row = g + static_cast<std::size_t>(r) * cols;
    for (int j = 0; j < cols; ++j) acc[static_cast<std::size_t>(j)] += row[j];
  }
  for (int j = 0; j < cols; ++j) out[j] += acc[static_cast<std::size_t>(j)];
}

// Rows of a tensor flattened over every axis but the last.
int leading_rows(const Tensor& t) { return static_cast<int>(t.numel() / t.size(-1)); }

struct Im2ColDims {
  int n, h, w, c;  // image
  int ho, wo;      // convolution grid
  int k, stride, pad;
};

void im2col(const double* x, const Im2ColDims& d, double* cols) {
  const int kk_c = d.k * d.k * d.c;
  for (int n = 0; n < d.n; ++n) {
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox) {
        double* row = cols + (static_cast<std::size_t>(n * d.ho + oy) * d.wo + ox) * kk_c;
        for (int ky = 0; ky < d.k; ++ky) {
          const int iy = oy * d.stride - d.pad + ky;
          for (int kx = 0; kx < d.k; ++kx) {
            const int ix = ox * d.stride - d.pad + kx;
            double* dst = row + (ky * d.k + kx) * d.c;
            if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
              std::fill(dst, dst + d.c, 0.0);
            } else {
              const double* src = x + (static_cast<std::size_t>(n * d.h + iy) * d.w + ix) * d.c;
              std::copy(src, src + d.c, dst);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the image.
void col2im(const double* cols, const Im2ColDims& d, double* x) {
  const int kk_c = d.k * d.k * d.c;
  for (int n = 0; n < d.n; ++n) {
    for (int oy = 0; oy < d.ho; ++oy) {
      for (int ox = 0; ox < d.wo; ++ox) {
        const double* row = cols + (static_cast<std::size_t>(n * d.ho + oy) * d.wo + ox) * kk_c;
        for (int ky = 0; ky < d.k; ++ky) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (int kx = 0; kx < d.k; ++kx) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.w) continue;
            const double* src = row + (ky * d.k + kx) * d.c;
            double* dst = x + (static_cast<std::size_t>(n * d.h + iy) * d.w + ix) * d.c;
            for (int c = 0; c < d.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

void add_into(double* dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (values.size() != shape_numel(shape)) {
    throw Error(ErrorCode::BadShape, "value count " + std::to_string(values.size()) +
                                         " does not match shape " + shape_str(shape));
  }
  node_->value = std::move(values);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::size(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw Error(ErrorCode::BadShape, "axis out of range");
  return node_->shape[static_cast<std::size_t>(axis)];
}

std::span<double> Tensor::values() { return node_->value; }
std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::BadShape, "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<double> Tensor::grad() { return node_->grad_buffer(); }
std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (numel() != 1) throw Error(ErrorCode::BadShape, "backward() needs a one-element tensor");
  if (!requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw Error(ErrorCode::BadShape, "cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  auto src = node_.get();
  return make_result(std::move(shape), node_->value, {*this}, [src](detail::Node& self) {
    if (!src->requires_grad) return;
    add_into(src->grad_buffer().data(), self.grad.data(), self.grad.size());
  });
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (const auto& in : inputs) {
    if (in.defined()) node->inputs.push_back(in.node_ptr());
  }
  node->backward_fn = std::move(backward);
  return out;
}

double* grad_target(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.node()->grad_buffer().data();
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (double* ga = grad_target(a)) add_into(ga, self.grad.data(), self.grad.size());
    if (double* gb = grad_target(b)) add_into(gb, self.grad.data(), self.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    if (double* ga = grad_target(a)) add_into(ga, self.grad.data(), self.grad.size());
    if (double* gb = grad_target(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](detail::Node& self) {
    auto av = a.values(), bv = b.values();
    if (double* ga = grad_target(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (double* gb = grad_target(b)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [a, factor](detail::Node& self) {
    if (double* ga = grad_target(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result(Shape{1}, {total}, {a}, [a](detail::Node& self) {
    if (double* ga = grad_target(a)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const int c = x.size(-1);
  require(bias.numel() == static_cast<std::size_t>(c), "add_bias: channel mismatch");
  const int rows = leading_rows(x);
  std::vector<double> out(x.values().begin(), x.values().end());
  auto bv = bias.values();
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(r) * c + j] += bv[j];
  }
  return make_result(x.shape(), std::move(out), {x, bias}, [x, bias, rows, c](detail::Node& self) {
    if (double* gx = grad_target(x)) add_into(gx, self.grad.data(), self.grad.size());
    if (double* gb = grad_target(bias)) {
      for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < c; ++j) gb[j] += self.grad[static_cast<std::size_t>(r) * c + j];
      }
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.size(1) == b.size(0),
          "matmul: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const int n = a.size(0), k = a.size(1), m = b.size(1);
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  MatMap(out.data(), n, m).noalias() =
      ConstMatMap(a.values().data(), n, k) * ConstMatMap(b.values().data(), k, m);
  return make_result(Shape{n, m}, std::move(out), {a, b}, [a, b, n, k, m](detail::Node& self) {
    ConstMatMap g(self.grad.data(), n, m);
    if (double* ga = grad_target(a)) {
      MatMap(ga, n, k).noalias() += g * ConstMatMap(b.values().data(), k, m).transpose();
    }
    if (double* gb = grad_target(b)) {
      MatMap(gb, k, m).noalias() += ConstMatMap(a.values().data(), n, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require(w.rank() == 2 && x.size(-1) == w.size(0),
          "linear: " + shape_str(x.shape()) + " @ " + shape_str(w.shape()));
  const int rows = leading_rows(x), in = w.size(0), outc = w.size(1);
  Tensor b;
  if (bias) {
    b = *bias;
    require(b.numel() == static_cast<std::size_t>(outc), "linear: bias size");
  }
  // Row by row with a fixed accumulation order, so a row's output never
  // depends on how many other rows (e.g. padding) share the call.
  std::vector<double> out(static_cast<std::size_t>(rows) * outc, 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (int r = 0; r < rows; ++r) {
    double* o = out.data() + static_cast<std::size_t>(r) * outc;
    const double* xr = xv + static_cast<std::size_t>(r) * in;
    for (int i = 0; i < in; ++i) {
      const double a = xr[i];
      const double* wr = wv + static_cast<std::size_t>(i) * outc;
      for (int j = 0; j < outc; ++j) o[j] += a * wr[j];
    }
    if (bias) {
      const double* bv = b.values().data();
      for (int j = 0; j < outc; ++j) o[j] += bv[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = outc;
  return make_result(std::move(shape), std::move(out), {x, w, b},
                     [x, w, b, rows, in, outc](detail::Node& self) {
                       ConstMatMap g(self.grad.data(), rows, outc);
                       if (double* gx = grad_target(x)) {
                         MatMap(gx, rows, in).noalias() +=
                             g * ConstMatMap(w.values().data(), in, outc).transpose();
                       }
                       if (double* gw = grad_target(w)) {
                         MatMap(gw, in, outc).noalias() +=
                             ConstMatMap(x.values().data(), rows, in).transpose() * g;
                       }
                       if (double* gb = grad_target(b)) {
                         add_column_sums(self.grad.data(), rows, outc, gb);
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [x](detail::Node& self) {
    if (double* gx = grad_target(x)) {
      auto xv = x.values();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += self.grad[i];
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  return make_result(x.shape(), std::move(out), {x}, [x](detail::Node& self) {
    if (double* gx = grad_target(x)) {
      auto xv = x.values();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double v = xv[i];
        const double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += self.grad[i] * d;
      }
    }
  });
}

Tensor scale_rows(const Tensor& x, std::span<const double> factors) {
  const int c = x.size(-1);
  const int rows = leading_rows(x);
  require(factors.size() == static_cast<std::size_t>(rows), "scale_rows: factor count");
  std::vector<double> f(factors.begin(), factors.end());
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(r) * c + j] *= f[r];
  }
  return make_result(x.shape(), std::move(out), {x}, [x, f = std::move(f), rows, c](detail::Node& self) {
    if (double* gx = grad_target(x)) {
      for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < c; ++j) {
          const std::size_t i = static_cast<std::size_t>(r) * c + j;
          gx[i] += f[r] * self.grad[i];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, ConvGeometry g) {
  if (x.rank() != 4) throw Error(ErrorCode::BadShape, "conv2d expects NHWC input, got " + shape_str(x.shape()));
  const int n = x.size(0), h = x.size(1), wd = x.size(2), c = x.size(3);
  const int kkc = g.kernel * g.kernel * c;
  require(w.rank() == 2 && w.size(0) == kkc, "conv2d: weight " + shape_str(w.shape()) + " for input " +
                                                 shape_str(x.shape()));
  const int cout = w.size(1);
  const int ho = (h + 2 * g.pad - g.kernel) / g.stride + 1;
  const int wo = (wd + 2 * g.pad - g.kernel) / g.stride + 1;
  if (ho <= 0 || wo <= 0) throw Error(ErrorCode::BadShape, "conv2d: empty output grid");
  const Im2ColDims dims{n, h, wd, c, ho, wo, g.kernel, g.stride, g.pad};
  const int rows = n * ho * wo;

  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * kkc);
  im2col(x.values().data(), dims, cols->data());
  std::vector<double> out(static_cast<std::size_t>(rows) * cout);
  MatMap om(out.data(), rows, cout);
  om.noalias() = ConstMatMap(cols->data(), rows, kkc) * ConstMatMap(w.values().data(), kkc, cout);
  Tensor b;
  if (bias) {
    b = *bias;
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), cout);
  }
  return make_result(Shape{n, ho, wo, cout}, std::move(out), {x, w, b},
                     [x, w, b, cols, dims, rows, kkc, cout](detail::Node& self) {
                       ConstMatMap gout(self.grad.data(), rows, cout);
                       if (double* gw = grad_target(w)) {
                         MatMap(gw, kkc, cout).noalias() += ConstMatMap(cols->data(), rows, kkc).transpose() * gout;
                       }
                       if (double* gb = grad_target(b)) {
                         add_column_sums(self.grad.data(), rows, cout, gb);
                       }
                       if (double* gx = grad_target(x)) {
                         std::vector<double> gcols(static_cast<std::size_t>(rows) * kkc);
                         MatMap(gcols.data(), rows, kkc).noalias() =
                             gout * ConstMatMap(w.values().data(), kkc, cout).transpose();
                         col2im(gcols.data(), dims, gx);
                       }
                     });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor* bias, ConvGeometry g) {
  if (x.rank() != 4) throw Error(ErrorCode::BadShape, "conv_transpose2d expects NHWC input");
  const int n = x.size(0), h = x.size(1), wd = x.size(2), cin = x.size(3);
  require(w.rank() == 2 && w.size(0) == cin && w.size(1) % (g.kernel * g.kernel) == 0,
          "conv_transpose2d: weight " + shape_str(w.shape()));
  const int kkc = w.size(1);
  const int cout = kkc / (g.kernel * g.kernel);
  const int ho = (h - 1) * g.stride - 2 * g.pad + g.kernel;
  const int wo = (wd - 1) * g.stride - 2 * g.pad + g.kernel;
  // The transposed convolution is the adjoint of a convolution from the
  // output image onto the input grid.
  const Im2ColDims dims{n, ho, wo, cout, h, wd, g.kernel, g.stride, g.pad};
  const int rows = n * h * wd;

  std::vector<double> cols(static_cast<std::size_t>(rows) * kkc);
  MatMap(cols.data(), rows, kkc).noalias() =
      ConstMatMap(x.values().data(), rows, cin) * ConstMatMap(w.values().data(), cin, kkc);
  std::vector<double> out(static_cast<std::size_t>(n) * ho * wo * cout, 0.0);
  col2im(cols.data(), dims, out.data());
  Tensor b;
  if (bias) {
    b = *bias;
    MatMap(out.data(), n * ho * wo, cout).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), cout);
  }
  return make_result(Shape{n, ho, wo, cout}, std::move(out), {x, w, b},
                     [x, w, b, dims, rows, cin, kkc, cout](detail::Node& self) {
                       if (double* gb = grad_target(b)) {
                         const int out_rows = static_cast<int>(self.grad.size() / cout);
                         add_column_sums(self.grad.data(), out_rows, cout, gb);
                       }
                       double* gx = grad_target(x);
                       double* gw = grad_target(w);
                       if (!gx && !gw) return;
                       std::vector<double> gcols(static_cast<std::size_t>(rows) * kkc);
                       im2col(self.grad.data(), dims, gcols.data());
                       ConstMatMap gc(gcols.data(), rows, kkc);
                       if (gx) MatMap(gx, rows, cin).noalias() += gc * ConstMatMap(w.values().data(), cin, kkc).transpose();
                       if (gw) MatMap(gw, cin, kkc).noalias() += ConstMatMap(x.values().data(), rows, cin).transpose() * gc;
                     });
}

// ---------------------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, double momentum, double eps) {
  const int c = x.size(-1);
  const int rows = leading_rows(x);
  require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
          "batch_norm: channel mismatch");
  auto xv = x.values();
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (training) {
    std::vector<double> var(c, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < c; ++j) mean[j] += xv[static_cast<std::size_t>(r) * c + j];
    }
    for (double& m : mean) m /= rows;
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < c; ++j) {
        const double d = xv[static_cast<std::size_t>(r) * c + j] - mean[j];
        var[j] += d * d;
      }
    }
    auto rm = running_mean.values(), rv = running_var.values();
    for (int j = 0; j < c; ++j) {
      const double biased = var[j] / rows;
      inv_std[j] = 1.0 / std::sqrt(biased + eps);
      const double unbiased = rows > 1 ? var[j] / (rows - 1) : biased;
      rm[j] = (1.0 - momentum) * rm[j] + momentum * mean[j];
      rv[j] = (1.0 - momentum) * rv[j] + momentum * unbiased;
    }
  } else {
    auto rm = running_mean.values(), rv = running_var.values();
    for (int j = 0; j < c; ++j) {
      mean[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + eps);
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  auto gv = gamma.values(), bv = beta.values();
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < c; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * c + j;
      (*xhat)[i] = (xv[i] - mean[j]) * inv_std[j];
      out[i] = gv[j] * (*xhat)[i] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, rows, c, training](detail::Node& self) {
                       const auto& g = self.grad;
                       std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                       for (int r = 0; r < rows; ++r) {
                         for (int j = 0; j < c; ++j) {
                           const std::size_t i = static_cast<std::size_t>(r) * c + j;
                           sum_g[j] += g[i];
                           sum_gx[j] += g[i] * (*xhat)[i];
                         }
                       }
                       if (double* gg = grad_target(gamma)) add_into(gg, sum_gx.data(), c);
                       if (double* gb = grad_target(beta)) add_into(gb, sum_g.data(), c);
                       if (double* gx = grad_target(x)) {
                         auto gv = gamma.values();
                         for (int r = 0; r < rows; ++r) {
                           for (int j = 0; j < c; ++j) {
                             const std::size_t i = static_cast<std::size_t>(r) * c + j;
                             if (training) {
                               gx[i] += gv[j] * inv_std[j] *
                                        (g[i] - sum_g[j] / rows - (*xhat)[i] * sum_gx[j] / rows);
                             } else {
                               gx[i] += gv[j] * inv_std[j] * g[i];
                             }
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int c = x.size(-1);
  const int rows = leading_rows(x);
  require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
          "layer_norm: feature mismatch");
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (int r = 0; r < rows; ++r) {
    const double* row = xv.data() + static_cast<std::size_t>(r) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * c + j;
      (*xhat)[i] = (row[j] - mean) * inv_std[r];
      out[i] = gv[j] * (*xhat)[i] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std = std::move(inv_std), rows, c](detail::Node& self) {
                       const auto& g = self.grad;
                       double* gg = grad_target(gamma);
                       double* gb = grad_target(beta);
                       double* gx = grad_target(x);
                       auto gv = gamma.values();
                       for (int r = 0; r < rows; ++r) {
                         double sum_d = 0.0, sum_dx = 0.0;
                         for (int j = 0; j < c; ++j) {
                           const std::size_t i = static_cast<std::size_t>(r) * c + j;
                           if (gg) gg[j] += g[i] * (*xhat)[i];
                           if (gb) gb[j] += g[i];
                           const double d = g[i] * gv[j];
                           sum_d += d;
                           sum_dx += d * (*xhat)[i];
                         }
                         if (!gx) continue;
                         for (int j = 0; j < c; ++j) {
                           const std::size_t i = static_cast<std::size_t>(r) * c + j;
                           const double d = g[i] * gv[j];
                           gx[i] += inv_std[r] * (d - sum_d / c - (*xhat)[i] * sum_dx / c);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------

Tensor embedding(const Tensor& weight, std::span<const int> ids, Shape ids_shape) {
  require(weight.rank() == 2, "embedding: weight must be 2-D");
  require(shape_numel(ids_shape) == ids.size(), "embedding: id count");
  const int vocab = weight.size(0), d = weight.size(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  auto wv = weight.values();
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] < 0 || idx[t] >= vocab) {
      throw Error(ErrorCode::OutOfVocab, "token id " + std::to_string(idx[t]) + " outside vocabulary of " +
                                             std::to_string(vocab));
    }
    std::copy_n(wv.data() + static_cast<std::size_t>(idx[t]) * d, d, out.data() + t * d);
  }
  Shape shape = std::move(ids_shape);
  shape.push_back(d);
  return make_result(std::move(shape), std::move(out), {weight}, [weight, idx = std::move(idx), d](detail::Node& self) {
    if (double* gw = grad_target(weight)) {
      for (std::size_t t = 0; t < idx.size(); ++t) {
        add_into(gw + static_cast<std::size_t>(idx[t]) * d, self.grad.data() + t * d, d);
      }
    }
  });
}

Tensor broadcast_rows(const Tensor& table, int batch, int length) {
  require(table.rank() == 2 && length <= table.size(0), "broadcast_rows: table too short");
  const int d = table.size(1);
  const std::size_t block = static_cast<std::size_t>(length) * d;
  std::vector<double> out(block * batch);
  for (int b = 0; b < batch; ++b) std::copy_n(table.values().data(), block, out.data() + b * block);
  return make_result(Shape{batch, length, d}, std::move(out), {table}, [table, batch, block](detail::Node& self) {
    if (double* gt = grad_target(table)) {
      for (int b = 0; b < batch; ++b) add_into(gt, self.grad.data() + b * block, block);
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const unsigned char> key_valid,
                 int heads) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention: rank-3 inputs required");
  const int batch = q.size(0), lq = q.size(1), dim = q.size(2), lk = k.size(1);
  require(k.size(0) == batch && v.size(0) == batch && v.size(1) == lk && k.size(2) == dim && v.size(2) == dim,
          "attention: q/k/v shapes disagree");
  require(heads > 0 && dim % heads == 0, "attention: dim not divisible by heads");
  require(key_valid.size() == static_cast<std::size_t>(batch) * lk, "attention: key mask size");
  const int dh = dim / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[((b * heads + h) * lq + i) * lk + j]
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch) * heads * lq * lk, 0.0);
  std::vector<double> out(static_cast<std::size_t>(batch) * lq * dim, 0.0);
  auto qv = q.values(), kv = k.values(), vv = v.values();
  std::vector<int> valid;
  for (int b = 0; b < batch; ++b) {
    valid.clear();
    for (int j = 0; j < lk; ++j) {
      if (key_valid[static_cast<std::size_t>(b) * lk + j]) valid.push_back(j);
    }
    if (valid.empty()) throw Error(ErrorCode::BadShape, "attention: batch row without valid keys");
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < lq; ++i) {
        const double* qi = qv.data() + (static_cast<std::size_t>(b) * lq + i) * dim + h * dh;
        double* p = probs->data() + ((static_cast<std::size_t>(b) * heads + h) * lq + i) * lk;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j : valid) {
          const double* kj = kv.data() + (static_cast<std::size_t>(b) * lk + j) * dim + h * dh;
          double s = 0.0;
          for (int t = 0; t < dh; ++t) s += qi[t] * kj[t];
          p[j] = s * inv_scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (int j : valid) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* oi = out.data() + (static_cast<std::size_t>(b) * lq + i) * dim + h * dh;
        for (int j : valid) {
          p[j] /= z;
          const double* vj = vv.data() + (static_cast<std::size_t>(b) * lk + j) * dim + h * dh;
          for (int t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  std::vector<unsigned char> mask(key_valid.begin(), key_valid.end());
  return make_result(
      Shape{batch, lq, dim}, std::move(out), {q, k, v},
      [q, k, v, probs, mask = std::move(mask), batch, lq, lk, dim, heads, dh, inv_scale](detail::Node& self) {
        double* gq = grad_target(q);
        double* gk = grad_target(k);
        double* gv = grad_target(v);
        auto qv = q.values(), kv = k.values(), vv = v.values();
        std::vector<double> dp(lk);
        for (int b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < lq; ++i) {
              const std::size_t qoff = (static_cast<std::size_t>(b) * lq + i) * dim + h * dh;
              const double* go = self.grad.data() + qoff;
              const double* p = probs->data() + ((static_cast<std::size_t>(b) * heads + h) * lq + i) * lk;
              double dot = 0.0;
              for (int j = 0; j < lk; ++j) {
                if (!mask[static_cast<std::size_t>(b) * lk + j]) continue;
                const std::size_t koff = (static_cast<std::size_t>(b) * lk + j) * dim + h * dh;
                double s = 0.0;
                for (int t = 0; t < dh; ++t) s += go[t] * vv[koff + t];
                dp[j] = s;
                dot += p[j] * s;
                if (gv) {
                  for (int t = 0; t < dh; ++t) gv[koff + t] += p[j] * go[t];
                }
              }
              for (int j = 0; j < lk; ++j) {
                if (!mask[static_cast<std::size_t>(b) * lk + j]) continue;
                const double ds = p[j] * (dp[j] - dot) * inv_scale;
                const std::size_t koff = (static_cast<std::size_t>(b) * lk + j) * dim + h * dh;
                if (gq) {
                  for (int t = 0; t < dh; ++t) gq[qoff + t] += ds * kv[koff + t];
                }
                if (gk) {
                  for (int t = 0; t < dh; ++t) gk[koff + t] += ds * qv[qoff + t];
                }
              }
            }
          }
        }
      });
}

Tensor concat_seq(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.size(0) == b.size(0) && a.size(2) == b.size(2),
          "concat_seq: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  const int batch = a.size(0), la = a.size(1), lb = b.size(1), d = a.size(2);
  const std::size_t ra = static_cast<std::size_t>(la) * d, rb = static_cast<std::size_t>(lb) * d;
  std::vector<double> out((ra + rb) * batch);
  for (int i = 0; i < batch; ++i) {
    std::copy_n(a.values().data() + i * ra, ra, out.data() + i * (ra + rb));
    std::copy_n(b.values().data() + i * rb, rb, out.data() + i * (ra + rb) + ra);
  }
  return make_result(Shape{batch, la + lb, d}, std::move(out), {a, b}, [a, b, batch, ra, rb](detail::Node& self) {
    double* ga = grad_target(a);
    double* gb = grad_target(b);
    for (int i = 0; i < batch; ++i) {
      if (ga) add_into(ga + i * ra, self.grad.data() + i * (ra + rb), ra);
      if (gb) add_into(gb + i * rb, self.grad.data() + i * (ra + rb) + ra, rb);
    }
  });
}

Tensor slice_seq(const Tensor& x, int start, int len) {
  require(x.rank() == 3 && start >= 0 && len >= 0 && start + len <= x.size(1), "slice_seq: range");
  const int batch = x.size(0), l = x.size(1), d = x.size(2);
  const std::size_t row = static_cast<std::size_t>(l) * d, part = static_cast<std::size_t>(len) * d;
  const std::size_t off = static_cast<std::size_t>(start) * d;
  std::vector<double> out(part * batch);
  for (int i = 0; i < batch; ++i) std::copy_n(x.values().data() + i * row + off, part, out.data() + i * part);
  return make_result(Shape{batch, len, d}, std::move(out), {x}, [x, batch, row, part, off](detail::Node& self) {
    if (double* gx = grad_target(x)) {
      for (int i = 0; i < batch; ++i) add_into(gx + i * row + off, self.grad.data() + i * part, part);
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int> rows) {
  const int d = x.size(-1);
  const int total = leading_rows(x);
  std::vector<int> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] >= 0 && idx[r] < total, "gather_rows: row out of range");
    std::copy_n(x.values().data() + static_cast<std::size_t>(idx[r]) * d, d, out.data() + r * d);
  }
  const int n = static_cast<int>(idx.size());
  return make_result(Shape{n, d}, std::move(out), {x}, [x, idx = std::move(idx), d](detail::Node& self) {
    if (double* gx = grad_target(x)) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        add_into(gx + static_cast<std::size_t>(idx[r]) * d, self.grad.data() + r * d, d);
      }
    }
  });
}

}  // namespace mgalign
