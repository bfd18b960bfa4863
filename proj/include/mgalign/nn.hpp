#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgalign/tensor.hpp"

namespace mgalign::nn {

using Rng = std::mt19937_64;

// Base for anything that owns parameters. Parameters, buffers, and child
// modules are registered by address, so modules are neither copyable nor
// movable once constructed.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  // Parameters in registration order with dotted names, e.g. "trunk.stem.weight".
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  // Non-trainable state (normalization statistics).
  std::vector<std::pair<std::string, Tensor>> named_buffers() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  void set_training(bool on);
  bool training() const noexcept { return training_; }
  void zero_grad();

 protected:
  void register_parameter(std::string name, Tensor* t);
  void register_buffer(std::string name, Tensor* t);
  void register_module(std::string name, Module* m);

 private:
  void collect(const std::string& prefix, bool buffers, std::vector<std::pair<std::string, Tensor>>& out) const;

  bool training_ = true;
  std::vector<std::pair<std::string, Tensor*>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

Tensor normal_init(Shape shape, double stddev, Rng& rng);

class Linear : public Module {
 public:
  Linear(int in, int out, Rng& rng, bool bias = true);
  Tensor forward(const Tensor& x) const;

  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

class Conv2d : public Module {
 public:
  Conv2d(int in, int out, ConvGeometry geometry, Rng& rng, bool bias = true);
  Tensor forward(const Tensor& x) const;

  Tensor weight;  // [k*k*in, out]
  Tensor bias;
  ConvGeometry geometry;
};

class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(int in, int out, ConvGeometry geometry, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;  // [in, k*k*out]
  Tensor bias;
  ConvGeometry geometry;
};

class BatchNorm : public Module {
 public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x);

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum, eps;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int dim, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta;
  double eps;
};

class Embedding : public Module {
 public:
  Embedding(int vocab, int dim, Rng& rng, double stddev = 1.0);
  Tensor forward(std::span<const int> ids, Shape ids_shape) const;

  Tensor weight;  // [vocab, dim]
};

class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(int dim, int heads, Rng& rng);
  // query[B, Lq, D] attends over context[B, Lk, D]; key_valid masks context
  // positions.
  Tensor forward(const Tensor& query, const Tensor& context, std::span<const unsigned char> key_valid) const;

  int heads;
  Linear q_proj, k_proj, v_proj, out_proj;
};

class FeedForward : public Module {
 public:
  FeedForward(int dim, int hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Linear fc1, fc2;
};

// Pre-norm self-attention transformer layer.
class SelfAttentionBlock : public Module {
 public:
  SelfAttentionBlock(int dim, int heads, Rng& rng);
  Tensor forward(const Tensor& x, std::span<const unsigned char> key_valid) const;

  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ffn;
};

// Pre-norm cross-attention layer: the query stream attends to a second
// stream, then passes through a feed-forward sublayer; both sublayers are
// residual.
class CrossAttentionBlock : public Module {
 public:
  CrossAttentionBlock(int dim, int heads, Rng& rng);
  Tensor forward(const Tensor& query, const Tensor& context, std::span<const unsigned char> context_valid) const;

  LayerNorm norm_query;
  LayerNorm norm_context;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward ffn;
};

}  // namespace mgalign::nn
