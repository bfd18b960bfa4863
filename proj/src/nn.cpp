#include "mgalign/nn.hpp"

#include <cmath>

namespace mgalign::nn {

void Module::register_parameter(std::string name, Tensor* t) {
  t->set_requires_grad(true);
  params_.emplace_back(std::move(name), t);
}

void Module::register_buffer(std::string name, Tensor* t) { buffers_.emplace_back(std::move(name), t); }

void Module::register_module(std::string name, Module* m) { children_.emplace_back(std::move(name), m); }

void Module::collect(const std::string& prefix, bool buffers,
                     std::vector<std::pair<std::string, Tensor>>& out) const {
  for (const auto& [name, t] : buffers ? buffers_ : params_) out.emplace_back(prefix + name, *t);
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", buffers, out);
}

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect("", false, out);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Module::named_buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  collect("", true, out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void Module::set_training(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->set_training(on);
}

void Module::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Linear::Linear(int in, int out, Rng& rng, bool with_bias)
    : weight(normal_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
  register_parameter("weight", &weight);
  if (with_bias) {
    bias = Tensor(Shape{out}, 0.0);
    register_parameter("bias", &bias);
  }
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias.defined() ? &bias : nullptr); }

Conv2d::Conv2d(int in, int out, ConvGeometry g, Rng& rng, bool with_bias)
    : weight(normal_init({g.kernel * g.kernel * in, out}, std::sqrt(2.0 / (g.kernel * g.kernel * in)), rng)),
      geometry(g) {
  register_parameter("weight", &weight);
  if (with_bias) {
    bias = Tensor(Shape{out}, 0.0);
    register_parameter("bias", &bias);
  }
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias.defined() ? &bias : nullptr, geometry); }

ConvTranspose2d::ConvTranspose2d(int in, int out, ConvGeometry g, Rng& rng)
    : weight(normal_init({in, g.kernel * g.kernel * out}, std::sqrt(1.0 / in), rng)),
      bias(Shape{out}, 0.0),
      geometry(g) {
  register_parameter("weight", &weight);
  register_parameter("bias", &bias);
}

Tensor ConvTranspose2d::forward(const Tensor& x) const { return conv_transpose2d(x, weight, &bias, geometry); }

BatchNorm::BatchNorm(int channels, double momentum_, double eps_)
    : gamma(Shape{channels}, 1.0),
      beta(Shape{channels}, 0.0),
      running_mean(Shape{channels}, 0.0),
      running_var(Shape{channels}, 1.0),
      momentum(momentum_),
      eps(eps_) {
  register_parameter("gamma", &gamma);
  register_parameter("beta", &beta);
  register_buffer("running_mean", &running_mean);
  register_buffer("running_var", &running_var);
}

Tensor BatchNorm::forward(const Tensor& x) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training(), momentum, eps);
}

LayerNorm::LayerNorm(int dim, double eps_) : gamma(Shape{dim}, 1.0), beta(Shape{dim}, 0.0), eps(eps_) {
  register_parameter("gamma", &gamma);
  register_parameter("beta", &beta);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

Embedding::Embedding(int vocab, int dim, Rng& rng, double stddev) : weight(normal_init({vocab, dim}, stddev, rng)) {
  register_parameter("weight", &weight);
}

Tensor Embedding::forward(std::span<const int> ids, Shape ids_shape) const {
  return embedding(weight, ids, std::move(ids_shape));
}

MultiHeadAttention::MultiHeadAttention(int dim, int heads_, Rng& rng)
    : heads(heads_), q_proj(dim, dim, rng), k_proj(dim, dim, rng), v_proj(dim, dim, rng), out_proj(dim, dim, rng) {
  register_module("q_proj", &q_proj);
  register_module("k_proj", &k_proj);
  register_module("v_proj", &v_proj);
  register_module("out_proj", &out_proj);
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& context,
                                   std::span<const unsigned char> key_valid) const {
  const Tensor q = q_proj.forward(query);
  const Tensor k = k_proj.forward(context);
  const Tensor v = v_proj.forward(context);
  return out_proj.forward(attention(q, k, v, key_valid, heads));
}

FeedForward::FeedForward(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {
  register_module("fc1", &fc1);
  register_module("fc2", &fc2);
}

Tensor FeedForward::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

SelfAttentionBlock::SelfAttentionBlock(int dim, int heads, Rng& rng)
    : norm1(dim), attn(dim, heads, rng), norm2(dim), ffn(dim, 4 * dim, rng) {
  register_module("norm1", &norm1);
  register_module("attn", &attn);
  register_module("norm2", &norm2);
  register_module("ffn", &ffn);
}

Tensor SelfAttentionBlock::forward(const Tensor& x, std::span<const unsigned char> key_valid) const {
  const Tensor h = norm1.forward(x);
  const Tensor y = add(x, attn.forward(h, h, key_valid));
  return add(y, ffn.forward(norm2.forward(y)));
}

CrossAttentionBlock::CrossAttentionBlock(int dim, int heads, Rng& rng)
    : norm_query(dim), norm_context(dim), attn(dim, heads, rng), norm2(dim), ffn(dim, 4 * dim, rng) {
  register_module("norm_query", &norm_query);
  register_module("norm_context", &norm_context);
  register_module("attn", &attn);
  register_module("norm2", &norm2);
  register_module("ffn", &ffn);
}

Tensor CrossAttentionBlock::forward(const Tensor& query, const Tensor& context,
                                    std::span<const unsigned char> context_valid) const {
  const Tensor y = add(query, attn.forward(norm_query.forward(query), norm_context.forward(context), context_valid));
  return add(y, ffn.forward(norm2.forward(y)));
}

}  // namespace mgalign::nn
