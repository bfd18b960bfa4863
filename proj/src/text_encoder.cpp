#include "mgalign/text_encoder.hpp"

#include "mgalign/error.hpp"

namespace mgalign {

void TextEncoderConfig::validate() const {
  if (dim <= 0 || heads <= 0 || dim % heads != 0) {
    throw Error(ErrorCode::InvalidConfig, "text dim must be a positive multiple of the head count");
  }
  if (layers < 0 || fusion_layers < 0) throw Error(ErrorCode::InvalidConfig, "negative depth");
  if (max_len <= 0 || max_len > lexicon::kMaxSequenceLength) {
    throw Error(ErrorCode::InvalidConfig, "max_len must be in 1..50");
  }
}

SequenceEncoder::SequenceEncoder(int vocab, const TextEncoderConfig& config, nn::Rng& rng)
    : max_len_(config.max_len),
      token_(vocab, config.dim, rng),
      position_(config.max_len, config.dim, rng, 0.5),
      final_norm_(config.dim) {
  register_module("token", &token_);
  register_module("position", &position_);
  for (int i = 0; i < config.layers; ++i) {
    layers_.push_back(std::make_unique<nn::SelfAttentionBlock>(config.dim, config.heads, rng));
    register_module("layer" + std::to_string(i), layers_.back().get());
  }
  register_module("final_norm", &final_norm_);
}

Tensor SequenceEncoder::forward(const dataset::PaddedTokens& tokens) const {
  if (tokens.length > max_len_) {
    throw Error(ErrorCode::TooLong, "sequence length " + std::to_string(tokens.length) + " exceeds " +
                                        std::to_string(max_len_));
  }
  Tensor x = token_.forward(tokens.tokens, {tokens.batch, tokens.length});
  x = add(x, broadcast_rows(position_.weight, tokens.batch, tokens.length));
  const auto valid = tokens.key_valid();
  for (const auto& layer : layers_) x = layer->forward(x, valid);
  return final_norm_.forward(x);
}

FusionBlock::FusionBlock(const TextEncoderConfig& config, nn::Rng& rng)
    : radical_query(config.dim, config.heads, rng),
      stroke_query(config.dim, config.heads, rng),
      global(config.dim, config.heads, rng) {
  register_module("radical_query", &radical_query);
  register_module("stroke_query", &stroke_query);
  register_module("global", &global);
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, nn::Rng& rng)
    : config_((config.validate(), config)),
      radical_encoder_(config.radical_vocab, config, rng),
      stroke_encoder_(config.stroke_vocab, config, rng) {
  register_module("radical_encoder", &radical_encoder_);
  register_module("stroke_encoder", &stroke_encoder_);
  for (int i = 0; i < config.fusion_layers; ++i) {
    fusion_.push_back(std::make_unique<FusionBlock>(config, rng));
    register_module("fusion" + std::to_string(i), fusion_.back().get());
  }
}

Tensor TextEncoder::encode_radicals(const dataset::PaddedTokens& tokens) const {
  return radical_encoder_.forward(tokens);
}

Tensor TextEncoder::encode_strokes(const dataset::PaddedTokens& tokens) const { return stroke_encoder_.forward(tokens); }

std::pair<Tensor, Tensor> TextEncoder::scab(const FusionBlock& block, const Tensor& radical, const Tensor& stroke,
                                            const dataset::PaddedTokens& radical_tokens,
                                            const dataset::PaddedTokens& stroke_tokens) const {
  Tensor r = block.radical_query.forward(radical, stroke, stroke_tokens.key_valid());
  Tensor s = block.stroke_query.forward(stroke, radical, radical_tokens.key_valid());
  return {std::move(r), std::move(s)};
}

Tensor TextEncoder::gsab(const FusionBlock& block, const Tensor& radical, const Tensor& stroke,
                         const dataset::PaddedTokens& radical_tokens,
                         const dataset::PaddedTokens& stroke_tokens) const {
  const int batch = radical_tokens.batch, lr = radical_tokens.length, ls = stroke_tokens.length;
  const auto rv = radical_tokens.key_valid(), sv = stroke_tokens.key_valid();
  std::vector<unsigned char> valid;
  valid.reserve(static_cast<std::size_t>(batch) * (lr + ls));
  for (int b = 0; b < batch; ++b) {
    valid.insert(valid.end(), rv.begin() + static_cast<std::ptrdiff_t>(b) * lr,
                 rv.begin() + static_cast<std::ptrdiff_t>(b + 1) * lr);
    valid.insert(valid.end(), sv.begin() + static_cast<std::ptrdiff_t>(b) * ls,
                 sv.begin() + static_cast<std::ptrdiff_t>(b + 1) * ls);
  }
  return block.global.forward(concat_seq(radical, stroke), valid);
}

std::pair<Tensor, Tensor> TextEncoder::mgfm_t(const Tensor& radical, const Tensor& stroke,
                                              const dataset::PaddedTokens& radical_tokens,
                                              const dataset::PaddedTokens& stroke_tokens) const {
  if (radical_tokens.batch != stroke_tokens.batch) {
    throw Error(ErrorCode::ShapeMismatch, "radical and stroke batches differ in size");
  }
  Tensor r = radical, s = stroke;
  const int lr = radical_tokens.length, ls = stroke_tokens.length;
  for (const auto& block : fusion_) {
    auto [ra, sa] = scab(*block, r, s, radical_tokens, stroke_tokens);
    const Tensor fused = gsab(*block, ra, sa, radical_tokens, stroke_tokens);
    r = slice_seq(fused, 0, lr);
    s = slice_seq(fused, lr, ls);
  }
  return {r, s};
}

TextFeatures TextEncoder::forward(const dataset::PaddedTokens& radical_tokens,
                                  const dataset::PaddedTokens& stroke_tokens) const {
  TextFeatures f;
  f.radical = encode_radicals(radical_tokens);
  f.stroke = encode_strokes(stroke_tokens);
  std::tie(f.refined_radical, f.refined_stroke) = mgfm_t(f.radical, f.stroke, radical_tokens, stroke_tokens);
  f.radical_tokens = radical_tokens;
  f.stroke_tokens = stroke_tokens;
  return f;
}

}  // namespace mgalign
