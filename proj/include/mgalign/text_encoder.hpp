#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "mgalign/dataset.hpp"
#include "mgalign/nn.hpp"

namespace mgalign {

struct TextEncoderConfig {
  int dim = 128;
  int heads = 4;
  int layers = 3;         // depth of each sequence encoder
  int fusion_layers = 3;  // stacked cross-attention + global self-attention blocks
  int max_len = lexicon::kMaxSequenceLength;
  int radical_vocab = lexicon::radical_vocab_size(0);
  int stroke_vocab = lexicon::kStrokeVocabSize;

  void validate() const;
};

// Per-token sequence representations, [B, L, D] with padding rows, plus the
// token layout they were computed from.
struct TextFeatures {
  Tensor radical;
  Tensor stroke;
  Tensor refined_radical;
  Tensor refined_stroke;
  dataset::PaddedTokens radical_tokens;
  dataset::PaddedTokens stroke_tokens;
};

// Token + learned absolute position embeddings followed by pre-norm
// self-attention layers and a final layer norm.
class SequenceEncoder : public nn::Module {
 public:
  SequenceEncoder(int vocab, const TextEncoderConfig& config, nn::Rng& rng);
  Tensor forward(const dataset::PaddedTokens& tokens) const;

 private:
  int max_len_;
  nn::Embedding token_;
  nn::Embedding position_;
  std::vector<std::unique_ptr<nn::SelfAttentionBlock>> layers_;
  nn::LayerNorm final_norm_;
};

class FusionBlock : public nn::Module {
 public:
  FusionBlock(const TextEncoderConfig& config, nn::Rng& rng);

  nn::CrossAttentionBlock radical_query;  // radical stream attends to strokes
  nn::CrossAttentionBlock stroke_query;   // stroke stream attends to radicals
  nn::SelfAttentionBlock global;
};

class TextEncoder : public nn::Module {
 public:
  TextEncoder(const TextEncoderConfig& config, nn::Rng& rng);

  const TextEncoderConfig& config() const { return config_; }

  Tensor encode_radicals(const dataset::PaddedTokens& tokens) const;
  Tensor encode_strokes(const dataset::PaddedTokens& tokens) const;

  // Symmetric cross attention. Output lengths equal the query lengths: the
  // first result is the radical stream, the second the stroke stream.
  std::pair<Tensor, Tensor> scab(const FusionBlock& block, const Tensor& radical, const Tensor& stroke,
                                 const dataset::PaddedTokens& radical_tokens,
                                 const dataset::PaddedTokens& stroke_tokens) const;
  // Self attention over the concatenation [radical; stroke] -> [B, Lr + Ls, D].
  Tensor gsab(const FusionBlock& block, const Tensor& radical, const Tensor& stroke,
              const dataset::PaddedTokens& radical_tokens, const dataset::PaddedTokens& stroke_tokens) const;
  // `fusion_layers` rounds of scab then gsab, re-split after each round.
  std::pair<Tensor, Tensor> mgfm_t(const Tensor& radical, const Tensor& stroke,
                                   const dataset::PaddedTokens& radical_tokens,
                                   const dataset::PaddedTokens& stroke_tokens) const;

  TextFeatures forward(const dataset::PaddedTokens& radical_tokens, const dataset::PaddedTokens& stroke_tokens) const;

  const std::vector<std::unique_ptr<FusionBlock>>& fusion_blocks() const { return fusion_; }

 private:
  TextEncoderConfig config_;
  SequenceEncoder radical_encoder_;
  SequenceEncoder stroke_encoder_;
  std::vector<std::unique_ptr<FusionBlock>> fusion_;
};

}  // namespace mgalign
