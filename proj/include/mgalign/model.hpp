#pragma once

#include <array>
#include <cstdint>

#include "mgalign/alignment.hpp"
#include "mgalign/dataset.hpp"
#include "mgalign/image_encoder.hpp"
#include "mgalign/text_encoder.hpp"

namespace mgalign {

struct ModelConfig {
  ImageEncoderConfig image;
  TextEncoderConfig text;
  double initial_temperature = alignment::kInitialTemperature;

  void validate() const;  // also requires equal image and text dims
};

// Both encoders plus the learnable matching temperature.
class Model : public nn::Module {
  ModelConfig config_;

 public:
  Model(const ModelConfig& config, nn::Rng& rng);

  const ModelConfig& config() const { return config_; }

  ImageEncoder image;
  TextEncoder text;
  Tensor temperature;  // one element

  // Per-level text-by-image similarity matrices, kLevels order.
  struct Output {
    ImageFeatures image;
    TextFeatures text;
    std::array<Tensor, 4> sims;
  };
  Output forward(const dataset::Batch& batch);
};

Tensor batch_images(const dataset::Batch& batch);
Tensor sample_images(std::span<const dataset::Sample* const> samples);

// Decoupled representations of the sequence family used by `level`.
alignment::DecoupledRepr decouple(const TextFeatures& text, alignment::Level level);

}  // namespace mgalign
