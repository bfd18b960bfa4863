#include "mgalign/model.hpp"

#include "mgalign/error.hpp"

namespace mgalign {

void ModelConfig::validate() const {
  image.validate();
  text.validate();
  if (image.dim != text.dim) {
    throw Error(ErrorCode::InvalidConfig, "image dim " + std::to_string(image.dim) + " differs from text dim " +
                                              std::to_string(text.dim));
  }
}

Model::Model(const ModelConfig& config, nn::Rng& rng)
    : config_((config.validate(), config)),
      image(config.image, rng),
      text(config.text, rng),
      temperature(Shape{1}, config.initial_temperature) {
  register_module("image", &image);
  register_module("text", &text);
  register_parameter("temperature", &temperature);
}

Model::Output Model::forward(const dataset::Batch& batch) {
  Output out;
  out.image = image.forward(batch_images(batch));
  out.text = text.forward(batch.radical, batch.stroke);
  for (std::size_t l = 0; l < alignment::kLevels.size(); ++l) {
    const auto level = alignment::kLevels[l];
    out.sims[l] = alignment::batch_sim(level, out.image, decouple(out.text, level), temperature);
  }
  return out;
}

Tensor batch_images(const dataset::Batch& batch) {
  return Tensor(Shape{batch.size, batch.image_size, batch.image_size, 3}, batch.images);
}

Tensor sample_images(std::span<const dataset::Sample* const> samples) {
  if (samples.empty()) throw Error(ErrorCode::BadShape, "no images");
  const int h = samples[0]->image.height, w = samples[0]->image.width;
  std::vector<double> values;
  values.reserve(samples.size() * h * w * 3);
  for (const auto* s : samples) {
    if (s->image.height != h || s->image.width != w) {
      throw Error(ErrorCode::BadShape, "images in one batch must share a size");
    }
    values.insert(values.end(), s->image.pixels.begin(), s->image.pixels.end());
  }
  return Tensor(Shape{static_cast<int>(samples.size()), h, w, 3}, std::move(values));
}

alignment::DecoupledRepr decouple(const TextFeatures& text, alignment::Level level) {
  using alignment::Level;
  switch (level) {
    case Level::Stroke: return alignment::ts_d(text.stroke, text.stroke_tokens, lexicon::Family::Stroke);
    case Level::RefinedStroke:
      return alignment::ts_d(text.refined_stroke, text.stroke_tokens, lexicon::Family::Stroke);
    case Level::Radical: return alignment::ts_d(text.radical, text.radical_tokens, lexicon::Family::Radical);
    case Level::RefinedRadical:
      return alignment::ts_d(text.refined_radical, text.radical_tokens, lexicon::Family::Radical);
  }
  throw Error(ErrorCode::InvalidConfig, "bad level");
}

}  // namespace mgalign
