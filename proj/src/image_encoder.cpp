#include "mgalign/image_encoder.hpp"

#include "mgalign/error.hpp"

namespace mgalign {

namespace {
constexpr ConvGeometry k3s1{3, 1, 1};
constexpr ConvGeometry k3s2{3, 2, 1};
constexpr ConvGeometry k1s1{1, 1, 0};
constexpr ConvGeometry k1s2{1, 2, 0};
constexpr ConvGeometry k4s2{4, 2, 1};
}  // namespace

void ImageEncoderConfig::validate() const {
  if (image_size <= 0 || image_size % 32 != 0) {
    throw Error(ErrorCode::InvalidConfig, "image size must be a positive multiple of 32");
  }
  for (int w : stage_widths) {
    if (w <= 0) throw Error(ErrorCode::InvalidConfig, "stage widths must be positive");
  }
  if (dim <= 0) throw Error(ErrorCode::InvalidConfig, "feature dim must be positive");
}

ResidualBlock::ResidualBlock(int in, int out, int stride, nn::Rng& rng)
    : conv1_(in, out, stride == 1 ? k3s1 : k3s2, rng, false),
      bn1_(out),
      conv2_(out, out, k3s1, rng, false),
      bn2_(out) {
  register_module("conv1", &conv1_);
  register_module("bn1", &bn1_);
  register_module("conv2", &conv2_);
  register_module("bn2", &bn2_);
  if (in != out || stride != 1) {
    proj_ = std::make_unique<nn::Conv2d>(in, out, stride == 1 ? k1s1 : k1s2, rng, false);
    proj_bn_ = std::make_unique<nn::BatchNorm>(out);
    register_module("proj", proj_.get());
    register_module("proj_bn", proj_bn_.get());
  }
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor h = relu(bn1_.forward(conv1_.forward(x)));
  h = bn2_.forward(conv2_.forward(h));
  const Tensor shortcut = proj_ ? proj_bn_->forward(proj_->forward(x)) : x;
  return relu(add(h, shortcut));
}

ImageEncoder::ImageEncoder(const ImageEncoderConfig& config, nn::Rng& rng)
    : config_((config.validate(), config)),
      stem_(3, config.stage_widths[0], k3s2, rng, false),
      stem_bn_(config.stage_widths[0]),
      stage1_(config.stage_widths[0], config.stage_widths[0], 1, rng),
      stage2_(config.stage_widths[0], config.stage_widths[1], 2, rng),
      stage3_(config.stage_widths[1], config.stage_widths[2], 1, rng),
      stroke_down_(config.trunk_dim(), config.dim, k3s2, rng, false),
      stroke_bn_(config.dim),
      radical_down_(config.dim, config.dim, k3s2, rng, false),
      radical_bn_(config.dim),
      fuse_up_(config.dim, config.dim, k4s2, rng),
      fuse_down_(config.dim, config.dim, k3s2, rng, true),
      structure_down_(config.dim, config.dim, k3s2, rng, false),
      structure_bn_(config.dim) {
  register_module("stem", &stem_);
  register_module("stem_bn", &stem_bn_);
  register_module("stage1", &stage1_);
  register_module("stage2", &stage2_);
  register_module("stage3", &stage3_);
  register_module("stroke_down", &stroke_down_);
  register_module("stroke_bn", &stroke_bn_);
  register_module("radical_down", &radical_down_);
  register_module("radical_bn", &radical_bn_);
  register_module("fuse_up", &fuse_up_);
  register_module("fuse_down", &fuse_down_);
  register_module("structure_down", &structure_down_);
  register_module("structure_bn", &structure_bn_);
}

Tensor ImageEncoder::trunk_forward(const Tensor& images) {
  if (images.rank() != 4 || images.size(3) != 3 || images.size(1) % 32 != 0 || images.size(2) % 32 != 0 ||
      images.size(1) == 0 || images.size(2) == 0) {
    throw Error(ErrorCode::BadShape, "expected [B, H, W, 3] with H, W multiples of 32, got " + shape_str(images.shape()));
  }
  // (x - 0.5) / 0.5
  static const Tensor kShift(Shape{3}, -1.0);
  const Tensor x = add_bias(scale(images, 2.0), kShift);
  Tensor h = relu(stem_bn_.forward(stem_.forward(x)));
  h = stage1_.forward(h);
  h = stage2_.forward(h);
  return stage3_.forward(h);
}

std::pair<Tensor, Tensor> ImageEncoder::granularity_heads(const Tensor& trunk) {
  Tensor stroke = stroke_bn_.forward(stroke_down_.forward(trunk));
  Tensor radical = radical_bn_.forward(radical_down_.forward(relu(stroke)));
  return {std::move(stroke), std::move(radical)};
}

std::pair<Tensor, Tensor> ImageEncoder::mgfm_i(const Tensor& stroke, const Tensor& radical) {
  const Tensor up = fuse_up_.forward(radical);
  if (up.shape() != stroke.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "upsampled radical grid " + shape_str(up.shape()) + " vs stroke grid " +
                                              shape_str(stroke.shape()));
  }
  Tensor refined_stroke = add(stroke, up);
  Tensor refined_radical = add(radical, fuse_down_.forward(refined_stroke));
  return {std::move(refined_stroke), std::move(refined_radical)};
}

Tensor ImageEncoder::structure_head(const Tensor& refined_radical) {
  return structure_bn_.forward(structure_down_.forward(relu(refined_radical)));
}

ImageFeatures ImageEncoder::forward(const Tensor& images) {
  ImageFeatures f;
  f.trunk = trunk_forward(images);
  std::tie(f.stroke, f.radical) = granularity_heads(f.trunk);
  std::tie(f.refined_stroke, f.refined_radical) = mgfm_i(f.stroke, f.radical);
  f.structure = structure_head(f.refined_radical);
  return f;
}

Tensor image_tokens(const Tensor& grid) {
  if (grid.rank() != 4) throw Error(ErrorCode::BadShape, "image_tokens expects [B, h, w, C]");
  return grid.reshape({grid.size(0), grid.size(1) * grid.size(2), grid.size(3)});
}

}  // namespace mgalign
