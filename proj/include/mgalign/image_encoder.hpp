#pragma once

#include <array>
#include <memory>
#include <utility>

#include "mgalign/nn.hpp"

namespace mgalign {

struct ImageEncoderConfig {
  int image_size = 128;
  // Widths of the three residual trunk stages; the last is the trunk feature dim.
  std::array<int, 3> stage_widths{32, 64, 128};
  int dim = 128;  // alignment dim, shared with the text side

  int trunk_dim() const { return stage_widths[2]; }
  void validate() const;
};

// Feature grids in NHWC layout: [B, h, w, C].
struct ImageFeatures {
  Tensor trunk;            // H/4, trunk dim
  Tensor stroke;           // H/8
  Tensor radical;          // H/16
  Tensor refined_stroke;   // H/8
  Tensor refined_radical;  // H/16
  Tensor structure;        // H/32
};

class ResidualBlock : public nn::Module {
 public:
  ResidualBlock(int in, int out, int stride, nn::Rng& rng);
  Tensor forward(const Tensor& x);

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm bn2_;
  std::unique_ptr<nn::Conv2d> proj_;
  std::unique_ptr<nn::BatchNorm> proj_bn_;
};

class ImageEncoder : public nn::Module {
 public:
  ImageEncoder(const ImageEncoderConfig& config, nn::Rng& rng);

  const ImageEncoderConfig& config() const { return config_; }

  // images: [B, H, W, 3] in [0, 1]; per-channel normalization is applied here.
  Tensor trunk_forward(const Tensor& images);
  std::pair<Tensor, Tensor> granularity_heads(const Tensor& trunk);
  // Stroke/radical mutual refinement:
  //   refined_stroke  = stroke  + Deconv(radical)
  //   refined_radical = radical + Downsample(refined_stroke)
  std::pair<Tensor, Tensor> mgfm_i(const Tensor& stroke, const Tensor& radical);
  Tensor structure_head(const Tensor& refined_radical);
  ImageFeatures forward(const Tensor& images);

  // Fusion layers, exposed for probes that zero them.
  nn::ConvTranspose2d& fusion_up() { return fuse_up_; }
  nn::Conv2d& fusion_down() { return fuse_down_; }

 private:
  ImageEncoderConfig config_;
  nn::Conv2d stem_;
  nn::BatchNorm stem_bn_;
  ResidualBlock stage1_;
  ResidualBlock stage2_;
  ResidualBlock stage3_;
  nn::Conv2d stroke_down_;
  nn::BatchNorm stroke_bn_;
  nn::Conv2d radical_down_;
  nn::BatchNorm radical_bn_;
  nn::ConvTranspose2d fuse_up_;
  nn::Conv2d fuse_down_;
  nn::Conv2d structure_down_;
  nn::BatchNorm structure_bn_;
};

// Row-major flattening of a [B, h, w, C] grid into [B, h*w, C] tokens.
Tensor image_tokens(const Tensor& grid);

}  // namespace mgalign
