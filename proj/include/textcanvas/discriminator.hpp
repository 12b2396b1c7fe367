#pragma once

#include <vector>

#include "textcanvas/autodiff.hpp"
#include "textcanvas/nn.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/types.hpp"

namespace textcanvas::discriminator {

struct DiscriminatorConfig {
  int image_size = 32;
  int hidden_dim = 256;  // replicated text dimension
  int channels = 32;     // first block; doubles per stride-2 block
  double leak = 0.2;

  int down_blocks() const;  // stride-2 stages from image_size to 4x4
  int feature_channels() const;
  void validate() const;
};

struct DiscriminatorParams {
  std::vector<nn::Conv2dParams> down;  // strided downsampling stack
  nn::Conv2dParams res;                // residual feature branch at 4x4
  nn::Conv2dParams fuse1;              // 1x1 over [features ; text]
  nn::Conv2dParams fuse2;              // 3x3 refinement
  nn::DenseParams out;                 // flattened 4x4 -> logit

  static DiscriminatorParams init(const DiscriminatorConfig& cfg, Rng& rng);
  nn::ParamSet params();
};

struct DiscriminatorVars {
  std::vector<nn::Conv2dVars<double>> down;
  nn::Conv2dVars<double> res, fuse1, fuse2;
  nn::DenseVars<double> out;
};

DiscriminatorVars bind(ad::Taped& t, nn::Bindingd& bd, DiscriminatorParams& p,
                       bool grad);

struct DiscriminatorOutput {
  double probability = 0.5;  // strictly inside (0,1)
  Matd fused;                // diagnostic fused feature map, channels x 16
};

struct DiscriminateVars {
  ad::Vard probability;  // 1 x B, sigmoid output
  ad::Vard fused;
};

/// Every spatial location receives a copy of the text vector.
Matd replicate_text(const Vecd& h_f, int spatial_h, int spatial_w);

/// images: (3 x S*S*B), text: (hidden_dim x B).
DiscriminateVars discriminate_graph(ad::Taped& t, const DiscriminatorVars& v,
                                    ad::Vard images, ad::Vard text,
                                    const DiscriminatorConfig& cfg, int batch);

DiscriminatorOutput discriminate(const Image& image, const Vecd& h_f,
                                 DiscriminatorParams& params,
                                 const DiscriminatorConfig& cfg);

}  // namespace textcanvas::discriminator
