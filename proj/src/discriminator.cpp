#include "textcanvas/discriminator.hpp"

#include <algorithm>

#include "textcanvas/errors.hpp"

namespace textcanvas::discriminator {

using ad::Taped;
using ad::Vard;

int DiscriminatorConfig::down_blocks() const {
  int blocks = 0;
  int s = image_size;
  while (s > 4) {
    s /= 2;
    ++blocks;
  }
  return blocks;
}

int DiscriminatorConfig::feature_channels() const {
  return channels << (down_blocks() - 1);
}

void DiscriminatorConfig::validate() const {
  if (hidden_dim < 1 || channels < 1)
    throw ConfigError("discriminator dims must be >= 1");
  int s = image_size;
  while (s > 4) s /= 2;
  if (s != 4 || image_size < 8)
    throw ConfigError("discriminator image_size must be 4 * 2^k, k >= 1");
}

DiscriminatorParams DiscriminatorParams::init(const DiscriminatorConfig& cfg,
                                              Rng& rng) {
  cfg.validate();
  DiscriminatorParams p;
  int in_c = 3;
  int out_c = cfg.channels;
  for (int i = 0; i < cfg.down_blocks(); ++i) {
    p.down.push_back(nn::Conv2dParams::init(in_c, out_c, 4, 2, 1, rng));
    in_c = out_c;
    if (i + 1 < cfg.down_blocks()) out_c *= 2;
  }
  p.res = nn::Conv2dParams::init(in_c, in_c, 3, 1, 1, rng);
  p.fuse1 = nn::Conv2dParams::init(in_c + cfg.hidden_dim, in_c, 1, 1, 0, rng);
  p.fuse2 = nn::Conv2dParams::init(in_c, in_c, 3, 1, 1, rng);
  p.out = nn::DenseParams::init(static_cast<Index>(in_c) * 16, 1, rng);
  return p;
}

nn::ParamSet DiscriminatorParams::params() {
  nn::ParamSet ps;
  for (std::size_t i = 0; i < down.size(); ++i)
    ps.merge("down" + std::to_string(i), down[i].params());
  ps.merge("res", res.params());
  ps.merge("fuse1", fuse1.params());
  ps.merge("fuse2", fuse2.params());
  ps.merge("out", out.params());
  return ps;
}

DiscriminatorVars bind(Taped& t, nn::Bindingd& bd, DiscriminatorParams& p,
                       bool grad) {
  DiscriminatorVars v;
  for (auto& c : p.down) v.down.push_back(nn::bind(t, bd, c, grad));
  v.res = nn::bind(t, bd, p.res, grad);
  v.fuse1 = nn::bind(t, bd, p.fuse1, grad);
  v.fuse2 = nn::bind(t, bd, p.fuse2, grad);
  v.out = nn::bind(t, bd, p.out, grad);
  return v;
}

Matd replicate_text(const Vecd& h_f, int spatial_h, int spatial_w) {
  Matd out(h_f.size(), static_cast<Index>(spatial_h) * spatial_w);
  out.colwise() = h_f;
  return out;
}

DiscriminateVars discriminate_graph(Taped&, const DiscriminatorVars& v,
                                    Vard images, Vard text,
                                    const DiscriminatorConfig& cfg, int batch) {
  const double leak = cfg.leak;
  int s = cfg.image_size;
  if (images.rows() != 3 ||
      images.cols() != static_cast<Index>(s) * s * batch)
    throw ShapeMismatch("discriminate: image batch does not match config");
  if (text.rows() != cfg.hidden_dim || text.cols() != batch)
    throw ShapeMismatch("discriminate: text batch does not match config");

  Vard x = images;
  for (const auto& c : v.down) {
    x = ad::leaky_relu(nn::conv(c, x, s, s, batch), leak);
    s /= 2;
  }
  // residual feature branch at 4x4
  x = ad::leaky_relu(ad::add(x, nn::conv(v.res, x, s, s, batch)), leak);

  Vard rep = ad::replicate_spatial(text, static_cast<Index>(s) * s);
  Vard fused_in = ad::concat_rows(x, rep);
  Vard f1 = ad::leaky_relu(nn::conv(v.fuse1, fused_in, s, s, batch), leak);
  Vard f2 = ad::leaky_relu(nn::conv(v.fuse2, f1, s, s, batch), leak);

  DiscriminateVars out;
  out.fused = f2;
  Vard flat = ad::flatten_spatial(f2, static_cast<Index>(s) * s, batch);
  out.probability = ad::sigmoid(nn::dense(v.out, flat));
  return out;
}

DiscriminatorOutput discriminate(const Image& image, const Vecd& h_f,
                                 DiscriminatorParams& params,
                                 const DiscriminatorConfig& cfg) {
  cfg.validate();
  if (image.h != cfg.image_size || image.w != cfg.image_size ||
      image.channels() != 3)
    throw ShapeMismatch("discriminate: image does not match configured size");
  if (h_f.size() != cfg.hidden_dim)
    throw ShapeMismatch("discriminate: text dim mismatch");
  Taped t;
  nn::Bindingd bd;
  DiscriminatorVars v = bind(t, bd, params, false);
  DiscriminateVars dv = discriminate_graph(t, v, t.constant(image.chw),
                                           t.constant(h_f), cfg, 1);
  DiscriminatorOutput out;
  // keep the stored probability strictly inside (0,1) even if the sigmoid
  // saturates in double precision
  out.probability =
      std::clamp(dv.probability.value()(0, 0), 1e-15, 1.0 - 1e-15);
  out.fused = dv.fused.value();
  return out;
}

}  // namespace textcanvas::discriminator
