#include "textcanvas/generator.hpp"

#include <cmath>

#include "textcanvas/errors.hpp"

namespace textcanvas::generator {

using ad::Taped;
using ad::Vard;

int GeneratorConfig::up_blocks() const {
  int blocks = 0;
  int s = patch_size;
  while (s < image_size) {
    s *= 2;
    ++blocks;
  }
  return blocks;
}

void GeneratorConfig::validate() const {
  if (timesteps < 1) throw ConfigError("generator timesteps must be >= 1");
  if (noise_dim < 1 || cond_dim < 1 || hidden_dim < 1)
    throw ConfigError("generator dims must be >= 1");
  if (patch_size < 1 || image_size < patch_size)
    throw ConfigError("generator image_size must be >= patch_size");
  int s = patch_size;
  while (s < image_size) s *= 2;
  if (s != image_size)
    throw ConfigError(
        "generator image_size must be patch_size times a power of two");
}

GeneratorParams GeneratorParams::init(const GeneratorConfig& cfg, Rng& rng) {
  cfg.validate();
  GeneratorParams p;
  p.ca_mu = nn::DenseParams::init(cfg.hidden_dim, cfg.cond_dim, rng);
  p.ca_logsigma = nn::DenseParams::init(cfg.hidden_dim, cfg.cond_dim, rng);
  p.init_cell =
      nn::GruParams::init(cfg.cond_dim + cfg.noise_dim, cfg.hidden_dim, rng);
  p.att = nn::DenseParams::init(cfg.cond_dim + cfg.noise_dim + cfg.hidden_dim,
                                cfg.hidden_dim, rng);
  p.cell = nn::GruParams::init(cfg.hidden_dim, cfg.hidden_dim, rng);
  const Index plane = static_cast<Index>(cfg.patch_size) * cfg.patch_size;
  p.head_r = nn::DenseParams::init(cfg.hidden_dim, plane, rng);
  p.head_g = nn::DenseParams::init(cfg.hidden_dim, plane, rng);
  p.head_b = nn::DenseParams::init(cfg.hidden_dim, plane, rng);
  p.head_gate = nn::DenseParams::init(cfg.hidden_dim, 1, rng);
  p.up_in = nn::Conv2dParams::init(3, cfg.channels, 3, 1, 1, rng);
  for (int i = 0; i < cfg.up_blocks(); ++i) {
    UpBlock b;
    b.deconv = nn::ConvT2dParams::init(cfg.channels, cfg.channels, 4, 2, 1, rng);
    b.res = nn::Conv2dParams::init(cfg.channels, cfg.channels, 3, 1, 1, rng);
    p.blocks.push_back(std::move(b));
  }
  p.up_out = nn::Conv2dParams::init(cfg.channels, 3, 3, 1, 1, rng);
  return p;
}

nn::ParamSet GeneratorParams::params() {
  nn::ParamSet ps;
  ps.merge("ca_mu", ca_mu.params());
  ps.merge("ca_logsigma", ca_logsigma.params());
  ps.merge("init", init_cell.params());
  ps.merge("att", att.params());
  ps.merge("cell", cell.params());
  ps.merge("head_r", head_r.params());
  ps.merge("head_g", head_g.params());
  ps.merge("head_b", head_b.params());
  ps.merge("head_gate", head_gate.params());
  ps.merge("up_in", up_in.params());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    ps.merge("up" + std::to_string(i) + ".deconv", blocks[i].deconv.params());
    ps.merge("up" + std::to_string(i) + ".res", blocks[i].res.params());
  }
  ps.merge("up_out", up_out.params());
  return ps;
}

GeneratorVars bind(Taped& t, nn::Bindingd& bd, GeneratorParams& p, bool grad) {
  GeneratorVars v{nn::bind(t, bd, p.ca_mu, grad),
                  nn::bind(t, bd, p.ca_logsigma, grad),
                  nn::bind(t, bd, p.init_cell, grad),
                  nn::bind(t, bd, p.att, grad),
                  nn::bind(t, bd, p.cell, grad),
                  nn::bind(t, bd, p.head_r, grad),
                  nn::bind(t, bd, p.head_g, grad),
                  nn::bind(t, bd, p.head_b, grad),
                  nn::bind(t, bd, p.head_gate, grad),
                  nn::bind(t, bd, p.up_in, grad),
                  {},
                  nn::bind(t, bd, p.up_out, grad)};
  for (auto& b : p.blocks)
    v.blocks.push_back(
        {nn::bind(t, bd, b.deconv, grad), nn::bind(t, bd, b.res, grad)});
  return v;
}

namespace {

/// KL(N(mu, exp(log_sigma)^2) || N(0,1)) per sample, batched as 1 x B.
Vard kl_rows(Vard mu, Vard log_sigma) {
  Vard terms = ad::add(ad::add(ad::cmul(mu, mu), ad::exp_op(ad::scale(log_sigma, 2.0))),
                       ad::add_scalar(ad::scale(log_sigma, -2.0), -1.0));
  return ad::scale(ad::colsum(terms), 0.5);
}

struct CaVars {
  Vard mu, log_sigma, sample, kl;
};

CaVars condition_augment_graph(const GeneratorVars& v, Vard sentence,
                               Vard ca_eps) {
  CaVars out;
  out.mu = nn::dense(v.ca_mu, sentence);
  out.log_sigma = nn::dense(v.ca_logsigma, sentence);
  out.sample = ad::add(out.mu, ad::cmul(ad::exp_op(out.log_sigma), ca_eps));
  out.kl = kl_rows(out.mu, out.log_sigma);
  return out;
}

Vard upscale(const GeneratorVars& v, Vard planes, const GeneratorConfig& cfg,
             int batch) {
  int s = cfg.patch_size;
  Vard x = ad::relu(nn::conv(v.up_in, planes, s, s, batch));
  for (const auto& b : v.blocks) {
    Vard up = ad::relu(nn::conv_transpose(b.deconv, x, s, s, batch));
    s *= 2;
    x = ad::relu(ad::add(up, nn::conv(b.res, up, s, s, batch)));
  }
  return ad::tanh_op(nn::conv(v.up_out, x, s, s, batch));
}

struct EmitVars {
  Vard delta;  // 3 x (H*W*B)
  Vard gamma;  // 1 x B
};

EmitVars emit_graph(const GeneratorVars& v, Vard h, const GeneratorConfig& cfg,
                    int batch) {
  Vard r = ad::relu(nn::dense(v.head_r, h));
  Vard g = ad::relu(nn::dense(v.head_g, h));
  Vard b = ad::relu(nn::dense(v.head_b, h));
  Vard planes = ad::planes_to_maps(ad::concat_rows(r, g, b), 3);
  EmitVars out;
  out.delta = upscale(v, planes, cfg, batch);
  out.gamma = ad::sigmoid(nn::dense(v.head_gate, h));
  return out;
}

}  // namespace

PaintGraph paint_graph(Taped& t, const GeneratorVars& v,
                       const std::vector<Matd>& per_token_states, Vard sentence,
                       Vard noise, Vard ca_eps, const GeneratorConfig& cfg) {
  const int batch = static_cast<int>(sentence.cols());
  if (static_cast<int>(per_token_states.size()) != batch)
    throw ShapeMismatch("paint_graph: caption/batch size mismatch");
  for (const auto& e : per_token_states) {
    if (e.cols() < 1) throw EmptySequence("paint_graph: empty token states");
    if (e.rows() != cfg.hidden_dim)
      throw ShapeMismatch("paint_graph: token state dim mismatch");
  }
  const Index pixels = static_cast<Index>(cfg.image_size) * cfg.image_size;

  std::vector<Vard> token_consts;
  token_consts.reserve(per_token_states.size());
  for (const auto& e : per_token_states) token_consts.push_back(t.constant(e));

  CaVars ca = condition_augment_graph(v, sentence, ca_eps);
  Vard cz = ad::concat_rows(ca.sample, noise);
  Vard h = nn::gru_step(v.init_cell, cz,
                        t.constant(Matd::Zero(cfg.hidden_dim, batch)));

  PaintGraph out;
  out.kl = ca.kl;
  Vard canvas = t.constant(Matd::Zero(3, pixels * batch));
  for (int i = 0; i < cfg.timesteps; ++i) {
    Vard query = nn::dense(v.att, ad::concat_rows(ca.sample, noise, h));
    PaintStepVars sv;
    std::vector<Vard> attended;
    attended.reserve(batch);
    for (int j = 0; j < batch; ++j) {
      Vard q_j = ad::slice_cols(query, j, 1);
      Vard scores = ad::matmul(ad::transpose(token_consts[j]), q_j);
      Vard beta = ad::softmax_cols(scores);
      sv.beta.push_back(beta);
      attended.push_back(ad::matmul(token_consts[j], beta));
    }
    Vard e_bar = ad::concat_cols(attended);
    h = nn::gru_step(v.cell, e_bar, h);
    EmitVars emit = emit_graph(v, h, cfg, batch);
    sv.gamma = emit.gamma;
    sv.delta = emit.delta;
    sv.hidden = h;
    canvas = ad::add(canvas,
                     ad::mul_rowvec(emit.delta,
                                    ad::replicate_spatial(emit.gamma, pixels)));
    out.steps.push_back(std::move(sv));
  }
  out.canvas_raw = canvas;
  out.image = ad::clamp(canvas, -1.0, 1.0);
  return out;
}

// --- single-sample value operations ------------------------------------------

AugmentedCondition condition_augment(const Vecd& sentence, GeneratorParams& p,
                                     Rng& rng) {
  if (!sentence.allFinite())
    throw ShapeMismatch("condition_augment: non-finite sentence vector");
  Taped t;
  nn::Bindingd bd;
  GeneratorVars v = bind(t, bd, p, false);
  Matd eps = rng.gaussian(p.ca_mu.w.rows(), 1);
  CaVars ca = condition_augment_graph(v, t.constant(sentence), t.constant(eps));
  AugmentedCondition out;
  out.mu = ca.mu.value().col(0);
  out.log_sigma = ca.log_sigma.value().col(0);
  out.sample = ca.sample.value().col(0);
  out.kl = ca.kl.value()(0, 0);
  return out;
}

Vecd init_hidden(const Vecd& c, const Vecd& z, GeneratorParams& p,
                 const GeneratorConfig& cfg) {
  if (c.size() != cfg.cond_dim || z.size() != cfg.noise_dim)
    throw ShapeMismatch("init_hidden: condition/noise dims mismatch");
  Taped t;
  nn::Bindingd bd;
  GeneratorVars v = bind(t, bd, p, false);
  Vard cz = ad::concat_rows(t.constant(c), t.constant(z));
  Vard h = nn::gru_step(v.init_cell, cz,
                        t.constant(Matd::Zero(cfg.hidden_dim, 1)));
  return h.value().col(0);
}

std::pair<Vecd, Vecd> attend(const Vecd& c, const Vecd& z, const Vecd& h_prev,
                             const Matd& e, GeneratorParams& p) {
  if (e.rows() < 1) throw EmptySequence("attend: empty token matrix");
  Taped t;
  nn::Bindingd bd;
  GeneratorVars v = bind(t, bd, p, false);
  Vard query = nn::dense(
      v.att, ad::concat_rows(t.constant(c), t.constant(z), t.constant(h_prev)));
  Vard scores = ad::matmul(t.constant(e), query);  // e rows are token states
  Vard beta = ad::softmax_cols(scores);
  Vard e_bar = ad::matmul(t.constant(Matd(e.transpose())), beta);
  return {beta.value().col(0), e_bar.value().col(0)};
}

Vecd step(const Vecd& h_prev, const Vecd& e_bar, GeneratorParams& p) {
  if (h_prev.size() != p.cell.hidden() || e_bar.size() != p.cell.w_r.cols())
    throw ShapeMismatch("step: state dims mismatch");
  Taped t;
  nn::Bindingd bd;
  GeneratorVars v = bind(t, bd, p, false);
  return nn::gru_step(v.cell, t.constant(e_bar), t.constant(h_prev))
      .value()
      .col(0);
}

std::pair<Matd, double> emit_patch(const Vecd& h, GeneratorParams& p,
                                   const GeneratorConfig& cfg) {
  Taped t;
  nn::Bindingd bd;
  GeneratorVars v = bind(t, bd, p, false);
  EmitVars e = emit_graph(v, t.constant(h), cfg, 1);
  return {e.delta.value(), e.gamma.value()(0, 0)};
}

PaintResult paint(const Matd& e, const Vecd& s, const Vecd& z,
                  const GeneratorConfig& cfg, GeneratorParams& p, Rng& rng) {
  cfg.validate();
  if (e.rows() < 1) throw EmptySequence("paint: empty token matrix");
  if (e.cols() != cfg.hidden_dim || s.size() != cfg.hidden_dim)
    throw ShapeMismatch("paint: hidden dim mismatch");
  if (z.size() != cfg.noise_dim) throw ShapeMismatch("paint: noise dim mismatch");

  Taped t;
  nn::Bindingd bd;
  GeneratorVars v = bind(t, bd, p, false);
  Matd eps = rng.gaussian(cfg.cond_dim, 1);
  PaintGraph g = paint_graph(t, v, {Matd(e.transpose())}, t.constant(s),
                             t.constant(z), t.constant(eps), cfg);

  PaintResult res;
  res.canvas.pixels = g.canvas_raw.value();
  res.canvas.timestep = cfg.timesteps;
  res.image = g.image.value();
  for (const auto& sv : g.steps) {
    PaintStep ps;
    ps.beta = sv.beta[0].value().col(0);
    ps.gamma = sv.gamma.value()(0, 0);
    ps.delta = sv.delta.value();
    ps.hidden = sv.hidden.value().col(0);
    res.trace.steps.push_back(std::move(ps));
  }
  return res;
}

}  // namespace textcanvas::generator
