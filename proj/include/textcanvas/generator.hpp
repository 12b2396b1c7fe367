#pragma once

#include <string>
#include <vector>

#include "textcanvas/autodiff.hpp"
#include "textcanvas/nn.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/types.hpp"
#include "textcanvas/vse.hpp"

namespace textcanvas::generator {

struct GeneratorConfig {
  int timesteps = 4;
  int noise_dim = 100;   // z
  int cond_dim = 128;    // augmented condition
  int hidden_dim = 256;  // recurrent state, matches the text encoder
  int image_size = 32;
  int patch_size = 16;  // channel-head plane side before upscaling
  int channels = 32;    // upscaler width

  int up_blocks() const;  // stride-2 stages from patch_size to image_size
  void validate() const;
};

/// One upscaling stage: stride-2 transposed conv with a residual 3x3 conv.
struct UpBlock {
  nn::ConvT2dParams deconv;
  nn::Conv2dParams res;
};

struct GeneratorParams {
  nn::DenseParams ca_mu, ca_logsigma;      // sentence -> condition gaussian
  nn::GruParams init_cell;                 // [c;z] with zero state -> h_0
  nn::DenseParams att;                     // [c;z;h_prev] -> attention query
  nn::GruParams cell;                      // attended embedding -> next state
  nn::DenseParams head_r, head_g, head_b;  // state -> patch_size^2 plane
  nn::DenseParams head_gate;               // state -> scalar gate
  nn::Conv2dParams up_in;                  // 3 -> channels
  std::vector<UpBlock> blocks;
  nn::Conv2dParams up_out;  // channels -> 3, tanh

  static GeneratorParams init(const GeneratorConfig& cfg, Rng& rng);
  nn::ParamSet params();
};

struct GeneratorVars {
  nn::DenseVars<double> ca_mu, ca_logsigma;
  nn::GruVars<double> init_cell;
  nn::DenseVars<double> att;
  nn::GruVars<double> cell;
  nn::DenseVars<double> head_r, head_g, head_b, head_gate;
  nn::Conv2dVars<double> up_in;
  struct UpBlockVars {
    nn::ConvT2dVars<double> deconv;
    nn::Conv2dVars<double> res;
  };
  std::vector<UpBlockVars> blocks;
  nn::Conv2dVars<double> up_out;
};

GeneratorVars bind(ad::Taped& t, nn::Bindingd& bd, GeneratorParams& p,
                   bool grad);

// --- domain values ----------------------------------------------------------

struct AugmentedCondition {
  Vecd mu, log_sigma, sample;
  double kl = 0.0;
};

struct CanvasState {
  Matd pixels;  // 3 x (H*W), zero at timestep 0
  int timestep = 0;
};

struct PaintStep {
  Vecd beta;    // attention over tokens, sums to 1
  double gamma = 0.0;
  Matd delta;   // 3 x (H*W) in [-1,1]
  Vecd hidden;  // recurrent state after the step
};

struct PaintTrace {
  std::vector<PaintStep> steps;
};

struct PaintResult {
  CanvasState canvas;  // raw gated sum before the output clamp
  Matd image;          // 3 x (H*W), clamped to [-1,1]
  PaintTrace trace;
};

// --- operations (single sample) ---------------------------------------------

AugmentedCondition condition_augment(const Vecd& sentence, GeneratorParams& p,
                                     Rng& rng);

Vecd init_hidden(const Vecd& c, const Vecd& z, GeneratorParams& p,
                 const GeneratorConfig& cfg);

/// Scores come from a query over [c;z;h_prev] dotted with each token state;
/// e has one row per token. Returns (softmaxed beta, attended embedding).
std::pair<Vecd, Vecd> attend(const Vecd& c, const Vecd& z, const Vecd& h_prev,
                             const Matd& e, GeneratorParams& p);

Vecd step(const Vecd& h_prev, const Vecd& e_bar, GeneratorParams& p);

std::pair<Matd, double> emit_patch(const Vecd& h, GeneratorParams& p,
                                   const GeneratorConfig& cfg);

/// Full unroll: condition augmentation, initial state, then timesteps of
/// attend/step/emit/accumulate. e: n x hidden_dim rows, s: sentence vector,
/// z: noise.
PaintResult paint(const Matd& e, const Vecd& s, const Vecd& z,
                  const GeneratorConfig& cfg, GeneratorParams& p, Rng& rng);

// --- batched graph (used by training) ----------------------------------------

struct PaintStepVars {
  std::vector<ad::Vard> beta;  // per sample, n_i x 1
  ad::Vard gamma;              // 1 x B
  ad::Vard delta;              // 3 x (H*W*B)
  ad::Vard hidden;             // hidden_dim x B
};

struct PaintGraph {
  ad::Vard canvas_raw;  // 3 x (H*W*B), pre-clamp gated sum
  ad::Vard image;       // clamp(canvas_raw, -1, 1)
  ad::Vard kl;          // 1 x B KL of the condition gaussian
  std::vector<PaintStepVars> steps;
};

/// caps supply frozen per-token states (hidden_dim x n_i) per sample;
/// sentence (hidden_dim x B), noise (noise_dim x B) and ca_eps (cond_dim x B)
/// are tape constants fed by the caller.
PaintGraph paint_graph(ad::Taped& t, const GeneratorVars& v,
                       const std::vector<Matd>& per_token_states,
                       ad::Vard sentence, ad::Vard noise, ad::Vard ca_eps,
                       const GeneratorConfig& cfg);

}  // namespace textcanvas::generator
