#pragma once

#include <cstdint>
#include <string>

#include "textcanvas/data.hpp"
#include "textcanvas/discriminator.hpp"
#include "textcanvas/generator.hpp"
#include "textcanvas/metrics.hpp"
#include "textcanvas/training.hpp"
#include "textcanvas/vse.hpp"

namespace textcanvas::cli {

/// One flat key=value namespace covering every subsystem. Precedence is
/// flags > file > defaults; the file parser rejects unknown keys.
struct RunConfig {
  std::uint64_t seed = 1234;
  std::string out_dir = "runs/default";

  int hidden_dim = 256;  // shared by text encoder, generator, discriminator

  // data
  int image_size = 32;
  int samples_per_class = 200;
  std::string manifest;  // empty -> built-in synthetic set

  // text encoder
  int word_dim = 64;
  int enc_channels = 16;
  double margin = 0.2;
  int vse_steps = 400;
  int vse_batch_size = 16;
  double vse_learning_rate = 1e-3;
  std::string vse_checkpoint;  // empty -> <out_dir>/vse.ckpt
  std::string embedding_file;
  std::string image_range = "signed";

  // generator
  int timesteps = 4;
  int noise_dim = 100;
  int condition_dim = 128;
  int patch_size = 16;
  int gen_channels = 32;

  // discriminator
  int disc_channels = 32;

  // training
  int train_steps = 500;
  int batch_size = 16;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double lambda_kl = 2.0;
  int checkpoint_every = 100;

  // metrics
  int splits = 10;
  int eval_samples = 120;

  std::string resolved_vse_checkpoint() const;
  void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

data::SynthConfig synth_config(const RunConfig& cfg);
vse::VseConfig vse_config(const RunConfig& cfg);
vse::VsePretrainConfig vse_pretrain_config(const RunConfig& cfg);
generator::GeneratorConfig generator_config(const RunConfig& cfg);
discriminator::DiscriminatorConfig discriminator_config(const RunConfig& cfg);
training::TrainConfig train_config(const RunConfig& cfg);

}  // namespace textcanvas::cli
