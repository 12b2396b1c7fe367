#pragma once

#include <string>
#include <vector>

#include "textcanvas/checkpoint.hpp"
#include "textcanvas/data.hpp"
#include "textcanvas/discriminator.hpp"
#include "textcanvas/generator.hpp"
#include "textcanvas/types.hpp"
#include "textcanvas/vse.hpp"

namespace textcanvas::training {

/// Circular roll by 1: output[i] = input[(i-1) mod B]. A derangement for
/// any B >= 2, pairing every image with a wrong caption.
template <typename T>
std::vector<T> make_mismatching(const std::vector<T>& captions) {
  const std::size_t b = captions.size();
  if (b < 2) throw BatchTooSmall("make_mismatching needs B >= 2");
  std::vector<T> out(b);
  for (std::size_t i = 0; i < b; ++i) out[i] = captions[(i + b - 1) % b];
  return out;
}

/// Circular roll by floor(B/2): output[i] = input[(i - B/2) mod B].
template <typename T>
std::vector<T> make_relevant(const std::vector<T>& captions) {
  const std::size_t b = captions.size();
  if (b < 2) throw BatchTooSmall("make_relevant needs B >= 2");
  const std::size_t half = b / 2;
  std::vector<T> out(b);
  for (std::size_t i = 0; i < b; ++i) out[i] = captions[(i + b - half) % b];
  return out;
}

/// Mean binary cross entropy against a constant label, probabilities
/// clamped to [eps, 1-eps].
double bce(const Vecd& probs, double label, double eps = 1e-7);

ad::Vard bce_from_probs(ad::Taped& t, ad::Vard probs, double label,
                        double eps = 1e-7);

struct BatchTriple {
  Matd images;  // 3 x (S*S*B) real images
  std::vector<const vse::CaptionEncoding*> match, mismatch, relevant;

  int batch() const { return static_cast<int>(match.size()); }
  void validate() const;
};

struct DiscLossParts {
  double total = 0, match = 0, mismatch = 0, relevant = 0;
};

/// BCE(D(real, match), 1) + BCE(D(real, mismatch), 0) +
/// BCE(D(fake_relevant, relevant), 0); fake images enter as constants.
DiscLossParts discriminator_loss(discriminator::DiscriminatorParams& d,
                                 const discriminator::DiscriminatorConfig& dcfg,
                                 const BatchTriple& triple,
                                 const Matd& generated_rel, double eps = 1e-7);

/// Non-saturating generator objective: BCE(D(fake, match), 1) plus the
/// KL penalty of the condition gaussian.
double generator_loss(discriminator::DiscriminatorParams& d,
                      const discriminator::DiscriminatorConfig& dcfg,
                      const Matd& generated_match,
                      const std::vector<const vse::CaptionEncoding*>& match,
                      double mean_kl, double lambda_kl, double eps = 1e-7);

struct TrainConfig {
  int steps = 500;
  int batch_size = 16;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double lambda_kl = 2.0;
  int checkpoint_every = 100;
  double bce_eps = 1e-7;

  void validate() const;
};

struct LossRecord {
  long step = 0;
  double g_loss = 0, d_match_loss = 0, d_mismatch_loss = 0, d_relevant_loss = 0;
};

struct TrainResult {
  std::vector<LossRecord> records;
  std::string losses_csv;
  std::string last_checkpoint;
};

/// Alternating optimization: one discriminator update then one generator
/// update per step, checkpoints every checkpoint_every steps plus a final
/// one, loss curve appended to <out_dir>/losses.csv. Deterministic given
/// the seed. On a non-finite loss the last checkpoint on disk is retained
/// and NonFiniteLoss is thrown.
TrainResult train(const data::Dataset& dataset, checkpoint::GanModel& model,
                  const TrainConfig& cfg, const std::string& out_dir,
                  std::uint64_t seed);

/// Precompute frozen caption encodings for every dataset sample.
std::vector<vse::CaptionEncoding> encode_dataset_captions(
    const data::Dataset& dataset, vse::VseModel& text);

std::string format_loss_csv_row(const LossRecord& r);

}  // namespace textcanvas::training
