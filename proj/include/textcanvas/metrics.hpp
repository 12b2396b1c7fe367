#pragma once

#include <vector>

#include "textcanvas/data.hpp"
#include "textcanvas/nn.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/types.hpp"

namespace textcanvas::metrics {

struct InceptionScore {
  double mean = 0.0;
  double stddev = 0.0;  // population std over splits
};

/// exp of the mean KL between per-image posteriors and the split marginal,
/// aggregated over contiguous splits. Rows must be valid distributions.
InceptionScore inception_score(const Matd& posteriors, int splits);

/// Fraction of captions whose matching image (same row) is among the k
/// nearest images by cosine similarity; ties go to the lower image index.
double retrieval_recall(const Matd& image_embs, const Matd& sent_embs, int k);

// --- desk classifier for scoring generated images ------------------------------

struct ClassifierConfig {
  int image_size = 32;
  int num_classes = 12;
  int channels = 8;

  int spatial() const { return image_size / 4; }  // after two stride-2 convs
};

struct ClassifierParams {
  nn::Conv2dParams c1, c2;
  nn::DenseParams fc;

  static ClassifierParams init(const ClassifierConfig& cfg, Rng& rng);
  nn::ParamSet params();
};

struct Classifier {
  ClassifierConfig cfg;
  ClassifierParams params;

  /// Class posteriors, one row per image.
  Matd posteriors(const std::vector<Image>& images);
  double accuracy(const std::vector<Image>& images,
                  const std::vector<int>& labels);
};

struct ClassifierTrainOptions {
  double target_accuracy = 0.95;
  int max_steps = 600;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int eval_every = 50;
};

/// Train on labeled images until the train accuracy target is met (or
/// max_steps). Deterministic given the seed.
Classifier train_classifier(const std::vector<Image>& images,
                            const std::vector<int>& labels, int num_classes,
                            const ClassifierTrainOptions& opts,
                            std::uint64_t seed);

}  // namespace textcanvas::metrics
