#include "textcanvas/metrics.hpp"

#include <cmath>
#include <numeric>

#include "textcanvas/autodiff.hpp"
#include "textcanvas/errors.hpp"

namespace textcanvas::metrics {

using ad::Taped;
using ad::Vard;

InceptionScore inception_score(const Matd& posteriors, int splits) {
  const Index n = posteriors.rows();
  const Index k = posteriors.cols();
  if (splits < 1 || n < splits)
    throw InvalidDistribution("inception_score needs N >= splits >= 1");
  for (Index i = 0; i < n; ++i) {
    if (posteriors.row(i).minCoeff() < 0.0 ||
        std::abs(posteriors.row(i).sum() - 1.0) > 1e-6)
      throw InvalidDistribution("posterior row " + std::to_string(i) +
                                " is not a distribution");
  }

  std::vector<double> scores;
  Index at = 0;
  for (int s = 0; s < splits; ++s) {
    const Index len = n / splits + (s < static_cast<int>(n % splits) ? 1 : 0);
    const auto block = posteriors.middleRows(at, len);
    at += len;
    Vecd marginal = block.colwise().mean().transpose();
    double mean_kl = 0.0;
    for (Index i = 0; i < len; ++i) {
      double kl = 0.0;
      for (Index j = 0; j < k; ++j) {
        const double p = block(i, j);
        if (p > 0.0) kl += p * std::log(p / marginal(j));
      }
      mean_kl += kl;
    }
    scores.push_back(std::exp(mean_kl / static_cast<double>(len)));
  }

  InceptionScore out;
  out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) /
             static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - out.mean) * (s - out.mean);
  out.stddev = std::sqrt(var / static_cast<double>(scores.size()));
  return out;
}

double retrieval_recall(const Matd& image_embs, const Matd& sent_embs, int k) {
  const Index b = image_embs.rows();
  if (b < 2) throw BatchTooSmall("retrieval_recall needs a batch of >= 2");
  if (sent_embs.rows() != b || sent_embs.cols() != image_embs.cols())
    throw ShapeMismatch("retrieval_recall: embedding shapes differ");
  if (k < 1) throw BatchTooSmall("retrieval_recall: k must be >= 1");

  Matd img_n = image_embs;
  Matd sen_n = sent_embs;
  for (Index i = 0; i < b; ++i) {
    img_n.row(i) /= std::max(img_n.row(i).norm(), 1e-12);
    sen_n.row(i) /= std::max(sen_n.row(i).norm(), 1e-12);
  }
  Matd sim = img_n * sen_n.transpose();  // sim(i,q): image i vs caption q

  Index hits = 0;
  for (Index q = 0; q < b; ++q) {
    const double match = sim(q, q);
    Index rank = 0;
    for (Index i = 0; i < b; ++i) {
      if (i == q) continue;
      if (sim(i, q) > match || (sim(i, q) == match && i < q)) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

// --- desk classifier -------------------------------------------------------------

ClassifierParams ClassifierParams::init(const ClassifierConfig& cfg, Rng& rng) {
  ClassifierParams p;
  p.c1 = nn::Conv2dParams::init(3, cfg.channels, 4, 2, 1, rng);
  p.c2 = nn::Conv2dParams::init(cfg.channels, 2 * cfg.channels, 4, 2, 1, rng);
  const Index flat =
      static_cast<Index>(2 * cfg.channels) * cfg.spatial() * cfg.spatial();
  p.fc = nn::DenseParams::init(flat, cfg.num_classes, rng);
  return p;
}

nn::ParamSet ClassifierParams::params() {
  nn::ParamSet ps;
  ps.merge("c1", c1.params());
  ps.merge("c2", c2.params());
  ps.merge("fc", fc.params());
  return ps;
}

namespace {

struct ClassifierVars {
  nn::Conv2dVars<double> c1, c2;
  nn::DenseVars<double> fc;
};

ClassifierVars bind(Taped& t, nn::Bindingd& bd, ClassifierParams& p, bool grad) {
  return {nn::bind(t, bd, p.c1, grad), nn::bind(t, bd, p.c2, grad),
          nn::bind(t, bd, p.fc, grad)};
}

Vard forward(const ClassifierVars& v, Vard x, const ClassifierConfig& cfg,
             int batch) {
  const int s = cfg.image_size;
  Vard f1 = ad::relu(nn::conv(v.c1, x, s, s, batch));
  Vard f2 = ad::relu(nn::conv(v.c2, f1, s / 2, s / 2, batch));
  const Index spatial = static_cast<Index>(cfg.spatial()) * cfg.spatial();
  Vard flat = ad::flatten_spatial(f2, spatial, batch);
  return ad::softmax_cols(nn::dense(v.fc, flat));  // num_classes x B
}

Matd stack_images(const std::vector<Image>& images, std::size_t from,
                  std::size_t count) {
  const Index spatial = images[from].pixels();
  Matd block(3, spatial * static_cast<Index>(count));
  for (std::size_t i = 0; i < count; ++i)
    block.middleCols(static_cast<Index>(i) * spatial, spatial) =
        images[from + i].chw;
  return block;
}

}  // namespace

Matd Classifier::posteriors(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeMismatch("posteriors: no images");
  Matd out(static_cast<Index>(images.size()), cfg.num_classes);
  const std::size_t chunk = 64;
  for (std::size_t at = 0; at < images.size(); at += chunk) {
    const std::size_t count = std::min(chunk, images.size() - at);
    Taped t;
    nn::Bindingd bd;
    ClassifierVars v = bind(t, bd, params, false);
    Vard probs = forward(v, t.constant(stack_images(images, at, count)), cfg,
                         static_cast<int>(count));
    out.middleRows(static_cast<Index>(at), static_cast<Index>(count)) =
        probs.value().transpose();
  }
  return out;
}

double Classifier::accuracy(const std::vector<Image>& images,
                            const std::vector<int>& labels) {
  Matd probs = posteriors(images);
  Index correct = 0;
  for (Index i = 0; i < probs.rows(); ++i) {
    Index arg = 0;
    probs.row(i).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

Classifier train_classifier(const std::vector<Image>& images,
                            const std::vector<int>& labels, int num_classes,
                            const ClassifierTrainOptions& opts,
                            std::uint64_t seed) {
  if (images.empty() || images.size() != labels.size())
    throw ShapeMismatch("train_classifier: need aligned images/labels");
  Classifier clf;
  clf.cfg.image_size = images[0].h;
  clf.cfg.num_classes = num_classes;
  Rng init_rng(derive_seed(seed, "classifier-init"));
  clf.params = ClassifierParams::init(clf.cfg, init_rng);

  nn::ParamSet ps = clf.params.params();
  nn::Adam opt(opts.learning_rate);
  Rng batch_rng(derive_seed(seed, "classifier-batches"));
  const Index spatial = images[0].pixels();

  for (int step = 1; step <= opts.max_steps; ++step) {
    const int b = opts.batch_size;
    Matd block(3, spatial * b);
    Matd onehot = Matd::Zero(num_classes, b);
    for (int i = 0; i < b; ++i) {
      const std::size_t idx = batch_rng.integer(images.size());
      block.middleCols(static_cast<Index>(i) * spatial, spatial) =
          images[idx].chw;
      onehot(labels[idx], i) = 1.0;
    }
    Taped t;
    nn::Bindingd bd;
    ClassifierVars v = bind(t, bd, clf.params, true);
    Vard probs = forward(v, t.constant(block), clf.cfg, b);
    Vard picked = ad::cmul(ad::log_op(ad::clamp(probs, 1e-12, 1.0)),
                           t.constant(onehot));
    Vard loss = ad::scale(ad::sum_all(picked), -1.0 / b);
    if (!std::isfinite(loss.scalar()))
      throw NonFiniteLoss("classifier training diverged at step " +
                          std::to_string(step));
    t.backward(loss);
    opt.step(ps, bd.gather(ps));

    if (step % opts.eval_every == 0 &&
        clf.accuracy(images, labels) >= opts.target_accuracy)
      break;
  }
  return clf;
}

}  // namespace textcanvas::metrics
