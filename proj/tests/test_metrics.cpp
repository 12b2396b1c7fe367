#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "textcanvas/data.hpp"
#include "textcanvas/errors.hpp"
#include "textcanvas/metrics.hpp"
#include "textcanvas/rng.hpp"

using namespace textcanvas;
using namespace textcanvas::metrics;

namespace {

Matd random_posteriors(Index n, Index k, Rng& rng) {
  Matd p = rng.uniform_mat(n, k, 0.01, 1.0);
  for (Index i = 0; i < n; ++i) p.row(i) /= p.row(i).sum();
  return p;
}

}  // namespace

TEST_CASE("inception score closed forms") {
  SUBCASE("uniform posteriors score exactly 1 with zero std") {
    Matd p = Matd::Constant(12, 4, 0.25);
    InceptionScore s = inception_score(p, 3);
    CHECK(s.mean == 1.0);
    CHECK(s.stddev == 0.0);
  }
  SUBCASE("balanced one-hot rows over K classes score K") {
    const Index k = 5;
    Matd p = Matd::Zero(k, k);
    for (Index i = 0; i < k; ++i) p(i, i) = 1.0;
    InceptionScore s = inception_score(p, 1);
    CHECK(s.mean == doctest::Approx(static_cast<double>(k)).epsilon(1e-12));
    CHECK(s.stddev == 0.0);
  }
}

TEST_CASE("inception score matches the per-element KL oracle") {
  Rng rng(5);
  Matd p = random_posteriors(10, 3, rng);
  InceptionScore ours = inception_score(p, 1);
  CHECK(std::abs(ours.mean - oracles::inception_score_naive(p)) < 1e-6);
}

TEST_CASE("inception score bounds and permutation invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Index k = 2 + static_cast<Index>(rng.integer(5));
    Matd p = random_posteriors(20, k, rng);
    InceptionScore s = inception_score(p, 4);
    CHECK(s.mean >= 1.0 - 1e-9);
    CHECK(s.mean <= static_cast<double>(k) + 1e-9);

    // permuting rows within each split leaves the score unchanged
    Matd q = p;
    for (Index i = 0; i < 5; ++i) q.row(i).swap(q.row(4 - i >= i ? 4 - i : i));
    InceptionScore s2 = inception_score(q, 4);
    CHECK(std::abs(s.mean - s2.mean) < 1e-9);
  }
  // full-matrix permutation with a single split
  Matd p = random_posteriors(16, 4, rng);
  Matd shuffled = p.colwise().reverse();
  CHECK(std::abs(inception_score(p, 1).mean -
                 inception_score(shuffled, 1).mean) < 1e-9);
}

TEST_CASE("inception score input validation") {
  Matd p = Matd::Constant(4, 3, 1.0 / 3.0);
  CHECK_THROWS_AS((void)inception_score(p, 5), InvalidDistribution);
  CHECK_THROWS_AS((void)inception_score(p, 0), InvalidDistribution);
  Matd bad = p;
  bad(1, 0) = 0.9;  // row no longer sums to 1
  CHECK_THROWS_AS((void)inception_score(bad, 1), InvalidDistribution);
  Matd neg = p;
  neg(0, 0) = -0.1;
  neg(0, 1) = 0.2 + 1.0 / 3.0 + 0.1;
  CHECK_THROWS_AS((void)inception_score(neg, 1), InvalidDistribution);
}

TEST_CASE("retrieval recall closed forms") {
  SUBCASE("identical embeddings give recall@1 of 1") {
    Rng rng(9);
    Matd e = rng.uniform_mat(5, 4, -1, 1);
    CHECK(retrieval_recall(e, e, 1) == 1.0);
  }
  SUBCASE("adversarial orthogonal construction gives recall@1 of 0") {
    // caption q is colinear with image (q+1) mod B and orthogonal to its own
    Matd img = Matd::Identity(3, 3);
    Matd sen(3, 3);
    sen.row(0) = img.row(1);
    sen.row(1) = img.row(2);
    sen.row(2) = img.row(0);
    CHECK(retrieval_recall(img, sen, 1) == 0.0);
  }
  SUBCASE("batch below 2 throws") {
    Matd one = Matd::Ones(1, 3);
    CHECK_THROWS_AS((void)retrieval_recall(one, one, 1), BatchTooSmall);
  }
}

TEST_CASE("retrieval recall matches brute force and is monotone in k") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    Matd img = rng.uniform_mat(6, 4, -1, 1);
    Matd sen = rng.uniform_mat(6, 4, -1, 1);
    double prev = 0.0;
    for (int k = 1; k <= 6; ++k) {
      const double ours = retrieval_recall(img, sen, k);
      CHECK(ours == doctest::Approx(oracles::recall_at_k_naive(img, sen, k))
                        .epsilon(1e-12));
      CHECK(ours >= prev);
      prev = ours;
    }
    CHECK(retrieval_recall(img, sen, 6) == 1.0);
  }
}

TEST_CASE("desk classifier reaches the training accuracy target") {
  data::SynthConfig cfg;
  cfg.image_size = 16;
  cfg.samples_per_class = 6;
  cfg.seed = 3;
  data::Dataset ds = data::generate_synthetic(cfg);
  std::vector<Image> images;
  std::vector<int> labels;
  for (const auto& s : ds.samples) {
    images.push_back(s.image);
    labels.push_back(s.class_id);
  }
  const int classes = ds.num_colors * ds.num_shapes;
  ClassifierTrainOptions opts;
  opts.max_steps = 500;
  Classifier clf = train_classifier(images, labels, classes, opts, 17);
  CHECK(clf.accuracy(images, labels) >= 0.95);

  Matd post = clf.posteriors(images);
  CHECK(post.rows() == static_cast<Index>(images.size()));
  CHECK(post.cols() == classes);
  for (Index i = 0; i < post.rows(); ++i) {
    CHECK(post.row(i).minCoeff() >= 0.0);
    CHECK(std::abs(post.row(i).sum() - 1.0) < 1e-6);
  }
  // classifier posteriors feed the score directly
  InceptionScore s = inception_score(post, 4);
  CHECK(s.mean >= 1.0);
  CHECK(s.mean <= static_cast<double>(classes));
}
