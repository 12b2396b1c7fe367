#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "textcanvas/errors.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/vse.hpp"

using namespace textcanvas;
using namespace textcanvas::vse;

namespace {

Vocabulary tiny_vocab() {
  return Vocabulary::from_tokens({"red", "circle", "blue", "square"});
}

VseConfig small_cfg() {
  VseConfig cfg;
  cfg.word_dim = 6;
  cfg.hidden_dim = 8;
  cfg.image_size = 8;
  cfg.enc_channels = 4;
  return cfg;
}

/// Solid-color 8x8 image with small seeded noise; 4 color classes.
Image color_image(int color_class, Rng& rng) {
  static const double palette[4][3] = {
      {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, -1}};
  Image im = Image::zero(8, 8);
  for (Index p = 0; p < im.pixels(); ++p)
    for (int c = 0; c < 3; ++c)
      im.chw(c, p) = palette[color_class][c] + 0.1 * rng.normal();
  return im;
}

}  // namespace

TEST_CASE("tokenize maps known tokens, UNK, and rejects empty captions") {
  Vocabulary v = tiny_vocab();
  TokenSequence s = tokenize("Red circle.", v);
  CHECK(s.indices == std::vector<int>{v.lookup("red"), v.lookup("circle")});
  CHECK(s.raw_tokens == std::vector<std::string>{"red", "circle"});

  TokenSequence u = tokenize("red blorp", v);
  CHECK(u.indices[0] == v.lookup("red"));
  CHECK(u.indices[1] == Vocabulary::kUnk);

  CHECK_THROWS_AS((void)tokenize("   ", v), EmptyCaption);
  CHECK_THROWS_AS((void)tokenize("...!?", v), EmptyCaption);
}

TEST_CASE("vocabulary pins PAD to 0 and is bijective over tokens") {
  Vocabulary v = tiny_vocab();
  CHECK(v.lookup("<pad>") == 0);
  CHECK(v.size() >= 2);
  for (int i = 0; i < v.size(); ++i) CHECK(v.lookup(v.tokens[i]) == i);
}

TEST_CASE("embed_tokens gathers table rows") {
  Rng rng(3);
  Matd table = rng.uniform_mat(6, 4, -1, 1);
  table.row(0).setZero();

  SUBCASE("PAD row embeds to zero") {
    TokenSequence s;
    s.indices = {0};
    s.raw_tokens = {"<pad>"};
    Matd g = embed_tokens(s, table);
    CHECK(g.rows() == 1);
    CHECK(g.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("repeated index gives identical rows") {
    TokenSequence s;
    s.indices = {2, 2};
    s.raw_tokens = {"x", "x"};
    Matd g = embed_tokens(s, table);
    CHECK((g.row(0) - g.row(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("random sequence matches a per-row gather loop") {
    Rng r2(4);
    TokenSequence s;
    for (int i = 0; i < 5; ++i) {
      s.indices.push_back(static_cast<int>(r2.integer(6)));
      s.raw_tokens.push_back("t");
    }
    Matd g = embed_tokens(s, table);
    for (Index i = 0; i < 5; ++i)
      CHECK((g.row(i) - table.row(s.indices[i])).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("out-of-range index throws") {
    TokenSequence s;
    s.indices = {17};
    s.raw_tokens = {"bad"};
    CHECK_THROWS_AS((void)embed_tokens(s, table), IndexOutOfRange);
  }
}

TEST_CASE("encode_sequence softmax and pooling behavior") {
  VseConfig cfg = small_cfg();
  Rng rng(7);
  VseParams p = VseParams::init(cfg, 10, rng);

  SUBCASE("singleton sequence gets attention exactly 1") {
    Matd g = rng.uniform_mat(1, cfg.word_dim, -1, 1);
    SentenceEncoding e = encode_sequence(g, p);
    CHECK(e.attention.size() == 1);
    CHECK(e.attention(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((e.sentence - e.per_token.row(0).transpose()).cwiseAbs().maxCoeff() <
          1e-12);
  }
  SUBCASE("constant scorer yields uniform attention and mean pooling") {
    p.score.w.setZero();  // score is the bias for every token
    p.score.b.setConstant(0.7);
    Matd g = rng.uniform_mat(4, cfg.word_dim, -1, 1);
    SentenceEncoding e = encode_sequence(g, p);
    for (Index i = 0; i < 4; ++i)
      CHECK(e.attention(i) == doctest::Approx(0.25).epsilon(1e-9));
    Vecd mean = e.per_token.colwise().mean().transpose();
    CHECK((e.sentence - mean).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("pooling identity: sentence = sum_i attention_i * per_token_i") {
    Matd g = rng.uniform_mat(3, cfg.word_dim, -1, 1);
    SentenceEncoding e = encode_sequence(g, p);
    Vecd pooled = Vecd::Zero(cfg.hidden_dim);
    for (Index i = 0; i < 3; ++i)
      pooled += e.attention(i) * e.per_token.row(i).transpose();
    CHECK((e.sentence - pooled).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("attention weights are a distribution for random inputs") {
  VseConfig cfg = small_cfg();
  Rng rng(11);
  VseParams p = VseParams::init(cfg, 12, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.integer(7));
    Matd g = rng.uniform_mat(n, cfg.word_dim, -2, 2);
    SentenceEncoding e = encode_sequence(g, p);
    CHECK(e.attention.minCoeff() >= 0.0);
    CHECK(std::abs(e.attention.sum() - 1.0) < 1e-6);
    Vecd pooled = e.per_token.transpose() * e.attention;
    CHECK((e.sentence - pooled).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("token order changes the sentence vector") {
  VseConfig cfg = small_cfg();
  Rng rng(13);
  VseParams p = VseParams::init(cfg, 10, rng);
  Matd g = rng.uniform_mat(4, cfg.word_dim, -1, 1);
  Matd g_rev = g.colwise().reverse();
  SentenceEncoding a = encode_sequence(g, p);
  SentenceEncoding b = encode_sequence(g_rev, p);
  CHECK((a.sentence - b.sentence).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("encode_image contract") {
  VseConfig cfg = small_cfg();
  Rng rng(17);
  VseParams p = VseParams::init(cfg, 10, rng);

  SUBCASE("zero weights map any image to the zero vector") {
    nn::ParamSet ps = p.params();
    for (auto& [name, m] : ps.items)
      if (name.rfind("img_", 0) == 0) m->setZero();
    Image im = color_image(2, rng);
    Vecd emb = encode_image(im, p, cfg);
    CHECK(emb.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("output dimension is hidden_dim and calls are deterministic") {
    Image im = color_image(1, rng);
    Vecd a = encode_image(im, p, cfg);
    Vecd b = encode_image(im, p, cfg);
    CHECK(a.size() == cfg.hidden_dim);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("wrong size throws ShapeMismatch") {
    Image im = Image::zero(4, 4);
    CHECK_THROWS_AS((void)encode_image(im, p, cfg), ShapeMismatch);
  }
}

TEST_CASE("ranking loss closed forms") {
  SUBCASE("fully satisfied hinge is exactly zero") {
    // matching pairs colinear, contrastive pairs opposite: cos(ii)=1, cos(ij)=-1
    Matd img(2, 2), sen(2, 2);
    img << 1, 0, -1, 0;
    sen << 1, 0, -1, 0;
    CHECK(ranking_loss(img, sen, 0.2) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("identical matching and contrastive similarities give exactly margin") {
    Matd img = Matd::Ones(3, 4);
    Matd sen = Matd::Ones(3, 4);
    CHECK(ranking_loss(img, sen, 0.2) == doctest::Approx(0.2).epsilon(1e-9));
  }
  SUBCASE("batch below 2 throws") {
    Matd one = Matd::Ones(1, 4);
    CHECK_THROWS_AS((void)ranking_loss(one, one, 0.2), BatchTooSmall);
  }
}

TEST_CASE("ranking loss matches the brute-force pair loop") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    Matd img = rng.uniform_mat(4, 3, -1, 1);
    Matd sen = rng.uniform_mat(4, 3, -1, 1);
    const double ours = ranking_loss(img, sen, 0.2);
    const double oracle = oracles::ranking_loss_naive(img, sen, 0.2);
    CHECK(std::abs(ours - oracle) < 1e-6);
    CHECK(ours >= 0.0);
    CHECK(ours <= 2 * 0.2 + 2.0);  // cosine is bounded in [-1,1]
  }
}

TEST_CASE("ranking loss gradients match central finite differences") {
  Rng rng(29);
  Matd img = rng.uniform_mat(5, 4, -1, 1);
  Matd sen = rng.uniform_mat(5, 4, -1, 1);
  const double margin = 0.2;
  auto loss_value = [&] { return ranking_loss(img, sen, margin); };

  ad::Taped t;
  ad::Vard vi = t.leaf(img.transpose(), true);
  ad::Vard vs = t.leaf(sen.transpose(), true);
  ad::Vard loss = ranking_loss_graph(t, vi, vs, margin);
  t.backward(loss);
  Matd gi = vi.grad_or_zero().transpose();
  Matd gs = vs.grad_or_zero().transpose();

  CHECK(oracles::fd_check_all(img, gi, loss_value) < 1e-4);
  CHECK(oracles::fd_check_all(sen, gs, loss_value) < 1e-4);
}

TEST_CASE("pretraining learns a retrievable embedding on 4 color classes") {
  // Inline micro-dataset: solid-color images with color-word captions.
  const char* color_words[4] = {"red", "green", "blue", "yellow"};
  Rng data_rng(31);
  std::vector<Image> images;
  std::vector<std::string> captions;
  for (int rep = 0; rep < 12; ++rep)
    for (int c = 0; c < 4; ++c) {
      images.push_back(color_image(c, data_rng));
      captions.push_back(std::string("a ") + color_words[c] + " patch");
    }

  VseConfig cfg = small_cfg();
  VsePretrainConfig tc;
  tc.steps = 200;
  tc.batch_size = 8;
  tc.learning_rate = 2e-3;
  VsePretrainResult res = pretrain_vse(images, captions, cfg, tc, 99);

  SUBCASE("loss decreases over training") {
    CHECK(res.loss_history.size() == 200);
    CHECK(res.loss_history.back() < res.loss_history.front());
  }
  SUBCASE("one step moves at least one parameter") {
    VsePretrainConfig one;
    one.steps = 1;
    one.batch_size = 8;
    Rng probe(31);
    VsePretrainResult before = pretrain_vse(images, captions, cfg, one, 99);
    VsePretrainResult zero = [&] {
      VsePretrainConfig none = one;
      none.steps = 0;
      return pretrain_vse(images, captions, cfg, none, 99);
    }();
    nn::ParamSet pa = before.model.params.params();
    nn::ParamSet pb = zero.model.params.params();
    double moved = 0;
    for (std::size_t i = 0; i < pa.size(); ++i)
      moved += (*pa.items[i].second - *pb.items[i].second).cwiseAbs().sum();
    CHECK(moved > 0.0);
  }
  SUBCASE("held-out caption->image retrieval beats 0.25 chance") {
    // one fresh pair per color class; strict recall@1 over the 4-batch
    Rng eval_rng(77);
    double total = 0;
    const int batches = 25;
    for (int rep = 0; rep < batches; ++rep) {
      Matd img_embs(4, cfg.hidden_dim), sen_embs(4, cfg.hidden_dim);
      for (int c = 0; c < 4; ++c) {
        Image im = color_image(c, eval_rng);
        img_embs.row(c) = res.model.embed_image(im).transpose();
        sen_embs.row(c) =
            res.model
                .encode_caption(std::string("a ") + color_words[c] + " patch")
                .sentence.transpose();
      }
      total += oracles::recall_at_k_naive(img_embs, sen_embs, 1);
    }
    CHECK(total / batches >= 0.5);
  }
}

TEST_CASE("deterministic pretraining given a seed") {
  Rng data_rng(37);
  std::vector<Image> images;
  std::vector<std::string> captions;
  for (int c = 0; c < 4; ++c)
    for (int rep = 0; rep < 4; ++rep) {
      images.push_back(color_image(c, data_rng));
      captions.push_back(c % 2 ? "a red dot" : "a blue dot");
    }
  VseConfig cfg = small_cfg();
  VsePretrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 4;
  VsePretrainResult a = pretrain_vse(images, captions, cfg, tc, 123);
  VsePretrainResult b = pretrain_vse(images, captions, cfg, tc, 123);
  for (std::size_t i = 0; i < a.loss_history.size(); ++i)
    CHECK(a.loss_history[i] == b.loss_history[i]);
  nn::ParamSet pa = a.model.params.params();
  nn::ParamSet pb = b.model.params.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((*pa.items[i].second - *pb.items[i].second).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("PAD embedding row stays zero through training") {
  Rng data_rng(41);
  std::vector<Image> images;
  std::vector<std::string> captions;
  for (int c = 0; c < 4; ++c)
    for (int rep = 0; rep < 4; ++rep) {
      images.push_back(color_image(c, data_rng));
      captions.push_back("some words here");
    }
  VseConfig cfg = small_cfg();
  VsePretrainConfig tc;
  tc.steps = 10;
  tc.batch_size = 4;
  VsePretrainResult res = pretrain_vse(images, captions, cfg, tc, 7);
  CHECK(res.model.params.embedding.row(0).cwiseAbs().maxCoeff() == 0.0);
}
