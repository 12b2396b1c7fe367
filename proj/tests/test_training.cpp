#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "textcanvas/checkpoint.hpp"
#include "textcanvas/errors.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/training.hpp"

using namespace textcanvas;
using namespace textcanvas::training;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("textcanvas_train_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

data::Dataset tiny_dataset() {
  data::SynthConfig cfg;
  cfg.image_size = 16;
  cfg.samples_per_class = 3;
  cfg.seed = 5;
  return data::generate_synthetic(cfg);
}

checkpoint::GanModel tiny_model(const data::Dataset& ds, std::uint64_t seed) {
  checkpoint::GanModel m;
  m.text.cfg.word_dim = 8;
  m.text.cfg.hidden_dim = 16;
  m.text.cfg.image_size = ds.image_size;
  m.text.cfg.enc_channels = 4;
  std::vector<std::string> captions;
  for (const auto& s : ds.samples) captions.push_back(s.caption);
  m.text.vocab = vse::Vocabulary::from_captions(captions);
  Rng r(derive_seed(seed, "test-model"));
  m.text.params = vse::VseParams::init(m.text.cfg, m.text.vocab.size(), r);

  m.gen_cfg.timesteps = 2;
  m.gen_cfg.noise_dim = 6;
  m.gen_cfg.cond_dim = 5;
  m.gen_cfg.hidden_dim = 16;
  m.gen_cfg.image_size = ds.image_size;
  m.gen_cfg.patch_size = 8;
  m.gen_cfg.channels = 4;
  m.gen = generator::GeneratorParams::init(m.gen_cfg, r);

  m.disc_cfg.image_size = ds.image_size;
  m.disc_cfg.hidden_dim = 16;
  m.disc_cfg.channels = 4;
  m.disc = discriminator::DiscriminatorParams::init(m.disc_cfg, r);
  return m;
}

double param_distance(nn::ParamSet a, nn::ParamSet b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    d += (*a.items[i].second - *b.items[i].second).cwiseAbs().sum();
  return d;
}

}  // namespace

TEST_CASE("mismatching batch is a roll by one") {
  using V = std::vector<std::string>;
  CHECK(make_mismatching(V{"a", "b"}) == V{"b", "a"});
  CHECK(make_mismatching(V{"a", "b", "c"}) == V{"c", "a", "b"});
  CHECK_THROWS_AS((void)make_mismatching(V{"a"}), BatchTooSmall);

  // derangement: no index keeps its own entry, for any B >= 2
  for (int b = 2; b <= 9; ++b) {
    std::vector<int> in(b);
    for (int i = 0; i < b; ++i) in[i] = i;
    std::vector<int> out = make_mismatching(in);
    for (int i = 0; i < b; ++i) CHECK(out[i] != i);
  }
}

TEST_CASE("relevant batch is a half roll") {
  using V = std::vector<std::string>;
  CHECK(make_relevant(V{"a", "b", "c", "d"}) == V{"c", "d", "a", "b"});
  CHECK(make_relevant(V{"a", "b"}) == V{"b", "a"});
  CHECK_THROWS_AS((void)make_relevant(V{"a"}), BatchTooSmall);

  // B = 5 rolls by 2: out[i] = in[(i - 2) mod 5]
  std::vector<int> in{0, 1, 2, 3, 4};
  std::vector<int> out = make_relevant(in);
  for (int i = 0; i < 5; ++i) CHECK(out[i] == in[(i + 5 - 2) % 5]);
}

TEST_CASE("bce closed forms and oracle equivalence") {
  SUBCASE("probability one half costs ln 2") {
    Vecd p = Vecd::Constant(4, 0.5);
    CHECK(bce(p, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce(p, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("confident correct answers cost almost nothing") {
    const double eps = 1e-7;
    Vecd hi = Vecd::Constant(3, 1.0 - eps);
    Vecd lo = Vecd::Constant(3, eps);
    const double total = bce(hi, 1.0) + bce(lo, 0.0) + bce(lo, 0.0);
    CHECK(total == doctest::Approx(3.0 * -std::log1p(-eps)).epsilon(1e-6));
    CHECK(total < 1e-6);
  }
  SUBCASE("clamping bounds the loss by -ln(eps)") {
    Vecd p = Vecd::Constant(2, 1.0);  // worst case for label 0
    CHECK(bce(p, 0.0) <= -std::log(1e-7) + 1e-9);
    Vecd z = Vecd::Constant(2, 0.0);
    CHECK(bce(z, 1.0) <= -std::log(1e-7) + 1e-9);
  }
  SUBCASE("random probabilities match the scalar oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      Vecd p = rng.uniform_mat(6, 1, 0.001, 0.999);
      const double label = trial % 2 ? 1.0 : 0.0;
      CHECK(std::abs(bce(p, label) - oracles::bce_naive(p, label)) < 1e-6);
    }
  }
}

TEST_CASE("discriminator loss decomposition and closed forms") {
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 7);
  std::vector<vse::CaptionEncoding> encs =
      encode_dataset_captions(ds, m.text);

  const int b = 4;
  BatchTriple triple;
  const Index spatial = static_cast<Index>(ds.image_size) * ds.image_size;
  triple.images.resize(3, spatial * b);
  for (int i = 0; i < b; ++i) {
    triple.images.middleCols(i * spatial, spatial) = ds.samples[i].image.chw;
    triple.match.push_back(&encs[i]);
  }
  triple.mismatch = make_mismatching(triple.match);
  triple.relevant = make_relevant(triple.match);
  Rng rng(9);
  Matd fake = rng.uniform_mat(3, spatial * b, -1, 1);

  SUBCASE("output head forced to 0.5 gives ln 2 per part") {
    m.disc.out.w.setZero();
    m.disc.out.b.setZero();
    DiscLossParts parts = discriminator_loss(m.disc, m.disc_cfg, triple, fake);
    CHECK(parts.match == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(parts.mismatch == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(parts.relevant == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(parts.total == doctest::Approx(3 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("total equals the sum of the three parts exactly") {
    DiscLossParts parts = discriminator_loss(m.disc, m.disc_cfg, triple, fake);
    CHECK(parts.total == (parts.match + parts.mismatch) + parts.relevant);
  }
  SUBCASE("parts match per-sample discriminate + scalar bce oracle") {
    DiscLossParts parts = discriminator_loss(m.disc, m.disc_cfg, triple, fake);
    Vecd pm(b), pmm(b), pf(b);
    for (int i = 0; i < b; ++i) {
      Image im;
      im.h = im.w = ds.image_size;
      im.chw = triple.images.middleCols(i * spatial, spatial);
      Image fim;
      fim.h = fim.w = ds.image_size;
      fim.chw = fake.middleCols(i * spatial, spatial);
      pm(i) = discriminator::discriminate(im, triple.match[i]->sentence, m.disc,
                                          m.disc_cfg)
                  .probability;
      pmm(i) = discriminator::discriminate(im, triple.mismatch[i]->sentence,
                                           m.disc, m.disc_cfg)
                   .probability;
      pf(i) = discriminator::discriminate(fim, triple.relevant[i]->sentence,
                                          m.disc, m.disc_cfg)
                  .probability;
    }
    CHECK(std::abs(parts.match - oracles::bce_naive(pm, 1.0)) < 1e-6);
    CHECK(std::abs(parts.mismatch - oracles::bce_naive(pmm, 0.0)) < 1e-6);
    CHECK(std::abs(parts.relevant - oracles::bce_naive(pf, 0.0)) < 1e-6);
  }
  SUBCASE("mismatch with a fixed point is rejected") {
    triple.mismatch = triple.match;
    CHECK_THROWS_AS(
        (void)discriminator_loss(m.disc, m.disc_cfg, triple, fake),
        ShapeMismatch);
  }
}

TEST_CASE("generator loss closed forms") {
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 11);
  std::vector<vse::CaptionEncoding> encs =
      encode_dataset_captions(ds, m.text);
  const int b = 4;
  std::vector<const vse::CaptionEncoding*> match;
  for (int i = 0; i < b; ++i) match.push_back(&encs[i]);
  Rng rng(13);
  const Index spatial = static_cast<Index>(ds.image_size) * ds.image_size;
  Matd fake = rng.uniform_mat(3, spatial * b, -1, 1);

  SUBCASE("half-probability discriminator with zero kl costs ln 2") {
    m.disc.out.w.setZero();
    m.disc.out.b.setZero();
    CHECK(generator_loss(m.disc, m.disc_cfg, fake, match, 0.0, 1.0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("fooled discriminator leaves only the kl penalty") {
    m.disc.out.w.setZero();
    m.disc.out.b.setConstant(1000.0);  // sigmoid saturates at 1
    const double kl = 0.37;
    const double loss = generator_loss(m.disc, m.disc_cfg, fake, match, kl, 2.0);
    CHECK(loss == doctest::Approx(2.0 * kl).epsilon(1e-6));
  }
  SUBCASE("random probabilities match the formula oracle") {
    const double kl = 0.8, lambda = 2.0;
    const double loss =
        generator_loss(m.disc, m.disc_cfg, fake, match, kl, lambda);
    Vecd probs(b);
    for (int i = 0; i < b; ++i) {
      Image fim;
      fim.h = fim.w = ds.image_size;
      fim.chw = fake.middleCols(i * spatial, spatial);
      probs(i) = discriminator::discriminate(fim, match[i]->sentence, m.disc,
                                             m.disc_cfg)
                     .probability;
    }
    CHECK(std::abs(loss - (oracles::bce_naive(probs, 1.0) + lambda * kl)) <
          1e-6);
  }
}

TEST_CASE("gradient isolation between the two phases") {
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 17);
  std::vector<vse::CaptionEncoding> encs =
      encode_dataset_captions(ds, m.text);
  const int b = 2;
  std::vector<const vse::CaptionEncoding*> match = {&encs[0], &encs[1]};
  std::vector<Matd> tokens = {encs[0].per_token, encs[1].per_token};
  Matd sent(m.text.cfg.hidden_dim, b);
  sent.col(0) = encs[0].sentence;
  sent.col(1) = encs[1].sentence;
  Rng rng(19);
  Matd z = rng.gaussian(m.gen_cfg.noise_dim, b);
  Matd eps = rng.gaussian(m.gen_cfg.cond_dim, b);

  // generator phase: paint with gradients, discriminator bound frozen
  ad::Taped t;
  nn::Bindingd bd;
  generator::GeneratorVars gv = generator::bind(t, bd, m.gen, true);
  discriminator::DiscriminatorVars dv =
      discriminator::bind(t, bd, m.disc, false);
  generator::PaintGraph pg = generator::paint_graph(
      t, gv, tokens, t.constant(sent), t.constant(z), t.constant(eps),
      m.gen_cfg);
  ad::Vard p = discriminator::discriminate_graph(t, dv, pg.image,
                                                 t.constant(sent), m.disc_cfg, b)
                   .probability;
  ad::Vard loss = ad::add(bce_from_probs(t, p, 1.0),
                          ad::scale(ad::mean_all(pg.kl), 2.0));
  t.backward(loss);

  nn::ParamSet disc_ps = m.disc.params();
  nn::ParamSet gen_ps = m.gen.params();
  std::vector<Matd> disc_grads = bd.gather(disc_ps);
  std::vector<Matd> gen_grads = bd.gather(gen_ps);
  double disc_norm = 0, gen_norm = 0;
  for (const auto& g : disc_grads) disc_norm += g.cwiseAbs().sum();
  for (const auto& g : gen_grads) gen_norm += g.cwiseAbs().sum();
  CHECK(disc_norm == 0.0);  // frozen discriminator receives no gradient
  CHECK(gen_norm > 0.0);    // generator receives gradient through the fake
}

TEST_CASE("one training step moves both parameter sets and writes the csv") {
  TempDir tmp;
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 23);
  checkpoint::GanModel before = m;

  TrainConfig cfg;
  cfg.steps = 1;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 1;
  TrainResult res = train(ds, m, cfg, tmp.path.string(), 99);

  CHECK(res.records.size() == 1);
  CHECK(std::isfinite(res.records[0].g_loss));
  CHECK(param_distance(m.gen.params(), before.gen.params()) > 0.0);
  CHECK(param_distance(m.disc.params(), before.disc.params()) > 0.0);
  // frozen text encoder is untouched by GAN training
  CHECK(param_distance(m.text.params.params(), before.text.params.params()) ==
        0.0);

  std::ifstream csv(res.losses_csv);
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "step,g_loss,d_match,d_mismatch,d_relevant");
  CHECK(row.rfind("1,", 0) == 0);
  CHECK(fs::exists(fs::path(res.last_checkpoint) / "params.bin"));
  CHECK(fs::exists(fs::path(res.last_checkpoint) / "config.json"));
}

TEST_CASE("training is deterministic given the seed") {
  TempDir ta, tb;
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel ma = tiny_model(ds, 31);
  checkpoint::GanModel mb = tiny_model(ds, 31);
  TrainConfig cfg;
  cfg.steps = 6;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 10;
  TrainResult ra = train(ds, ma, cfg, ta.path.string(), 42);
  TrainResult rb = train(ds, mb, cfg, tb.path.string(), 42);
  REQUIRE(ra.records.size() == rb.records.size());
  for (std::size_t i = 0; i < ra.records.size(); ++i) {
    CHECK(ra.records[i].g_loss == rb.records[i].g_loss);
    CHECK(ra.records[i].d_match_loss == rb.records[i].d_match_loss);
    CHECK(ra.records[i].d_mismatch_loss == rb.records[i].d_mismatch_loss);
    CHECK(ra.records[i].d_relevant_loss == rb.records[i].d_relevant_loss);
  }
  CHECK(param_distance(ma.gen.params(), mb.gen.params()) == 0.0);
  CHECK(param_distance(ma.disc.params(), mb.disc.params()) == 0.0);
}

TEST_CASE("checkpoint roundtrip") {
  TempDir tmp;
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 37);
  const std::string dir = (tmp.path / "ckpt_test").string();

  SUBCASE("save -> load -> save produces byte-identical files") {
    checkpoint::save_gan(dir, m);
    checkpoint::GanModel loaded = checkpoint::load_gan(dir);
    const std::string dir2 = (tmp.path / "ckpt_test2").string();
    checkpoint::save_gan(dir2, loaded);
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(fs::path(dir) / "params.bin") ==
          slurp(fs::path(dir2) / "params.bin"));
    CHECK(slurp(fs::path(dir) / "config.json") ==
          slurp(fs::path(dir2) / "config.json"));
  }
  SUBCASE("wrong hidden_dim in the expected config is rejected") {
    checkpoint::save_gan(dir, m);
    generator::GeneratorConfig wrong = m.gen_cfg;
    wrong.hidden_dim = m.gen_cfg.hidden_dim * 2;
    CHECK_THROWS_AS((void)checkpoint::load_gan(dir, &wrong), ConfigMismatch);
  }
  SUBCASE("post-load forward pass equals pre-save forward pass") {
    std::vector<vse::CaptionEncoding> encs =
        encode_dataset_captions(ds, m.text);
    Rng rng(41);
    Vecd z = rng.gaussian(m.gen_cfg.noise_dim, 1);
    Rng pr1(7);
    generator::PaintResult before = generator::paint(
        Matd(encs[0].per_token.transpose()), encs[0].sentence, z, m.gen_cfg,
        m.gen, pr1);
    checkpoint::save_gan(dir, m);
    checkpoint::GanModel loaded = checkpoint::load_gan(dir);
    Rng pr2(7);
    generator::PaintResult after = generator::paint(
        Matd(encs[0].per_token.transpose()), encs[0].sentence, z,
        loaded.gen_cfg, loaded.gen, pr2);
    CHECK((before.image - after.image).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("corrupt container is reported") {
    checkpoint::save_gan(dir, m);
    std::ofstream((fs::path(dir) / "params.bin").string(),
                  std::ios::binary | std::ios::trunc)
        << "junk";
    CHECK_THROWS_AS((void)checkpoint::load_gan(dir), CorruptFile);
  }
}

TEST_CASE("vse checkpoint roundtrip preserves encodings and vocab") {
  TempDir tmp;
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 43);
  const std::string path = (tmp.path / "vse.ckpt").string();
  vse::CaptionEncoding before = m.text.encode_caption(ds.samples[0].caption);
  checkpoint::save_vse(path, m.text);
  vse::VseModel loaded = checkpoint::load_vse(path);
  CHECK(loaded.vocab.tokens == m.text.vocab.tokens);
  vse::CaptionEncoding after = loaded.encode_caption(ds.samples[0].caption);
  CHECK((before.sentence - after.sentence).cwiseAbs().maxCoeff() == 0.0);

  vse::VseConfig wrong = m.text.cfg;
  wrong.hidden_dim += 1;
  CHECK_THROWS_AS((void)checkpoint::load_vse(path, &wrong), ConfigMismatch);
}

TEST_CASE("diverging training keeps the last checkpoint on disk") {
  TempDir tmp;
  data::Dataset ds = tiny_dataset();
  checkpoint::GanModel m = tiny_model(ds, 47);
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch_size = 4;
  cfg.checkpoint_every = 1;
  TrainResult ok = train(ds, m, cfg, tmp.path.string(), 5);
  CHECK(fs::exists(ok.last_checkpoint));

  TrainConfig bad = cfg;
  bad.steps = 1;
  bad.lambda_kl = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS((void)train(ds, m, bad, tmp.path.string(), 6), Error);
  CHECK(fs::exists(ok.last_checkpoint));  // earlier checkpoint retained
}
