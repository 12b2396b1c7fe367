#include "textcanvas/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "textcanvas/errors.hpp"
#include "textcanvas/rng.hpp"

namespace textcanvas::training {

namespace fs = std::filesystem;
using ad::Taped;
using ad::Vard;

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("training steps must be >= 0");
  if (batch_size < 2) throw BatchTooSmall("training batch_size must be >= 2");
  if (checkpoint_every < 1)
    throw ConfigError("checkpoint_every must be >= 1");
  if (lambda_kl < 0) throw ConfigError("lambda_kl must be >= 0");
}

void BatchTriple::validate() const {
  const std::size_t b = match.size();
  if (b < 2) throw BatchTooSmall("batch triple needs B >= 2");
  if (mismatch.size() != b || relevant.size() != b)
    throw ShapeMismatch("batch triple arrays differ in size");
  for (std::size_t i = 0; i < b; ++i)
    if (mismatch[i] == match[i])
      throw ShapeMismatch("mismatch batch has a fixed point at " +
                          std::to_string(i));
}

double bce(const Vecd& probs, double label, double eps) {
  Taped t;
  Vard p = t.constant(probs.transpose());
  return bce_from_probs(t, p, label, eps).scalar();
}

Vard bce_from_probs(Taped& t, Vard probs, double label, double eps) {
  Vard p = ad::clamp(probs, eps, 1.0 - eps);
  Vard ll = label > 0.5 ? ad::log_op(p) : ad::log_op(ad::one_minus(p));
  (void)t;
  return ad::scale(ad::mean_all(ll), -1.0);
}

namespace {

Matd sentence_block(const std::vector<const vse::CaptionEncoding*>& caps) {
  const Index d = caps[0]->sentence.size();
  Matd out(d, static_cast<Index>(caps.size()));
  for (std::size_t i = 0; i < caps.size(); ++i)
    out.col(static_cast<Index>(i)) = caps[i]->sentence;
  return out;
}

std::vector<Matd> token_states(
    const std::vector<const vse::CaptionEncoding*>& caps) {
  std::vector<Matd> out;
  out.reserve(caps.size());
  for (const auto* c : caps) out.push_back(c->per_token);
  return out;
}

struct DiscGraphLosses {
  Vard total, match, mismatch, relevant;
};

DiscGraphLosses discriminator_loss_graph(
    Taped& t, const discriminator::DiscriminatorVars& dv, Vard real_images,
    Vard match_sent, Vard mismatch_sent, Vard relevant_sent, Vard fake_rel,
    const discriminator::DiscriminatorConfig& dcfg, int batch, double eps) {
  DiscGraphLosses out;
  Vard p_match =
      discriminator::discriminate_graph(t, dv, real_images, match_sent, dcfg,
                                        batch)
          .probability;
  Vard p_mismatch =
      discriminator::discriminate_graph(t, dv, real_images, mismatch_sent, dcfg,
                                        batch)
          .probability;
  Vard p_fake =
      discriminator::discriminate_graph(t, dv, fake_rel, relevant_sent, dcfg,
                                        batch)
          .probability;
  out.match = bce_from_probs(t, p_match, 1.0, eps);
  out.mismatch = bce_from_probs(t, p_mismatch, 0.0, eps);
  out.relevant = bce_from_probs(t, p_fake, 0.0, eps);
  out.total = ad::add(ad::add(out.match, out.mismatch), out.relevant);
  return out;
}

}  // namespace

DiscLossParts discriminator_loss(discriminator::DiscriminatorParams& d,
                                 const discriminator::DiscriminatorConfig& dcfg,
                                 const BatchTriple& triple,
                                 const Matd& generated_rel, double eps) {
  triple.validate();
  const int b = triple.batch();
  Taped t;
  nn::Bindingd bd;
  discriminator::DiscriminatorVars dv = discriminator::bind(t, bd, d, false);
  DiscGraphLosses g = discriminator_loss_graph(
      t, dv, t.constant(triple.images), t.constant(sentence_block(triple.match)),
      t.constant(sentence_block(triple.mismatch)),
      t.constant(sentence_block(triple.relevant)), t.constant(generated_rel),
      dcfg, b, eps);
  DiscLossParts parts;
  parts.match = g.match.scalar();
  parts.mismatch = g.mismatch.scalar();
  parts.relevant = g.relevant.scalar();
  parts.total = g.total.scalar();
  if (!std::isfinite(parts.total))
    throw NonFiniteLoss("discriminator loss is not finite");
  return parts;
}

double generator_loss(discriminator::DiscriminatorParams& d,
                      const discriminator::DiscriminatorConfig& dcfg,
                      const Matd& generated_match,
                      const std::vector<const vse::CaptionEncoding*>& match,
                      double mean_kl, double lambda_kl, double eps) {
  Taped t;
  nn::Bindingd bd;
  discriminator::DiscriminatorVars dv = discriminator::bind(t, bd, d, false);
  Vard p = discriminator::discriminate_graph(
               t, dv, t.constant(generated_match),
               t.constant(sentence_block(match)), dcfg,
               static_cast<int>(match.size()))
               .probability;
  const double loss = bce_from_probs(t, p, 1.0, eps).scalar() +
                      lambda_kl * mean_kl;
  if (!std::isfinite(loss)) throw NonFiniteLoss("generator loss is not finite");
  return loss;
}

std::vector<vse::CaptionEncoding> encode_dataset_captions(
    const data::Dataset& dataset, vse::VseModel& text) {
  std::vector<vse::CaptionEncoding> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples)
    out.push_back(text.encode_caption(s.caption));
  return out;
}

std::string format_loss_csv_row(const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g", r.step,
                r.g_loss, r.d_match_loss, r.d_mismatch_loss, r.d_relevant_loss);
  return buf;
}

TrainResult train(const data::Dataset& dataset, checkpoint::GanModel& model,
                  const TrainConfig& cfg, const std::string& out_dir,
                  std::uint64_t seed) {
  cfg.validate();
  model.gen_cfg.validate();
  model.disc_cfg.validate();
  if (dataset.size() < static_cast<std::size_t>(cfg.batch_size))
    throw BatchTooSmall("dataset smaller than one batch");
  if (dataset.image_size != model.gen_cfg.image_size ||
      dataset.image_size != model.disc_cfg.image_size)
    throw ShapeMismatch("dataset image size does not match model configs");
  if (model.gen_cfg.hidden_dim != model.text.cfg.hidden_dim ||
      model.disc_cfg.hidden_dim != model.text.cfg.hidden_dim)
    throw ShapeMismatch("hidden_dim must be shared across text/generator/"
                        "discriminator");

  fs::create_directories(out_dir);
  TrainResult res;
  res.losses_csv = (fs::path(out_dir) / "losses.csv").string();
  std::ofstream csv(res.losses_csv, std::ios::trunc);
  csv << "step,g_loss,d_match,d_mismatch,d_relevant\n";

  // the VSE is frozen: encode every caption once
  std::vector<vse::CaptionEncoding> encodings =
      encode_dataset_captions(dataset, model.text);

  nn::ParamSet gen_ps = model.gen.params();
  nn::ParamSet disc_ps = model.disc.params();
  nn::Adam opt_g(cfg.learning_rate, cfg.beta1);
  nn::Adam opt_d(cfg.learning_rate, cfg.beta1);

  Rng batch_rng(derive_seed(seed, "train-batches"));
  Rng noise_rng(derive_seed(seed, "train-noise"));

  const int b = cfg.batch_size;
  const Index spatial = static_cast<Index>(dataset.image_size) *
                        dataset.image_size;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  auto save_ckpt = [&](long step) {
    const std::string dir =
        (fs::path(out_dir) / ("ckpt_" + std::to_string(step))).string();
    model.step = step;
    checkpoint::save_gan(dir, model);
    res.last_checkpoint = dir;
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    if (cursor + b > order.size()) {
      batch_rng.shuffle(order);
      cursor = 0;
    }
    BatchTriple triple;
    triple.images.resize(3, spatial * b);
    for (int i = 0; i < b; ++i) {
      const std::size_t idx = order[cursor + i];
      triple.images.middleCols(static_cast<Index>(i) * spatial, spatial) =
          dataset.samples[idx].image.chw;
      triple.match.push_back(&encodings[idx]);
    }
    cursor += b;
    triple.mismatch = make_mismatching(triple.match);
    triple.relevant = make_relevant(triple.match);

    // noise drawn in a fixed order regardless of graph structure
    Matd z_d = noise_rng.gaussian(model.gen_cfg.noise_dim, b);
    Matd eps_d = noise_rng.gaussian(model.gen_cfg.cond_dim, b);
    Matd z_g = noise_rng.gaussian(model.gen_cfg.noise_dim, b);
    Matd eps_g = noise_rng.gaussian(model.gen_cfg.cond_dim, b);

    LossRecord rec;
    rec.step = step;

    {  // discriminator update; generator runs detached
      Matd fake_rel;
      {
        Taped tf;
        nn::Bindingd bdf;
        generator::GeneratorVars gv =
            generator::bind(tf, bdf, model.gen, false);
        generator::PaintGraph pg = generator::paint_graph(
            tf, gv, token_states(triple.relevant),
            tf.constant(sentence_block(triple.relevant)), tf.constant(z_d),
            tf.constant(eps_d), model.gen_cfg);
        fake_rel = pg.image.value();
      }
      Taped t;
      nn::Bindingd bd;
      discriminator::DiscriminatorVars dv =
          discriminator::bind(t, bd, model.disc, true);
      DiscGraphLosses losses = discriminator_loss_graph(
          t, dv, t.constant(triple.images),
          t.constant(sentence_block(triple.match)),
          t.constant(sentence_block(triple.mismatch)),
          t.constant(sentence_block(triple.relevant)), t.constant(fake_rel),
          model.disc_cfg, b, cfg.bce_eps);
      rec.d_match_loss = losses.match.scalar();
      rec.d_mismatch_loss = losses.mismatch.scalar();
      rec.d_relevant_loss = losses.relevant.scalar();
      const double total = losses.total.scalar();
      if (!std::isfinite(total))
        throw NonFiniteLoss("discriminator diverged at step " +
                            std::to_string(step) + "; last checkpoint: " +
                            res.last_checkpoint);
      t.backward(losses.total);
      opt_d.step(disc_ps, bd.gather(disc_ps));
    }

    {  // generator update; discriminator frozen inside the step
      Taped t;
      nn::Bindingd bd;
      generator::GeneratorVars gv = generator::bind(t, bd, model.gen, true);
      discriminator::DiscriminatorVars dv =
          discriminator::bind(t, bd, model.disc, false);
      generator::PaintGraph pg = generator::paint_graph(
          t, gv, token_states(triple.match),
          t.constant(sentence_block(triple.match)), t.constant(z_g),
          t.constant(eps_g), model.gen_cfg);
      Vard p = discriminator::discriminate_graph(
                   t, dv, pg.image, t.constant(sentence_block(triple.match)),
                   model.disc_cfg, b)
                   .probability;
      Vard loss = ad::add(bce_from_probs(t, p, 1.0, cfg.bce_eps),
                          ad::scale(ad::mean_all(pg.kl), cfg.lambda_kl));
      rec.g_loss = loss.scalar();
      if (!std::isfinite(rec.g_loss))
        throw NonFiniteLoss("generator diverged at step " +
                            std::to_string(step) + "; last checkpoint: " +
                            res.last_checkpoint);
      t.backward(loss);
      opt_g.step(gen_ps, bd.gather(gen_ps));
    }

    res.records.push_back(rec);
    csv << format_loss_csv_row(rec) << '\n';
    csv.flush();
    if (step % cfg.checkpoint_every == 0) save_ckpt(step);
  }
  if (cfg.steps == 0 || cfg.steps % cfg.checkpoint_every != 0)
    save_ckpt(cfg.steps);
  return res;
}

}  // namespace textcanvas::training
