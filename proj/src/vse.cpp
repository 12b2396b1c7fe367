#include "textcanvas/vse.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "textcanvas/errors.hpp"

namespace textcanvas::vse {

using ad::Taped;
using ad::Vard;

void VseConfig::validate() const {
  if (word_dim < 1 || hidden_dim < 1) throw ConfigError("vse dims must be >= 1");
  if (image_size < 8 || image_size % 8 != 0)
    throw ConfigError("vse image_size must be a multiple of 8");
  if (image_range != "signed" && image_range != "unit")
    throw ConfigError("vse image_range must be signed or unit");
}

VseParams VseParams::init(const VseConfig& cfg, int vocab_size, Rng& rng) {
  VseParams p;
  p.embedding = rng.uniform_mat(vocab_size, cfg.word_dim, -0.1, 0.1);
  p.embedding.row(Vocabulary::kPad).setZero();
  p.fwd = nn::GruParams::init(cfg.word_dim, cfg.hidden_dim, rng);
  p.bwd = nn::GruParams::init(cfg.word_dim, cfg.hidden_dim, rng);
  p.score = nn::DenseParams::init(cfg.hidden_dim, 1, rng);
  const int c = cfg.enc_channels;
  p.img_c1 = nn::Conv2dParams::init(3, c, 4, 2, 1, rng);
  p.img_c2 = nn::Conv2dParams::init(c, 2 * c, 4, 2, 1, rng);
  p.img_c3 = nn::Conv2dParams::init(2 * c, 4 * c, 4, 2, 1, rng);
  const Index flat = static_cast<Index>(4 * c) * cfg.enc_spatial() * cfg.enc_spatial();
  p.img_proj = nn::DenseParams::init(flat, cfg.hidden_dim, rng);
  return p;
}

nn::ParamSet VseParams::params() {
  nn::ParamSet ps;
  ps.add("embedding", embedding);
  ps.merge("gru_fwd", fwd.params());
  ps.merge("gru_bwd", bwd.params());
  ps.merge("score", score.params());
  ps.merge("img_c1", img_c1.params());
  ps.merge("img_c2", img_c2.params());
  ps.merge("img_c3", img_c3.params());
  ps.merge("img_proj", img_proj.params());
  return ps;
}

VseVars bind(Taped& t, nn::Bindingd& bd, VseParams& p, bool grad) {
  return {bd.leaf(t, p.embedding, grad),
          nn::bind(t, bd, p.fwd, grad),
          nn::bind(t, bd, p.bwd, grad),
          nn::bind(t, bd, p.score, grad),
          nn::bind(t, bd, p.img_c1, grad),
          nn::bind(t, bd, p.img_c2, grad),
          nn::bind(t, bd, p.img_c3, grad),
          nn::bind(t, bd, p.img_proj, grad)};
}

Matd embed_tokens(const TokenSequence& seq, const Matd& table) {
  Matd g(seq.length(), table.cols());
  for (Index i = 0; i < seq.length(); ++i) {
    const int idx = seq.indices[static_cast<std::size_t>(i)];
    if (idx < 0 || idx >= table.rows())
      throw IndexOutOfRange("token index " + std::to_string(idx) +
                            " outside vocabulary of " +
                            std::to_string(table.rows()));
    g.row(i) = table.row(idx);
  }
  return g;
}

SequenceVars encode_sequence_graph(Taped& t, const VseVars& v, Vard g_var) {
  const Index n = g_var.cols();
  if (n < 1) throw EmptySequence("encode_sequence: empty token sequence");
  const Index d_h = v.fwd.w_r.rows();

  std::vector<Vard> inputs(n);
  for (Index i = 0; i < n; ++i) inputs[i] = ad::slice_cols(g_var, i, 1);

  Vard h = t.constant(Matd::Zero(d_h, 1));
  std::vector<Vard> fwd_states(n);
  for (Index i = 0; i < n; ++i) {
    h = nn::gru_step(v.fwd, inputs[i], h);
    fwd_states[i] = h;
  }
  h = t.constant(Matd::Zero(d_h, 1));
  std::vector<Vard> states(n);
  for (Index i = n; i-- > 0;) {
    h = nn::gru_step(v.bwd, inputs[i], h);
    states[i] = ad::add(fwd_states[i], h);  // summed bidirectional state
  }

  SequenceVars out;
  out.per_token = ad::concat_cols(states);
  // raw scores -> softmax so the weights form a distribution
  Vard scores = ad::transpose(nn::dense(v.score, out.per_token));
  out.attention = ad::softmax_cols(scores);
  out.sentence = ad::matmul(out.per_token, out.attention);
  return out;
}

SentenceEncoding encode_sequence(const Matd& g, VseParams& params) {
  if (g.rows() < 1) throw EmptySequence("encode_sequence: empty input");
  if (g.cols() != params.fwd.w_r.cols())
    throw ShapeMismatch("encode_sequence: word dim mismatch");
  Taped t;
  nn::Bindingd bd;
  VseVars v = bind(t, bd, params, false);
  SequenceVars sv = encode_sequence_graph(t, v, t.constant(g.transpose()));
  SentenceEncoding enc;
  enc.per_token = sv.per_token.value().transpose();
  enc.attention = sv.attention.value().col(0);
  enc.sentence = sv.sentence.value().col(0);
  return enc;
}

Vard encode_image_graph(Taped&, const VseVars& v, Vard x, const VseConfig& cfg,
                        int batch) {
  const int s = cfg.image_size;
  Vard f1 = ad::relu(nn::conv(v.c1, x, s, s, batch));
  Vard f2 = ad::relu(nn::conv(v.c2, f1, s / 2, s / 2, batch));
  Vard f3 = ad::relu(nn::conv(v.c3, f2, s / 4, s / 4, batch));
  const Index spatial = static_cast<Index>(cfg.enc_spatial()) * cfg.enc_spatial();
  Vard flat = ad::flatten_spatial(f3, spatial, batch);
  return nn::dense(v.proj, flat);
}

Vecd encode_image(const Image& image, VseParams& params, const VseConfig& cfg) {
  if (image.h != cfg.image_size || image.w != cfg.image_size ||
      image.channels() != 3)
    throw ShapeMismatch("encode_image: image does not match configured size");
  Taped t;
  nn::Bindingd bd;
  VseVars v = bind(t, bd, params, false);
  Vard emb = encode_image_graph(t, v, t.constant(image.chw), cfg, 1);
  return emb.value().col(0);
}

Vard ranking_loss_graph(Taped& t, Vard img, Vard sen, double margin) {
  const Index b = img.cols();
  Vard in = ad::normalize_cols(img);
  Vard sn = ad::normalize_cols(sen);
  Vard sim = ad::matmul(ad::transpose(in), sn);  // sim(i,j) = cos(img_i, sen_j)
  Vard d = ad::diag_extract(sim);
  Vard neg_d = ad::scale(d, -1.0);
  // hinge over wrong sentences for image i, and wrong images for sentence j
  Vard t1 = ad::relu(ad::add_scalar(ad::add_colvec(sim, neg_d), margin));
  Vard t2 = ad::relu(
      ad::add_scalar(ad::add_rowvec(sim, ad::transpose(neg_d)), margin));
  Matd mask = Matd::Ones(b, b);
  mask.diagonal().setZero();
  Vard masked = ad::cmul(ad::add(t1, t2), t.constant(mask));
  return ad::scale(ad::sum_all(masked),
                   1.0 / static_cast<double>(2 * b * (b - 1)));
}

double ranking_loss(const Matd& image_embs, const Matd& sent_embs,
                    double margin) {
  if (image_embs.rows() < 2)
    throw BatchTooSmall("ranking_loss needs a batch of at least 2");
  if (image_embs.rows() != sent_embs.rows() ||
      image_embs.cols() != sent_embs.cols())
    throw ShapeMismatch("ranking_loss: embedding shapes differ");
  Taped t;
  Vard img = t.constant(image_embs.transpose());
  Vard sen = t.constant(sent_embs.transpose());
  return ranking_loss_graph(t, img, sen, margin).scalar();
}

CaptionEncoding VseModel::encode_caption(const std::string& caption) {
  TokenSequence seq = tokenize(caption, vocab);
  Matd g = embed_tokens(seq, params.embedding);
  SentenceEncoding enc = encode_sequence(g, params);
  CaptionEncoding out;
  out.tokens = seq.raw_tokens;
  out.per_token = enc.per_token.transpose();
  out.attention = enc.attention;
  out.sentence = enc.sentence;
  return out;
}

Vecd VseModel::embed_image(const Image& image) {
  return encode_image(image, params, cfg);
}

VsePretrainResult pretrain_vse(const std::vector<Image>& images,
                               const std::vector<std::string>& captions,
                               const VseConfig& cfg,
                               const VsePretrainConfig& train_cfg,
                               std::uint64_t seed) {
  cfg.validate();
  if (images.size() != captions.size() || images.empty())
    throw ShapeMismatch("pretrain_vse: need aligned non-empty image/caption arrays");
  if (train_cfg.batch_size < 2)
    throw BatchTooSmall("pretrain_vse: batch_size must be >= 2");

  VsePretrainResult res;
  res.model.cfg = cfg;
  res.model.vocab = Vocabulary::from_captions(captions);
  Rng init_rng(derive_seed(seed, "vse-init"));
  res.model.params = VseParams::init(cfg, res.model.vocab.size(), init_rng);
  VseParams& params = res.model.params;

  std::vector<TokenSequence> seqs;
  seqs.reserve(captions.size());
  for (const auto& c : captions) seqs.push_back(tokenize(c, res.model.vocab));

  nn::ParamSet ps = params.params();
  std::size_t embedding_slot = 0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.items[i].first == "embedding") embedding_slot = i;

  nn::Adam opt(train_cfg.learning_rate);
  Rng batch_rng(derive_seed(seed, "vse-batches"));
  const int b = train_cfg.batch_size;
  const Index spatial = images[0].pixels();

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force initial shuffle

  for (int step = 0; step < train_cfg.steps; ++step) {
    if (cursor + b > order.size()) {
      batch_rng.shuffle(order);
      cursor = 0;
    }
    Taped t;
    nn::Bindingd bd;
    VseVars v = bind(t, bd, params, true);

    Matd image_block(3, spatial * b);
    std::vector<Vard> sentence_cols;
    sentence_cols.reserve(b);
    for (int k = 0; k < b; ++k) {
      const std::size_t idx = order[cursor + k];
      image_block.middleCols(static_cast<Index>(k) * spatial, spatial) =
          images[idx].chw;
      Vard g = ad::transpose(
          ad::gather_rows(v.embedding, seqs[idx].indices));
      sentence_cols.push_back(encode_sequence_graph(t, v, g).sentence);
    }
    cursor += b;

    Vard sen = ad::concat_cols(sentence_cols);
    Vard img =
        encode_image_graph(t, v, t.constant(image_block), cfg, b);
    Vard loss = ranking_loss_graph(t, img, sen, cfg.margin);

    const double loss_val = loss.scalar();
    if (!std::isfinite(loss_val))
      throw NonFiniteLoss("vse pretraining diverged at step " +
                          std::to_string(step) +
                          " (loss=" + std::to_string(loss_val) + ")");
    t.backward(loss);
    std::vector<Matd> grads = bd.gather(ps);
    grads[embedding_slot].row(Vocabulary::kPad).setZero();  // keep PAD at zero
    opt.step(ps, grads);
    res.loss_history.push_back(loss_val);
  }
  return res;
}

int load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                               Matd& table) {
  std::ifstream in(path);
  if (!in) throw MissingImage("embedding file not found: " + path);
  std::string line;
  int loaded = 0;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    if (!vocab.contains(token)) continue;
    const int row = vocab.lookup(token);
    if (row == Vocabulary::kUnk) continue;
    Vecd vec(table.cols());
    for (Index i = 0; i < table.cols(); ++i)
      if (!(ss >> vec(i)))
        throw MalformedLine("embedding file line " + std::to_string(line_no) +
                            ": expected " + std::to_string(table.cols()) +
                            " values");
    table.row(row) = vec.transpose();
    ++loaded;
  }
  return loaded;
}

}  // namespace textcanvas::vse
