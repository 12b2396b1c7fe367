#pragma once

#include <string>
#include <vector>

#include "textcanvas/autodiff.hpp"
#include "textcanvas/nn.hpp"
#include "textcanvas/rng.hpp"
#include "textcanvas/types.hpp"
#include "textcanvas/vocab.hpp"

namespace textcanvas::vse {

struct VseConfig {
  int word_dim = 64;
  int hidden_dim = 256;
  int image_size = 32;
  int enc_channels = 16;  // first conv block; doubles per block
  double margin = 0.2;
  std::string image_range = "signed";  // "signed" [-1,1] | "unit" [0,1]

  int enc_spatial() const { return image_size / 8; }  // after 3 stride-2 blocks
  void validate() const;
};

/// Sentence encoder + image encoder living in one latent space.
struct VseParams {
  Matd embedding;          // vocab x word_dim, PAD row pinned to zero
  nn::GruParams fwd, bwd;  // word_dim -> hidden_dim, one per direction
  nn::DenseParams score;   // hidden_dim -> 1 attention scorer
  nn::Conv2dParams img_c1, img_c2, img_c3;
  nn::DenseParams img_proj;  // flattened features -> hidden_dim

  static VseParams init(const VseConfig& cfg, int vocab_size, Rng& rng);
  nn::ParamSet params();
};

struct VseVars {
  ad::Vard embedding;
  nn::GruVars<double> fwd, bwd;
  nn::DenseVars<double> score;
  nn::Conv2dVars<double> c1, c2, c3;
  nn::DenseVars<double> proj;
};

VseVars bind(ad::Taped& t, nn::Bindingd& bd, VseParams& p, bool grad);

/// Per-token summed bidirectional states, normalized attention, and the
/// attention-pooled sentence vector.
struct SentenceEncoding {
  Matd per_token;  // n x hidden_dim
  Vecd attention;  // n, entries >= 0 summing to 1
  Vecd sentence;   // hidden_dim
};

struct SequenceVars {
  ad::Vard per_token;  // hidden_dim x n
  ad::Vard attention;  // n x 1
  ad::Vard sentence;   // hidden_dim x 1
};

/// Everything the GAN consumes from the frozen text side.
struct CaptionEncoding {
  std::vector<std::string> tokens;
  Matd per_token;  // hidden_dim x n (column-major token states)
  Vecd attention;
  Vecd sentence;  // hidden_dim
};

// --- operations -------------------------------------------------------------

/// Row i of the result is the embedding-table row for token i.
Matd embed_tokens(const TokenSequence& seq, const Matd& table);

/// Bidirectional recurrent encoding with self-attention pooling; g has one
/// row per token.
SentenceEncoding encode_sequence(const Matd& g, VseParams& params);

/// Graph version; g_var is (word_dim x n).
SequenceVars encode_sequence_graph(ad::Taped& t, const VseVars& v,
                                   ad::Vard g_var);

/// Image -> shared latent space. Image must match the configured size.
Vecd encode_image(const Image& image, VseParams& params, const VseConfig& cfg);

/// Graph version over a batch: x is (3 x size*size*B) -> (hidden_dim x B).
ad::Vard encode_image_graph(ad::Taped& t, const VseVars& v, ad::Vard x,
                            const VseConfig& cfg, int batch);

/// Bidirectional max-margin hinge over cosine similarities, mean over all
/// 2*B*(B-1) contrastive terms. Rows of both matrices are matching pairs.
double ranking_loss(const Matd& image_embs, const Matd& sent_embs,
                    double margin);

ad::Vard ranking_loss_graph(ad::Taped& t, ad::Vard img, ad::Vard sen,
                            double margin);

// --- pretraining ------------------------------------------------------------

struct VsePretrainConfig {
  int steps = 400;
  int batch_size = 16;
  double learning_rate = 1e-3;
};

struct VseModel {
  VseConfig cfg;
  Vocabulary vocab;
  VseParams params;

  CaptionEncoding encode_caption(const std::string& caption);
  Vecd embed_image(const Image& image);
};

struct Sample;  // fwd decl not needed; dataset passed as flat arrays

/// Pretrain on (image, caption) pairs with the ranking objective. Returns
/// the trained model and the per-step loss history. The model is intended
/// to be frozen afterwards.
struct VsePretrainResult {
  VseModel model;
  std::vector<double> loss_history;
};

VsePretrainResult pretrain_vse(const std::vector<Image>& images,
                               const std::vector<std::string>& captions,
                               const VseConfig& cfg,
                               const VsePretrainConfig& train_cfg,
                               std::uint64_t seed);

/// Overlay pretrained word vectors (`token v1 .. v_dw` per line) onto the
/// embedding table for tokens present in the vocabulary.
int load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                               Matd& table);

}  // namespace textcanvas::vse
