#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sentord/core.hpp"
#include "sentord/data.hpp"
#include "sentord/nn/layers.hpp"
#include "sentord/nn/parameters.hpp"
#include "sentord/nn/tape.hpp"

namespace sentord::model {

/// Miniature transformer pair encoder. The BERT and ALBERT stand-ins share the
/// architecture and differ only in share_layers (one block reused for every
/// layer) and embed_factor (vocab -> E -> d_model factorised embedding).
struct EncoderConfig {
  std::size_t vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_width = 128;
  int max_seq_len = 40;
  bool share_layers = false;
  int embed_factor = 0;  ///< 0: no factorisation
  std::uint64_t seed = 0;
};

void validate(const EncoderConfig& cfg);

/// Scalars an encoder with this config owns, computed from the formula rather
/// than from a built model.
std::size_t expected_parameter_count(const EncoderConfig& cfg);

/// The six model groups: local (BERTPair), local-shared (ALBERTPair),
/// ensemble (EnsemblePair), global (BERT-GlobalPair), global-ensemble
/// (Ensemble-GlobalPair) and single-global (GlobalPair fed single-sentence
/// CLS embeddings).
enum class Family { local, local_shared, ensemble, global, global_ensemble, single_global };

inline constexpr std::array<Family, 6> kAllFamilies = {Family::local,  Family::local_shared,    Family::ensemble,
                                                       Family::global, Family::global_ensemble, Family::single_global};

std::string to_string(Family f);
Family parse_family(const std::string& s);
bool is_global(Family f);
bool is_ensemble(Family f);

struct ModelConfig {
  Family family = Family::local;
  std::size_t vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_width = 128;
  int max_seq_len = 40;
  int embed_factor = 16;  ///< used by the ALBERT-style encoder only
  int global_layers = 2;
  int global_heads = 4;
  int global_ffn_width = 128;
  /// Stop gradients from the context path into the pair encoder.
  bool detach_context = false;
  std::uint64_t seed = 0;
};

void validate(const ModelConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Encoder configs of a family: ensembles list the ALBERT-style encoder first.
std::vector<EncoderConfig> encoder_configs(const ModelConfig& cfg);

template <typename S>
class PairEncoder {
 public:
  PairEncoder(const EncoderConfig& cfg, nn::ParameterSet<S>& params, const std::string& prefix);

  const EncoderConfig& config() const { return cfg_; }

  /// Hidden states, one row per token; row 0 is the CLS state. Throws
  /// std::invalid_argument for out-of-vocabulary ids or overlong input.
  nn::Var encode(nn::Tape<S>& t, const data::PairEncoding& enc) const;

 private:
  EncoderConfig cfg_;
  nn::ParamId token_embedding_ = 0;
  std::optional<nn::LinearParams> embed_projection_;
  nn::ParamId position_embedding_ = 0;
  nn::ParamId segment_embedding_ = 0;
  nn::LayerNormParams embed_norm_;
  std::vector<nn::TransformerBlockParams> blocks_;
};

struct EncodedPair {
  nn::Var cls;     ///< 1 x d_model
  nn::Var hidden;  ///< tokens x d_model
};

template <typename S>
EncodedPair encode_pair(nn::Tape<S>& t, const PairEncoder<S>& encoder, const data::PairEncoding& enc);

/// Variables produced while building a paragraph's global context.
struct GlobalContext {
  nn::Var x;  ///< N x d sentence embeddings
  nn::Var z;  ///< N x d globally contextualised embeddings
  /// Number of pair-level vectors pooled into each x_i (2(N-1) for pairwise
  /// context, 0 for single-sentence context).
  std::vector<std::size_t> pooled_per_sentence;
  /// Encoder passes spent building the context.
  std::size_t encoder_passes = 0;
};

template <typename S>
class PairModel {
 public:
  explicit PairModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Family family() const { return cfg_.family; }
  nn::ParameterSet<S>& parameters() { return params_; }
  const nn::ParameterSet<S>& parameters() const { return params_; }
  const std::vector<PairEncoder<S>>& encoders() const { return encoders_; }

  /// 1 x 2 logits from the CLS heads only: W_1(cls) for a single encoder,
  /// W_1(cls_albert) + W_2(cls_bert) for an ensemble.
  nn::Var cls_logits(nn::Tape<S>& t, const std::vector<int>& first, const std::vector<int>& second) const;

  /// x and z for a paragraph (global families only; N >= 2).
  GlobalContext build_context(nn::Tape<S>& t, const std::vector<std::vector<int>>& sentences) const;

  /// Logits of all N(N-1) ordered pairs, rows ordered i-major with j != i.
  /// Global families add W_2(z_i) + W_3(z_j) to the CLS logits.
  nn::Var paragraph_logits(nn::Tape<S>& t, const std::vector<std::vector<int>>& sentences) const;

  /// Adds W_2(z_i) + W_3(z_j) for ordered pair (i, j) to cls logits.
  nn::Var global_logits(nn::Tape<S>& t, const GlobalContext& ctx, nn::Var cls, std::size_t i,
                        std::size_t j) const;

 private:
  struct Global {
    std::vector<nn::AttnPoolParams> token_pools;  // one per encoder
    nn::AttnPoolParams pair_pool;
    std::vector<nn::TransformerBlockParams> blocks;
    nn::LinearParams first_head;   // W_2, applied to z_i
    nn::LinearParams second_head;  // W_3, applied to z_j
  };

  ModelConfig cfg_;
  nn::ParameterSet<S> params_;
  std::vector<PairEncoder<S>> encoders_;
  std::vector<nn::LinearParams> cls_heads_;
  std::optional<Global> global_;

  GlobalContext build_context(nn::Tape<S>& t, const std::vector<std::vector<int>>& sentences,
                              std::vector<nn::Var>* pair_cls_logits) const;
  nn::Var context_transformer(nn::Tape<S>& t, nn::Var x) const;
};

/// Row-wise two-way softmax of logits, as doubles; column 0 is P(i before j).
template <typename S>
std::array<double, 2> probabilities(const nn::Matrix<S>& logits_row);

/// Softmax of the CLS-head logits for (s_i, s_j) on a non-global model.
template <typename S>
std::array<double, 2> local_pair_score(const PairModel<S>& model, const std::vector<int>& first,
                                       const std::vector<int>& second);

/// Ensemble score from two independently built single-encoder models: the
/// softmax of the sum of their head logits.
template <typename S>
std::array<double, 2> ensemble_pair_score(const PairModel<S>& model_a, const PairModel<S>& model_b,
                                          const std::vector<int>& first, const std::vector<int>& second);

/// Fills every off-diagonal entry with the model's P(i before j); both
/// directions are scored independently.
template <typename S>
PairScoreMatrix score_matrix(const PairModel<S>& model, const data::ShuffledParagraph& paragraph);

/// Score matrices for a corpus, in input order, on up to `jobs` threads.
template <typename S>
std::vector<PairScoreMatrix> score_corpus(const PairModel<S>& model,
                                          const std::vector<data::ShuffledParagraph>& paragraphs,
                                          std::size_t jobs = 1);

/// Model export: header {"kind": "sentord-model", "config", "vocab"} plus
/// every parameter, as f64 for 64-bit models and f32 otherwise.
template <typename S>
void save_model(const std::filesystem::path& path, const PairModel<S>& model, const data::Vocab& vocab);

struct LoadedModelInfo {
  ModelConfig config;
  data::Vocab vocab;
};

LoadedModelInfo read_model_info(const std::filesystem::path& path);

template <typename S>
std::unique_ptr<PairModel<S>> load_model(const std::filesystem::path& path, data::Vocab* vocab = nullptr);

}  // namespace sentord::model
