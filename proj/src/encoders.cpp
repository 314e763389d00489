#include "sentord/encoders.hpp"

#include <cmath>
#include <stdexcept>

#include "sentord/nn/checkpoint.hpp"
#include "sentord/parallel.hpp"
#include "sentord/random.hpp"

namespace sentord::model {

using nn::Var;

void validate(const EncoderConfig& cfg) {
  if (cfg.vocab_size <= static_cast<std::size_t>(data::kReservedTokens)) {
    throw std::invalid_argument("encoder: vocab_size must exceed the reserved tokens");
  }
  if (cfg.d_model < 1 || cfg.n_layers < 1 || cfg.n_heads < 1 || cfg.ffn_width < 1) {
    throw std::invalid_argument("encoder: widths, layers and heads must be positive");
  }
  if (cfg.d_model % cfg.n_heads != 0) throw std::invalid_argument("encoder: d_model not divisible by n_heads");
  if (cfg.max_seq_len < static_cast<int>(data::kMinPairLength)) {
    throw std::invalid_argument("encoder: max_seq_len below the shortest pair encoding");
  }
  if (cfg.embed_factor < 0 || cfg.embed_factor >= cfg.d_model) {
    if (cfg.embed_factor != 0) throw std::invalid_argument("encoder: embed_factor must be below d_model");
  }
}

namespace {

std::size_t block_parameter_count(std::size_t d, std::size_t f) {
  return 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d);
}

}  // namespace

std::size_t expected_parameter_count(const EncoderConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t e = cfg.embed_factor > 0 ? static_cast<std::size_t>(cfg.embed_factor) : d;
  std::size_t n = cfg.vocab_size * e;
  if (cfg.embed_factor > 0) n += e * d + d;
  n += static_cast<std::size_t>(cfg.max_seq_len) * d + 2 * d + 2 * d;
  const std::size_t blocks = cfg.share_layers ? 1 : static_cast<std::size_t>(cfg.n_layers);
  return n + blocks * block_parameter_count(d, static_cast<std::size_t>(cfg.ffn_width));
}

std::string to_string(Family f) {
  switch (f) {
    case Family::local: return "local";
    case Family::local_shared: return "local-shared";
    case Family::ensemble: return "ensemble";
    case Family::global: return "global";
    case Family::global_ensemble: return "global-ensemble";
    case Family::single_global: return "single-global";
  }
  return "?";
}

Family parse_family(const std::string& s) {
  for (Family f : kAllFamilies) {
    if (to_string(f) == s) return f;
  }
  throw InputError("unknown model family '" + s +
                   "' (expected local, local-shared, ensemble, global, global-ensemble or single-global)");
}

bool is_global(Family f) {
  return f == Family::global || f == Family::global_ensemble || f == Family::single_global;
}

bool is_ensemble(Family f) { return f == Family::ensemble || f == Family::global_ensemble; }

void validate(const ModelConfig& cfg) {
  for (const auto& e : encoder_configs(cfg)) validate(e);
  if (is_global(cfg.family)) {
    if (cfg.global_layers < 1 || cfg.global_heads < 1 || cfg.global_ffn_width < 1) {
      throw std::invalid_argument("global transformer: layers, heads and width must be positive");
    }
    if (cfg.d_model % cfg.global_heads != 0) {
      throw std::invalid_argument("global transformer: d_model not divisible by global_heads");
    }
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"family", to_string(cfg.family)},
          {"vocab_size", cfg.vocab_size},
          {"d_model", cfg.d_model},
          {"n_layers", cfg.n_layers},
          {"n_heads", cfg.n_heads},
          {"ffn_width", cfg.ffn_width},
          {"max_seq_len", cfg.max_seq_len},
          {"embed_factor", cfg.embed_factor},
          {"global_layers", cfg.global_layers},
          {"global_heads", cfg.global_heads},
          {"global_ffn_width", cfg.global_ffn_width},
          {"detach_context", cfg.detach_context},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.family = parse_family(j.at("family").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.ffn_width = j.at("ffn_width").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.embed_factor = j.at("embed_factor").get<int>();
    c.global_layers = j.at("global_layers").get<int>();
    c.global_heads = j.at("global_heads").get<int>();
    c.global_ffn_width = j.at("global_ffn_width").get<int>();
    c.detach_context = j.at("detach_context").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad model config: ") + e.what());
  }
}

std::vector<EncoderConfig> encoder_configs(const ModelConfig& cfg) {
  EncoderConfig bert;
  bert.vocab_size = cfg.vocab_size;
  bert.d_model = cfg.d_model;
  bert.n_layers = cfg.n_layers;
  bert.n_heads = cfg.n_heads;
  bert.ffn_width = cfg.ffn_width;
  bert.max_seq_len = cfg.max_seq_len;
  EncoderConfig albert = bert;
  albert.share_layers = true;
  albert.embed_factor = cfg.embed_factor;

  std::vector<EncoderConfig> out;
  switch (cfg.family) {
    case Family::local:
    case Family::global:
    case Family::single_global: out = {bert}; break;
    case Family::local_shared: out = {albert}; break;
    case Family::ensemble:
    case Family::global_ensemble: out = {albert, bert}; break;
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].seed = derive_seed(cfg.seed, "encoder:" + std::to_string(k));
  return out;
}

// ---------------------------------------------------------------------------

template <typename S>
PairEncoder<S>::PairEncoder(const EncoderConfig& cfg, nn::ParameterSet<S>& params, const std::string& prefix)
    : cfg_(cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const auto d = static_cast<nn::Index>(cfg.d_model);
  const auto v = static_cast<nn::Index>(cfg.vocab_size);
  if (cfg.embed_factor > 0) {
    token_embedding_ = params.add(prefix + "token_embedding", v, cfg.embed_factor, nn::Init::xavier_uniform, rng);
    embed_projection_ = nn::add_linear(params, prefix + "embed_projection", cfg.embed_factor, d, rng);
  } else {
    token_embedding_ = params.add(prefix + "token_embedding", v, d, nn::Init::xavier_uniform, rng);
  }
  position_embedding_ = params.add(prefix + "position_embedding", cfg.max_seq_len, d, nn::Init::xavier_uniform, rng);
  segment_embedding_ = params.add(prefix + "segment_embedding", 2, d, nn::Init::xavier_uniform, rng);
  embed_norm_ = nn::add_layer_norm(params, prefix + "embed_norm", d, rng);
  const int blocks = cfg.share_layers ? 1 : cfg.n_layers;
  for (int l = 0; l < blocks; ++l) {
    blocks_.push_back(
        nn::add_transformer_block(params, prefix + "block." + std::to_string(l), d, cfg.n_heads, cfg.ffn_width, rng));
  }
}

template <typename S>
Var PairEncoder<S>::encode(nn::Tape<S>& t, const data::PairEncoding& enc) const {
  const std::size_t len = enc.size();
  if (len == 0) throw std::invalid_argument("encode: empty encoding");
  if (len > static_cast<std::size_t>(cfg_.max_seq_len)) {
    throw std::invalid_argument("encode: sequence of " + std::to_string(len) + " tokens exceeds max_seq_len " +
                                std::to_string(cfg_.max_seq_len));
  }
  if (enc.segments.size() != len) throw std::invalid_argument("encode: segment ids do not match tokens");
  for (int id : enc.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
      throw std::invalid_argument("encode: token id " + std::to_string(id) + " outside the vocabulary");
    }
  }
  for (int s : enc.segments) {
    if (s != 0 && s != 1) throw std::invalid_argument("encode: segment id must be 0 or 1");
  }
  std::vector<int> positions(len);
  for (std::size_t k = 0; k < len; ++k) positions[k] = static_cast<int>(k);

  Var h = nn::gather_rows(t, t.param(token_embedding_), std::span<const int>(enc.ids));
  if (embed_projection_) h = nn::linear(t, h, *embed_projection_);
  h = nn::add(t, h, nn::gather_rows(t, t.param(position_embedding_), std::span<const int>(positions)));
  h = nn::add(t, h, nn::gather_rows(t, t.param(segment_embedding_), std::span<const int>(enc.segments)));
  h = nn::layer_norm(t, h, embed_norm_);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    h = nn::transformer_block(t, h, blocks_[cfg_.share_layers ? 0 : static_cast<std::size_t>(l)]);
  }
  return h;
}

template <typename S>
EncodedPair encode_pair(nn::Tape<S>& t, const PairEncoder<S>& encoder, const data::PairEncoding& enc) {
  Var h = encoder.encode(t, enc);
  return {nn::slice_rows(t, h, 0, 1), h};
}

// ---------------------------------------------------------------------------

template <typename S>
PairModel<S>::PairModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  const auto configs = encoder_configs(cfg_);
  for (std::size_t k = 0; k < configs.size(); ++k) {
    encoders_.emplace_back(configs[k], params_, "encoder." + std::to_string(k) + ".");
  }
  const auto d = static_cast<nn::Index>(cfg_.d_model);
  Rng head_rng(derive_seed(cfg_.seed, "heads"));
  for (std::size_t k = 0; k < configs.size(); ++k) {
    cls_heads_.push_back(
        nn::add_linear(params_, "cls_head." + std::to_string(k), d, 2, head_rng, nn::Init::small_uniform));
  }
  if (is_global(cfg_.family)) {
    Rng rng(derive_seed(cfg_.seed, "global"));
    Global g;
    if (cfg_.family != Family::single_global) {
      for (std::size_t k = 0; k < configs.size(); ++k) {
        g.token_pools.push_back(nn::add_attn_pool(params_, "token_pool." + std::to_string(k), d, rng));
      }
      g.pair_pool = nn::add_attn_pool(params_, "pair_pool", d, rng);
    }
    for (int l = 0; l < cfg_.global_layers; ++l) {
      g.blocks.push_back(nn::add_transformer_block(params_, "global.block." + std::to_string(l), d, cfg_.global_heads,
                                                   cfg_.global_ffn_width, rng));
    }
    g.first_head = nn::add_linear(params_, "context_head.first", d, 2, rng, nn::Init::small_uniform);
    g.second_head = nn::add_linear(params_, "context_head.second", d, 2, rng, nn::Init::small_uniform);
    global_ = std::move(g);
  }
}

template <typename S>
Var PairModel<S>::cls_logits(nn::Tape<S>& t, const std::vector<int>& first, const std::vector<int>& second) const {
  const auto enc = data::tokenize_pair(first, second, static_cast<std::size_t>(cfg_.max_seq_len));
  Var logits;
  for (std::size_t k = 0; k < encoders_.size(); ++k) {
    Var l = nn::linear(t, encode_pair(t, encoders_[k], enc).cls, cls_heads_[k]);
    logits = k == 0 ? l : nn::add(t, logits, l);
  }
  return logits;
}

template <typename S>
Var PairModel<S>::context_transformer(nn::Tape<S>& t, Var x) const {
  for (const auto& b : global_->blocks) x = nn::transformer_block(t, x, b);
  return x;
}

template <typename S>
GlobalContext PairModel<S>::build_context(nn::Tape<S>& t, const std::vector<std::vector<int>>& sentences) const {
  return build_context(t, sentences, nullptr);
}

template <typename S>
GlobalContext PairModel<S>::build_context(nn::Tape<S>& t, const std::vector<std::vector<int>>& sentences,
                                          std::vector<Var>* pair_cls_logits) const {
  if (!global_) throw std::invalid_argument("build_context: " + to_string(cfg_.family) + " has no global context");
  const std::size_t n = sentences.size();
  if (n < 2) throw std::invalid_argument("build_context: a paragraph needs at least two sentences");
  const auto max_len = static_cast<std::size_t>(cfg_.max_seq_len);
  GlobalContext ctx;
  ctx.pooled_per_sentence.assign(n, 0);
  std::vector<Var> xs(n);

  if (cfg_.family == Family::single_global) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto enc = data::tokenize_single(sentences[i], max_len);
      for (std::size_t k = 0; k < encoders_.size(); ++k) {
        Var cls = encode_pair(t, encoders_[k], enc).cls;
        xs[i] = k == 0 ? cls : nn::add(t, xs[i], cls);
        ++ctx.encoder_passes;
      }
    }
    if (pair_cls_logits) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i != j) pair_cls_logits->push_back(cls_logits(t, sentences[i], sentences[j]));
        }
      }
    }
  } else {
    std::vector<std::vector<Var>> pooled(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto enc = data::tokenize_pair(sentences[i], sentences[j], max_len);
        Var logits, e_i, e_j;
        for (std::size_t k = 0; k < encoders_.size(); ++k) {
          const auto out = encode_pair(t, encoders_[k], enc);
          ++ctx.encoder_passes;
          Var l = nn::linear(t, out.cls, cls_heads_[k]);
          logits = k == 0 ? l : nn::add(t, logits, l);
          const Var h = cfg_.detach_context ? nn::detach(t, out.hidden) : out.hidden;
          const auto& pool = global_->token_pools[k];
          Var a = nn::attn_pool(t, nn::slice_rows(t, h, enc.first.begin, enc.first.length), pool);
          Var b = nn::attn_pool(t, nn::slice_rows(t, h, enc.second.begin, enc.second.length), pool);
          e_i = k == 0 ? a : nn::add(t, e_i, a);
          e_j = k == 0 ? b : nn::add(t, e_j, b);
        }
        if (pair_cls_logits) pair_cls_logits->push_back(logits);
        pooled[i].push_back(e_i);
        pooled[j].push_back(e_j);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      ctx.pooled_per_sentence[i] = pooled[i].size();
      xs[i] = nn::attn_pool(t, nn::concat_rows(t, std::span<const Var>(pooled[i])), global_->pair_pool);
    }
  }
  ctx.x = nn::concat_rows(t, std::span<const Var>(xs));
  ctx.z = context_transformer(t, ctx.x);
  return ctx;
}

template <typename S>
Var PairModel<S>::global_logits(nn::Tape<S>& t, const GlobalContext& ctx, Var cls, std::size_t i,
                                std::size_t j) const {
  if (!global_) throw std::invalid_argument("global_logits: model has no global heads");
  const auto n = static_cast<std::size_t>(t.value(ctx.z).rows());
  if (i >= n || j >= n) throw std::out_of_range("global_logits: sentence index out of range");
  if (i == j) throw std::invalid_argument("global_logits: i == j");
  Var zi = nn::linear(t, nn::slice_rows(t, ctx.z, static_cast<nn::Index>(i), 1), global_->first_head);
  Var zj = nn::linear(t, nn::slice_rows(t, ctx.z, static_cast<nn::Index>(j), 1), global_->second_head);
  return nn::add(t, nn::add(t, cls, zi), zj);
}

template <typename S>
Var PairModel<S>::paragraph_logits(nn::Tape<S>& t, const std::vector<std::vector<int>>& sentences) const {
  const std::size_t n = sentences.size();
  if (n < 2) throw std::invalid_argument("paragraph_logits: a paragraph needs at least two sentences");
  std::vector<Var> rows;
  rows.reserve(n * (n - 1));
  if (!global_) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) rows.push_back(cls_logits(t, sentences[i], sentences[j]));
      }
    }
    return nn::concat_rows(t, std::span<const Var>(rows));
  }
  std::vector<Var> cls;
  const auto ctx = build_context(t, sentences, &cls);
  // Per-sentence head outputs, computed one row at a time so each pair's sum
  // matches global_logits exactly.
  std::vector<Var> first(n), second(n);
  for (std::size_t i = 0; i < n; ++i) {
    Var zi = nn::slice_rows(t, ctx.z, static_cast<nn::Index>(i), 1);
    first[i] = nn::linear(t, zi, global_->first_head);
    second[i] = nn::linear(t, zi, global_->second_head);
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      rows.push_back(nn::add(t, nn::add(t, cls[k++], first[i]), second[j]));
    }
  }
  return nn::concat_rows(t, std::span<const Var>(rows));
}

// ---------------------------------------------------------------------------

template <typename S>
std::array<double, 2> probabilities(const nn::Matrix<S>& logits_row) {
  if (logits_row.rows() != 1 || logits_row.cols() != 2) throw std::invalid_argument("probabilities: expected 1 x 2");
  const double a = static_cast<double>(logits_row(0, 0));
  const double b = static_cast<double>(logits_row(0, 1));
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

template <typename S>
std::array<double, 2> local_pair_score(const PairModel<S>& model, const std::vector<int>& first,
                                       const std::vector<int>& second) {
  if (is_global(model.family())) {
    throw std::invalid_argument("local_pair_score: " + to_string(model.family()) + " needs paragraph context");
  }
  nn::Tape<S> t(model.parameters(), false);
  return probabilities<S>(t.value(model.cls_logits(t, first, second)));
}

template <typename S>
std::array<double, 2> ensemble_pair_score(const PairModel<S>& model_a, const PairModel<S>& model_b,
                                          const std::vector<int>& first, const std::vector<int>& second) {
  if (&model_a.parameters() == &model_b.parameters()) {
    throw std::invalid_argument("ensemble_pair_score: the two models must have distinct parameters");
  }
  if (is_global(model_a.family()) || is_global(model_b.family())) {
    throw std::invalid_argument("ensemble_pair_score: expects local models");
  }
  nn::Tape<S> ta(model_a.parameters(), false);
  nn::Tape<S> tb(model_b.parameters(), false);
  const nn::Matrix<S> sum = ta.value(model_a.cls_logits(ta, first, second)) + tb.value(model_b.cls_logits(tb, first, second));
  return probabilities<S>(sum);
}

template <typename S>
PairScoreMatrix score_matrix(const PairModel<S>& model, const data::ShuffledParagraph& paragraph) {
  const std::size_t n = paragraph.size();
  PairScoreMatrix m(paragraph.id, n);
  if (n < 2) return m;
  nn::Tape<S> t(model.parameters(), false);
  const auto& logits = t.value(model.paragraph_logits(t, paragraph.sentences));
  nn::Index row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      m.set(i, j, probabilities<S>(logits.row(row++))[0]);
    }
  }
  return m;
}

template <typename S>
std::vector<PairScoreMatrix> score_corpus(const PairModel<S>& model,
                                          const std::vector<data::ShuffledParagraph>& paragraphs, std::size_t jobs) {
  std::vector<PairScoreMatrix> out(paragraphs.size());
  parallel_for(jobs, paragraphs.size(), [&](std::size_t k) { out[k] = score_matrix(model, paragraphs[k]); });
  return out;
}

// ---------------------------------------------------------------------------

template <typename S>
void save_model(const std::filesystem::path& path, const PairModel<S>& model, const data::Vocab& vocab) {
  nn::Checkpoint ckpt;
  ckpt.dtype = std::is_same_v<S, double> ? nn::DType::f64 : nn::DType::f32;
  ckpt.header["kind"] = "sentord-model";
  ckpt.header["config"] = to_json(model.config());
  ckpt.header["vocab"] = vocab.to_json();
  nn::append_tensors(ckpt, model.parameters());
  nn::write_checkpoint(path, ckpt);
}

namespace {

LoadedModelInfo info_from(const nn::Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.header.value("kind", std::string()) != "sentord-model") {
    throw InputError("'" + path.string() + "' is not a model checkpoint");
  }
  if (!ckpt.header.contains("config") || !ckpt.header.contains("vocab")) {
    throw InputError("model checkpoint '" + path.string() + "' lacks config or vocab");
  }
  LoadedModelInfo info{model_config_from_json(ckpt.header["config"]), data::Vocab::from_json(ckpt.header["vocab"])};
  if (info.vocab.size() != info.config.vocab_size) {
    throw InputError("model checkpoint '" + path.string() + "': vocab size disagrees with config");
  }
  return info;
}

}  // namespace

LoadedModelInfo read_model_info(const std::filesystem::path& path) {
  return info_from(nn::read_checkpoint(path), path);
}

template <typename S>
std::unique_ptr<PairModel<S>> load_model(const std::filesystem::path& path, data::Vocab* vocab) {
  const auto ckpt = nn::read_checkpoint(path);
  auto info = info_from(ckpt, path);
  std::unique_ptr<PairModel<S>> model;
  try {
    model = std::make_unique<PairModel<S>>(info.config);
  } catch (const std::invalid_argument& e) {
    throw InputError("model checkpoint '" + path.string() + "': " + e.what());
  }
  if (ckpt.tensors.size() != model->parameters().size()) {
    throw InputError("model checkpoint '" + path.string() + "' has " + std::to_string(ckpt.tensors.size()) +
                     " tensors, the configured model expects " + std::to_string(model->parameters().size()));
  }
  nn::load_tensors(ckpt, model->parameters());
  if (vocab) *vocab = std::move(info.vocab);
  return model;
}

#define SENTORD_INSTANTIATE_ENCODERS(S)                                                                         \
  template class PairEncoder<S>;                                                                                \
  template class PairModel<S>;                                                                                  \
  template EncodedPair encode_pair<S>(nn::Tape<S>&, const PairEncoder<S>&, const data::PairEncoding&);          \
  template std::array<double, 2> probabilities<S>(const nn::Matrix<S>&);                                        \
  template std::array<double, 2> local_pair_score<S>(const PairModel<S>&, const std::vector<int>&,              \
                                                     const std::vector<int>&);                                  \
  template std::array<double, 2> ensemble_pair_score<S>(const PairModel<S>&, const PairModel<S>&,               \
                                                        const std::vector<int>&, const std::vector<int>&);      \
  template PairScoreMatrix score_matrix<S>(const PairModel<S>&, const data::ShuffledParagraph&);                \
  template std::vector<PairScoreMatrix> score_corpus<S>(const PairModel<S>&,                                    \
                                                        const std::vector<data::ShuffledParagraph>&,            \
                                                        std::size_t);                                           \
  template void save_model<S>(const std::filesystem::path&, const PairModel<S>&, const data::Vocab&);           \
  template std::unique_ptr<PairModel<S>> load_model<S>(const std::filesystem::path&, data::Vocab*);

SENTORD_INSTANTIATE_ENCODERS(float)
SENTORD_INSTANTIATE_ENCODERS(double)

}  // namespace sentord::model
