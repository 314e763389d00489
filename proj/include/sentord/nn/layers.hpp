#pragma once

#include <span>
#include <string>

#include "sentord/nn/parameters.hpp"
#include "sentord/nn/tape.hpp"

namespace sentord::nn {

inline constexpr double kLayerNormEps = 1e-5;
/// Additive mask value for excluded attention positions.
inline constexpr double kMaskedScore = -1e30;

struct LinearParams {
  ParamId weight = 0;  ///< in x out
  ParamId bias = 0;    ///< 1 x out
};

struct LayerNormParams {
  ParamId gain = 0;
  ParamId bias = 0;
};

/// Per-head projections W_i^Q, W_i^K, W_i^V are the column blocks
/// [i*d_k, (i+1)*d_k) of the query/key/value maps; `output` is W^O.
struct AttentionParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams output;
  int heads = 1;
};

struct FeedForwardParams {
  LinearParams inner;
  LinearParams outer;
};

struct TransformerBlockParams {
  AttentionParams attention;
  LayerNormParams norm1;
  FeedForwardParams ffn;
  LayerNormParams norm2;
};

/// u_k = tanh(W_w h_k + b_w), alpha = softmax_k(v_w . u_k), e = sum_k alpha_k h_k.
struct AttnPoolParams {
  LinearParams score_map;  ///< W_w, d x d
  ParamId context = 0;     ///< v_w, d x 1
};

// Registration. Matrices are Xavier-uniform unless stated, biases zero,
// layer-norm gain one.

template <typename S>
LinearParams add_linear(ParameterSet<S>& set, const std::string& name, Index in, Index out, Rng& rng,
                        Init weight_init = Init::xavier_uniform);
template <typename S>
LayerNormParams add_layer_norm(ParameterSet<S>& set, const std::string& name, Index width, Rng& rng);
template <typename S>
TransformerBlockParams add_transformer_block(ParameterSet<S>& set, const std::string& name, Index width,
                                             int heads, Index ffn_width, Rng& rng);
template <typename S>
AttnPoolParams add_attn_pool(ParameterSet<S>& set, const std::string& name, Index width, Rng& rng);

// Forward ops recorded on a tape.

template <typename S>
Var linear(Tape<S>& t, Var x, const LinearParams& p);
template <typename S>
Var layer_norm(Tape<S>& t, Var x, const LayerNormParams& p);

/// softmax(Q K^T / sqrt(d_k) + mask) V. `mask`, when given, is additive with
/// shape rows(Q) x rows(K).
template <typename S>
Var attention(Tape<S>& t, Var q, Var k, Var v, const Matrix<S>* mask = nullptr);

/// Concat(H_1..H_h) W^O with H_i = attention(X W_i^Q, X W_i^K, X W_i^V).
template <typename S>
Var multi_head_attention(Tape<S>& t, Var x, const AttentionParams& p, const Matrix<S>* mask = nullptr);

template <typename S>
Var feed_forward(Tape<S>& t, Var x, const FeedForwardParams& p);

/// Post-norm block: Y = LN(X + MHA(X)); out = LN(Y + FFN(Y)).
template <typename S>
Var transformer_block(Tape<S>& t, Var x, const TransformerBlockParams& p, const Matrix<S>* mask = nullptr);

/// Attention pooling over the rows of h (tokens x d) into a 1 x d vector.
/// `valid`, when non-empty, marks which rows take part; all-false throws.
template <typename S>
Var attn_pool(Tape<S>& t, Var h, const AttnPoolParams& p, std::span<const char> valid = {});

/// Additive key mask that hides the keys whose `valid` entry is 0.
template <typename S>
Matrix<S> key_padding_mask(Index queries, std::span<const char> valid);

}  // namespace sentord::nn
