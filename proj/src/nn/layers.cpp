#include "sentord/nn/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sentord::nn {

template <typename S>
LinearParams add_linear(ParameterSet<S>& set, const std::string& name, Index in, Index out, Rng& rng,
                        Init weight_init) {
  LinearParams p;
  p.weight = set.add(name + ".weight", in, out, weight_init, rng);
  p.bias = set.add(name + ".bias", 1, out, Init::zeros, rng);
  return p;
}

template <typename S>
LayerNormParams add_layer_norm(ParameterSet<S>& set, const std::string& name, Index width, Rng& rng) {
  return {set.add(name + ".gain", 1, width, Init::ones, rng), set.add(name + ".bias", 1, width, Init::zeros, rng)};
}

template <typename S>
TransformerBlockParams add_transformer_block(ParameterSet<S>& set, const std::string& name, Index width,
                                             int heads, Index ffn_width, Rng& rng) {
  if (heads < 1 || width % heads != 0) {
    throw std::invalid_argument("transformer block: width " + std::to_string(width) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  TransformerBlockParams p;
  p.attention.query = add_linear(set, name + ".attn.query", width, width, rng);
  p.attention.key = add_linear(set, name + ".attn.key", width, width, rng);
  p.attention.value = add_linear(set, name + ".attn.value", width, width, rng);
  p.attention.output = add_linear(set, name + ".attn.output", width, width, rng);
  p.attention.heads = heads;
  p.norm1 = add_layer_norm(set, name + ".norm1", width, rng);
  p.ffn.inner = add_linear(set, name + ".ffn.inner", width, ffn_width, rng);
  p.ffn.outer = add_linear(set, name + ".ffn.outer", ffn_width, width, rng);
  p.norm2 = add_layer_norm(set, name + ".norm2", width, rng);
  return p;
}

template <typename S>
AttnPoolParams add_attn_pool(ParameterSet<S>& set, const std::string& name, Index width, Rng& rng) {
  AttnPoolParams p;
  p.score_map = add_linear(set, name + ".score_map", width, width, rng);
  p.context = set.add(name + ".context", width, 1, Init::xavier_uniform, rng);
  return p;
}

template <typename S>
Var linear(Tape<S>& t, Var x, const LinearParams& p) {
  return add_row(t, matmul(t, x, t.param(p.weight)), t.param(p.bias));
}

template <typename S>
Var layer_norm(Tape<S>& t, Var x, const LayerNormParams& p) {
  return layer_norm_rows(t, x, t.param(p.gain), t.param(p.bias), static_cast<S>(kLayerNormEps));
}

template <typename S>
Var attention(Tape<S>& t, Var q, Var k, Var v, const Matrix<S>* mask) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  if (Q.cols() != K.cols() || K.rows() != V.rows()) {
    throw std::invalid_argument("attention: incompatible Q/K/V shapes");
  }
  Var scores = scale(t, matmul_nt(t, q, k), static_cast<S>(1.0 / std::sqrt(static_cast<double>(Q.cols()))));
  if (mask) {
    if (mask->rows() != Q.rows() || mask->cols() != K.rows()) {
      throw std::invalid_argument("attention: mask shape does not match scores");
    }
    scores = add(t, scores, t.constant(*mask));
  }
  return matmul(t, softmax_rows(t, scores), v);
}

template <typename S>
Var multi_head_attention(Tape<S>& t, Var x, const AttentionParams& p, const Matrix<S>* mask) {
  const Index width = t.value(x).cols();
  const Index dk = width / p.heads;
  Var q = linear(t, x, p.query);
  Var k = linear(t, x, p.key);
  Var v = linear(t, x, p.value);
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    heads.push_back(attention(t, slice_cols(t, q, h * dk, dk), slice_cols(t, k, h * dk, dk),
                              slice_cols(t, v, h * dk, dk), mask));
  }
  Var concat = p.heads == 1 ? heads[0] : concat_cols(t, std::span<const Var>(heads));
  return linear(t, concat, p.output);
}

template <typename S>
Var feed_forward(Tape<S>& t, Var x, const FeedForwardParams& p) {
  return linear(t, gelu(t, linear(t, x, p.inner)), p.outer);
}

template <typename S>
Var transformer_block(Tape<S>& t, Var x, const TransformerBlockParams& p, const Matrix<S>* mask) {
  if (t.value(x).cols() != t.parameters().value(p.attention.query.weight).rows()) {
    throw std::invalid_argument("transformer_block: input width does not match block width");
  }
  Var y = layer_norm(t, add(t, x, multi_head_attention(t, x, p.attention, mask)), p.norm1);
  return layer_norm(t, add(t, y, feed_forward(t, y, p.ffn)), p.norm2);
}

template <typename S>
Matrix<S> key_padding_mask(Index queries, std::span<const char> valid) {
  Matrix<S> m(queries, static_cast<Index>(valid.size()));
  for (Index c = 0; c < m.cols(); ++c) {
    m.col(c).setConstant(valid[static_cast<std::size_t>(c)] ? S(0) : static_cast<S>(kMaskedScore));
  }
  return m;
}

template <typename S>
Var attn_pool(Tape<S>& t, Var h, const AttnPoolParams& p, std::span<const char> valid) {
  const Index rows = t.value(h).rows();
  if (rows == 0) throw std::invalid_argument("attn_pool: no rows to pool");
  Var u = tanh(t, linear(t, h, p.score_map));
  Var scores = transpose(t, matmul(t, u, t.param(p.context)));  // 1 x rows
  if (!valid.empty()) {
    if (static_cast<Index>(valid.size()) != rows) throw std::invalid_argument("attn_pool: mask length");
    bool any = false;
    for (char c : valid) any = any || c;
    if (!any) throw std::invalid_argument("attn_pool: every row is masked");
    scores = add(t, scores, t.constant(key_padding_mask<S>(1, valid)));
  }
  return matmul(t, softmax_rows(t, scores), h);
}

#define SENTORD_INSTANTIATE_LAYERS(S)                                                                  \
  template LinearParams add_linear<S>(ParameterSet<S>&, const std::string&, Index, Index, Rng&, Init); \
  template LayerNormParams add_layer_norm<S>(ParameterSet<S>&, const std::string&, Index, Rng&);       \
  template TransformerBlockParams add_transformer_block<S>(ParameterSet<S>&, const std::string&, Index, \
                                                           int, Index, Rng&);                          \
  template AttnPoolParams add_attn_pool<S>(ParameterSet<S>&, const std::string&, Index, Rng&);         \
  template Var linear<S>(Tape<S>&, Var, const LinearParams&);                                          \
  template Var layer_norm<S>(Tape<S>&, Var, const LayerNormParams&);                                   \
  template Var attention<S>(Tape<S>&, Var, Var, Var, const Matrix<S>*);                                \
  template Var multi_head_attention<S>(Tape<S>&, Var, const AttentionParams&, const Matrix<S>*);       \
  template Var feed_forward<S>(Tape<S>&, Var, const FeedForwardParams&);                               \
  template Var transformer_block<S>(Tape<S>&, Var, const TransformerBlockParams&, const Matrix<S>*);   \
  template Var attn_pool<S>(Tape<S>&, Var, const AttnPoolParams&, std::span<const char>);              \
  template Matrix<S> key_padding_mask<S>(Index, std::span<const char>);

SENTORD_INSTANTIATE_LAYERS(float)
SENTORD_INSTANTIATE_LAYERS(double)

#undef SENTORD_INSTANTIATE_LAYERS

}  // namespace sentord::nn
