#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "sentord/encoders.hpp"
#include "sentord/nn/checkpoint.hpp"

using namespace sentord;
using namespace sentord::model;

namespace {

constexpr std::size_t kVocab = 30;

ModelConfig small_config(Family family, std::uint64_t seed = 1) {
  ModelConfig c;
  c.family = family;
  c.vocab_size = kVocab;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_width = 24;
  c.max_seq_len = 20;
  c.embed_factor = 8;
  c.global_layers = 2;
  c.global_heads = 2;
  c.global_ffn_width = 24;
  c.seed = seed;
  return c;
}

std::vector<int> random_sentence(Rng& rng) {
  std::vector<int> s(2 + uniform_index(rng, 5));
  for (auto& x : s) x = data::kReservedTokens + static_cast<int>(uniform_index(rng, kVocab - data::kReservedTokens));
  return s;
}

data::ShuffledParagraph random_paragraph(std::size_t n, Rng& rng) {
  data::ShuffledParagraph p;
  p.id = "p";
  for (std::size_t k = 0; k < n; ++k) p.sentences.push_back(random_sentence(rng));
  p.gold = Ordering(oracle::random_permutation(n, rng));
  return p;
}

template <typename S>
void zero(PairModel<S>& m, const std::string& name) {
  m.parameters().value(m.parameters().id_of(name)).setZero();
}

}  // namespace

TEST_CASE("family names round trip") {
  for (auto f : kAllFamilies) CHECK(parse_family(to_string(f)) == f);
  CHECK_THROWS_AS(parse_family("bert"), InputError);
  CHECK(is_global(Family::single_global));
  CHECK_FALSE(is_global(Family::ensemble));
  CHECK(is_ensemble(Family::global_ensemble));
}

TEST_CASE("config validation and JSON") {
  auto c = small_config(Family::global_ensemble);
  c.detach_context = true;
  const auto back = model_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  auto bad = c;
  bad.n_heads = 3;  // 16 not divisible by 3
  CHECK_THROWS(validate(bad));
  bad = c;
  bad.vocab_size = 2;
  CHECK_THROWS(validate(bad));
  bad = c;
  bad.max_seq_len = 4;
  CHECK_THROWS(validate(bad));
}

TEST_CASE("parameter counts match the closed form") {
  for (bool share : {false, true}) {
    for (int factor : {0, 8}) {
      EncoderConfig ec;
      ec.vocab_size = kVocab;
      ec.d_model = 16;
      ec.n_layers = 3;
      ec.n_heads = 2;
      ec.ffn_width = 24;
      ec.max_seq_len = 20;
      ec.share_layers = share;
      ec.embed_factor = factor;
      nn::ParameterSet<double> params;
      PairEncoder<double> enc(ec, params, "e.");
      // Hand-expanded for d = 16, f = 24, V = 30, L = 20.
      const std::size_t block = 4 * (16 * 16 + 16) + 4 * 16 + (16 * 24 + 24) + (24 * 16 + 16);
      const std::size_t embed = factor ? 30 * 8 + 8 * 16 + 16 : 30 * 16;
      const std::size_t want = embed + 20 * 16 + 2 * 16 + 2 * 16 + (share ? 1 : 3) * block;
      CHECK(params.count() == want);
      CHECK(expected_parameter_count(ec) == want);
    }
  }
  // The ALBERT-style encoder is a fraction of the BERT-style one.
  const auto cfgs = encoder_configs(small_config(Family::ensemble));
  REQUIRE(cfgs.size() == 2);
  CHECK(cfgs[0].share_layers);
  CHECK_FALSE(cfgs[1].share_layers);
  CHECK(expected_parameter_count(cfgs[0]) < expected_parameter_count(cfgs[1]));
}

TEST_CASE("encoder output shapes and input checks") {
  PairModel<double> m(small_config(Family::local));
  nn::Tape<double> t(m.parameters(), false);
  const auto enc = data::tokenize_pair({5, 6, 7}, {8, 9}, 20);
  const auto out = encode_pair(t, m.encoders()[0], enc);
  CHECK(t.value(out.hidden).rows() == 8);
  CHECK(t.value(out.hidden).cols() == 16);
  CHECK(t.value(out.cls).rows() == 1);
  CHECK(t.value(m.cls_logits(t, {5, 6}, {7})).cols() == 2);

  auto bad = enc;
  bad.ids[1] = static_cast<int>(kVocab);
  CHECK_THROWS_AS(m.encoders()[0].encode(t, bad), std::invalid_argument);
  auto long_enc = data::tokenize_pair(std::vector<int>(30, 5), {6}, 40);
  CHECK_THROWS_AS(m.encoders()[0].encode(t, long_enc), std::invalid_argument);
}

TEST_CASE("pair probabilities are a distribution for every family") {
  Rng rng(2);
  for (auto f : kAllFamilies) {
    PairModel<double> m(small_config(f));
    const auto p = random_paragraph(4, rng);
    const auto s = score_matrix(m, p);
    nn::Tape<double> t(m.parameters(), false);
    const auto& logits = t.value(m.paragraph_logits(t, p.sentences));
    CHECK(logits.rows() == 12);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        if (i == j) continue;
        CHECK(s(i, j) > 0.0);
        CHECK(s(i, j) < 1.0);
      }
    }
    for (nn::Index r = 0; r < logits.rows(); ++r) {
      const auto pr = probabilities<double>(logits.row(r));
      CHECK(pr[0] + pr[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  CHECK(score_matrix(PairModel<double>(small_config(Family::global)), random_paragraph(1, rng)).size() == 1);
}

TEST_CASE("local pair score is the softmax of the head logits") {
  PairModel<double> m(small_config(Family::local_shared));
  m.parameters().value(m.parameters().id_of("cls_head.0.bias")) << 0.3, -0.2;
  nn::Tape<double> t(m.parameters(), false);
  const auto& l = t.value(m.cls_logits(t, {5, 6}, {7, 8}));
  const auto p = local_pair_score(m, {5, 6}, {7, 8});
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(l(0, 1) - l(0, 0)))).epsilon(1e-14));
  CHECK_THROWS_AS(local_pair_score(PairModel<double>(small_config(Family::global)), {5}, {6}),
                  std::invalid_argument);
}

TEST_CASE("ensemble with a zero second head reduces to its ALBERT-style member") {
  Rng rng(3);
  PairModel<double> ensemble(small_config(Family::ensemble, 7));
  PairModel<double> albert(small_config(Family::local_shared, 7));
  zero(ensemble, "cls_head.1.weight");
  zero(ensemble, "cls_head.1.bias");
  for (int k = 0; k < 10; ++k) {
    const auto a = random_sentence(rng), b = random_sentence(rng);
    nn::Tape<double> t(ensemble.parameters(), false);
    const auto pe = probabilities<double>(t.value(ensemble.cls_logits(t, a, b)));
    CHECK(pe[0] == local_pair_score(albert, a, b)[0]);
  }
}

TEST_CASE("ensemble of two models sums their logits") {
  Rng rng(4);
  PairModel<double> a(small_config(Family::local_shared, 1)), b(small_config(Family::local, 2));
  const auto s1 = random_sentence(rng), s2 = random_sentence(rng);
  nn::Tape<double> ta(a.parameters(), false), tb(b.parameters(), false);
  const nn::Matrix<double> sum = ta.value(a.cls_logits(ta, s1, s2)) + tb.value(b.cls_logits(tb, s1, s2));
  const auto p = ensemble_pair_score(a, b, s1, s2);
  CHECK(p[0] == doctest::Approx(probabilities<double>(sum)[0]).epsilon(1e-15));
  CHECK_THROWS_AS(ensemble_pair_score(a, a, s1, s2), std::invalid_argument);
}

TEST_CASE("global context pools 2(N-1) pair vectors per sentence") {
  Rng rng(5);
  for (std::size_t n : {2u, 3u, 5u}) {
    const auto p = random_paragraph(n, rng);
    for (auto f : {Family::global, Family::global_ensemble, Family::single_global}) {
      PairModel<double> m(small_config(f));
      nn::Tape<double> t(m.parameters(), false);
      const auto ctx = m.build_context(t, p.sentences);
      CHECK(t.value(ctx.x).rows() == static_cast<nn::Index>(n));
      CHECK(t.value(ctx.z).rows() == static_cast<nn::Index>(n));
      const std::size_t encoders = is_ensemble(f) ? 2 : 1;
      if (f == Family::single_global) {
        CHECK(ctx.encoder_passes == n);
        for (auto c : ctx.pooled_per_sentence) CHECK(c == 0);
      } else {
        CHECK(ctx.encoder_passes == encoders * n * (n - 1));
        for (auto c : ctx.pooled_per_sentence) CHECK(c == 2 * (n - 1));
      }
    }
  }
  PairModel<double> local(small_config(Family::local));
  nn::Tape<double> t(local.parameters(), false);
  CHECK_THROWS_AS(local.build_context(t, {{5}, {6}}), std::invalid_argument);
}

TEST_CASE("global logits check their indices") {
  PairModel<double> m(small_config(Family::global));
  nn::Tape<double> t(m.parameters(), false);
  const auto ctx = m.build_context(t, {{5, 6}, {7, 8}, {9}});
  const auto cls = m.cls_logits(t, {5, 6}, {7, 8});
  CHECK_THROWS_AS(m.global_logits(t, ctx, cls, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(m.global_logits(t, ctx, cls, 0, 3), std::out_of_range);
  // The paragraph path assembles the same numbers row by row.
  const auto& rows = t.value(m.paragraph_logits(t, {{5, 6}, {7, 8}, {9}}));
  CHECK(t.value(m.global_logits(t, ctx, cls, 0, 1)) == rows.row(0));
}

TEST_CASE("context transformer is permutation equivariant") {
  Rng rng(6);
  for (auto f : {Family::global, Family::global_ensemble, Family::single_global}) {
    PairModel<double> m(small_config(f, 11));
    for (int trial = 0; trial < 5; ++trial) {
      const auto p = random_paragraph(5, rng);
      const auto perm = oracle::random_permutation(5, rng);
      std::vector<std::vector<int>> permuted;
      for (int k : perm) permuted.push_back(p.sentences[static_cast<std::size_t>(k)]);
      nn::Tape<double> t(m.parameters(), false);
      const auto a = m.build_context(t, p.sentences);
      const auto b = m.build_context(t, permuted);
      for (std::size_t k = 0; k < 5; ++k) {
        const auto r = static_cast<nn::Index>(perm[k]);
        CHECK((t.value(b.x).row(static_cast<nn::Index>(k)) - t.value(a.x).row(r)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((t.value(b.z).row(static_cast<nn::Index>(k)) - t.value(a.z).row(r)).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("zero context heads reduce the global model to the local one bitwise") {
  Rng rng(7);
  for (auto [global, local] : {std::pair{Family::global, Family::local},
                               std::pair{Family::global_ensemble, Family::ensemble},
                               std::pair{Family::single_global, Family::local}}) {
    PairModel<double> g(small_config(global, 21));
    PairModel<double> l(small_config(local, 21));
    for (const char* name : {"context_head.first.weight", "context_head.first.bias", "context_head.second.weight",
                             "context_head.second.bias"}) {
      zero(g, name);
    }
    for (const auto& p : l.parameters()) {
      CHECK(g.parameters().value(g.parameters().id_of(p.name)) == p.value);
    }
    for (int trial = 0; trial < 5; ++trial) {
      const auto p = random_paragraph(2 + uniform_index(rng, 4), rng);
      const auto a = score_matrix(g, p), b = score_matrix(l, p);
      for (std::size_t i = 0; i < p.size(); ++i) {
        for (std::size_t j = 0; j < p.size(); ++j) {
          if (i != j) CHECK(a(i, j) == b(i, j));
        }
      }
    }
  }
}

TEST_CASE("detached context leaves the encoder gradient to the pair path") {
  Rng rng(8);
  const auto p = random_paragraph(3, rng);
  auto grads_for = [&](bool detach, bool zero_cls) {
    auto c = small_config(Family::global, 5);
    c.detach_context = detach;
    PairModel<double> m(c);
    if (zero_cls) {
      zero(m, "cls_head.0.weight");
      zero(m, "cls_head.0.bias");
    }
    nn::Tape<double> t(m.parameters());
    const std::vector<int> targets(6, 0);
    t.backward(nn::cross_entropy(t, m.paragraph_logits(t, p.sentences), std::span<const int>(targets)));
    nn::Gradients<double> g(m.parameters());
    t.add_gradients_to(g);
    return g[m.parameters().id_of("encoder.0.block.0.ffn.inner.weight")].cwiseAbs().maxCoeff();
  };
  // With the CLS head zeroed, the only route into the encoder is the context.
  CHECK(grads_for(false, true) > 0.0);
  CHECK(grads_for(true, true) == 0.0);
  CHECK(grads_for(true, false) > 0.0);
}

TEST_CASE("model save and load round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "sentord_test_encoders";
  std::filesystem::create_directories(dir);
  std::vector<Paragraph> corpus = {{"a", {"x y", "z"}}};
  auto vocab = data::Vocab::build(corpus);
  auto cfg = small_config(Family::global_ensemble, 3);
  cfg.vocab_size = vocab.size();
  PairModel<double> m(cfg);
  m.parameters().value(0)(0, 0) = 0.1;
  save_model(dir / "m.ckpt", m, vocab);

  data::Vocab loaded_vocab;
  const auto back = load_model<double>(dir / "m.ckpt", &loaded_vocab);
  CHECK(loaded_vocab == vocab);
  CHECK(to_json(back->config()) == to_json(cfg));
  for (const auto& p : m.parameters()) CHECK(back->parameters().value(back->parameters().id_of(p.name)) == p.value);
  CHECK(read_model_info(dir / "m.ckpt").config.family == Family::global_ensemble);

  // A 32-bit model loads with f32 precision.
  PairModel<float> mf(cfg);
  save_model(dir / "f.ckpt", mf, vocab);
  const auto backf = load_model<float>(dir / "f.ckpt");
  CHECK(backf->parameters().value(0) == mf.parameters().value(0));

  nn::Checkpoint other;
  other.header["kind"] = "something-else";
  nn::write_checkpoint(dir / "o.ckpt", other);
  CHECK_THROWS_AS(read_model_info(dir / "o.ckpt"), InputError);
}

TEST_CASE("corpus scoring does not depend on thread count") {
  Rng rng(9);
  PairModel<double> m(small_config(Family::global));
  std::vector<data::ShuffledParagraph> ps;
  for (int k = 0; k < 6; ++k) ps.push_back(random_paragraph(2 + uniform_index(rng, 3), rng));
  const auto a = score_corpus(m, ps, 1), b = score_corpus(m, ps, 3);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    for (std::size_t i = 0; i < ps[k].size(); ++i) {
      for (std::size_t j = 0; j < ps[k].size(); ++j) {
        if (i != j) CHECK(a[k](i, j) == b[k](i, j));
      }
    }
  }
}
