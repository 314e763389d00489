#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "sentord/train.hpp"

using namespace sentord;
using namespace sentord::train;
using model::Family;
using model::ModelConfig;
using model::PairModel;

namespace fs = std::filesystem;

namespace {

struct Corpus {
  data::Vocab vocab;
  std::vector<data::ShuffledParagraph> train;
  std::vector<data::ShuffledParagraph> heldout;
};

Corpus make_corpus(data::SynthKind kind, std::size_t count, std::uint64_t seed = 1, int sentences = 4) {
  data::SynthConfig sc;
  sc.kind = kind;
  sc.min_sentences = sc.max_sentences = sentences;
  sc.min_tokens = 3;
  sc.max_tokens = 5;
  sc.bands = 6;
  sc.words_per_band = 6;
  sc.seed = seed;
  const auto corpus = data::gen_synthetic(sc, count);
  Corpus c;
  c.vocab = data::Vocab::build(corpus);
  auto split = data::split_heldout(data::prepare(corpus, data::make_shuffles(corpus, seed), c.vocab), 0.2);
  c.train = std::move(split.train);
  c.heldout = std::move(split.heldout);
  return c;
}

ModelConfig tiny(Family f, std::size_t vocab, std::uint64_t seed = 1) {
  ModelConfig c;
  c.family = f;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ffn_width = 16;
  c.max_seq_len = 16;
  c.embed_factor = 8;
  c.global_layers = 1;
  c.global_heads = 2;
  c.global_ffn_width = 16;
  c.seed = seed;
  return c;
}

TrainConfig quick(std::uint64_t seed = 3) {
  TrainConfig t;
  t.lr = 1e-3;
  t.epochs = 2;
  t.batch_size = 16;
  t.seed = seed;
  return t;
}

template <typename S>
bool same_parameters(const PairModel<S>& a, const PairModel<S>& b) {
  for (std::size_t id = 0; id < a.parameters().size(); ++id) {
    if (a.parameters().value(id) != b.parameters().value(id)) return false;
  }
  return true;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("sentord_test_train_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.lr = 0.01;
  c.decay_per_epoch = 0.5;
  CHECK(lr_at_epoch(c, 0) == 0.01);
  CHECK(lr_at_epoch(c, 3) == doctest::Approx(0.00125).epsilon(1e-15));
  c.decay_per_epoch = 0.0;
  CHECK_THROWS(validate(c));
  c = {};
  c.lr = -1;
  CHECK_THROWS(validate(c));
}

TEST_CASE("log records round trip") {
  LogRecord r{12, 1, 2.5e-4, 0.6931, std::nullopt};
  CHECK(to_json(r).at("pair_acc").is_null());
  r.pair_acc = 0.75;
  const auto back = log_record_from_json(to_json(r));
  CHECK(back.step == 12);
  CHECK(back.lr == r.lr);
  CHECK(*back.pair_acc == 0.75);
}

TEST_CASE("clipping bounds the global norm") {
  nn::ParameterSet<double> params;
  params.add("a", nn::Matrix<double>::Zero(3, 3));
  params.add("b", nn::Matrix<double>::Zero(1, 4));
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    nn::Gradients<double> g(params);
    const double scale = std::pow(10.0, static_cast<double>(uniform_index(rng, 6)) - 3.0);
    for (std::size_t id = 0; id < 2; ++id) {
      for (nn::Index k = 0; k < g[id].size(); ++k) g[id].data()[k] = scale * (2 * uniform_unit(rng) - 1);
    }
    const double before = g.global_norm();
    const auto copy = g;
    CHECK(clip_gradients(g, 1.0) == before);
    if (before <= 1.0) {
      CHECK(g[0] == copy[0]);
    } else {
      CHECK(g.global_norm() == doctest::Approx(1.0).epsilon(1e-12));
      // Direction is preserved.
      CHECK((g[1] * before - copy[1]).cwiseAbs().maxCoeff() < 1e-9 * before);
    }
  }
  nn::Gradients<double> g(params);
  g[0].setConstant(100.0);
  clip_gradients(g, 0.0);
  CHECK(g[0](0, 0) == 100.0);
}

TEST_CASE("adam step matches the bias-corrected update") {
  nn::ParameterSet<double> params;
  params.add("w", nn::Matrix<double>::Constant(1, 1, 0.5));
  nn::Gradients<double> g(params);
  AdamState<double> adam;
  TrainConfig cfg;
  double m = 0, v = 0, w = 0.5;
  for (std::size_t step = 1; step <= 5; ++step) {
    const double grad = 0.3 * static_cast<double>(step) - 0.7;
    g[0](0, 0) = grad;
    adam_step(params, g, adam, step, 0.01, cfg);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, step)), vh = v / (1 - std::pow(0.999, step));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(params.value(0)(0, 0) == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("pair targets: class 0 means i comes first") {
  const Ordering gold({2, 0, 1});
  CHECK(pair_target(gold, 2, 0) == 0);
  CHECK(pair_target(gold, 0, 2) == 1);
  CHECK(pair_target(gold, 0, 1) == 0);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto c = make_corpus(data::SynthKind::drift, 20);
  for (auto f : {Family::local, Family::global}) {
    PairModel<double> m(tiny(f, c.vocab.size())), ref(tiny(f, c.vocab.size()));
    auto cfg = quick();
    cfg.lr = 0.0;
    cfg.epochs = 1;
    const auto r = train_pairwise(m, c.train, {}, cfg);
    CHECK(r.steps > 0);
    CHECK(same_parameters(m, ref));
  }
}

TEST_CASE("initial loss is close to ln 2") {
  const auto c = make_corpus(data::SynthKind::drift, 20);
  for (auto f : {Family::local, Family::ensemble, Family::global}) {
    double sum = 0;
    for (std::uint64_t seed = 0; seed < 32; ++seed) {
      PairModel<double> m(tiny(f, c.vocab.size(), seed));
      const double loss = loss_and_gradients<double>(m, {c.train[seed % c.train.size()]}, nullptr);
      CHECK(std::abs(loss - std::log(2.0)) < 0.05);
      sum += loss;
    }
    CHECK(std::abs(sum / 32 - std::log(2.0)) < 0.01);
  }
}

TEST_CASE("loss gradient matches finite differences") {
  const auto c = make_corpus(data::SynthKind::cyclic, 4, 2, 3);
  for (auto f : {Family::local, Family::global}) {
    PairModel<double> m(tiny(f, c.vocab.size(), 4));
    const std::vector<data::ShuffledParagraph> batch = {c.train[0], c.train[1]};
    nn::Gradients<double> g(m.parameters());
    loss_and_gradients(m, batch, &g);
    Rng rng(5);
    for (nn::ParamId id = 0; id < m.parameters().size(); ++id) {
      auto& value = m.parameters().value(id);
      const auto k = static_cast<nn::Index>(uniform_index(rng, static_cast<std::uint64_t>(value.size())));
      const double orig = value.data()[k], h = 1e-5;
      value.data()[k] = orig + h;
      const double up = loss_and_gradients<double>(m, batch, nullptr);
      value.data()[k] = orig - h;
      const double down = loss_and_gradients<double>(m, batch, nullptr);
      value.data()[k] = orig;
      const double numeric = (up - down) / (2 * h);
      INFO(m.parameters()[id].name);
      CHECK(std::abs(g[id].data()[k] - numeric) <= 1e-8 + 1e-5 * std::abs(numeric));
    }
  }
}

TEST_CASE("log carries the scheduled learning rate and epoch-end evaluations") {
  const auto c = make_corpus(data::SynthKind::drift, 40);
  PairModel<double> m(tiny(Family::local, c.vocab.size()));
  auto cfg = quick();
  cfg.epochs = 3;
  cfg.decay_per_epoch = 0.5;
  cfg.eval_every = 5;
  const auto r = train_pairwise(m, c.train, c.heldout, cfg);
  REQUIRE_FALSE(r.log.empty());
  CHECK(r.epochs_completed == 3);
  std::size_t evals = 0;
  for (std::size_t k = 0; k < r.log.size(); ++k) {
    const auto& rec = r.log[k];
    CHECK(rec.step == k + 1);
    CHECK(rec.lr == lr_at_epoch(cfg, rec.epoch));
    const bool epoch_end = k + 1 == r.log.size() || r.log[k + 1].epoch != rec.epoch;
    CHECK(rec.pair_acc.has_value() == (epoch_end || rec.step % 5 == 0));
    evals += rec.pair_acc.has_value();
  }
  CHECK(evals >= 3);
  CHECK(r.best_pair_acc >= r.final_pair_acc);
  // The model is left at the best evaluated parameters.
  CHECK(heldout_pair_accuracy(m, c.heldout) == r.best_pair_acc);
}

TEST_CASE("training learns the drift corpus") {
  const auto c = make_corpus(data::SynthKind::drift, 150);
  PairModel<float> m(tiny(Family::local, c.vocab.size()));
  auto cfg = quick();
  cfg.epochs = 4;
  const double before = heldout_pair_accuracy(m, c.heldout);
  const auto r = train_pairwise(m, c.train, c.heldout, cfg);
  MESSAGE("held-out pair accuracy " << before << " -> " << r.best_pair_acc);
  CHECK(r.best_pair_acc > 0.9);
}

TEST_CASE("target accuracy and max steps stop early") {
  const auto c = make_corpus(data::SynthKind::drift, 60);
  PairModel<double> m(tiny(Family::local, c.vocab.size()));
  auto cfg = quick();
  cfg.max_steps = 4;
  CHECK(train_pairwise(m, c.train, c.heldout, cfg).steps == 4);

  PairModel<double> m2(tiny(Family::local, c.vocab.size()));
  cfg = quick();
  cfg.epochs = 20;
  cfg.eval_every = 2;
  cfg.target_pair_acc = 0.6;
  const auto r = train_pairwise(m2, c.train, c.heldout, cfg);
  CHECK(r.reached_target);
  CHECK(r.best_pair_acc >= 0.6);
  CHECK(r.log.back().pair_acc.value() >= 0.6);
}

TEST_CASE("training replays exactly and ignores the thread count") {
  const auto c = make_corpus(data::SynthKind::cyclic, 30);
  for (auto f : {Family::local, Family::global_ensemble}) {
    PairModel<double> a(tiny(f, c.vocab.size())), b(tiny(f, c.vocab.size())), d(tiny(f, c.vocab.size()));
    auto cfg = quick();
    const auto ra = train_pairwise(a, c.train, c.heldout, cfg);
    const auto rb = train_pairwise(b, c.train, c.heldout, cfg);
    cfg.jobs = 3;
    const auto rd = train_pairwise(d, c.train, c.heldout, cfg);
    CHECK(same_parameters(a, b));
    CHECK(same_parameters(a, d));
    REQUIRE(ra.log.size() == rd.log.size());
    for (std::size_t k = 0; k < ra.log.size(); ++k) {
      CHECK(ra.log[k].loss == rb.log[k].loss);
      CHECK(ra.log[k].loss == rd.log[k].loss);
    }
  }
}

TEST_CASE("an interrupted run resumes bit-exactly") {
  const auto c = make_corpus(data::SynthKind::drift, 30);
  for (auto f : {Family::local, Family::global}) {
    const auto dir_full = scratch("full"), dir_part = scratch("part");
    PairModel<double> full(tiny(f, c.vocab.size())), part(tiny(f, c.vocab.size()));
    auto cfg = quick();
    cfg.eval_every = 3;
    cfg.checkpoint_dir = dir_full;
    const auto rf = train_pairwise(full, c.train, c.heldout, cfg);

    cfg.checkpoint_dir = dir_part;
    cfg.max_steps = 5;
    const auto r1 = train_pairwise(part, c.train, c.heldout, cfg);
    CHECK(r1.steps == 5);
    cfg.max_steps = 0;
    PairModel<double> resumed(tiny(f, c.vocab.size()));
    for (nn::ParamId id = 0; id < resumed.parameters().size(); ++id) resumed.parameters().value(id).setZero();
    TrainOptions opts;
    opts.resume_from = dir_part / "state.ckpt";
    const auto r2 = train_pairwise(resumed, c.train, c.heldout, cfg, opts);

    CHECK(r2.steps == rf.steps);
    CHECK(same_parameters(full, resumed));
    REQUIRE(r1.log.size() + r2.log.size() == rf.log.size());
    for (std::size_t k = 0; k < r2.log.size(); ++k) CHECK(r2.log[k].loss == rf.log[r1.log.size() + k].loss);
  }
}

TEST_CASE("state files refuse a different model") {
  const auto c = make_corpus(data::SynthKind::drift, 20);
  const auto dir = scratch("mismatch");
  PairModel<double> m(tiny(Family::local, c.vocab.size()));
  auto cfg = quick();
  cfg.epochs = 1;
  cfg.checkpoint_dir = dir;
  train_pairwise(m, c.train, c.heldout, cfg);
  PairModel<double> other(tiny(Family::global, c.vocab.size()));
  CHECK_THROWS_AS(load_state(dir / "state.ckpt", other), InputError);
  PairModel<double> same(tiny(Family::local, c.vocab.size()));
  const auto state = load_state(dir / "state.ckpt", same);
  CHECK(state.done);
  CHECK(state.epoch == 1);
}

TEST_CASE("non-finite loss stops training with a dump") {
  const auto c = make_corpus(data::SynthKind::drift, 20);
  const auto dir = scratch("nan");
  PairModel<double> m(tiny(Family::local, c.vocab.size()));
  m.parameters().value(m.parameters().id_of("cls_head.0.bias"))(0, 0) = std::nan("");
  auto cfg = quick();
  cfg.checkpoint_dir = dir;
  CHECK_THROWS_AS(train_pairwise(m, c.train, c.heldout, cfg), TrainingDiverged);
  CHECK(fs::exists(dir / "diverged.ckpt"));
}

TEST_CASE("an uninformative model scores the chance baselines") {
  // Every p = 0.5: pairwise accuracy is 0 by convention and PMR sits at 1/n!.
  Rng rng(6);
  const std::size_t n = 4, count = 4800;
  std::vector<PairScoreMatrix> ms;
  std::vector<Ordering> gold;
  for (std::size_t k = 0; k < count; ++k) {
    ms.emplace_back(std::to_string(k), Eigen::MatrixXd::Constant(n, n, 0.5));
    gold.emplace_back(oracle::random_permutation(n, rng));
  }
  const auto r = evaluate_end_to_end(ms, gold, decode::DecodeConfig{});
  const double expected = 1.0 / 24.0;
  const double sigma = std::sqrt(expected * (1 - expected) / static_cast<double>(count));
  for (const auto* rep : {&r.strategy1, &r.strategy2}) {
    CHECK(std::abs(rep->pmr - expected) < 4 * sigma);
    CHECK(std::abs(rep->tau_mean) < 0.05);
    CHECK(*rep->pairwise_acc_mean == 0.0);
  }
}

TEST_CASE("end-to-end evaluation of perfect scores") {
  Rng rng(7);
  std::vector<PairScoreMatrix> ms;
  std::vector<Ordering> gold;
  for (int k = 0; k < 50; ++k) {
    gold.emplace_back(oracle::random_permutation(1 + uniform_index(rng, 8), rng));
    ms.push_back(PairScoreMatrix::noise_free(std::to_string(k), gold.back()));
  }
  const auto r = evaluate_end_to_end(ms, gold, decode::DecodeConfig{}, 2);
  for (const auto* rep : {&r.strategy1, &r.strategy2}) {
    CHECK(rep->pmr == 1.0);
    CHECK(rep->tau_mean == 1.0);
    CHECK(rep->acc_mean == 1.0);
    CHECK(*rep->pairwise_acc_mean == 1.0);
  }
  CHECK(r.predictions1 == gold);
}
