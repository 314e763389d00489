#include "sentord/train.hpp"

#include <cmath>

#include "sentord/parallel.hpp"
#include "sentord/random.hpp"

namespace sentord::train {

using nn::Var;

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw std::invalid_argument("train: lr must be finite and >= 0");
  if (!(cfg.decay_per_epoch > 0.0 && cfg.decay_per_epoch <= 1.0)) {
    throw std::invalid_argument("train: decay_per_epoch must lie in (0, 1]");
  }
  if (cfg.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.micro_batch < 1) throw std::invalid_argument("train: micro_batch must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam_eps > 0.0)) throw std::invalid_argument("train: adam_eps must be > 0");
  if (!(cfg.clip_norm >= 0.0)) throw std::invalid_argument("train: clip_norm must be >= 0");
  if (cfg.eval_every < 0) throw std::invalid_argument("train: eval_every must be >= 0");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"decay_per_epoch", cfg.decay_per_epoch},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"clip_norm", cfg.clip_norm},
          {"seed", cfg.seed},
          {"eval_every", cfg.eval_every},
          {"target_pair_acc", cfg.target_pair_acc},
          {"max_steps", cfg.max_steps},
          {"micro_batch", cfg.micro_batch}};
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) { return cfg.lr * std::pow(cfg.decay_per_epoch, epoch); }

nlohmann::json to_json(const LogRecord& r) {
  nlohmann::json j = {{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}};
  j["pair_acc"] = r.pair_acc ? nlohmann::json(*r.pair_acc) : nlohmann::json(nullptr);
  return j;
}

LogRecord log_record_from_json(const nlohmann::json& j) {
  LogRecord r;
  r.step = j.at("step").get<std::size_t>();
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.loss = j.at("loss").get<double>();
  if (!j.at("pair_acc").is_null()) r.pair_acc = j.at("pair_acc").get<double>();
  return r;
}

template <typename S>
double clip_gradients(nn::Gradients<S>& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (max_norm > 0.0 && norm > max_norm) grads.scale(static_cast<S>(max_norm / norm));
  return norm;
}

template <typename S>
void adam_step(nn::ParameterSet<S>& params, const nn::Gradients<S>& grads, AdamState<S>& adam, std::size_t step,
               double lr, const TrainConfig& cfg) {
  if (adam.m.size() != params.size()) {
    adam.m = nn::Gradients<S>(params);
    adam.v = nn::Gradients<S>(params);
  }
  const auto b1 = static_cast<S>(cfg.beta1);
  const auto b2 = static_cast<S>(cfg.beta2);
  const double t = static_cast<double>(step);
  const auto c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, t));
  const auto c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, t));
  const auto rate = static_cast<S>(lr);
  const auto eps = static_cast<S>(cfg.adam_eps);
  for (std::size_t id = 0; id < params.size(); ++id) {
    auto& m = adam.m[id];
    auto& v = adam.v[id];
    const auto& g = grads[id];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    params.value(id).array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

int pair_target(const Ordering& gold, std::size_t i, std::size_t j) {
  const auto rank = gold.rank_of();
  return rank.at(i) < rank.at(j) ? 0 : 1;
}

namespace {

std::vector<int> paragraph_targets(const data::ShuffledParagraph& p) {
  const auto rank = p.gold.rank_of();
  std::vector<int> targets;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (i != j) targets.push_back(rank[i] < rank[j] ? 0 : 1);
    }
  }
  return targets;
}

struct PairRef {
  std::size_t paragraph = 0;
  std::size_t i = 0;
  std::size_t j = 0;
};

// One gradient micro-batch: either a run of pairs or one whole paragraph.
struct Micro {
  std::vector<PairRef> pairs;
  std::size_t paragraph = SIZE_MAX;
};

struct Batch {
  std::vector<Micro> micros;
  std::size_t pairs = 0;
};

// Loss of one micro-batch scaled to its share of the batch mean; gradients
// go into `grads`. Returns the unscaled summed loss over its pairs.
template <typename S>
double micro_step(const model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& data,
                  const Micro& micro, std::size_t batch_pairs, nn::Gradients<S>* grads) {
  nn::Tape<S> t(model.parameters(), grads != nullptr);
  Var logits;
  std::vector<int> targets;
  if (micro.paragraph != SIZE_MAX) {
    const auto& p = data[micro.paragraph];
    logits = model.paragraph_logits(t, p.sentences);
    targets = paragraph_targets(p);
  } else {
    std::vector<Var> rows;
    for (const auto& r : micro.pairs) {
      const auto& p = data[r.paragraph];
      rows.push_back(model.cls_logits(t, p.sentences[r.i], p.sentences[r.j]));
      targets.push_back(pair_target(p.gold, r.i, r.j));
    }
    logits = nn::concat_rows(t, std::span<const Var>(rows));
  }
  const auto rows = static_cast<double>(targets.size());
  Var loss = nn::scale(t, nn::cross_entropy(t, logits, std::span<const int>(targets)),
                       static_cast<S>(rows / static_cast<double>(batch_pairs)));
  const double value = static_cast<double>(t.scalar(loss)) * static_cast<double>(batch_pairs);
  if (grads) {
    t.backward(loss);
    t.add_gradients_to(*grads);
  }
  return value;
}

// Sums micro-batch losses and gradients in micro order, whatever `jobs` is.
template <typename S>
double batch_step(const model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& data,
                  const Batch& batch, nn::Gradients<S>& grads, std::size_t jobs) {
  grads.set_zero();
  double total = 0.0;
  if (jobs <= 1 || batch.micros.size() <= 1) {
    for (const auto& m : batch.micros) total += micro_step(model, data, m, batch.pairs, &grads);
  } else {
    std::vector<nn::Gradients<S>> parts(batch.micros.size());
    std::vector<double> losses(batch.micros.size());
    parallel_for(jobs, batch.micros.size(), [&](std::size_t k) {
      parts[k] = nn::Gradients<S>(model.parameters());
      losses[k] = micro_step(model, data, batch.micros[k], batch.pairs, &parts[k]);
    });
    for (std::size_t k = 0; k < parts.size(); ++k) {
      grads += parts[k];
      total += losses[k];
    }
  }
  return total / static_cast<double>(batch.pairs);
}

template <typename S>
std::vector<Batch> make_batches(const model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& data,
                                const TrainConfig& cfg, int epoch) {
  Rng rng(derive_seed(cfg.seed, "epoch:" + std::to_string(epoch)));
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::vector<Batch> batches;
  if (model::is_global(model.family())) {
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < data.size(); ++k) {
      if (data[k].size() >= 2) order.push_back(k);
    }
    fisher_yates(order, rng);
    Batch b;
    for (std::size_t k : order) {
      Micro m;
      m.paragraph = k;
      b.micros.push_back(m);
      b.pairs += data[k].size() * (data[k].size() - 1);
      if (b.pairs >= batch_size) {
        batches.push_back(std::move(b));
        b = Batch{};
      }
    }
    if (!b.micros.empty()) batches.push_back(std::move(b));
    return batches;
  }
  std::vector<PairRef> pairs;
  for (std::size_t k = 0; k < data.size(); ++k) {
    for (std::size_t i = 0; i < data[k].size(); ++i) {
      for (std::size_t j = 0; j < data[k].size(); ++j) {
        if (i != j) pairs.push_back({k, i, j});
      }
    }
  }
  fisher_yates(pairs, rng);
  const auto micro = static_cast<std::size_t>(cfg.micro_batch);
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t end = std::min(pairs.size(), start + batch_size);
    Batch b;
    b.pairs = end - start;
    for (std::size_t m = start; m < end; m += micro) {
      Micro mb;
      mb.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(m),
                      pairs.begin() + static_cast<std::ptrdiff_t>(std::min(end, m + micro)));
      b.micros.push_back(std::move(mb));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

template <typename S>
std::vector<nn::Matrix<S>> snapshot(const nn::ParameterSet<S>& params) {
  std::vector<nn::Matrix<S>> out;
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

}  // namespace

template <typename S>
double loss_and_gradients(const model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& paragraphs,
                          nn::Gradients<S>* grads) {
  Batch b;
  for (std::size_t k = 0; k < paragraphs.size(); ++k) {
    const auto n = paragraphs[k].size();
    if (n < 2) continue;
    Micro m;
    m.paragraph = k;
    b.micros.push_back(m);
    b.pairs += n * (n - 1);
  }
  if (b.pairs == 0) throw std::invalid_argument("loss_and_gradients: no pairs");
  double total = 0.0;
  for (const auto& m : b.micros) total += micro_step(model, paragraphs, m, b.pairs, grads);
  return total / static_cast<double>(b.pairs);
}

template <typename S>
double heldout_pair_accuracy(const model::PairModel<S>& model,
                             const std::vector<data::ShuffledParagraph>& paragraphs, std::size_t jobs) {
  const auto matrices = model::score_corpus(model, paragraphs, jobs);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < paragraphs.size(); ++k) {
    if (paragraphs[k].size() < 2) continue;
    sum += metrics::pairwise_accuracy(matrices[k], paragraphs[k].gold);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("heldout_pair_accuracy: no paragraph has two sentences");
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

namespace {

template <typename S>
void push_matrix(nn::Checkpoint& ckpt, const std::string& name, const nn::Matrix<S>& m) {
  nn::NamedTensor t;
  t.name = name;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  ckpt.tensors.push_back(std::move(t));
}

template <typename S>
void pull_matrix(const nn::Checkpoint& ckpt, const std::string& name, nn::Matrix<S>& m,
                 const std::filesystem::path& path) {
  const auto* t = ckpt.find(name);
  if (!t) throw InputError("training state '" + path.string() + "' lacks tensor '" + name + "'");
  if (t->shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}) {
    throw InputError("training state '" + path.string() + "': tensor '" + name + "' has the wrong shape");
  }
  for (nn::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<S>(t->data[static_cast<std::size_t>(k)]);
}

}  // namespace

template <typename S>
void save_state(const std::filesystem::path& path, const model::PairModel<S>& model, const TrainState<S>& state,
                const TrainConfig& cfg) {
  nn::Checkpoint ckpt;
  ckpt.dtype = std::is_same_v<S, double> ? nn::DType::f64 : nn::DType::f32;
  ckpt.header = {{"kind", "sentord-train-state"},
                 {"model", model::to_json(model.config())},
                 {"train", to_json(cfg)},
                 {"step", state.step},
                 {"epoch", state.epoch},
                 {"batch_in_epoch", state.batch_in_epoch},
                 {"lr", state.lr},
                 {"best_pair_acc", state.best_pair_acc},
                 {"best_step", state.best_step},
                 {"has_best", !state.best_params.empty()},
                 {"has_adam", state.adam.m.size() != 0},
                 {"done", state.done}};
  const auto& params = model.parameters();
  for (std::size_t id = 0; id < params.size(); ++id) {
    const auto& name = params[id].name;
    push_matrix(ckpt, "param/" + name, params[id].value);
    if (state.adam.m.size() != 0) {
      push_matrix(ckpt, "adam.m/" + name, state.adam.m[id]);
      push_matrix(ckpt, "adam.v/" + name, state.adam.v[id]);
    }
    if (!state.best_params.empty()) push_matrix(ckpt, "best/" + name, state.best_params[id]);
  }
  nn::write_checkpoint(path, ckpt);
}

template <typename S>
TrainState<S> load_state(const std::filesystem::path& path, model::PairModel<S>& model) {
  const auto ckpt = nn::read_checkpoint(path);
  const auto& h = ckpt.header;
  if (h.value("kind", std::string()) != "sentord-train-state") {
    throw InputError("'" + path.string() + "' is not a training state checkpoint");
  }
  if (model::model_config_from_json(h.at("model")).family != model.family() ||
      h.at("model") != model::to_json(model.config())) {
    throw InputError("training state '" + path.string() + "' was written for a different model config");
  }
  TrainState<S> state;
  try {
    state.step = h.at("step").get<std::size_t>();
    state.epoch = h.at("epoch").get<int>();
    state.batch_in_epoch = h.at("batch_in_epoch").get<std::size_t>();
    state.lr = h.at("lr").get<double>();
    state.best_pair_acc = h.at("best_pair_acc").get<double>();
    state.best_step = h.at("best_step").get<std::size_t>();
    state.done = h.at("done").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("training state '" + path.string() + "': " + e.what());
  }
  auto& params = model.parameters();
  const bool has_adam = h.value("has_adam", false);
  const bool has_best = h.value("has_best", false);
  if (has_adam) {
    state.adam.m = nn::Gradients<S>(params);
    state.adam.v = nn::Gradients<S>(params);
  }
  for (std::size_t id = 0; id < params.size(); ++id) {
    const auto& name = params[id].name;
    pull_matrix(ckpt, "param/" + name, params.value(id), path);
    if (has_adam) {
      pull_matrix(ckpt, "adam.m/" + name, state.adam.m[id], path);
      pull_matrix(ckpt, "adam.v/" + name, state.adam.v[id], path);
    }
    if (has_best) {
      state.best_params.push_back(params.value(id));
      pull_matrix(ckpt, "best/" + name, state.best_params.back(), path);
    }
  }
  return state;
}

// ---------------------------------------------------------------------------

template <typename S>
TrainResult train_pairwise(model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& train_set,
                           const std::vector<data::ShuffledParagraph>& heldout, const TrainConfig& cfg,
                           const TrainOptions& options) {
  validate(cfg);
  bool any_pair = false;
  for (const auto& p : train_set) any_pair = any_pair || p.size() >= 2;
  if (!any_pair) throw InputError("training set has no paragraph with two or more sentences");

  TrainState<S> state;
  if (options.resume_from) {
    state = load_state(*options.resume_from, model);
  }
  auto& params = model.parameters();
  if (state.adam.m.size() == 0) {
    state.adam.m = nn::Gradients<S>(params);
    state.adam.v = nn::Gradients<S>(params);
  }
  const auto& dir = cfg.checkpoint_dir;
  if (!dir.empty()) std::filesystem::create_directories(dir);

  TrainResult result;
  auto emit = [&](const LogRecord& r) {
    result.log.push_back(r);
    if (options.on_log) options.on_log(r);
  };
  auto evaluate = [&]() -> std::optional<double> {
    if (heldout.empty()) return std::nullopt;
    const double acc = heldout_pair_accuracy(model, heldout, cfg.jobs);
    if (acc > state.best_pair_acc) {
      state.best_pair_acc = acc;
      state.best_step = state.step;
      state.best_params = snapshot(params);
      if (!dir.empty() && options.vocab) model::save_model(dir / "best.ckpt", model, *options.vocab);
    }
    if (cfg.target_pair_acc > 0.0 && acc >= cfg.target_pair_acc) {
      state.done = true;
      result.reached_target = true;
    }
    return acc;
  };
  auto save = [&](const char* name) {
    if (!dir.empty()) save_state(dir / name, model, state, cfg);
  };

  nn::Gradients<S> grads(params);
  bool stopped = state.done;
  while (!stopped && state.epoch < cfg.epochs) {
    const int epoch = state.epoch;
    state.lr = lr_at_epoch(cfg, epoch);
    const auto batches = make_batches(model, train_set, cfg, epoch);
    for (std::size_t b = state.batch_in_epoch; b < batches.size(); ++b) {
      const double loss = batch_step(model, train_set, batches[b], grads, cfg.jobs);
      if (!std::isfinite(loss) || !std::isfinite(grads.global_norm())) {
        save("diverged.ckpt");
        throw TrainingDiverged("loss became non-finite at step " + std::to_string(state.step + 1) +
                               (dir.empty() ? std::string() : "; state dumped to " + (dir / "diverged.ckpt").string()));
      }
      clip_gradients(grads, cfg.clip_norm);
      ++state.step;
      adam_step(params, grads, state.adam, state.step, state.lr, cfg);
      state.batch_in_epoch = b + 1;

      LogRecord rec{state.step, epoch, state.lr, loss, std::nullopt};
      const bool epoch_end = b + 1 == batches.size();
      if (epoch_end) {
        state.epoch = epoch + 1;
        state.batch_in_epoch = 0;
      }
      if (epoch_end || (cfg.eval_every > 0 && state.step % static_cast<std::size_t>(cfg.eval_every) == 0)) {
        rec.pair_acc = evaluate();
        save("state.ckpt");
      }
      emit(rec);
      if (state.done || (cfg.max_steps > 0 && state.step >= cfg.max_steps)) {
        stopped = true;
        save("state.ckpt");
        break;
      }
    }
    if (batches.empty()) ++state.epoch;
  }
  if (state.epoch >= cfg.epochs) state.done = true;
  save("state.ckpt");

  result.steps = state.step;
  result.epochs_completed = state.epoch;
  result.best_pair_acc = state.best_pair_acc;
  result.best_step = state.best_step;
  if (!heldout.empty()) {
    result.final_pair_acc = heldout_pair_accuracy(model, heldout, cfg.jobs);
    if (!state.best_params.empty()) {
      for (std::size_t id = 0; id < params.size(); ++id) params.value(id) = state.best_params[id];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

EndToEndReport evaluate_end_to_end(const std::vector<PairScoreMatrix>& matrices, const std::vector<Ordering>& gold,
                                   const decode::DecodeConfig& base, std::size_t jobs) {
  if (matrices.size() != gold.size()) throw std::invalid_argument("evaluate_end_to_end: size mismatch");
  EndToEndReport report;
  for (int s = 1; s <= 2; ++s) {
    auto cfg = base;
    cfg.strategy = s == 1 ? decode::Strategy::adjacent : decode::Strategy::all_pairs;
    auto preds = decode::decode_corpus(matrices, decode::Decoder::beam, cfg, jobs);
    std::vector<metrics::ParagraphScores> scores;
    for (std::size_t k = 0; k < matrices.size(); ++k) {
      auto ps = metrics::score_paragraph(matrices[k].paragraph_id(), preds[k], gold[k]);
      if (matrices[k].size() >= 2) ps.pairwise_acc = metrics::pairwise_accuracy(matrices[k], gold[k]);
      scores.push_back(std::move(ps));
    }
    (s == 1 ? report.strategy1 : report.strategy2) = metrics::aggregate(std::move(scores));
    (s == 1 ? report.predictions1 : report.predictions2) = std::move(preds);
  }
  return report;
}

template <typename S>
EndToEndReport evaluate_end_to_end(const model::PairModel<S>& model,
                                   const std::vector<data::ShuffledParagraph>& paragraphs,
                                   const decode::DecodeConfig& base, std::size_t jobs) {
  std::vector<Ordering> gold;
  for (const auto& p : paragraphs) gold.push_back(p.gold);
  return evaluate_end_to_end(model::score_corpus(model, paragraphs, jobs), gold, base, jobs);
}

#define SENTORD_INSTANTIATE_TRAIN(S)                                                                            \
  template double clip_gradients<S>(nn::Gradients<S>&, double);                                                 \
  template void adam_step<S>(nn::ParameterSet<S>&, const nn::Gradients<S>&, AdamState<S>&, std::size_t, double, \
                             const TrainConfig&);                                                               \
  template double loss_and_gradients<S>(const model::PairModel<S>&, const std::vector<data::ShuffledParagraph>&, \
                                        nn::Gradients<S>*);                                                     \
  template double heldout_pair_accuracy<S>(const model::PairModel<S>&,                                          \
                                           const std::vector<data::ShuffledParagraph>&, std::size_t);           \
  template TrainResult train_pairwise<S>(model::PairModel<S>&, const std::vector<data::ShuffledParagraph>&,     \
                                         const std::vector<data::ShuffledParagraph>&, const TrainConfig&,       \
                                         const TrainOptions&);                                                  \
  template void save_state<S>(const std::filesystem::path&, const model::PairModel<S>&, const TrainState<S>&,   \
                              const TrainConfig&);                                                              \
  template TrainState<S> load_state<S>(const std::filesystem::path&, model::PairModel<S>&);                     \
  template EndToEndReport evaluate_end_to_end<S>(const model::PairModel<S>&,                                    \
                                                 const std::vector<data::ShuffledParagraph>&,                   \
                                                 const decode::DecodeConfig&, std::size_t);

SENTORD_INSTANTIATE_TRAIN(float)
SENTORD_INSTANTIATE_TRAIN(double)

}  // namespace sentord::train
