#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sentord/data.hpp"
#include "sentord/decode.hpp"
#include "sentord/encoders.hpp"
#include "sentord/metrics.hpp"
#include "sentord/nn/checkpoint.hpp"
#include "sentord/nn/parameters.hpp"

namespace sentord::train {

struct TrainConfig {
  double lr = 3e-4;
  /// lr(epoch) = lr * decay_per_epoch^epoch.
  double decay_per_epoch = 0.9;
  int epochs = 20;
  /// Pair examples per optimizer step. Global families fill a batch with
  /// whole paragraphs until it holds at least this many pairs.
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm bound; 0 disables clipping.
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  /// Held-out evaluation every this many steps; 0 evaluates at epoch ends only.
  int eval_every = 0;
  /// Stop once held-out pairwise accuracy reaches this value; 0 disables.
  double target_pair_acc = 0.0;
  /// Stop after this many optimizer steps in total; 0 means no limit.
  std::size_t max_steps = 0;
  /// Pairs (local families) per gradient micro-batch. Gradients are summed
  /// over micro-batches in a fixed order, so results do not depend on jobs.
  int micro_batch = 8;
  std::size_t jobs = 1;
  /// state.ckpt, best.ckpt and diverged.ckpt go here; empty disables files.
  std::filesystem::path checkpoint_dir;
};

void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

/// Learning rate for a zero-based epoch.
double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct LogRecord {
  std::size_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> pair_acc;
};

nlohmann::json to_json(const LogRecord& r);
LogRecord log_record_from_json(const nlohmann::json& j);

/// Raised when the loss stops being finite. The state at the failing step is
/// written to checkpoint_dir/diverged.ckpt first when a directory is set.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename S>
struct AdamState {
  nn::Gradients<S> m;
  nn::Gradients<S> v;
};

/// Everything needed to continue a run exactly. Randomness is derived from
/// (seed, epoch), so no generator state is stored.
template <typename S>
struct TrainState {
  std::size_t step = 0;
  int epoch = 0;
  std::size_t batch_in_epoch = 0;
  double lr = 0.0;
  AdamState<S> adam;
  double best_pair_acc = -1.0;
  std::size_t best_step = 0;
  /// Parameter values at best_step; empty until the first evaluation.
  std::vector<nn::Matrix<S>> best_params;
  bool done = false;
};

/// Scales `grads` so their global norm is at most max_norm; returns the norm
/// before clipping.
template <typename S>
double clip_gradients(nn::Gradients<S>& grads, double max_norm);

/// One Adam update with bias correction, at learning rate `lr`.
template <typename S>
void adam_step(nn::ParameterSet<S>& params, const nn::Gradients<S>& grads, AdamState<S>& adam, std::size_t step,
               double lr, const TrainConfig& cfg);

/// Class index of ordered pair (i, j): 0 when i precedes j in gold order.
int pair_target(const Ordering& gold, std::size_t i, std::size_t j);

/// Mean two-class cross-entropy over every ordered pair of the paragraphs.
/// When `grads` is given, the gradient of that mean is added into it.
template <typename S>
double loss_and_gradients(const model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& paragraphs,
                          nn::Gradients<S>* grads);

/// Mean over paragraphs of pairwise accuracy (paragraphs with n < 2 skipped).
template <typename S>
double heldout_pair_accuracy(const model::PairModel<S>& model,
                             const std::vector<data::ShuffledParagraph>& paragraphs, std::size_t jobs = 1);

struct TrainResult {
  std::size_t steps = 0;
  int epochs_completed = 0;
  double best_pair_acc = -1.0;
  std::size_t best_step = 0;
  double final_pair_acc = -1.0;
  bool reached_target = false;
  std::vector<LogRecord> log;
};

struct TrainOptions {
  /// Called for every log record as it is produced.
  std::function<void(const LogRecord&)> on_log;
  /// Continue from this state checkpoint instead of starting fresh.
  std::optional<std::filesystem::path> resume_from;
  /// Needed to export best.ckpt as a loadable model.
  const data::Vocab* vocab = nullptr;
};

/// Minimises mean two-class cross-entropy with Adam, multiplicative per-epoch
/// learning-rate decay and global-norm clipping. Local families batch pair
/// examples; global families batch whole paragraphs so context is available.
/// On return the model holds the best held-out parameters seen (the final
/// ones when there is no held-out set).
template <typename S>
TrainResult train_pairwise(model::PairModel<S>& model, const std::vector<data::ShuffledParagraph>& train_set,
                           const std::vector<data::ShuffledParagraph>& heldout, const TrainConfig& cfg,
                           const TrainOptions& options = {});

template <typename S>
void save_state(const std::filesystem::path& path, const model::PairModel<S>& model, const TrainState<S>& state,
                const TrainConfig& cfg);
/// Loads parameters into `model` and returns the optimizer state. Throws
/// InputError when the file does not match the model.
template <typename S>
TrainState<S> load_state(const std::filesystem::path& path, model::PairModel<S>& model);

/// Both decoding strategies' reports for one model on one corpus.
struct EndToEndReport {
  metrics::EvalReport strategy1;
  metrics::EvalReport strategy2;
  std::vector<Ordering> predictions1;
  std::vector<Ordering> predictions2;
};

/// Scores every paragraph, decodes with strategies 1 and 2 (beam, `base`
/// supplies width and score space) and computes Acc / tau / PMR plus pairwise
/// accuracy for each.
EndToEndReport evaluate_end_to_end(const std::vector<PairScoreMatrix>& matrices,
                                   const std::vector<Ordering>& gold, const decode::DecodeConfig& base,
                                   std::size_t jobs = 1);

template <typename S>
EndToEndReport evaluate_end_to_end(const model::PairModel<S>& model,
                                   const std::vector<data::ShuffledParagraph>& paragraphs,
                                   const decode::DecodeConfig& base, std::size_t jobs = 1);

}  // namespace sentord::train
