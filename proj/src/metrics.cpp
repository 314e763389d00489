#include "sentord/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace sentord::metrics {

namespace {

void require_same_size(const Ordering& pred, const Ordering& gold) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("metrics: predicted and gold orderings differ in length");
  }
  if (pred.size() == 0) throw std::invalid_argument("metrics: empty ordering");
}

}  // namespace

double accuracy(const Ordering& pred, const Ordering& gold) {
  require_same_size(pred, gold);
  long long hits = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) hits += pred[k] == gold[k];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

long long inversions(const Ordering& pred, const Ordering& gold) {
  require_same_size(pred, gold);
  // Relabel each sentence by its gold rank; inversions of that sequence are
  // the discordant pairs. n is small, the quadratic count is fine.
  const auto gold_rank = gold.rank_of();
  std::vector<int> seq(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) seq[k] = gold_rank[static_cast<std::size_t>(pred[k])];
  long long count = 0;
  for (std::size_t a = 0; a < seq.size(); ++a) {
    for (std::size_t b = a + 1; b < seq.size(); ++b) count += seq[a] > seq[b];
  }
  return count;
}

double kendall_tau(const Ordering& pred, const Ordering& gold) {
  const long long inv = inversions(pred, gold);
  const long long n = static_cast<long long>(pred.size());
  if (n == 1) return 1.0;
  const long long pairs = n * (n - 1) / 2;
  return static_cast<double>(pairs - 2 * inv) / static_cast<double>(pairs);
}

double pairwise_accuracy(const PairScoreMatrix& matrix, const Ordering& gold) {
  const auto n = matrix.size();
  if (n != gold.size()) throw std::invalid_argument("pairwise_accuracy: size mismatch");
  if (n < 2) throw std::invalid_argument("pairwise_accuracy: needs at least two sentences");
  const auto rank = gold.rank_of();
  long long hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double p = matrix(i, j);
      if (p == 0.5) continue;
      hits += (p > 0.5) == (rank[i] < rank[j]);
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n * (n - 1));
}

ParagraphScores score_paragraph(const std::string& paragraph_id, const Ordering& pred,
                                const Ordering& gold) {
  ParagraphScores s;
  s.paragraph_id = paragraph_id;
  s.n = pred.size();
  s.acc = accuracy(pred, gold);
  s.tau = kendall_tau(pred, gold);
  s.perfect = pred == gold;
  return s;
}

double pmr(const std::vector<ParagraphScores>& scores) {
  if (scores.empty()) throw std::invalid_argument("pmr: empty corpus");
  long long perfect = 0;
  for (const auto& s : scores) perfect += s.perfect;
  return static_cast<double>(perfect) / static_cast<double>(scores.size());
}

EvalReport aggregate(std::vector<ParagraphScores> per_paragraph) {
  if (per_paragraph.empty()) throw std::invalid_argument("aggregate: empty corpus");
  EvalReport r;
  double acc = 0.0;
  double tau = 0.0;
  double pair_sum = 0.0;
  std::size_t pair_count = 0;
  bool pairwise_complete = true;
  for (const auto& s : per_paragraph) {
    acc += s.acc;
    tau += s.tau;
    if (s.pairwise_acc) {
      pair_sum += *s.pairwise_acc;
      ++pair_count;
    } else if (s.n >= 2) {
      pairwise_complete = false;
    }
  }
  const auto count = static_cast<double>(per_paragraph.size());
  r.acc_mean = acc / count;
  r.tau_mean = tau / count;
  r.pmr = pmr(per_paragraph);
  if (pairwise_complete && pair_count > 0) {
    const double mean = pair_sum / static_cast<double>(pair_count);
    double var = 0.0;
    for (const auto& s : per_paragraph) {
      if (s.pairwise_acc) var += (*s.pairwise_acc - mean) * (*s.pairwise_acc - mean);
    }
    r.pairwise_acc_mean = mean;
    r.pairwise_acc_std = std::sqrt(var / static_cast<double>(pair_count));
  }
  r.per_paragraph = std::move(per_paragraph);
  return r;
}

}  // namespace sentord::metrics
