#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sentord/core.hpp"

namespace sentord::metrics {

/// Fraction of ranks at which pred and gold place the same sentence.
double accuracy(const Ordering& pred, const Ordering& gold);

/// Number of sentence pairs whose relative order differs between pred and gold.
long long inversions(const Ordering& pred, const Ordering& gold);

/// 1 - 2 * inversions / C(n, 2), evaluated as one rational division; 1 for n = 1.
double kendall_tau(const Ordering& pred, const Ordering& gold);

/// Over the n(n-1) ordered pairs, a hit is p(i,j) > 0.5 agreeing with "i
/// precedes j in gold". p(i,j) == 0.5 is always a miss. Requires n >= 2.
double pairwise_accuracy(const PairScoreMatrix& matrix, const Ordering& gold);

struct ParagraphScores {
  std::string paragraph_id;
  std::size_t n = 0;
  double acc = 0.0;
  double tau = 0.0;
  bool perfect = false;
  std::optional<double> pairwise_acc;
};

ParagraphScores score_paragraph(const std::string& paragraph_id, const Ordering& pred,
                                const Ordering& gold);

/// Fraction of paragraphs that are perfect matches. Throws on an empty list.
double pmr(const std::vector<ParagraphScores>& scores);

struct EvalReport {
  std::vector<ParagraphScores> per_paragraph;
  double acc_mean = 0.0;
  double tau_mean = 0.0;
  double pmr = 0.0;
  std::optional<double> pairwise_acc_mean;
  /// Population standard deviation across paragraphs.
  std::optional<double> pairwise_acc_std;
};

/// Aggregates per-paragraph scores. Pairwise aggregates are present only when
/// every paragraph with n >= 2 carries a pairwise accuracy.
EvalReport aggregate(std::vector<ParagraphScores> per_paragraph);

}  // namespace sentord::metrics
