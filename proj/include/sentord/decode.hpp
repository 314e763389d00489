#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentord/core.hpp"

namespace sentord::decode {

/// adjacent: a new sentence is scored against the last placed one only.
/// all_pairs: a new sentence is scored against every placed sentence.
enum class Strategy { adjacent = 1, all_pairs = 2 };
enum class ScoreSpace { probability, log };
enum class Decoder { beam, topo };

struct DecodeConfig {
  Strategy strategy = Strategy::adjacent;
  int beam_width = 64;
  ScoreSpace score_space = ScoreSpace::probability;
  double epsilon = 1e-12;  ///< log space clamps p to max(p, epsilon)
};

void validate(const DecodeConfig& cfg);

std::string to_string(Strategy s);
std::string to_string(ScoreSpace s);
Strategy parse_strategy(const std::string& s);
ScoreSpace parse_score_space(const std::string& s);
Decoder parse_decoder(const std::string& s);

/// Anything with size() and operator()(i, j) -> double can be decoded; the
/// instrumented wrappers in the tests rely on this.
template <typename Scores>
concept PairScores = requires(const Scores& s, std::size_t i) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s(i, i) } -> std::convertible_to<double>;
};

template <PairScores Scores>
double pair_term(const Scores& scores, int i, int j, const DecodeConfig& cfg) {
  const double p = scores(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  return cfg.score_space == ScoreSpace::log ? std::log(std::max(p, cfg.epsilon)) : p;
}

/// Score added when `next` is appended to `prefix`. Uses one lookup for the
/// adjacent strategy and prefix.size() lookups for all-pairs.
template <PairScores Scores>
double extension_score(const Scores& scores, std::span<const int> prefix, int next,
                       const DecodeConfig& cfg) {
  if (prefix.empty()) return 0.0;
  if (cfg.strategy == Strategy::adjacent) return pair_term(scores, prefix.back(), next, cfg);
  double sum = 0.0;
  for (int e : prefix) sum += pair_term(scores, e, next, cfg);
  return sum;
}

/// Strategy score of a full or partial sequence, accumulated in placement
/// order exactly as the beam accumulates it.
template <PairScores Scores>
double sequence_score(const Scores& scores, std::span<const int> sequence, const DecodeConfig& cfg) {
  double score = 0.0;
  for (std::size_t t = 1; t < sequence.size(); ++t) {
    score += extension_score(scores, sequence.first(t), sequence[t], cfg);
  }
  return score;
}

struct BeamCandidate {
  std::vector<int> prefix;
  std::vector<char> used;
  double score = 0.0;
  /// Summed out-mass of the placed sentences; secondary pruning key.
  double mass = 0.0;
};

struct BeamResult {
  Ordering ordering;
  double score = 0.0;
  std::vector<BeamCandidate> final_beam;
};

namespace detail {

inline bool ranks_before(const BeamCandidate& a, const BeamCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.mass != b.mass) return a.mass > b.mass;
  return a.prefix < b.prefix;
}

}  // namespace detail

/// Beam search over permutations. The beam starts with every single-sentence
/// prefix at score 0; each step extends every candidate by every unused
/// sentence and keeps the best beam_width by (score, out-mass, prefix). The
/// out-mass of a sentence is its summed score against all others, computed
/// once up front; it breaks score ties toward prefixes whose placed sentences
/// are most confidently followed by the rest. Complete candidates compare by
/// (score, prefix) only.
template <PairScores Scores>
BeamResult beam_search(const Scores& scores, const DecodeConfig& cfg) {
  validate(cfg);
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw std::invalid_argument("beam_search: empty score matrix");

  std::vector<double> out_mass(static_cast<std::size_t>(n), 0.0);
  if (n > 1) {
    for (int e = 0; e < n; ++e) {
      for (int u = 0; u < n; ++u) {
        if (u != e) out_mass[static_cast<std::size_t>(e)] += pair_term(scores, e, u, cfg);
      }
    }
  }
  auto mass_of = [&](const std::vector<char>& used, std::size_t placed) {
    if (placed == static_cast<std::size_t>(n)) return 0.0;
    double m = 0.0;
    for (std::size_t e = 0; e < used.size(); ++e) {
      if (used[e]) m += out_mass[e];
    }
    return m;
  };

  std::vector<BeamCandidate> beam;
  beam.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    BeamCandidate c;
    c.prefix = {s};
    c.used.assign(static_cast<std::size_t>(n), 0);
    c.used[static_cast<std::size_t>(s)] = 1;
    c.mass = mass_of(c.used, 1);
    beam.push_back(std::move(c));
  }

  const auto width = static_cast<std::size_t>(cfg.beam_width);
  for (int t = 1; t < n; ++t) {
    std::vector<BeamCandidate> next;
    next.reserve(beam.size() * static_cast<std::size_t>(n - t));
    for (const auto& c : beam) {
      for (int s = 0; s < n; ++s) {
        if (c.used[static_cast<std::size_t>(s)]) continue;
        BeamCandidate e;
        e.prefix = c.prefix;
        e.prefix.push_back(s);
        e.used = c.used;
        e.used[static_cast<std::size_t>(s)] = 1;
        e.score = c.score + extension_score(scores, std::span<const int>(c.prefix), s, cfg);
        e.mass = mass_of(e.used, e.prefix.size());
        next.push_back(std::move(e));
      }
    }
    if (next.size() > width) {
      std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(width), next.end(),
                        detail::ranks_before);
      next.resize(width);
    } else {
      std::sort(next.begin(), next.end(), detail::ranks_before);
    }
    beam = std::move(next);
  }

  const auto best = std::min_element(beam.begin(), beam.end(), detail::ranks_before);
  BeamResult result{Ordering(best->prefix), best->score, {}};
  result.final_beam = std::move(beam);
  return result;
}

Ordering beam_decode(const PairScoreMatrix& matrix, const DecodeConfig& cfg);

struct OracleResult {
  Ordering ordering;
  double score = 0.0;
};

inline constexpr std::size_t kOracleMaxSentences = 9;

/// Exhaustive argmax of the strategy score over all n! permutations; ties go
/// to the lexicographically smallest permutation.
template <PairScores Scores>
OracleResult oracle_decode(const Scores& scores, const DecodeConfig& cfg) {
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("oracle_decode: empty score matrix");
  if (n > kOracleMaxSentences) {
    throw std::invalid_argument("oracle_decode: n = " + std::to_string(n) + " exceeds the limit of " +
                                std::to_string(kOracleMaxSentences));
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_score = sequence_score(scores, std::span<const int>(perm), cfg);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double s = sequence_score(scores, std::span<const int>(perm), cfg);
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  }
  return {Ordering(std::move(best)), best_score};
}

/// Copeland ordering of the tournament induced by the matrix: for i < j the
/// edge points i -> j when (p(i,j) + 1 - p(j,i)) / 2 >= 0.5, else j -> i.
/// Nodes sort by out-degree descending, then by incoming probability mass
/// sum_j p(j,i) ascending, then by index. On an acyclic tournament this is
/// its topological order.
Ordering topo_decode(const PairScoreMatrix& matrix);

/// Decodes every matrix, in input order, on up to `jobs` threads. Errors are
/// rethrown as InputError naming the paragraph.
std::vector<Ordering> decode_corpus(const std::vector<PairScoreMatrix>& matrices, Decoder decoder,
                                    const DecodeConfig& cfg, std::size_t jobs = 1);

}  // namespace sentord::decode
