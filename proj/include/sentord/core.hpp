#pragma once

#include <cassert>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace sentord {

/// Bad user input: malformed files, invalid flags, violated preconditions on
/// data. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A paragraph in gold order.
struct Paragraph {
  std::string id;
  std::vector<std::string> sentences;

  std::size_t size() const { return sentences.size(); }
};

/// Throws InputError unless the paragraph has at least one sentence and no
/// sentence is blank.
void validate(const Paragraph& paragraph);

/// Shuffled index k holds the sentence at gold index perm[k].
struct ShuffleRecord {
  std::string paragraph_id;
  std::vector<int> perm;
  std::uint64_t seed = 0;
};

/// A permutation of {0..n-1}; positions[k] is the shuffled index of the
/// sentence predicted at rank k. Construction rejects non-bijections.
class Ordering {
 public:
  Ordering() = default;
  explicit Ordering(std::vector<int> positions);

  static Ordering identity(std::size_t n);

  std::size_t size() const { return positions_.size(); }
  int operator[](std::size_t rank) const { return positions_[rank]; }
  const std::vector<int>& positions() const { return positions_; }

  /// rank_of()[i] is the rank at which shuffled sentence i is placed.
  std::vector<int> rank_of() const;

  friend bool operator==(const Ordering&, const Ordering&) = default;

 private:
  std::vector<int> positions_;
};

bool is_permutation_of_iota(std::span<const int> values);

/// p(i, j) = probability that sentence i precedes sentence j. The diagonal is
/// undefined: it holds NaN and reading it is a programming error.
class PairScoreMatrix {
 public:
  PairScoreMatrix() = default;
  PairScoreMatrix(std::string paragraph_id, std::size_t n);
  /// Takes the off-diagonal entries of `p`; the diagonal is overwritten.
  PairScoreMatrix(std::string paragraph_id, Eigen::MatrixXd p);

  const std::string& paragraph_id() const { return paragraph_id_; }
  std::size_t size() const { return static_cast<std::size_t>(p_.rows()); }

  double operator()(std::size_t i, std::size_t j) const {
    assert(i != j && "diagonal of a pair score matrix is undefined");
    return p_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  void set(std::size_t i, std::size_t j, double value);

  /// Raw storage, NaN diagonal included.
  const Eigen::MatrixXd& raw() const { return p_; }

  /// Matrix with p(i,j) = 1 when i precedes j in `gold`, else 0.
  static PairScoreMatrix noise_free(std::string paragraph_id, const Ordering& gold);

 private:
  std::string paragraph_id_;
  Eigen::MatrixXd p_;
};

/// Throws InputError if any off-diagonal entry is outside [0, 1] or not finite.
void validate(const PairScoreMatrix& matrix);

/// Fisher-Yates shuffle of the paragraph's sentences seeded by `seed`.
std::pair<std::vector<std::string>, ShuffleRecord> shuffle(const Paragraph& paragraph,
                                                           std::uint64_t seed);

/// The ordering that puts shuffled sentences back in gold order.
Ordering gold_ordering(const ShuffleRecord& record);

/// Applies an ordering to a list of shuffled items.
template <typename T>
std::vector<T> apply(const Ordering& ordering, const std::vector<T>& shuffled) {
  if (ordering.size() != shuffled.size()) {
    throw std::invalid_argument("apply: ordering and list sizes differ");
  }
  std::vector<T> out;
  out.reserve(shuffled.size());
  for (int k : ordering.positions()) out.push_back(shuffled[static_cast<std::size_t>(k)]);
  return out;
}

}  // namespace sentord
