#include "sentord/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "sentord/random.hpp"

namespace sentord {

namespace {

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

void validate(const Paragraph& paragraph) {
  if (paragraph.sentences.empty()) {
    throw InputError("paragraph '" + paragraph.id + "' has no sentences");
  }
  for (std::size_t k = 0; k < paragraph.sentences.size(); ++k) {
    if (is_blank(paragraph.sentences[k])) {
      throw InputError("paragraph '" + paragraph.id + "': sentence " + std::to_string(k) +
                       " is empty");
    }
  }
}

bool is_permutation_of_iota(std::span<const int> values) {
  std::vector<char> seen(values.size(), 0);
  for (int v : values) {
    if (v < 0 || static_cast<std::size_t>(v) >= values.size() || seen[static_cast<std::size_t>(v)]) {
      return false;
    }
    seen[static_cast<std::size_t>(v)] = 1;
  }
  return true;
}

Ordering::Ordering(std::vector<int> positions) : positions_(std::move(positions)) {
  if (!is_permutation_of_iota(positions_)) {
    throw std::invalid_argument("Ordering: positions are not a permutation of 0..n-1");
  }
}

Ordering Ordering::identity(std::size_t n) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  return Ordering(std::move(p));
}

std::vector<int> Ordering::rank_of() const {
  std::vector<int> rank(positions_.size());
  for (std::size_t r = 0; r < positions_.size(); ++r) {
    rank[static_cast<std::size_t>(positions_[r])] = static_cast<int>(r);
  }
  return rank;
}

PairScoreMatrix::PairScoreMatrix(std::string paragraph_id, std::size_t n)
    : paragraph_id_(std::move(paragraph_id)),
      p_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))) {
  p_.diagonal().setConstant(std::numeric_limits<double>::quiet_NaN());
}

PairScoreMatrix::PairScoreMatrix(std::string paragraph_id, Eigen::MatrixXd p)
    : paragraph_id_(std::move(paragraph_id)), p_(std::move(p)) {
  if (p_.rows() != p_.cols()) throw InputError("pair score matrix must be square");
  p_.diagonal().setConstant(std::numeric_limits<double>::quiet_NaN());
}

void PairScoreMatrix::set(std::size_t i, std::size_t j, double value) {
  if (i == j) throw std::invalid_argument("PairScoreMatrix::set on the diagonal");
  p_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
}

PairScoreMatrix PairScoreMatrix::noise_free(std::string paragraph_id, const Ordering& gold) {
  const auto rank = gold.rank_of();
  PairScoreMatrix m(std::move(paragraph_id), gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t j = 0; j < gold.size(); ++j) {
      if (i != j) m.set(i, j, rank[i] < rank[j] ? 1.0 : 0.0);
    }
  }
  return m;
}

void validate(const PairScoreMatrix& matrix) {
  const auto n = matrix.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = matrix(i, j);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw InputError("score matrix '" + matrix.paragraph_id() + "': entry (" +
                         std::to_string(i) + "," + std::to_string(j) + ") outside [0,1]");
      }
    }
  }
}

std::pair<std::vector<std::string>, ShuffleRecord> shuffle(const Paragraph& paragraph,
                                                           std::uint64_t seed) {
  validate(paragraph);
  ShuffleRecord record{paragraph.id, std::vector<int>(paragraph.size()), seed};
  std::iota(record.perm.begin(), record.perm.end(), 0);
  Rng rng(seed);
  fisher_yates(record.perm, rng);
  std::vector<std::string> shuffled;
  shuffled.reserve(paragraph.size());
  for (int g : record.perm) shuffled.push_back(paragraph.sentences[static_cast<std::size_t>(g)]);
  return {std::move(shuffled), std::move(record)};
}

Ordering gold_ordering(const ShuffleRecord& record) {
  if (!is_permutation_of_iota(record.perm)) {
    throw InputError("shuffle record '" + record.paragraph_id + "' is not a permutation");
  }
  std::vector<int> positions(record.perm.size());
  for (std::size_t k = 0; k < record.perm.size(); ++k) {
    positions[static_cast<std::size_t>(record.perm[k])] = static_cast<int>(k);
  }
  return Ordering(std::move(positions));
}

}  // namespace sentord
