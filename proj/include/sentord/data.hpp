#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "sentord/core.hpp"

namespace sentord::data {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kReservedTokens = 4;

std::vector<std::string_view> whitespace_tokens(std::string_view sentence);

/// Token <-> id map. Ids 0..3 are PAD, UNK, CLS, SEP; the rest are assigned
/// by descending corpus frequency, ties by token text.
class Vocab {
 public:
  Vocab();

  /// Keeps at most `cap` non-reserved tokens.
  static Vocab build(const std::vector<Paragraph>& corpus,
                     std::size_t cap = std::numeric_limits<std::size_t>::max());

  std::size_t size() const { return tokens_.size(); }
  /// UNK for unknown tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::vector<int> encode(std::string_view sentence) const;

  /// "token<TAB>id" lines in id order.
  std::string to_tsv() const;
  static Vocab from_tsv(const std::string& text);
  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void push(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Half-open token range [begin, begin + length) inside an encoded sequence.
struct Span {
  int begin = 0;
  int length = 0;
};

/// "[CLS] s_i [SEP] s_j [SEP]": segment 0 covers CLS, s_i and the first SEP,
/// segment 1 covers s_j and the second SEP. Single-sentence encodings are
/// "[CLS] s [SEP]" with an empty second span.
struct PairEncoding {
  std::vector<int> ids;
  std::vector<int> segments;
  Span first;
  Span second;

  std::size_t size() const { return ids.size(); }
};

inline constexpr std::size_t kMinPairLength = 5;

/// Truncates the longer sentence (the second on ties) one token at a time
/// until the encoding fits max_len. Throws std::invalid_argument when
/// max_len < 5 or a sentence has no tokens.
PairEncoding tokenize_pair(const std::vector<int>& first, const std::vector<int>& second, std::size_t max_len);
PairEncoding tokenize_pair(const Vocab& vocab, std::string_view first, std::string_view second,
                           std::size_t max_len);
PairEncoding tokenize_single(const std::vector<int>& sentence, std::size_t max_len);

// ---------------------------------------------------------------------------
// Synthetic corpora

enum class SynthKind { drift, cyclic };

std::string to_string(SynthKind k);
SynthKind parse_synth_kind(const std::string& s);

/// drift: sentence k draws its words from band k, so any pair's order is
/// readable from the pair alone. cyclic: each paragraph draws a hidden offset
/// o in [0, offset_range) and sentence k draws from band (o + k) mod bands;
/// with bands > n the missing bands reveal o, but only the whole paragraph
/// shows them. Every word leaves its band for a neighbouring one with
/// probability band_overlap.
struct SynthConfig {
  SynthKind kind = SynthKind::drift;
  int min_sentences = 5;
  int max_sentences = 5;
  int min_tokens = 4;
  int max_tokens = 8;
  int bands = 6;
  int words_per_band = 16;
  double band_overlap = 0.1;
  int offset_range = 0;  ///< cyclic only; 0 means `bands`
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

/// Word `index` of band `band`, spelled "b<band>w<index>".
std::string synthetic_word(int band, int index);

std::vector<Paragraph> gen_synthetic(const SynthConfig& cfg, std::size_t count);

// ---------------------------------------------------------------------------
// Shuffles and pair datasets

/// One shuffle per paragraph, seeded from derive_seed(seed, "shuffle:" + id).
std::vector<ShuffleRecord> make_shuffles(const std::vector<Paragraph>& corpus, std::uint64_t seed);

struct PairExample {
  std::string pid;
  int i = 0;      ///< shuffled index of the first sentence
  int j = 0;      ///< shuffled index of the second sentence
  int label = 0;  ///< 1 when i precedes j in gold order
};

/// Every ordered pair (i, j), i != j, of every paragraph.
std::vector<PairExample> make_pair_dataset(const std::vector<Paragraph>& corpus,
                                           const std::vector<ShuffleRecord>& shuffles);
void write_pair_dataset(const std::filesystem::path& path, const std::vector<PairExample>& pairs);
std::vector<PairExample> read_pair_dataset(const std::filesystem::path& path);

/// A paragraph as the models see it: token ids in shuffled order plus the
/// gold ordering over shuffled indices.
struct ShuffledParagraph {
  std::string id;
  std::vector<std::vector<int>> sentences;
  Ordering gold;

  std::size_t size() const { return sentences.size(); }
};

/// Pairs each paragraph with its shuffle record by id. Throws InputError when
/// a record is missing or disagrees with the paragraph length.
std::vector<ShuffledParagraph> prepare(const std::vector<Paragraph>& corpus,
                                       const std::vector<ShuffleRecord>& shuffles, const Vocab& vocab);

/// Deterministic split: the last `heldout_fraction` of paragraphs (at least
/// one when there are two or more) are held out.
struct Split {
  std::vector<ShuffledParagraph> train;
  std::vector<ShuffledParagraph> heldout;
};
Split split_heldout(std::vector<ShuffledParagraph> paragraphs, double heldout_fraction);

}  // namespace sentord::data
