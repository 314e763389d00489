#include "sentord/data.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "sentord/io.hpp"
#include "sentord/random.hpp"

namespace sentord::data {

std::vector<std::string_view> whitespace_tokens(std::string_view sentence) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < sentence.size()) {
    while (i < sentence.size() && is_space(sentence[i])) ++i;
    const std::size_t start = i;
    while (i < sentence.size() && !is_space(sentence[i])) ++i;
    if (i > start) out.push_back(sentence.substr(start, i - start));
  }
  return out;
}

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) push(t);
}

void Vocab::push(std::string token) {
  const auto id = static_cast<int>(tokens_.size());
  if (!ids_.emplace(token, id).second) throw InputError("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(std::move(token));
}

Vocab Vocab::build(const std::vector<Paragraph>& corpus, std::size_t cap) {
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto& p : corpus) {
    for (const auto& s : p.sentences) {
      for (auto tok : whitespace_tokens(s)) {
        auto it = counts.find(tok);
        if (it == counts.end()) {
          counts.emplace(std::string(tok), 1);
        } else {
          ++it->second;
        }
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (std::size_t k = 0; k < ranked.size() && k < cap; ++k) {
    if (v.ids_.count(ranked[k].first)) continue;
    v.push(ranked[k].first);
  }
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(std::string_view sentence) const {
  std::vector<int> out;
  for (auto tok : whitespace_tokens(sentence)) out.push_back(id(tok));
  return out;
}

std::string Vocab::to_tsv() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += tokens_[i] + "\t" + std::to_string(i) + "\n";
  return out;
}

Vocab Vocab::from_tsv(const std::string& text) {
  Vocab v;
  std::istringstream in(text);
  std::string line;
  int expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw InputError("vocab line without a tab: '" + line + "'");
    const auto token = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    if (id != expected) throw InputError("vocab ids must be dense and sorted");
    if (id >= kReservedTokens) v.push(token);
    ++expected;
  }
  return v;
}

nlohmann::json Vocab::to_json() const {
  return nlohmann::json(std::vector<std::string>(tokens_.begin() + kReservedTokens, tokens_.end()));
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  for (const auto& t : j) v.push(t.get<std::string>());
  return v;
}

// ---------------------------------------------------------------------------

PairEncoding tokenize_pair(const std::vector<int>& first, const std::vector<int>& second, std::size_t max_len) {
  if (max_len < kMinPairLength) {
    throw std::invalid_argument("tokenize_pair: max_len " + std::to_string(max_len) + " cannot hold two sentences");
  }
  if (first.empty() || second.empty()) throw std::invalid_argument("tokenize_pair: empty sentence");
  std::size_t a = first.size();
  std::size_t b = second.size();
  while (a + b + 3 > max_len) {
    if (a > b) {
      --a;
    } else {
      --b;
    }
  }
  PairEncoding enc;
  enc.ids.reserve(a + b + 3);
  enc.ids.push_back(kCls);
  enc.ids.insert(enc.ids.end(), first.begin(), first.begin() + static_cast<std::ptrdiff_t>(a));
  enc.ids.push_back(kSep);
  enc.ids.insert(enc.ids.end(), second.begin(), second.begin() + static_cast<std::ptrdiff_t>(b));
  enc.ids.push_back(kSep);
  enc.segments.assign(a + 2, 0);
  enc.segments.resize(a + b + 3, 1);
  enc.first = {1, static_cast<int>(a)};
  enc.second = {static_cast<int>(a) + 2, static_cast<int>(b)};
  return enc;
}

PairEncoding tokenize_pair(const Vocab& vocab, std::string_view first, std::string_view second,
                           std::size_t max_len) {
  return tokenize_pair(vocab.encode(first), vocab.encode(second), max_len);
}

PairEncoding tokenize_single(const std::vector<int>& sentence, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("tokenize_single: max_len too small");
  if (sentence.empty()) throw std::invalid_argument("tokenize_single: empty sentence");
  const std::size_t a = std::min(sentence.size(), max_len - 2);
  PairEncoding enc;
  enc.ids.push_back(kCls);
  enc.ids.insert(enc.ids.end(), sentence.begin(), sentence.begin() + static_cast<std::ptrdiff_t>(a));
  enc.ids.push_back(kSep);
  enc.segments.assign(a + 2, 0);
  enc.first = {1, static_cast<int>(a)};
  enc.second = {static_cast<int>(a) + 2, 0};
  return enc;
}

// ---------------------------------------------------------------------------

std::string to_string(SynthKind k) { return k == SynthKind::drift ? "drift" : "cyclic"; }

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "drift") return SynthKind::drift;
  if (s == "cyclic") return SynthKind::cyclic;
  throw InputError("unknown synthetic corpus kind '" + s + "' (expected drift or cyclic)");
}

void validate(const SynthConfig& cfg) {
  if (cfg.min_sentences < 1 || cfg.max_sentences < cfg.min_sentences) {
    throw InputError("synthetic corpus: empty sentence-count range");
  }
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens) {
    throw InputError("synthetic corpus: empty tokens-per-sentence range");
  }
  if (cfg.words_per_band < 1) throw InputError("synthetic corpus: words_per_band must be positive");
  if (!(cfg.band_overlap >= 0.0 && cfg.band_overlap < 1.0)) {
    throw InputError("synthetic corpus: band_overlap must lie in [0, 1)");
  }
  if (cfg.bands < 1) throw InputError("synthetic corpus: need at least one band");
  if (cfg.kind == SynthKind::drift && cfg.bands < cfg.max_sentences) {
    throw InputError("synthetic corpus: drift needs at least as many bands (" + std::to_string(cfg.bands) +
                     ") as sentences (" + std::to_string(cfg.max_sentences) + ")");
  }
  if (cfg.kind == SynthKind::cyclic && (cfg.offset_range < 0 || cfg.offset_range > cfg.bands)) {
    throw InputError("synthetic corpus: offset_range must lie in [0, bands]");
  }
}

std::string synthetic_word(int band, int index) {
  return "b" + std::to_string(band) + "w" + std::to_string(index);
}

std::vector<Paragraph> gen_synthetic(const SynthConfig& cfg, std::size_t count) {
  validate(cfg);
  Rng rng(derive_seed(cfg.seed, "synthetic:" + to_string(cfg.kind)));
  const int offsets = cfg.offset_range == 0 ? cfg.bands : cfg.offset_range;
  auto draw = [&](int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
  };
  auto neighbour = [&](int band) {
    const bool up = uniform_index(rng, 2) == 1;
    if (cfg.kind == SynthKind::cyclic) return (band + (up ? 1 : cfg.bands - 1)) % cfg.bands;
    if (cfg.bands == 1) return band;
    if (band == 0) return 1;
    if (band == cfg.bands - 1) return band - 1;
    return up ? band + 1 : band - 1;
  };

  std::vector<Paragraph> corpus;
  corpus.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    Paragraph para;
    para.id = to_string(cfg.kind) + "-" + std::to_string(p);
    const int n = draw(cfg.min_sentences, cfg.max_sentences);
    const int offset = cfg.kind == SynthKind::cyclic ? draw(0, offsets - 1) : 0;
    for (int k = 0; k < n; ++k) {
      const int band = (offset + k) % cfg.bands;
      const int len = draw(cfg.min_tokens, cfg.max_tokens);
      std::string sentence;
      for (int w = 0; w < len; ++w) {
        int b = band;
        if (cfg.band_overlap > 0.0 && uniform_unit(rng) < cfg.band_overlap) b = neighbour(band);
        if (w > 0) sentence += ' ';
        sentence += synthetic_word(b, draw(0, cfg.words_per_band - 1));
      }
      para.sentences.push_back(std::move(sentence));
    }
    corpus.push_back(std::move(para));
  }
  return corpus;
}

// ---------------------------------------------------------------------------

std::vector<ShuffleRecord> make_shuffles(const std::vector<Paragraph>& corpus, std::uint64_t seed) {
  std::vector<ShuffleRecord> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) out.push_back(shuffle(p, derive_seed(seed, "shuffle:" + p.id)).second);
  return out;
}

namespace {

std::map<std::string, const ShuffleRecord*> index_shuffles(const std::vector<ShuffleRecord>& shuffles) {
  std::map<std::string, const ShuffleRecord*> by_id;
  for (const auto& r : shuffles) by_id[r.paragraph_id] = &r;
  return by_id;
}

const ShuffleRecord& lookup(const std::map<std::string, const ShuffleRecord*>& by_id, const Paragraph& p) {
  auto it = by_id.find(p.id);
  if (it == by_id.end()) throw InputError("no shuffle record for paragraph '" + p.id + "'");
  if (it->second->perm.size() != p.size()) {
    throw InputError("shuffle record for '" + p.id + "' has the wrong length");
  }
  return *it->second;
}

}  // namespace

std::vector<PairExample> make_pair_dataset(const std::vector<Paragraph>& corpus,
                                           const std::vector<ShuffleRecord>& shuffles) {
  const auto by_id = index_shuffles(shuffles);
  std::vector<PairExample> out;
  for (const auto& p : corpus) {
    const auto& rec = lookup(by_id, p);
    const int n = static_cast<int>(p.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        out.push_back({p.id, i, j, rec.perm[static_cast<std::size_t>(i)] < rec.perm[static_cast<std::size_t>(j)] ? 1 : 0});
      }
    }
  }
  return out;
}

void write_pair_dataset(const std::filesystem::path& path, const std::vector<PairExample>& pairs) {
  std::vector<nlohmann::json> rows;
  rows.reserve(pairs.size());
  for (const auto& e : pairs) rows.push_back({{"pid", e.pid}, {"i", e.i}, {"j", e.j}, {"label", e.label}});
  io::write_jsonl(path, rows);
}

std::vector<PairExample> read_pair_dataset(const std::filesystem::path& path) {
  std::vector<PairExample> out;
  for (const auto& row : io::read_jsonl(path)) {
    try {
      out.push_back({row.at("pid").get<std::string>(), row.at("i").get<int>(), row.at("j").get<int>(),
                     row.at("label").get<int>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("malformed pair example: ") + e.what());
    }
  }
  return out;
}

std::vector<ShuffledParagraph> prepare(const std::vector<Paragraph>& corpus,
                                       const std::vector<ShuffleRecord>& shuffles, const Vocab& vocab) {
  const auto by_id = index_shuffles(shuffles);
  std::vector<ShuffledParagraph> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus) {
    validate(p);
    const auto& rec = lookup(by_id, p);
    ShuffledParagraph sp;
    sp.id = p.id;
    for (int g : rec.perm) sp.sentences.push_back(vocab.encode(p.sentences[static_cast<std::size_t>(g)]));
    sp.gold = gold_ordering(rec);
    out.push_back(std::move(sp));
  }
  return out;
}

Split split_heldout(std::vector<ShuffledParagraph> paragraphs, double heldout_fraction) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    throw InputError("held-out fraction must lie in [0, 1)");
  }
  auto held = static_cast<std::size_t>(heldout_fraction * static_cast<double>(paragraphs.size()) + 0.5);
  if (heldout_fraction > 0.0 && held == 0 && paragraphs.size() >= 2) held = 1;
  Split s;
  const std::size_t cut = paragraphs.size() - held;
  s.train.assign(std::make_move_iterator(paragraphs.begin()),
                 std::make_move_iterator(paragraphs.begin() + static_cast<std::ptrdiff_t>(cut)));
  s.heldout.assign(std::make_move_iterator(paragraphs.begin() + static_cast<std::ptrdiff_t>(cut)),
                   std::make_move_iterator(paragraphs.end()));
  return s;
}

}  // namespace sentord::data
