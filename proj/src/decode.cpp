#include "sentord/decode.hpp"

#include "sentord/parallel.hpp"

namespace sentord::decode {

void validate(const DecodeConfig& cfg) {
  if (cfg.beam_width < 1) throw std::invalid_argument("beam width must be at least 1");
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("log-space epsilon must be positive");
}

std::string to_string(Strategy s) { return s == Strategy::adjacent ? "1" : "2"; }

std::string to_string(ScoreSpace s) { return s == ScoreSpace::log ? "log" : "probability"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "1" || s == "adjacent") return Strategy::adjacent;
  if (s == "2" || s == "all-pairs") return Strategy::all_pairs;
  throw InputError("unknown decoding strategy '" + s + "' (expected 1 or 2)");
}

ScoreSpace parse_score_space(const std::string& s) {
  if (s == "probability" || s == "prob") return ScoreSpace::probability;
  if (s == "log") return ScoreSpace::log;
  throw InputError("unknown score space '" + s + "' (expected probability or log)");
}

Decoder parse_decoder(const std::string& s) {
  if (s == "beam") return Decoder::beam;
  if (s == "topo") return Decoder::topo;
  throw InputError("unknown decoder '" + s + "' (expected beam or topo)");
}

Ordering beam_decode(const PairScoreMatrix& matrix, const DecodeConfig& cfg) {
  return beam_search(matrix, cfg).ordering;
}

Ordering topo_decode(const PairScoreMatrix& matrix) {
  const std::size_t n = matrix.size();
  if (n == 0) throw std::invalid_argument("topo_decode: empty score matrix");
  std::vector<int> wins(n, 0);
  std::vector<double> incoming(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = 0.5 * (matrix(i, j) + (1.0 - matrix(j, i)));
      ++wins[w >= 0.5 ? i : j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) incoming[i] += matrix(j, i);
    }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ua = static_cast<std::size_t>(a);
    const auto ub = static_cast<std::size_t>(b);
    if (wins[ua] != wins[ub]) return wins[ua] > wins[ub];
    if (incoming[ua] != incoming[ub]) return incoming[ua] < incoming[ub];
    return a < b;
  });
  return Ordering(std::move(order));
}

std::vector<Ordering> decode_corpus(const std::vector<PairScoreMatrix>& matrices, Decoder decoder,
                                    const DecodeConfig& cfg, std::size_t jobs) {
  validate(cfg);
  std::vector<Ordering> out(matrices.size());
  parallel_for(jobs, matrices.size(), [&](std::size_t k) {
    const auto& m = matrices[k];
    try {
      validate(m);
      out[k] = decoder == Decoder::topo ? topo_decode(m) : beam_decode(m, cfg);
    } catch (const std::exception& e) {
      throw InputError("paragraph '" + m.paragraph_id() + "': " + e.what());
    }
  });
  return out;
}

}  // namespace sentord::decode
