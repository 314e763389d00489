// sentord: command-line pipeline for pairwise sentence ordering.
//
// Precedence for every option: command line, then ORD_<NAME> environment
// variable, then --config file, then the built-in default. Each run writes the
// effective options to <out>/manifest.cfg in the same key=value format, so
// `sentord <cmd> --config <out>/manifest.cfg` repeats it.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sentord/core.hpp"
#include "sentord/data.hpp"
#include "sentord/decode.hpp"
#include "sentord/encoders.hpp"
#include "sentord/io.hpp"
#include "sentord/metrics.hpp"
#include "sentord/parallel.hpp"
#include "sentord/random.hpp"
#include "sentord/report.hpp"
#include "sentord/train.hpp"

namespace fs = std::filesystem;
using namespace sentord;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

std::string env_name(const std::string& flag) {
  std::string out = "ORD_";
  for (char c : flag) out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key=value lines; '#' starts a comment line. Keys may use '-' or '_'.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key[0] == '-') key.erase(0, 1);
    std::replace(key.begin(), key.end(), '_', '-');
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

// Rewrites argv so config-file entries become ordinary options, skipping keys
// already given on the command line or through the environment.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string config;
  std::set<std::string> given;
  for (std::size_t k = 0; k < args.size(); ++k) {
    const auto& a = args[k];
    if (a.rfind("--", 0) != 0) continue;
    const auto eq = a.find('=');
    const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    given.insert(name);
    if (name == "config") {
      if (eq != std::string::npos) {
        config = a.substr(eq + 1);
      } else if (k + 1 < args.size()) {
        config = args[k + 1];
      }
    }
  }
  if (config.empty()) {
    if (const char* env = std::getenv("ORD_CONFIG")) config = env;
  }
  if (config.empty()) return args;
  std::vector<std::string> out = args;
  for (const auto& [key, value] : read_config_file(config)) {
    if (key == "config" || given.count(key) || std::getenv(env_name(key).c_str())) continue;
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

void write_manifest(const CLI::App& cmd, const fs::path& dir) {
  std::string text = "# sentord " + cmd.get_name() + "\n";
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) text += name + "=" + r + "\n";
    } else if (const auto d = opt->get_default_str(); !d.empty() && d != "{}") {  // "{}" is an empty list
      text += name + "=" + d + "\n";
    }
  }
  io::write_text(dir / "manifest.cfg", text);
}

void log_line(const std::string& cmd, const std::string& msg) { std::cerr << "[" << cmd << "] " << msg << "\n"; }

// ---------------------------------------------------------------------------
// Shared loading

struct Dataset {
  std::vector<Paragraph> corpus;
  std::vector<ShuffleRecord> shuffles;
};

Dataset load_dataset(const fs::path& dir) {
  const auto corpus = dir / "corpus.jsonl";
  const auto shuffles = dir / "shuffles.jsonl";
  if (!fs::exists(corpus)) throw InputError("missing corpus: '" + corpus.string() + "' does not exist");
  if (!fs::exists(shuffles)) throw InputError("missing shuffles: '" + shuffles.string() + "' does not exist");
  return {io::read_corpus(corpus), io::read_shuffles(shuffles)};
}

data::Vocab load_vocab(const fs::path& dir, const std::vector<Paragraph>& corpus) {
  const auto path = dir / "vocab.tsv";
  if (fs::exists(path)) return data::Vocab::from_tsv(io::read_text(path));
  return data::Vocab::build(corpus);
}

std::vector<data::ShuffledParagraph> select_split(std::vector<data::ShuffledParagraph> items, const std::string& split,
                                               double heldout) {
  if (split == "all") return items;
  auto parts = data::split_heldout(std::move(items), heldout);
  if (split == "heldout") return std::move(parts.heldout);
  if (split == "train") return std::move(parts.train);
  throw InputError("unknown split '" + split + "' (expected train, heldout or all)");
}

std::map<std::string, Ordering> gold_by_id(const Dataset& ds) {
  std::map<std::string, Ordering> out;
  for (const auto& r : ds.shuffles) out.emplace(r.paragraph_id, gold_ordering(r));
  return out;
}

const Ordering& gold_for(const std::map<std::string, Ordering>& gold, const std::string& id) {
  const auto it = gold.find(id);
  if (it == gold.end()) throw InputError("no shuffle record for paragraph '" + id + "'");
  return it->second;
}

void require_writable(const fs::path& dir, const std::vector<std::string>& files, bool force) {
  if (force) return;
  for (const auto& f : files) {
    if (fs::exists(dir / f)) {
      throw InputError("'" + (dir / f).string() + "' exists; pass --force to overwrite");
    }
  }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenOptions {
  std::string out;
  std::string from;
  std::string kind = "drift";
  std::size_t count = 2000;
  int min_sentences = 5;
  int max_sentences = 5;
  int min_tokens = 4;
  int max_tokens = 8;
  int bands = 6;
  int words_per_band = 16;
  double overlap = 0.1;
  int offset_range = 0;
  std::uint64_t seed = 0;
  bool force = false;
};

void run_gen_data(const GenOptions& o, const CLI::App& cmd) {
  const fs::path dir = o.out;
  require_writable(dir, {"corpus.jsonl", "shuffles.jsonl", "pairs.jsonl", "vocab.tsv"}, o.force);
  std::vector<Paragraph> corpus;
  if (!o.from.empty()) {
    corpus = io::read_corpus(o.from);
  } else {
    data::SynthConfig sc;
    sc.kind = data::parse_synth_kind(o.kind);
    sc.min_sentences = o.min_sentences;
    sc.max_sentences = o.max_sentences;
    sc.min_tokens = o.min_tokens;
    sc.max_tokens = o.max_tokens;
    sc.bands = o.bands;
    sc.words_per_band = o.words_per_band;
    sc.band_overlap = o.overlap;
    sc.offset_range = o.offset_range;
    sc.seed = derive_seed(o.seed, "corpus");
    corpus = data::gen_synthetic(sc, o.count);
  }
  const auto shuffles = data::make_shuffles(corpus, derive_seed(o.seed, "shuffles"));
  io::write_corpus(dir / "corpus.jsonl", corpus);
  io::write_shuffles(dir / "shuffles.jsonl", shuffles);
  data::write_pair_dataset(dir / "pairs.jsonl", data::make_pair_dataset(corpus, shuffles));
  io::write_text(dir / "vocab.tsv", data::Vocab::build(corpus).to_tsv());
  write_manifest(cmd, dir);
  log_line("gen-data", std::to_string(corpus.size()) + " paragraphs written to " + dir.string());
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data;
  std::string out;
  std::string family = "local";
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int ffn = 128;
  int max_len = 40;
  int embed_factor = 16;
  int global_layers = 2;
  int global_heads = 4;
  int global_ffn = 128;
  bool detach_context = false;
  double lr = 3e-4;
  double decay = 0.9;
  int epochs = 20;
  int batch = 32;
  int micro_batch = 8;
  double clip = 1.0;
  int eval_every = 0;
  double target_acc = 0.0;
  std::size_t max_steps = 0;
  double heldout = 0.1;
  int precision = 64;
  bool resume = false;
  bool force = false;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

template <typename S>
void train_with(const TrainOptions& o, const CLI::App& cmd) {
  const fs::path out = o.out;
  const auto ds = load_dataset(o.data);
  const auto vocab = load_vocab(o.data, ds.corpus);
  auto prepared = data::prepare(ds.corpus, ds.shuffles, vocab);
  const auto heldout = select_split(prepared, "heldout", o.heldout);
  const auto train_set = select_split(prepared, "train", o.heldout);

  model::ModelConfig mc;
  mc.family = model::parse_family(o.family);
  mc.vocab_size = vocab.size();
  mc.d_model = o.d_model;
  mc.n_layers = o.layers;
  mc.n_heads = o.heads;
  mc.ffn_width = o.ffn;
  mc.max_seq_len = o.max_len;
  mc.embed_factor = o.embed_factor;
  mc.global_layers = o.global_layers;
  mc.global_heads = o.global_heads;
  mc.global_ffn_width = o.global_ffn;
  mc.detach_context = o.detach_context;
  mc.seed = derive_seed(o.seed, "model");
  model::PairModel<S> m(mc);

  train::TrainConfig tc;
  tc.lr = o.lr;
  tc.decay_per_epoch = o.decay;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.micro_batch = o.micro_batch;
  tc.clip_norm = o.clip;
  tc.eval_every = o.eval_every;
  tc.target_pair_acc = o.target_acc;
  tc.max_steps = o.max_steps;
  tc.seed = derive_seed(o.seed, "train");
  tc.jobs = o.jobs;
  tc.checkpoint_dir = out;

  train::TrainOptions opts;
  opts.vocab = &vocab;
  const auto log_path = out / "metrics.jsonl";
  std::vector<nlohmann::json> kept;
  if (o.resume) {
    const auto state = out / "state.ckpt";
    if (!fs::exists(state)) throw InputError("cannot resume: '" + state.string() + "' does not exist");
    opts.resume_from = state;
    const auto info = nn::read_checkpoint(state);
    const auto step = info.header.value("step", std::size_t{0});
    if (fs::exists(log_path)) {
      for (auto& row : io::read_jsonl(log_path)) {
        if (row.value("step", std::size_t{0}) <= step) kept.push_back(std::move(row));
      }
    }
  } else {
    require_writable(out, {"model.ckpt", "state.ckpt", "metrics.jsonl"}, o.force);
  }
  fs::create_directories(out);
  write_manifest(cmd, out);
  io::write_jsonl(log_path, kept);
  std::ofstream log(log_path, std::ios::app);
  opts.on_log = [&](const train::LogRecord& r) {
    log << train::to_json(r).dump() << "\n";
    if (r.pair_acc) {
      log.flush();
      log_line("train", "epoch " + std::to_string(r.epoch) + " step " + std::to_string(r.step) + " loss " +
                            report::format_number(r.loss) + " heldout pair acc " + report::format_number(*r.pair_acc));
    }
  };
  log_line("train", model::to_string(mc.family) + ": " + std::to_string(train_set.size()) + " train / " +
                        std::to_string(heldout.size()) + " held-out paragraphs, " +
                        std::to_string(m.parameters().count()) + " parameters");
  const auto result = train::train_pairwise(m, train_set, heldout, tc, opts);
  log.close();
  model::save_model(out / "model.ckpt", m, vocab);
  nlohmann::json summary = {{"steps", result.steps},
                            {"epochs_completed", result.epochs_completed},
                            {"best_pair_acc", result.best_pair_acc},
                            {"best_step", result.best_step},
                            {"final_pair_acc", result.final_pair_acc},
                            {"reached_target", result.reached_target}};
  io::write_text(out / "train_summary.json", summary.dump(2) + "\n");
  log_line("train", "best held-out pair acc " + report::format_number(result.best_pair_acc) + " at step " +
                        std::to_string(result.best_step));
}

void run_train(const TrainOptions& o, const CLI::App& cmd) {
  if (o.precision == 64) {
    train_with<double>(o, cmd);
  } else {
    train_with<float>(o, cmd);
  }
}

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  std::string model;
  std::string data;
  std::string out;
  std::string split = "heldout";
  double heldout = 0.1;
  int precision = 64;
  std::size_t jobs = 1;
  bool force = false;
};

template <typename S>
void score_with(const ScoreOptions& o, const CLI::App& cmd) {
  data::Vocab vocab;
  const auto m = model::load_model<S>(o.model, &vocab);
  const auto ds = load_dataset(o.data);
  const auto paragraphs = select_split(data::prepare(ds.corpus, ds.shuffles, vocab), o.split, o.heldout);
  const fs::path dir = fs::path(o.out) / "scores";
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!o.force) throw InputError("'" + dir.string() + "' is not empty; pass --force to overwrite");
    fs::remove_all(dir);
  }
  const auto matrices = model::score_corpus(*m, paragraphs, o.jobs);
  for (std::size_t k = 0; k < matrices.size(); ++k) {
    io::write_score_matrix(dir / io::score_file_name(k, matrices[k].paragraph_id()), matrices[k]);
  }
  write_manifest(cmd, o.out);
  log_line("score", std::to_string(matrices.size()) + " score matrices written to " + dir.string());
}

void run_score(const ScoreOptions& o, const CLI::App& cmd) {
  if (o.precision == 64) {
    score_with<double>(o, cmd);
  } else {
    score_with<float>(o, cmd);
  }
}

// ---------------------------------------------------------------------------
// decode / oracle

struct DecodeOptions {
  std::string scores;
  std::string out;
  int strategy = 1;
  int beam = 64;
  std::string space = "prob";
  std::string decoder = "beam";
  double epsilon = 1e-12;
  std::size_t jobs = 1;
};

decode::DecodeConfig decode_config(int strategy, int beam, const std::string& space, double epsilon) {
  decode::DecodeConfig cfg;
  cfg.strategy = decode::parse_strategy(std::to_string(strategy));
  cfg.beam_width = beam;
  cfg.score_space = decode::parse_score_space(space);
  cfg.epsilon = epsilon;
  try {
    decode::validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return cfg;
}

std::vector<io::NamedOrdering> name_orderings(const std::vector<PairScoreMatrix>& matrices,
                                              std::vector<Ordering> orderings) {
  std::vector<io::NamedOrdering> out;
  for (std::size_t k = 0; k < matrices.size(); ++k) out.push_back({matrices[k].paragraph_id(), std::move(orderings[k])});
  return out;
}

void run_decode(const DecodeOptions& o, const CLI::App& cmd) {
  const auto cfg = decode_config(o.strategy, o.beam, o.space, o.epsilon);
  const auto decoder = decode::parse_decoder(o.decoder);
  const auto matrices = io::read_score_matrices(o.scores);
  const auto preds = decode::decode_corpus(matrices, decoder, cfg, o.jobs);
  const std::string suffix = decoder == decode::Decoder::topo ? "topo" : std::to_string(o.strategy);
  const auto path = fs::path(o.out) / ("orderings-" + suffix + ".jsonl");
  io::write_orderings(path, name_orderings(matrices, preds));
  write_manifest(cmd, o.out);
  log_line("decode", std::to_string(preds.size()) + " orderings written to " + path.string());
}

struct OracleOptions {
  std::string scores;
  std::string out;
  int strategy = 1;
  std::string space = "prob";
  double epsilon = 1e-12;
  std::size_t jobs = 1;
};

void run_oracle(const OracleOptions& o, const CLI::App& cmd) {
  const auto cfg = decode_config(o.strategy, 1, o.space, o.epsilon);
  const auto matrices = io::read_score_matrices(o.scores);
  std::vector<Ordering> preds(matrices.size());
  std::vector<double> scores(matrices.size());
  parallel_for(o.jobs, matrices.size(), [&](std::size_t k) {
    if (matrices[k].size() > decode::kOracleMaxSentences) {
      throw InputError("paragraph '" + matrices[k].paragraph_id() + "' has " + std::to_string(matrices[k].size()) +
                       " sentences; the exhaustive oracle handles at most " +
                       std::to_string(decode::kOracleMaxSentences));
    }
    auto r = decode::oracle_decode(matrices[k], cfg);
    preds[k] = std::move(r.ordering);
    scores[k] = r.score;
  });
  const auto path = fs::path(o.out) / ("orderings-oracle-" + std::to_string(o.strategy) + ".jsonl");
  io::write_orderings(path, name_orderings(matrices, preds));
  write_manifest(cmd, o.out);
  log_line("oracle", std::to_string(preds.size()) + " optimal orderings written to " + path.string());
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string data;
  std::string scores;
  std::vector<std::string> predictions;
  std::string out;
  std::string dataset = "dataset";
  std::string family = "local";
  std::string against = "gold";
  int beam = 64;
  std::string space = "prob";
  double epsilon = 1e-12;
  std::size_t jobs = 1;
};

// "-1" / "-2" before the extension picks the strategy column.
int strategy_of(const fs::path& p) {
  const auto stem = p.stem().string();
  if (stem.size() >= 2 && stem[stem.size() - 2] == '-' && (stem.back() == '1' || stem.back() == '2')) {
    return stem.back() - '0';
  }
  throw InputError("cannot tell the decoding strategy of '" + p.string() + "'; name it *-1.jsonl or *-2.jsonl");
}

constexpr std::size_t kOracleCheckMax = 7;

void run_eval(const EvalOptions& o, const CLI::App& cmd) {
  if (o.scores.empty() == o.predictions.empty()) throw InputError("eval: pass exactly one of --scores or --predictions");
  if (o.against != "gold" && o.against != "oracle") throw InputError("eval: --against must be gold or oracle");
  if (o.against == "oracle" && o.scores.empty()) throw InputError("eval: --against oracle needs --scores");
  model::parse_family(o.family);
  const auto gold = gold_by_id(load_dataset(o.data));
  const fs::path dir = o.out;
  report::ModelEval result{o.dataset, o.family, std::nullopt, std::nullopt};
  nlohmann::json extra = nlohmann::json::object();

  if (!o.scores.empty()) {
    const auto matrices = io::read_score_matrices(o.scores);
    std::vector<Ordering> golds;
    for (const auto& m : matrices) golds.push_back(gold_for(gold, m.paragraph_id()));
    const auto base = decode_config(1, o.beam, o.space, o.epsilon);
    auto e2e = train::evaluate_end_to_end(matrices, golds, base, o.jobs);
    io::write_orderings(dir / "orderings-1.jsonl", name_orderings(matrices, e2e.predictions1));
    io::write_orderings(dir / "orderings-2.jsonl", name_orderings(matrices, e2e.predictions2));
    if (o.against == "oracle") {
      for (int s = 1; s <= 2; ++s) {
        auto cfg = base;
        cfg.strategy = s == 1 ? decode::Strategy::adjacent : decode::Strategy::all_pairs;
        const auto& preds = s == 1 ? e2e.predictions1 : e2e.predictions2;
        std::size_t checked = 0, matched = 0;
        nlohmann::json mismatches = nlohmann::json::array();
        for (std::size_t k = 0; k < matrices.size(); ++k) {
          if (matrices[k].size() > kOracleCheckMax) continue;
          ++checked;
          const auto best = decode::oracle_decode(matrices[k], cfg);
          const double beam_score = decode::sequence_score(matrices[k], std::span<const int>(preds[k].positions()), cfg);
          if (beam_score == best.score) {
            ++matched;
          } else {
            mismatches.push_back(matrices[k].paragraph_id());
          }
        }
        extra["oracle_check"]["strategy_" + std::to_string(s)] = {
            {"checked", checked}, {"matched", matched}, {"mismatched_paragraphs", mismatches}};
        log_line("eval", "strategy " + std::to_string(s) + ": beam matches the exhaustive optimum on " +
                             std::to_string(matched) + " / " + std::to_string(checked) + " paragraphs (n <= 7)");
      }
    }
    result.strategy1 = std::move(e2e.strategy1);
    result.strategy2 = std::move(e2e.strategy2);
  } else {
    for (const auto& file : o.predictions) {
      const int s = strategy_of(file);
      std::vector<metrics::ParagraphScores> scores;
      for (const auto& p : io::read_orderings(file)) {
        scores.push_back(metrics::score_paragraph(p.paragraph_id, p.ordering, gold_for(gold, p.paragraph_id)));
      }
      auto rep = metrics::aggregate(std::move(scores));
      (s == 1 ? result.strategy1 : result.strategy2) = std::move(rep);
    }
  }

  auto j = report::to_json(result);
  for (auto& [k, v] : extra.items()) j[k] = v;
  io::write_text(dir / "eval.json", j.dump(2) + "\n");
  if (result.strategy1) io::write_text(dir / "eval-1.csv", report::per_paragraph_csv(*result.strategy1));
  if (result.strategy2) io::write_text(dir / "eval-2.csv", report::per_paragraph_csv(*result.strategy2));
  io::write_text(dir / "summary.csv", report::summary_csv({result}));
  write_manifest(cmd, dir);
  for (int s = 1; s <= 2; ++s) {
    const auto& r = s == 1 ? result.strategy1 : result.strategy2;
    if (!r) continue;
    log_line("eval", "strategy " + std::to_string(s) + ": acc " + report::format_number(r->acc_mean) + " tau " +
                         report::format_number(r->tau_mean) + " pmr " + report::format_number(r->pmr));
  }
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::vector<std::string> evals;
  std::string out;
};

void run_report(const ReportOptions& o, const CLI::App& cmd) {
  std::vector<report::ModelEval> evals;
  for (const auto& e : o.evals) {
    fs::path p = e;
    if (fs::is_directory(p)) p /= "eval.json";
    if (!fs::exists(p)) throw InputError("evaluation file '" + p.string() + "' does not exist");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_text(p));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("'" + p.string() + "': " + ex.what());
    }
    evals.push_back(report::model_eval_from_json(j));
  }
  const fs::path dir = o.out;
  io::write_text(dir / "pmr_evolution.csv", report::pmr_evolution_csv(evals));
  io::write_text(dir / "tau_evolution.csv", report::tau_evolution_csv(evals));
  io::write_text(dir / "summary.csv", report::summary_csv(evals));
  write_manifest(cmd, dir);
  log_line("report", "figure series written to " + dir.string());
}

// ---------------------------------------------------------------------------

void add_env_names(CLI::App& cmd) {
  for (CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    opt->envname(env_name(name));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise sentence ordering: synthetic data, training, decoding and evaluation."};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  const std::vector<std::string> precisions{"32", "64"};

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic corpus, shuffles, pairs and vocabulary");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--from", gen.from, "Shuffle this JSONL corpus instead of generating one");
  gen_cmd->add_option("--kind", gen.kind, "drift or cyclic")->check(CLI::IsMember({"drift", "cyclic"}));
  gen_cmd->add_option("--count", gen.count, "Paragraphs to generate");
  gen_cmd->add_option("--min-sentences", gen.min_sentences);
  gen_cmd->add_option("--max-sentences", gen.max_sentences);
  gen_cmd->add_option("--min-tokens", gen.min_tokens);
  gen_cmd->add_option("--max-tokens", gen.max_tokens);
  gen_cmd->add_option("--bands", gen.bands, "Vocabulary bands");
  gen_cmd->add_option("--words-per-band", gen.words_per_band);
  gen_cmd->add_option("--overlap", gen.overlap, "Probability a word comes from a neighbouring band");
  gen_cmd->add_option("--offset-range", gen.offset_range, "Cyclic offsets drawn from [0, range); 0 means --bands");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_flag("--force", gen.force, "Overwrite existing files");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Train a pairwise model");
  train_cmd->add_option("--data", tr.data, "Directory written by gen-data")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--family", tr.family)
      ->check(CLI::IsMember({"local", "local-shared", "ensemble", "global", "global-ensemble", "single-global"}));
  train_cmd->add_option("--d-model", tr.d_model);
  train_cmd->add_option("--layers", tr.layers);
  train_cmd->add_option("--heads", tr.heads);
  train_cmd->add_option("--ffn", tr.ffn, "Feed-forward inner width");
  train_cmd->add_option("--max-len", tr.max_len, "Longest pair encoding in tokens");
  train_cmd->add_option("--embed-factor", tr.embed_factor, "Factorised embedding width of the shared-layer encoder");
  train_cmd->add_option("--global-layers", tr.global_layers);
  train_cmd->add_option("--global-heads", tr.global_heads);
  train_cmd->add_option("--global-ffn", tr.global_ffn);
  train_cmd->add_flag("--detach-context", tr.detach_context, "Stop context gradients at the pair encoder");
  train_cmd->add_option("--lr", tr.lr);
  train_cmd->add_option("--decay", tr.decay, "Multiplicative learning-rate decay per epoch");
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch", tr.batch, "Pairs per optimizer step");
  train_cmd->add_option("--micro-batch", tr.micro_batch);
  train_cmd->add_option("--clip", tr.clip, "Global gradient-norm bound (0 disables)");
  train_cmd->add_option("--eval-every", tr.eval_every, "Evaluate every N steps as well as at epoch ends");
  train_cmd->add_option("--target-acc", tr.target_acc, "Stop once held-out pair accuracy reaches this");
  train_cmd->add_option("--max-steps", tr.max_steps);
  train_cmd->add_option("--heldout", tr.heldout, "Fraction of paragraphs held out (the last ones)");
  train_cmd->add_option("--precision", tr.precision)->check(CLI::IsMember({32, 64}));
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/state.ckpt");
  train_cmd->add_flag("--force", tr.force, "Overwrite an existing run");
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--jobs", tr.jobs);

  ScoreOptions sc;
  auto* score_cmd = app.add_subcommand("score", "Write pairwise score matrices for a corpus");
  score_cmd->add_option("--model", sc.model, "Model checkpoint")->required();
  score_cmd->add_option("--data", sc.data, "Directory written by gen-data")->required();
  score_cmd->add_option("--out", sc.out, "Output directory")->required();
  score_cmd->add_option("--split", sc.split, "train, heldout or all")->check(CLI::IsMember({"train", "heldout", "all"}));
  score_cmd->add_option("--heldout", sc.heldout);
  score_cmd->add_option("--precision", sc.precision)->check(CLI::IsMember({32, 64}));
  score_cmd->add_option("--jobs", sc.jobs);
  score_cmd->add_flag("--force", sc.force);

  DecodeOptions de;
  auto* decode_cmd = app.add_subcommand("decode", "Decode score matrices into orderings");
  decode_cmd->add_option("--scores", de.scores, "Score matrix file or directory")->required();
  decode_cmd->add_option("--out", de.out, "Output directory")->required();
  decode_cmd->add_option("--strategy", de.strategy, "1: adjacent pairs, 2: all pairs")->check(CLI::IsMember({1, 2}));
  decode_cmd->add_option("--beam", de.beam, "Beam width");
  decode_cmd->add_option("--space", de.space, "prob or log")->check(CLI::IsMember({"prob", "log"}));
  decode_cmd->add_option("--decoder", de.decoder, "beam or topo")->check(CLI::IsMember({"beam", "topo"}));
  decode_cmd->add_option("--epsilon", de.epsilon, "Log-space clamp");
  decode_cmd->add_option("--jobs", de.jobs);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Compute Acc, tau, PMR and pairwise accuracy");
  eval_cmd->add_option("--data", ev.data, "Directory holding corpus.jsonl and shuffles.jsonl")->required();
  eval_cmd->add_option("--scores", ev.scores, "Score matrices; decoded with both strategies");
  eval_cmd->add_option("--predictions", ev.predictions, "Orderings files named *-1.jsonl / *-2.jsonl");
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset label for reports");
  eval_cmd->add_option("--family", ev.family, "Model family label for reports");
  eval_cmd->add_option("--against", ev.against, "gold, or oracle to also check beam optimality for n <= 7")
      ->check(CLI::IsMember({"gold", "oracle"}));
  eval_cmd->add_option("--beam", ev.beam);
  eval_cmd->add_option("--space", ev.space)->check(CLI::IsMember({"prob", "log"}));
  eval_cmd->add_option("--epsilon", ev.epsilon);
  eval_cmd->add_option("--jobs", ev.jobs);

  OracleOptions orc;
  auto* oracle_cmd = app.add_subcommand("oracle", "Exhaustively decode score matrices (n <= 9)");
  oracle_cmd->add_option("--scores", orc.scores, "Score matrix file or directory")->required();
  oracle_cmd->add_option("--out", orc.out, "Output directory")->required();
  oracle_cmd->add_option("--strategy", orc.strategy)->check(CLI::IsMember({1, 2}));
  oracle_cmd->add_option("--space", orc.space)->check(CLI::IsMember({"prob", "log"}));
  oracle_cmd->add_option("--epsilon", orc.epsilon);
  oracle_cmd->add_option("--jobs", orc.jobs);

  ReportOptions rep;
  auto* report_cmd = app.add_subcommand("report", "Emit PMR and tau evolution series across the six families");
  report_cmd->add_option("--evals", rep.evals, "eval.json files or directories containing one")->required();
  report_cmd->add_option("--out", rep.out, "Output directory")->required();

  for (auto* cmd : {gen_cmd, train_cmd, score_cmd, decode_cmd, eval_cmd, oracle_cmd, report_cmd}) {
    cmd->add_option("--config", "key=value file; flags and ORD_* variables take precedence");
    add_env_names(*cmd);
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen_cmd) run_gen_data(gen, *gen_cmd);
    if (*train_cmd) run_train(tr, *train_cmd);
    if (*score_cmd) run_score(sc, *score_cmd);
    if (*decode_cmd) run_decode(de, *decode_cmd);
    if (*eval_cmd) run_eval(ev, *eval_cmd);
    if (*oracle_cmd) run_oracle(orc, *oracle_cmd);
    if (*report_cmd) run_report(rep, *report_cmd);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return 0;
}
