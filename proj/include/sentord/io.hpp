#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sentord/core.hpp"

namespace sentord::io {

using Json = nlohmann::json;

// Corpus: UTF-8 JSON Lines, {"id": string, "sentences": [string, ...]} in gold order.
std::vector<Paragraph> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Paragraph>& corpus);
Json to_json(const Paragraph& paragraph);
Paragraph paragraph_from_json(const Json& j);

// Shuffle records: JSON Lines, {"paragraph_id", "perm", "seed"}.
std::vector<ShuffleRecord> read_shuffles(const std::filesystem::path& path);
void write_shuffles(const std::filesystem::path& path, const std::vector<ShuffleRecord>& records);

// Score matrix: {"paragraph_id": string, "n": int, "p": [[number|null, ...], ...]},
// null on the diagonal, row-major.
Json to_json(const PairScoreMatrix& matrix);
PairScoreMatrix score_matrix_from_json(const Json& j);
void write_score_matrix(const std::filesystem::path& path, const PairScoreMatrix& matrix);
PairScoreMatrix read_score_matrix(const std::filesystem::path& path);
/// Reads one file, or every *.json file in a directory sorted by file name.
std::vector<PairScoreMatrix> read_score_matrices(const std::filesystem::path& path);
/// File name used for a paragraph's score matrix inside a directory.
std::string score_file_name(std::size_t index, const std::string& paragraph_id);

// Orderings: JSON Lines, {"paragraph_id", "positions"}.
struct NamedOrdering {
  std::string paragraph_id;
  Ordering ordering;
};
std::vector<NamedOrdering> read_orderings(const std::filesystem::path& path);
void write_orderings(const std::filesystem::path& path, const std::vector<NamedOrdering>& orderings);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace sentord::io
