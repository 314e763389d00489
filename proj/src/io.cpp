#include "sentord/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sentord::io {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::vector<Json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& rows) {
  std::string text;
  for (const auto& row : rows) {
    text += row.dump();
    text += '\n';
  }
  write_text(path, text);
}

Json to_json(const Paragraph& paragraph) {
  return Json{{"id", paragraph.id}, {"sentences", paragraph.sentences}};
}

Paragraph paragraph_from_json(const Json& j) {
  try {
    Paragraph p{j.at("id").get<std::string>(), j.at("sentences").get<std::vector<std::string>>()};
    validate(p);
    return p;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed paragraph: ") + e.what());
  }
}

std::vector<Paragraph> read_corpus(const fs::path& path) {
  std::vector<Paragraph> corpus;
  for (const auto& row : read_jsonl(path)) corpus.push_back(paragraph_from_json(row));
  std::vector<std::string> ids;
  for (const auto& p : corpus) ids.push_back(p.id);
  std::sort(ids.begin(), ids.end());
  if (auto dup = std::adjacent_find(ids.begin(), ids.end()); dup != ids.end()) {
    throw InputError("duplicate paragraph id '" + *dup + "' in " + path.string());
  }
  return corpus;
}

void write_corpus(const fs::path& path, const std::vector<Paragraph>& corpus) {
  std::vector<Json> rows;
  rows.reserve(corpus.size());
  for (const auto& p : corpus) rows.push_back(to_json(p));
  write_jsonl(path, rows);
}

std::vector<ShuffleRecord> read_shuffles(const fs::path& path) {
  std::vector<ShuffleRecord> out;
  for (const auto& row : read_jsonl(path)) {
    try {
      ShuffleRecord r{row.at("paragraph_id").get<std::string>(), row.at("perm").get<std::vector<int>>(),
                      row.at("seed").get<std::uint64_t>()};
      if (!is_permutation_of_iota(r.perm)) {
        throw InputError("shuffle record '" + r.paragraph_id + "' is not a permutation");
      }
      out.push_back(std::move(r));
    } catch (const Json::exception& e) {
      throw InputError(std::string("malformed shuffle record: ") + e.what());
    }
  }
  return out;
}

void write_shuffles(const fs::path& path, const std::vector<ShuffleRecord>& records) {
  std::vector<Json> rows;
  for (const auto& r : records) {
    rows.push_back(Json{{"paragraph_id", r.paragraph_id}, {"perm", r.perm}, {"seed", r.seed}});
  }
  write_jsonl(path, rows);
}

Json to_json(const PairScoreMatrix& matrix) {
  const auto n = matrix.size();
  Json rows = Json::array();
  for (std::size_t i = 0; i < n; ++i) {
    Json row = Json::array();
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        row.push_back(nullptr);
      } else {
        row.push_back(matrix(i, j));
      }
    }
    rows.push_back(std::move(row));
  }
  return Json{{"paragraph_id", matrix.paragraph_id()}, {"n", n}, {"p", std::move(rows)}};
}

PairScoreMatrix score_matrix_from_json(const Json& j) {
  try {
    const auto id = j.at("paragraph_id").get<std::string>();
    const auto n = j.at("n").get<std::size_t>();
    const auto& rows = j.at("p");
    if (!rows.is_array() || rows.size() != n) {
      throw InputError("score matrix '" + id + "': expected " + std::to_string(n) + " rows");
    }
    PairScoreMatrix m(id, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = rows[i];
      if (!row.is_array() || row.size() != n) {
        throw InputError("score matrix '" + id + "': row " + std::to_string(i) + " has wrong length");
      }
      for (std::size_t k = 0; k < n; ++k) {
        if (i == k) {
          if (!row[k].is_null()) throw InputError("score matrix '" + id + "': diagonal must be null");
          continue;
        }
        if (!row[k].is_number()) {
          throw InputError("score matrix '" + id + "': entry (" + std::to_string(i) + "," +
                           std::to_string(k) + ") is not a number");
        }
        m.set(i, k, row[k].get<double>());
      }
    }
    validate(m);
    return m;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed score matrix: ") + e.what());
  }
}

void write_score_matrix(const fs::path& path, const PairScoreMatrix& matrix) {
  write_text(path, to_json(matrix).dump() + "\n");
}

PairScoreMatrix read_score_matrix(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  try {
    return score_matrix_from_json(j);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<PairScoreMatrix> read_score_matrices(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("no such file or directory: '" + path.string() + "'");
  if (!fs::is_directory(path)) return {read_score_matrix(path)};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PairScoreMatrix> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_score_matrix(f));
  return out;
}

std::string score_file_name(std::size_t index, const std::string& paragraph_id) {
  std::string safe;
  for (char c : paragraph_id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    safe += ok ? c : '_';
  }
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%06zu_", index);
  return prefix + safe + ".json";
}

std::vector<NamedOrdering> read_orderings(const fs::path& path) {
  std::vector<NamedOrdering> out;
  for (const auto& row : read_jsonl(path)) {
    try {
      auto id = row.at("paragraph_id").get<std::string>();
      auto positions = row.at("positions").get<std::vector<int>>();
      if (!is_permutation_of_iota(positions)) {
        throw InputError("ordering for '" + id + "' is not a permutation");
      }
      out.push_back({std::move(id), Ordering(std::move(positions))});
    } catch (const Json::exception& e) {
      throw InputError(std::string("malformed ordering: ") + e.what());
    }
  }
  return out;
}

void write_orderings(const fs::path& path, const std::vector<NamedOrdering>& orderings) {
  std::vector<Json> rows;
  rows.reserve(orderings.size());
  for (const auto& o : orderings) {
    rows.push_back(Json{{"paragraph_id", o.paragraph_id}, {"positions", o.ordering.positions()}});
  }
  write_jsonl(path, rows);
}

}  // namespace sentord::io
