#include "sentord/report.hpp"

#include <charconv>
#include <cmath>
#include <algorithm>
#include <functional>
#include <map>

#include "sentord/core.hpp"
#include "sentord/encoders.hpp"

namespace sentord::report {

std::string csv_escape(std::string_view field) {
  const bool edge_space = !field.empty() && (field.front() == ' ' || field.back() == ' ');
  if (field.find_first_of(",\"\r\n") == std::string_view::npos && !edge_space) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) out += ',';
    out += csv_escape(fields[k]);
  }
  out += '\n';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool pending = false;  // a row has started
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    pending = true;
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && k + 1 < text.size() && text[k + 1] == '\n') ++k;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      pending = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw InputError("CSV: unterminated quoted field");
  if (pending) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string optional_cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

}  // namespace

nlohmann::json to_json(const metrics::EvalReport& r) {
  nlohmann::json paragraphs = nlohmann::json::array();
  for (const auto& p : r.per_paragraph) {
    paragraphs.push_back({{"paragraph_id", p.paragraph_id},
                          {"n", p.n},
                          {"acc", p.acc},
                          {"tau", p.tau},
                          {"perfect", p.perfect},
                          {"pairwise_acc", optional_number(p.pairwise_acc)}});
  }
  return {{"acc", r.acc_mean},
          {"tau", r.tau_mean},
          {"pmr", r.pmr},
          {"pairwise_acc_mean", optional_number(r.pairwise_acc_mean)},
          {"pairwise_acc_std", optional_number(r.pairwise_acc_std)},
          {"paragraphs", paragraphs}};
}

metrics::EvalReport eval_report_from_json(const nlohmann::json& j) {
  try {
    metrics::EvalReport r;
    r.acc_mean = j.at("acc").get<double>();
    r.tau_mean = j.at("tau").get<double>();
    r.pmr = j.at("pmr").get<double>();
    r.pairwise_acc_mean = read_optional(j, "pairwise_acc_mean");
    r.pairwise_acc_std = read_optional(j, "pairwise_acc_std");
    for (const auto& p : j.at("paragraphs")) {
      metrics::ParagraphScores s;
      s.paragraph_id = p.at("paragraph_id").get<std::string>();
      s.n = p.at("n").get<std::size_t>();
      s.acc = p.at("acc").get<double>();
      s.tau = p.at("tau").get<double>();
      s.perfect = p.at("perfect").get<bool>();
      s.pairwise_acc = read_optional(p, "pairwise_acc");
      r.per_paragraph.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad evaluation report: ") + e.what());
  }
}

std::string per_paragraph_csv(const metrics::EvalReport& r) {
  std::string out = csv_row({"paragraph_id", "n", "acc", "tau", "perfect", "pairwise_acc"});
  for (const auto& p : r.per_paragraph) {
    out += csv_row({p.paragraph_id, std::to_string(p.n), format_number(p.acc), format_number(p.tau),
                    p.perfect ? "1" : "0", optional_cell(p.pairwise_acc)});
  }
  return out;
}

nlohmann::json to_json(const ModelEval& e) {
  nlohmann::json j = {{"dataset", e.dataset}, {"family", e.family}};
  j["strategy_1"] = e.strategy1 ? to_json(*e.strategy1) : nlohmann::json(nullptr);
  j["strategy_2"] = e.strategy2 ? to_json(*e.strategy2) : nlohmann::json(nullptr);
  return j;
}

ModelEval model_eval_from_json(const nlohmann::json& j) {
  try {
    ModelEval e;
    e.dataset = j.at("dataset").get<std::string>();
    e.family = j.at("family").get<std::string>();
    if (j.contains("strategy_1") && !j.at("strategy_1").is_null()) e.strategy1 = eval_report_from_json(j.at("strategy_1"));
    if (j.contains("strategy_2") && !j.at("strategy_2").is_null()) e.strategy2 = eval_report_from_json(j.at("strategy_2"));
    return e;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad evaluation file: ") + e.what());
  }
}

std::string summary_csv(const std::vector<ModelEval>& evals) {
  std::string out =
      csv_row({"dataset", "family", "strategy", "acc", "tau", "pmr", "pairwise_acc_mean", "pairwise_acc_std"});
  for (const auto& e : evals) {
    for (int s = 1; s <= 2; ++s) {
      const auto& r = s == 1 ? e.strategy1 : e.strategy2;
      if (!r) continue;
      out += csv_row({e.dataset, e.family, "-" + std::to_string(s), format_number(r->acc_mean),
                      format_number(r->tau_mean), format_number(r->pmr), optional_cell(r->pairwise_acc_mean),
                      optional_cell(r->pairwise_acc_std)});
    }
  }
  return out;
}

namespace {

std::string figure_csv(const std::vector<ModelEval>& evals,
                       const std::function<std::optional<double>(const ModelEval&)>& value) {
  std::vector<std::string> datasets;
  std::map<std::pair<std::string, std::string>, std::optional<double>> cells;
  for (const auto& e : evals) {
    model::parse_family(e.family);
    if (std::find(datasets.begin(), datasets.end(), e.dataset) == datasets.end()) datasets.push_back(e.dataset);
    if (!cells.emplace(std::make_pair(e.dataset, e.family), value(e)).second) {
      throw InputError("report: dataset '" + e.dataset + "' has two evaluations of family '" + e.family + "'");
    }
  }
  std::string out = csv_row({"dataset", "family", "value"});
  for (const auto& d : datasets) {
    for (auto f : model::kAllFamilies) {
      const auto name = model::to_string(f);
      const auto it = cells.find({d, name});
      const bool present = it != cells.end() && it->second.has_value();
      out += csv_row({d, name, present ? format_number(*it->second) : std::string(kGap)});
    }
  }
  return out;
}

}  // namespace

std::string pmr_evolution_csv(const std::vector<ModelEval>& evals) {
  return figure_csv(evals, [](const ModelEval& e) -> std::optional<double> {
    if (!e.strategy1) return std::nullopt;
    return e.strategy1->pmr;
  });
}

std::string tau_evolution_csv(const std::vector<ModelEval>& evals) {
  return figure_csv(evals, [](const ModelEval& e) -> std::optional<double> {
    if (!e.strategy2) return std::nullopt;
    return e.strategy2->tau_mean;
  });
}

}  // namespace sentord::report
