#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sentord/metrics.hpp"

namespace sentord::report {

/// Marker written for a (dataset, family) cell with no evaluation.
inline constexpr std::string_view kGap = "NA";

/// RFC 4180 quoting: fields holding a comma, quote, CR, LF or edge
/// whitespace are wrapped in quotes with inner quotes doubled.
std::string csv_escape(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);
/// Inverse of csv_row over whole documents; throws InputError on an
/// unterminated quote.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Shortest decimal that round-trips, so reruns print identical bytes.
std::string format_number(double v);

nlohmann::json to_json(const metrics::EvalReport& r);
metrics::EvalReport eval_report_from_json(const nlohmann::json& j);

/// paragraph_id,n,acc,tau,perfect,pairwise_acc (empty when absent).
std::string per_paragraph_csv(const metrics::EvalReport& r);

/// One evaluated model on one dataset, with a report per decoding strategy.
struct ModelEval {
  std::string dataset;
  std::string family;
  std::optional<metrics::EvalReport> strategy1;
  std::optional<metrics::EvalReport> strategy2;
};

nlohmann::json to_json(const ModelEval& e);
ModelEval model_eval_from_json(const nlohmann::json& j);

/// dataset,family,strategy,acc,tau,pmr,pairwise_acc_mean,pairwise_acc_std;
/// strategies appear as "-1" and "-2".
std::string summary_csv(const std::vector<ModelEval>& evals);

/// dataset,family,value with exactly one row per family per dataset, in
/// canonical family order; missing cells hold kGap. Datasets appear in order
/// of first mention. Throws InputError on an unknown family or a duplicate
/// (dataset, family).
std::string pmr_evolution_csv(const std::vector<ModelEval>& evals);  ///< strategy 1 PMR
std::string tau_evolution_csv(const std::vector<ModelEval>& evals);  ///< strategy 2 tau

}  // namespace sentord::report
