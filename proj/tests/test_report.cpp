#include "doctest.h"
#include "sentord/encoders.hpp"
#include "sentord/report.hpp"

using namespace sentord;
using namespace sentord::report;

namespace {

metrics::EvalReport make_report(double pmr, double tau) {
  metrics::EvalReport r;
  r.acc_mean = 0.5;
  r.tau_mean = tau;
  r.pmr = pmr;
  r.pairwise_acc_mean = 0.8;
  r.pairwise_acc_std = 0.1;
  metrics::ParagraphScores p;
  p.paragraph_id = "a,\"b\"";
  p.n = 3;
  p.acc = 1.0 / 3.0;
  p.tau = -1.0 / 3.0;
  p.pairwise_acc = 0.5;
  r.per_paragraph.push_back(p);
  return r;
}

}  // namespace

TEST_CASE("csv escaping round trips awkward fields") {
  const std::vector<std::string> fields = {"plain", "a,b", "say \"hi\"", "line\nbreak", " padded ", "", "cr\r\nlf"};
  const auto text = csv_row(fields) + csv_row({"x", "y"});
  const auto rows = parse_csv(text);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == fields);
  CHECK(rows[1] == std::vector<std::string>{"x", "y"});
  CHECK(csv_escape("plain") == "plain");
  CHECK(csv_escape("a\"b") == "\"a\"\"b\"");
  CHECK_THROWS_AS(parse_csv("\"open,1\n"), InputError);
  CHECK(parse_csv("a,b").size() == 1);
}

TEST_CASE("numbers print in shortest round-trip form") {
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(1.0) == "1");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("evaluation JSON round trip") {
  ModelEval e{"drift", "global", make_report(0.25, 0.5), std::nullopt};
  const auto back = model_eval_from_json(to_json(e));
  CHECK(back.dataset == "drift");
  REQUIRE(back.strategy1);
  CHECK_FALSE(back.strategy2);
  CHECK(back.strategy1->pmr == 0.25);
  CHECK(back.strategy1->per_paragraph[0].tau == -1.0 / 3.0);
  CHECK(back.strategy1->per_paragraph[0].paragraph_id == "a,\"b\"");
  CHECK_THROWS_AS(model_eval_from_json(nlohmann::json{{"family", "local"}}), InputError);
}

TEST_CASE("per-paragraph CSV survives quoting") {
  const auto rows = parse_csv(per_paragraph_csv(make_report(0, 0)));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][0] == "paragraph_id");
  CHECK(rows[1][0] == "a,\"b\"");
  CHECK(std::stod(rows[1][3]) == -1.0 / 3.0);
}

TEST_CASE("figure tables hold one row per family per dataset") {
  std::vector<ModelEval> evals = {
      {"drift", "local", make_report(0.1, 0.2), make_report(0.3, 0.4)},
      {"drift", "global", make_report(0.5, 0.6), std::nullopt},
      {"cyclic", "ensemble", make_report(0.7, 0.8), make_report(0.9, 0.95)},
  };
  const auto pmr = parse_csv(pmr_evolution_csv(evals));
  const auto tau = parse_csv(tau_evolution_csv(evals));
  REQUIRE(pmr.size() == 1 + 2 * 6);
  REQUIRE(tau.size() == 1 + 2 * 6);
  CHECK(pmr[0] == std::vector<std::string>{"dataset", "family", "value"});
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(pmr[1 + k][0] == "drift");
    CHECK(pmr[1 + k][1] == model::to_string(model::kAllFamilies[k]));
    CHECK(pmr[7 + k][0] == "cyclic");
  }
  CHECK(pmr[1][2] == "0.1");    // drift, local, strategy 1
  CHECK(pmr[2][2] == "NA");     // drift, local-shared missing
  CHECK(pmr[4][2] == "0.5");    // drift, global
  CHECK(tau[4][2] == "NA");     // global has no strategy-2 report
  CHECK(tau[1][2] == "0.4");
  CHECK(tau[9][2] == "0.95");   // cyclic, ensemble

  evals.push_back({"drift", "local", make_report(0, 0), std::nullopt});
  CHECK_THROWS_AS(pmr_evolution_csv(evals), InputError);
  evals.back().family = "bert";
  CHECK_THROWS_AS(tau_evolution_csv(evals), InputError);
}

TEST_CASE("summary table") {
  const std::vector<ModelEval> evals = {{"d", "local", make_report(0.1, 0.2), make_report(0.3, 0.4)}};
  const auto rows = parse_csv(summary_csv(evals));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].size() == 8);
  CHECK(rows[1][2] == "-1");
  CHECK(rows[2][2] == "-2");
  CHECK(rows[2][5] == "0.3");
}
