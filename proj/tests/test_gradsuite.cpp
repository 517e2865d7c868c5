#include "wmar/gradsuite.hpp"

#include <cmath>

#include "doctest.h"

using namespace wmar;

TEST_CASE("gradient suite passes at its pinned thresholds") {
  const GradSuiteResult r = run_grad_suite(42);
  CHECK(r.total_trials >= 100);
  CHECK(r.entries.size() == 11);
  for (const GradSuiteEntry& e : r.entries) {
    CAPTURE(e.name);
    CAPTURE(e.worst_rel);
    CHECK(e.trials > 0);
    CHECK(e.worst_rel >= 0.0);
    CHECK(std::isfinite(e.worst_rel));
    CHECK(e.pass);
    CHECK(e.worst_rel < e.threshold);
  }
  CHECK(r.ok);

  // The composite model check is the one entry allowed the looser bound.
  bool saw_model = false;
  for (const GradSuiteEntry& e : r.entries) {
    if (e.name == "world_model_loss") {
      saw_model = true;
      CHECK(e.threshold == 1e-3);
    } else {
      CHECK(e.threshold == 1e-4);
    }
  }
  CHECK(saw_model);
}

TEST_CASE("gradient suite is deterministic per seed") {
  const GradSuiteResult a = run_grad_suite(7);
  const GradSuiteResult b = run_grad_suite(7);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].name == b.entries[i].name);
    CHECK(a.entries[i].worst_rel == b.entries[i].worst_rel);
  }
  CHECK(a.ok);
}

TEST_CASE("gradient suite report lists every family and the total") {
  GradSuiteResult r;
  r.entries.push_back({"affine_chain", 12, 3.2e-7, 1e-4, true});
  r.entries.push_back({"world_model_loss", 3, 2.1e-3, 1e-3, false});
  r.total_trials = 15;
  r.seconds = 1.5;
  r.ok = false;
  const std::string text = grad_suite_report(r);
  CHECK(text.find("affine_chain") != std::string::npos);
  CHECK(text.find("world_model_loss") != std::string::npos);
  CHECK(text.find("pass") != std::string::npos);
  CHECK(text.find("FAIL") != std::string::npos);
  CHECK(text.find("total: 15 trials") != std::string::npos);
  CHECK(text.find("FAILURES present") != std::string::npos);
}
