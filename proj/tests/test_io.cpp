#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "lvmoe/errors.hpp"
#include "lvmoe/io.hpp"

using namespace lvmoe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lvmoe_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Roles simple_roles() {
  Roles r;
  r.outcome = "y";
  r.treatment = "t";
  r.covariates = {{"x1", ColumnKind::Numeric}};
  return r;
}

// Twelve rows: one missing age, one school category seen in only one
// treatment, a binary gender with tied counts.
const char* kFixture =
    "y,arm,age,gender,school\n"
    "1,A,10,m,u\n"
    "2,B,12,f,r\n"
    "3,A,NA,m,u\n"
    "4,B,14,m,u\n"
    "5,A,16,f,r\n"
    "6,B,18,f,u\n"
    "7,A,20,m,r\n"
    "8,B,22,m,u\n"
    "9,A,24,f,x\n"
    "10,B,26,f,r\n"
    "11,A,28,m,u\n"
    "12,B,30,f,u\n";

Roles fixture_roles() {
  return parse_roles(
      R"({"outcome": "y", "treatment": "arm",
          "covariates": {"age": "numeric", "gender": "categorical",
                         "school": "categorical"}})");
}

EstimandReport sample_report() {
  EstimandReport r;
  r.n_used = 11;
  r.level = 0.95;
  r.estimates[EstimandKey::psi(0, 0)] = 482.25;
  r.ci[EstimandKey::psi(0, 0)] = {457.57, 511.973};
  r.estimates[EstimandKey::psi(0, 1)] = 0.1 + 0.2;
  r.ci[EstimandKey::psi(0, 1)] = {-1e-300, 1.0 / 3.0};
  r.estimates[EstimandKey::psi_treatment(0)] = std::nextafter(1.0, 2.0);
  r.estimates[EstimandKey::contrast({0, 0}, {0, 1})] = -482.0;
  return r;
}

}  // namespace

TEST_CASE("ingest: three rows") {
  const RawTable t = ingest_text("y,t,x1\n1.5,a,0\n2,b,1\n-3,a,2\n", simple_roles());
  CHECK(t.rows.size() == 3);
  CHECK(t.header == std::vector<std::string>{"y", "t", "x1"});
  CHECK(t.line_numbers == std::vector<std::size_t>{2, 3, 4});
}

TEST_CASE("ingest: treatment labels follow first appearance") {
  const RawTable t = ingest_text("y,t,x1\n1,small,0\n2,regular,1\n3,aide,2\n4,small,3\n",
                                 simple_roles());
  CHECK(t.treatment_levels == std::vector<std::string>{"small", "regular", "aide"});
  CHECK(t.treatment_labels == std::vector<int>{0, 1, 2, 0});
}

TEST_CASE("ingest: errors carry line numbers") {
  CHECK_THROWS_WITH_AS(ingest_text("y,t,x1\n1,a,0\n2,a,1\n", simple_roles()),
                       doctest::Contains("need ≥ 2 treatments"), InputError);
  try {
    ingest_text("y,t,x1\n1,a,0\n2,b\n", simple_roles());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  try {
    ingest_text("y,t,x1\n1,a,0\n2,b,zz\n", simple_roles());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(ingest_text("y,t,t\n1,a,0\n", simple_roles()), ParseError);
  CHECK_THROWS_AS(ingest_text("y,t,x2\n1,a,0\n2,b,1\n", simple_roles()), ParseError);
  CHECK_THROWS_AS(ingest_text("", simple_roles()), ParseError);
  CHECK_THROWS_AS(ingest("/nonexistent/file.csv", simple_roles()), IoError);
}

TEST_CASE("ingest: quoted cells and tab delimiters") {
  const RawTable t = ingest_text("y\tt\tx1\n1\t\"a b\"\t0\n2\t\"c\"\"d\"\t1\n", simple_roles(), '\t');
  CHECK(t.treatment_levels == std::vector<std::string>{"a b", "c\"d"});
}

TEST_CASE("parse_roles") {
  const Roles r = fixture_roles();
  CHECK(r.outcome == "y");
  CHECK(r.treatment == "arm");
  REQUIRE(r.covariates.size() == 3);
  CHECK(r.covariates[0] == CovariateRole{"age", ColumnKind::Numeric});
  CHECK(r.covariates[2] == CovariateRole{"school", ColumnKind::Categorical});
  CHECK_THROWS_AS(parse_roles(R"({"outcome": "y"})"), ParseError);
  CHECK_THROWS_AS(parse_roles(R"({"outcome": "y", "treatment": "t", "covariates": {"a": "text"}})"),
                  ParseError);
  CHECK_THROWS_AS(parse_roles(R"({"outcome": "y", "treatment": "y"})"), InputError);
  CHECK_THROWS_AS(parse_roles("not json"), ParseError);
}

TEST_CASE("preprocess: hand-built fixture matches the manual design matrix") {
  const RawTable table = ingest_text(kFixture, fixture_roles());
  const PreprocessResult res = preprocess(table, 0.05);
  const PreprocessReport& rep = res.report;

  CHECK(rep.n_input == 12);
  CHECK(rep.n_dropped_missing == 1);
  CHECK(rep.n_dropped_rare == 1);
  REQUIRE(rep.rare.size() == 1);
  CHECK(rep.rare[0].column == "school");
  CHECK(rep.rare[0].category == "x");
  CHECK(rep.rare[0].proportions == std::vector<double>{0.2, 0.0});
  CHECK(rep.kept_rows == std::vector<std::size_t>{0, 1, 3, 4, 5, 6, 7, 9, 10, 11});

  // Ages kept: 10 12 14 16 18 20 22 26 28 30; mean 19.6, sum of squared
  // deviations 422.4, population variance 42.24.
  REQUIRE(rep.standardization.size() == 1);
  CHECK(rep.standardization[0].mean == doctest::Approx(19.6).epsilon(1e-15));
  CHECK(rep.standardization[0].sd == doctest::Approx(std::sqrt(42.24)).epsilon(1e-15));

  // gender ties 5-5, so "f" (lexicographically first) is the reference;
  // school has u:6, r:4, so "u" is the reference.
  REQUIRE(rep.one_hot.size() == 2);
  CHECK(rep.one_hot[0].reference == "f");
  CHECK(rep.one_hot[0].levels == std::vector<std::string>{"m"});
  CHECK(rep.one_hot[1].reference == "u");
  CHECK(rep.one_hot[1].levels == std::vector<std::string>{"r"});
  CHECK(rep.design_columns == std::vector<std::string>{"age", "gender=m", "school=r"});

  const double ages[] = {10, 12, 14, 16, 18, 20, 22, 26, 28, 30};
  const double male[] = {1, 0, 1, 0, 0, 1, 1, 0, 1, 0};
  const double rural[] = {0, 1, 0, 1, 0, 1, 0, 1, 0, 0};
  const double y[] = {1, 2, 4, 5, 6, 7, 8, 10, 11, 12};
  const int arm[] = {0, 1, 1, 0, 1, 0, 1, 1, 0, 1};
  const Dataset& d = res.data;
  REQUIRE(d.n() == 10);
  REQUIRE(d.p() == 3);
  CHECK(d.num_treatments == 2);
  for (int i = 0; i < 10; ++i) {
    CHECK(d.covariates(i, 0) == doctest::Approx((ages[i] - 19.6) / std::sqrt(42.24)).epsilon(1e-14));
    CHECK(d.covariates(i, 1) == male[i]);
    CHECK(d.covariates(i, 2) == rural[i]);
    CHECK(d.outcomes[i] == y[i]);
    CHECK(d.treatments[static_cast<std::size_t>(i)] == arm[i]);
  }
}

TEST_CASE("preprocess: numeric-only tables are centred and scaled") {
  std::string csv = "y,t,x1\n";
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(5.0, 3.0);
  for (int i = 0; i < 50; ++i)
    csv += std::to_string(n(rng)) + "," + (i % 2 ? "a" : "b") + "," + std::to_string(n(rng)) + "\n";
  const PreprocessResult res = preprocess(ingest_text(csv, simple_roles()));
  CHECK(std::abs(res.data.covariates.col(0).mean()) <= 1e-12);
  CHECK(res.data.covariates.col(0).squaredNorm() / 50.0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.report.one_hot.empty());
}

TEST_CASE("preprocess: a 4% category within one treatment is removed") {
  // Treatment a: 50 units with shares 25/23/2 = 0.50/0.46/0.04.
  // Treatment b: 50 units with shares 20/20/10.
  Roles roles;
  roles.outcome = "y";
  roles.treatment = "t";
  roles.covariates = {{"c", ColumnKind::Categorical}};
  std::string csv = "y,t,c\n";
  auto add = [&](const char* t, const char* c, int count) {
    for (int i = 0; i < count; ++i) csv += std::to_string(i) + "," + t + "," + c + "\n";
  };
  add("a", "p", 25);
  add("a", "q", 23);
  add("a", "r", 2);
  add("b", "p", 20);
  add("b", "q", 20);
  add("b", "r", 10);
  const PreprocessResult res = preprocess(ingest_text(csv, roles));
  CHECK(res.data.n() == 88);
  REQUIRE(res.report.rare.size() == 1);
  CHECK(res.report.rare[0].category == "r");
  CHECK(res.report.rare[0].proportions[0] == doctest::Approx(0.04));
}

TEST_CASE("preprocess: degenerate inputs") {
  CHECK_THROWS_WITH_AS(preprocess(ingest_text("y,t,x1\n1,a,2\n2,b,2\n", simple_roles())),
                       doctest::Contains("x1"), InputError);
  CHECK_THROWS_AS(preprocess(ingest_text("y,t,x1\n1,a,NA\n2,b,NA\n", simple_roles())),
                  InputError);
}

TEST_CASE("preprocess is order stable") {
  const RawTable table = ingest_text(kFixture, fixture_roles());
  std::vector<std::size_t> perm(table.rows.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(perm.begin(), perm.end(), rng);
    RawTable shuffled = table;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.rows[i] = table.rows[perm[i]];
      shuffled.treatment_labels[i] = table.treatment_labels[perm[i]];
    }
    const PreprocessResult a = preprocess(table);
    const PreprocessResult b = preprocess(shuffled);
    CHECK(std::abs(a.report.standardization[0].mean - b.report.standardization[0].mean) <= 1e-12);
    CHECK(std::abs(a.report.standardization[0].sd - b.report.standardization[0].sd) <= 1e-12);
    CHECK(a.report.design_columns == b.report.design_columns);
    for (std::size_t i = 0; i < b.report.kept_rows.size(); ++i) {
      const std::size_t original = perm[b.report.kept_rows[i]];
      const auto pos = std::find(a.report.kept_rows.begin(), a.report.kept_rows.end(), original) -
                       a.report.kept_rows.begin();
      CHECK((b.data.covariates.row(static_cast<Eigen::Index>(i)) -
             a.data.covariates.row(pos)).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(b.data.outcomes[static_cast<Eigen::Index>(i)] == a.data.outcomes[pos]);
    }
    // gender=m and school=r are single-column blocks of 0/1 indicators.
    const auto ind = b.data.covariates.rightCols(2).array();
    CHECK(((ind == 0.0) || (ind == 1.0)).all());
  }
}

TEST_CASE("reports round-trip in both formats") {
  const EstimandReport r = sample_report();
  for (ReportFormat f : {ReportFormat::Tabular, ReportFormat::Structured}) {
    const EstimandReport back = parse_report(format_report(r, f));
    CHECK(back == r);
    CHECK(back.estimates.at(EstimandKey::psi(0, 0)) == 482.25);
    CHECK(back.ci.at(EstimandKey::psi(0, 0)).lower == 457.57);
    CHECK(back.ci.at(EstimandKey::psi(0, 0)).upper == 511.973);
  }
  const fs::path dir = scratch_dir("report");
  emit_report(r, ReportFormat::Tabular, dir / "r.tsv");
  CHECK(load_report(dir / "r.tsv") == r);
  CHECK_THROWS_AS(emit_report(r, ReportFormat::Tabular, "/proc/forbidden/r.tsv"), IoError);
}

TEST_CASE("tabular report without contrasts lists psi rows only") {
  EstimandReport r;
  r.n_used = 3;
  r.estimates[EstimandKey::psi(0, 0)] = 1.0;
  r.estimates[EstimandKey::psi(1, 0)] = 2.0;
  const std::string text = format_report(r, ReportFormat::Tabular);
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> body;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') body.push_back(line);
  REQUIRE(body.size() == 3);
  CHECK(body[0] == "kind\tt\tv\tt2\tv2\testimate\tci_lo\tci_hi");
  CHECK(body[1] == "psi\t0\t0\tNA\tNA\t1\tNA\tNA");
  CHECK(body[2] == "psi\t1\t0\tNA\tNA\t2\tNA\tNA");
}

TEST_CASE("parse_report rejects malformed input") {
  CHECK_THROWS_AS(parse_report("kind\tt\n"), ParseError);
  CHECK_THROWS_AS(parse_report("kind\tt\tv\tt2\tv2\testimate\tci_lo\tci_hi\npsi\t0\n"), ParseError);
  CHECK_THROWS_AS(parse_report("{\"n_used\": 1}"), ParseError);
}

TEST_CASE("format_double keeps 17 significant digits") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(482.25) == "482.25");
}

TEST_CASE("parse_versions") {
  CHECK(parse_versions("2,2,3").counts() == std::vector<int>{2, 2, 3});
  CHECK(parse_versions(" 1 ").counts() == std::vector<int>{1});
  CHECK_THROWS_AS(parse_versions("2,,3"), InputError);
  CHECK_THROWS_AS(parse_versions("2,x"), InputError);
  CHECK_THROWS_AS(parse_versions("0"), InputError);
}
