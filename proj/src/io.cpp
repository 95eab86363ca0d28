#include "lvmoe/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "lvmoe/diagnostics.hpp"
#include "lvmoe/errors.hpp"

namespace lvmoe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec)
      throw IoError("cannot create directory '" + path.parent_path().string() +
                    "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Splits one record; double quotes group cells and "" escapes a quote.
std::vector<std::string> split_record(const std::string& line, char delim,
                                      std::size_t line_no) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == delim) {
      cells.push_back(was_quoted ? cell : trim(cell));
      cell.clear();
      was_quoted = false;
    } else {
      cell += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  cells.push_back(was_quoted ? cell : trim(cell));
  return cells;
}

std::optional<double> parse_number(const std::string& s) {
  double value = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

double parse_double_field(const std::string& s, const std::string& what,
                          std::size_t line_no) {
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  if (s == "nan" || s == "-nan") return std::nan("");
  const auto v = parse_number(s);
  if (!v) throw ParseError("cannot parse " + what + " '" + s + "'", line_no);
  return *v;
}

int parse_int_field(const std::string& s, const std::string& what,
                    std::size_t line_no) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParseError("cannot parse " + what + " '" + s + "'", line_no);
  return value;
}

std::string opt_field(std::optional<double> v) {
  return v ? format_double(*v) : std::string("NA");
}

std::string index_field(int v) { return v < 0 ? std::string("NA") : std::to_string(v); }

ojson opt_json(std::optional<double> v) {
  return v ? ojson(*v) : ojson(nullptr);
}

ojson index_json(int v) { return v < 0 ? ojson(nullptr) : ojson(v); }

std::optional<double> json_opt(const ojson& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

int json_index(const ojson& j) { return j.is_null() ? -1 : j.get<int>(); }

ojson preprocess_json(const PreprocessReport& r) {
  ojson j;
  j["n_input"] = r.n_input;
  j["n_dropped_missing"] = r.n_dropped_missing;
  j["n_dropped_rare"] = r.n_dropped_rare;
  j["treatment_levels"] = r.treatment_levels;
  ojson rare = ojson::array();
  for (const auto& c : r.rare)
    rare.push_back({{"column", c.column},
                    {"category", c.category},
                    {"proportions", c.proportions}});
  j["rare_categories"] = rare;
  ojson stand = ojson::array();
  for (const auto& s : r.standardization)
    stand.push_back({{"column", s.column}, {"mean", s.mean}, {"sd", s.sd}});
  j["standardization"] = stand;
  ojson onehot = ojson::array();
  for (const auto& o : r.one_hot)
    onehot.push_back(
        {{"column", o.column}, {"reference", o.reference}, {"levels", o.levels}});
  j["one_hot"] = onehot;
  j["design_columns"] = r.design_columns;
  return j;
}

ojson trace_json(const std::vector<EmTrace>& traces) {
  ojson arr = ojson::array();
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const EmTrace& tr = traces[t];
    ojson j;
    j["treatment"] = t;
    j["iterations"] = tr.iterations;
    j["converged"] = tr.converged;
    j["restart"] = tr.restart;
    j["collapsed_runs"] = tr.collapsed_runs;
    j["final_loglik"] = tr.loglik.empty() ? ojson(nullptr) : ojson(tr.loglik.back());
    j["final_objective"] =
        tr.objective.empty() ? ojson(nullptr) : ojson(tr.objective.back());
    arr.push_back(j);
  }
  return arr;
}

std::string tabular_report(const EstimandReport& report) {
  std::string out;
  out += "# n_used\t" + std::to_string(report.n_used) + "\n";
  out += "# floor\t" + opt_field(report.floor) + "\n";
  out += "# level\t" + opt_field(report.level) + "\n";
  out += "kind\tt\tv\tt2\tv2\testimate\tci_lo\tci_hi\n";
  for (const auto& [key, value] : report.estimates) {
    out += to_string(key.kind) + "\t" + index_field(key.t) + "\t" +
           index_field(key.v) + "\t" + index_field(key.t2) + "\t" +
           index_field(key.v2) + "\t" + format_double(value) + "\t";
    const auto it = report.ci.find(key);
    if (it == report.ci.end())
      out += "NA\tNA\n";
    else
      out += format_double(it->second.lower) + "\t" +
             format_double(it->second.upper) + "\n";
  }
  return out;
}

std::string structured_report(const EstimandReport& report,
                              const ReportContext& ctx) {
  ojson j;
  j["n_used"] = report.n_used;
  j["floor"] = opt_json(report.floor);
  j["level"] = opt_json(report.level);
  ojson rows = ojson::array();
  for (const auto& [key, value] : report.estimates) {
    ojson r;
    r["kind"] = to_string(key.kind);
    r["t"] = index_json(key.t);
    r["v"] = index_json(key.v);
    r["t2"] = index_json(key.t2);
    r["v2"] = index_json(key.v2);
    r["estimate"] = value;
    const auto it = report.ci.find(key);
    r["ci_lo"] = it == report.ci.end() ? ojson(nullptr) : ojson(it->second.lower);
    r["ci_hi"] = it == report.ci.end() ? ojson(nullptr) : ojson(it->second.upper);
    rows.push_back(r);
  }
  j["estimates"] = rows;
  if (ctx.preprocess) j["preprocess"] = preprocess_json(*ctx.preprocess);
  if (ctx.traces) j["em"] = trace_json(*ctx.traces);
  if (ctx.bootstrap)
    j["bootstrap"] = {{"resamples", ctx.bootstrap->resamples},
                      {"level", ctx.bootstrap->level},
                      {"redraws", ctx.bootstrap->redraws},
                      {"failures", ctx.bootstrap->failures}};
  return j.dump(2) + "\n";
}

EstimandReport parse_tabular(const std::string& text) {
  EstimandReport report;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto cells = split_record(line.substr(1), '\t', line_no);
      if (cells.size() != 2) throw ParseError("malformed metadata line", line_no);
      if (cells[0] == "n_used")
        report.n_used = static_cast<std::size_t>(
            parse_double_field(cells[1], "n_used", line_no));
      else if (cells[0] == "floor")
        report.floor = cells[1] == "NA" ? std::nullopt
                                        : std::optional<double>(parse_double_field(
                                              cells[1], "floor", line_no));
      else if (cells[0] == "level")
        report.level = cells[1] == "NA" ? std::nullopt
                                        : std::optional<double>(parse_double_field(
                                              cells[1], "level", line_no));
      continue;
    }
    const auto cells = split_record(line, '\t', line_no);
    if (!header_seen) {
      const std::vector<std::string> expected{"kind", "t",        "v",     "t2",
                                              "v2",   "estimate", "ci_lo", "ci_hi"};
      if (cells != expected) throw ParseError("unexpected report header", line_no);
      header_seen = true;
      continue;
    }
    if (cells.size() != 8)
      throw ParseError("expected 8 fields, found " + std::to_string(cells.size()),
                       line_no);
    EstimandKey key;
    key.kind = estimand_kind_from_string(cells[0]);
    auto idx = [&](const std::string& s) {
      return s == "NA" ? -1 : parse_int_field(s, "index", line_no);
    };
    key.t = idx(cells[1]);
    key.v = idx(cells[2]);
    key.t2 = idx(cells[3]);
    key.v2 = idx(cells[4]);
    report.estimates[key] = parse_double_field(cells[5], "estimate", line_no);
    const bool lo_na = cells[6] == "NA";
    const bool hi_na = cells[7] == "NA";
    if (lo_na != hi_na) throw ParseError("half-open interval", line_no);
    if (!lo_na)
      report.ci[key] = {parse_double_field(cells[6], "ci_lo", line_no),
                        parse_double_field(cells[7], "ci_hi", line_no)};
  }
  if (!header_seen) throw ParseError("report has no header");
  return report;
}

EstimandReport parse_structured(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
    EstimandReport report;
    report.n_used = j.at("n_used").get<std::size_t>();
    report.floor = json_opt(j.at("floor"));
    report.level = json_opt(j.at("level"));
    for (const auto& r : j.at("estimates")) {
      EstimandKey key;
      key.kind = estimand_kind_from_string(r.at("kind").get<std::string>());
      key.t = json_index(r.at("t"));
      key.v = json_index(r.at("v"));
      key.t2 = json_index(r.at("t2"));
      key.v2 = json_index(r.at("v2"));
      report.estimates[key] = r.at("estimate").get<double>();
      if (!r.at("ci_lo").is_null())
        report.ci[key] = {r.at("ci_lo").get<double>(), r.at("ci_hi").get<double>()};
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed structured report: ") + e.what());
  }
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

VersionStructure parse_versions(const std::string& list) {
  std::vector<int> counts;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw InputError("bad version list '" + list + "'");
    counts.push_back(v);
  }
  return VersionStructure(std::move(counts));
}

Roles parse_roles(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("roles file: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("roles file must hold an object");
  Roles roles;
  try {
    roles.outcome = j.at("outcome").get<std::string>();
    roles.treatment = j.at("treatment").get<std::string>();
    if (j.contains("covariates")) {
      const auto& cov = j.at("covariates");
      if (!cov.is_object())
        throw ParseError("roles: 'covariates' must map column names to kinds");
      for (const auto& [name, kind] : cov.items()) {
        const auto k = kind.get<std::string>();
        CovariateRole role{name, ColumnKind::Numeric};
        if (k == "categorical")
          role.kind = ColumnKind::Categorical;
        else if (k != "numeric")
          throw ParseError("roles: unknown kind '" + k + "' for column '" + name + "'");
        roles.covariates.push_back(role);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("roles file: ") + e.what());
  }
  std::set<std::string> names{roles.outcome, roles.treatment};
  if (names.size() != 2) throw InputError("outcome and treatment share a column");
  for (const auto& c : roles.covariates)
    if (!names.insert(c.name).second)
      throw InputError("column '" + c.name + "' has more than one role");
  return roles;
}

Roles load_roles(const fs::path& path) { return parse_roles(read_file(path)); }

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" ||
         cell == ".";
}

std::size_t RawTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw LookupError("no column named '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

RawTable ingest_text(const std::string& text, const Roles& roles, char delimiter) {
  RawTable table;
  table.roles = roles;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_record(line, delimiter, line_no);
    if (!have_header) {
      std::set<std::string> seen;
      for (const auto& h : cells)
        if (!seen.insert(h).second)
          throw ParseError("duplicate column '" + h + "'", line_no);
      table.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size())
      throw ParseError("expected " + std::to_string(table.header.size()) +
                           " fields, found " + std::to_string(cells.size()),
                       line_no);
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw ParseError("missing header row");

  auto require = [&](const std::string& name) {
    if (std::find(table.header.begin(), table.header.end(), name) ==
        table.header.end())
      throw ParseError("missing column '" + name + "'", 1);
    return table.column(name);
  };
  const std::size_t y_col = require(roles.outcome);
  const std::size_t t_col = require(roles.treatment);
  std::vector<std::size_t> numeric_cols{y_col};
  for (const auto& c : roles.covariates) {
    const std::size_t col = require(c.name);
    if (c.kind == ColumnKind::Numeric) numeric_cols.push_back(col);
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    for (std::size_t col : numeric_cols) {
      const auto& cell = table.rows[r][col];
      if (is_missing(cell)) continue;
      const auto v = parse_number(cell);
      if (!v || !std::isfinite(*v))
        throw ParseError("non-numeric value '" + cell + "' in column '" +
                             table.header[col] + "'",
                         table.line_numbers[r]);
    }

  std::unordered_map<std::string, int> labels;
  table.treatment_labels.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    const auto& cell = row[t_col];
    if (is_missing(cell)) {
      table.treatment_labels.push_back(-1);
      continue;
    }
    auto [it, inserted] =
        labels.emplace(cell, static_cast<int>(table.treatment_levels.size()));
    if (inserted) table.treatment_levels.push_back(cell);
    table.treatment_labels.push_back(it->second);
  }
  if (table.treatment_levels.size() < 2)
    throw InputError("need ≥ 2 treatments, found " +
                     std::to_string(table.treatment_levels.size()));
  return table;
}

RawTable ingest(const fs::path& path, const Roles& roles,
                std::optional<char> delimiter) {
  if (!fs::exists(path)) throw IoError("no such file '" + path.string() + "'");
  char delim = ',';
  if (delimiter)
    delim = *delimiter;
  else if (path.extension() == ".tsv" || path.extension() == ".tab")
    delim = '\t';
  return ingest_text(read_file(path), roles, delim);
}

PreprocessResult preprocess(const RawTable& table, double rare_threshold) {
  if (!(rare_threshold >= 0.0 && rare_threshold < 1.0))
    throw InputError("rare-category threshold must lie in [0, 1)");
  const Roles& roles = table.roles;
  const std::size_t y_col = table.column(roles.outcome);
  std::vector<std::size_t> cov_cols;
  for (const auto& c : roles.covariates) cov_cols.push_back(table.column(c.name));
  const auto J = table.treatment_levels.size();

  PreprocessReport report;
  report.n_input = table.rows.size();
  report.treatment_levels = table.treatment_levels;

  // (1) complete cases over the declared columns.
  std::vector<std::size_t> complete;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    bool ok = table.treatment_labels[r] >= 0 && !is_missing(row[y_col]);
    for (std::size_t col : cov_cols) ok = ok && !is_missing(row[col]);
    if (ok) complete.push_back(r);
  }
  report.n_dropped_missing = table.rows.size() - complete.size();

  // (2) rare categories, one pass over the complete cases.
  std::vector<std::size_t> per_treatment(J, 0);
  for (std::size_t r : complete)
    ++per_treatment[static_cast<std::size_t>(table.treatment_labels[r])];
  std::vector<std::set<std::string>> rare(roles.covariates.size());
  for (std::size_t k = 0; k < roles.covariates.size(); ++k) {
    if (roles.covariates[k].kind != ColumnKind::Categorical) continue;
    std::map<std::string, std::vector<std::size_t>> counts;
    for (std::size_t r : complete) {
      auto& c = counts[table.rows[r][cov_cols[k]]];
      c.resize(J, 0);
      ++c[static_cast<std::size_t>(table.treatment_labels[r])];
    }
    for (const auto& [category, c] : counts) {
      std::vector<double> props(J, 0.0);
      bool is_rare = false;
      for (std::size_t t = 0; t < J; ++t) {
        props[t] = per_treatment[t] == 0
                       ? 0.0
                       : static_cast<double>(c[t]) / static_cast<double>(per_treatment[t]);
        is_rare = is_rare || props[t] <= rare_threshold;
      }
      if (is_rare) {
        rare[k].insert(category);
        report.rare.push_back({roles.covariates[k].name, category, props});
      }
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t r : complete) {
    bool ok = true;
    for (std::size_t k = 0; k < cov_cols.size(); ++k)
      ok = ok && !rare[k].count(table.rows[r][cov_cols[k]]);
    if (ok) kept.push_back(r);
  }
  report.n_dropped_rare = complete.size() - kept.size();
  if (kept.empty()) throw InputError("no rows left after preprocessing");

  const auto n = static_cast<Eigen::Index>(kept.size());
  Dataset data;
  data.num_treatments = static_cast<int>(J);
  data.outcomes.resize(n);
  data.treatments.resize(kept.size());
  std::vector<char> present(J, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t r = kept[static_cast<std::size_t>(i)];
    data.outcomes[i] = *parse_number(table.rows[r][y_col]);
    data.treatments[static_cast<std::size_t>(i)] = table.treatment_labels[r];
    present[static_cast<std::size_t>(table.treatment_labels[r])] = 1;
  }
  for (std::size_t t = 0; t < J; ++t)
    if (!present[t])
      throw InputError("treatment '" + table.treatment_levels[t] +
                       "' has no rows left after preprocessing");

  // (3) standardization and (4) one-hot encoding, in declared column order.
  std::vector<Vector> columns;
  for (std::size_t k = 0; k < roles.covariates.size(); ++k) {
    const auto& role = roles.covariates[k];
    if (role.kind == ColumnKind::Numeric) {
      Vector col(n);
      for (Eigen::Index i = 0; i < n; ++i)
        col[i] = *parse_number(table.rows[kept[static_cast<std::size_t>(i)]][cov_cols[k]]);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().mean());
      if (!(sd > 0.0))
        throw InputError("numeric column '" + role.name +
                         "' has zero variance after preprocessing");
      columns.push_back(((col.array() - mean) / sd).matrix());
      report.standardization.push_back({role.name, mean, sd});
      report.design_columns.push_back(role.name);
      continue;
    }
    std::map<std::string, std::size_t> freq;
    for (std::size_t r : kept) ++freq[table.rows[r][cov_cols[k]]];
    // std::map iterates lexicographically, so the first maximum wins ties.
    std::string reference;
    std::size_t best = 0;
    for (const auto& [cat, count] : freq)
      if (count > best) {
        best = count;
        reference = cat;
      }
    OneHotEncoding enc{role.name, reference, {}};
    for (const auto& [cat, count] : freq) {
      if (cat == reference) continue;
      enc.levels.push_back(cat);
      Vector col(n);
      for (Eigen::Index i = 0; i < n; ++i)
        col[i] = table.rows[kept[static_cast<std::size_t>(i)]][cov_cols[k]] == cat ? 1.0 : 0.0;
      columns.push_back(std::move(col));
      report.design_columns.push_back(role.name + "=" + cat);
    }
    if (enc.levels.empty())
      warn("categorical column '" + role.name +
           "' has a single level after preprocessing and contributes no columns");
    report.one_hot.push_back(std::move(enc));
  }
  data.covariates.resize(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c)
    data.covariates.col(static_cast<Eigen::Index>(c)) = columns[c];
  report.kept_rows = std::move(kept);
  return {std::move(data), std::move(report)};
}

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "tabular" || name == "tsv") return ReportFormat::Tabular;
  if (name == "structured" || name == "json") return ReportFormat::Structured;
  throw InputError("unknown report format '" + name + "'");
}

std::string format_report(const EstimandReport& report, ReportFormat format,
                          const ReportContext& context) {
  return format == ReportFormat::Tabular ? tabular_report(report)
                                         : structured_report(report, context);
}

void emit_report(const EstimandReport& report, ReportFormat format,
                 const fs::path& path, const ReportContext& context) {
  write_file(path, format_report(report, format, context));
}

EstimandReport parse_report(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_structured(text);
  return parse_tabular(text);
}

EstimandReport load_report(const fs::path& path) {
  return parse_report(read_file(path));
}

namespace {

void validate(const RunConfig& c, const Dataset& data) {
  if (c.versions.num_treatments() != data.num_treatments)
    throw InputError("version list has " +
                     std::to_string(c.versions.num_treatments()) +
                     " entries but the data has " +
                     std::to_string(data.num_treatments) + " treatments");
  if (!(c.em.tol > 0.0)) throw InputError("tol must be positive");
  if (c.em.max_iter < 1) throw InputError("max_iter must be >= 1");
  if (c.em.restarts < 1) throw InputError("restarts must be >= 1");
  if (c.resamples < 2) throw InputError("B must be >= 2");
  if (!(c.level > 0.0 && c.level < 1.0)) throw InputError("level must lie in (0, 1)");
  if (c.floor && !(*c.floor >= 0.0 && *c.floor < 0.1))
    throw InputError("floor must lie in [0, 0.1)");
}

EstimateOptions estimate_options(const RunConfig& c) {
  EstimateOptions o;
  o.floor = c.floor;
  o.contrasts = c.contrasts;
  return o;
}

RunResult fit_and_estimate(const RunConfig& config, const Dataset& data) {
  validate(config, data);
  EmConfig em = config.em;
  em.seed = config.seed;
  RunResult out;
  out.fit = fit_model(data, config.versions, em);
  out.report = estimate(data, out.fit, estimate_options(config));
  return out;
}

void write_outputs(const RunConfig& config, const EstimandReport& report,
                   const ReportContext& ctx) {
  if (config.out_dir.empty()) return;
  emit_report(report, ReportFormat::Tabular, config.out_dir / "estimates.tsv", ctx);
  emit_report(report, ReportFormat::Structured, config.out_dir / "report.json", ctx);
}

}  // namespace

RunResult run_fit(const RunConfig& config, const Dataset& data,
                  const PreprocessReport* preprocess) {
  RunResult out = fit_and_estimate(config, data);
  write_outputs(config, out.report, {preprocess, &out.fit.traces, nullptr});
  return out;
}

BootstrapRun run_bootstrap(const RunConfig& config, const Dataset& data,
                           const PreprocessReport* preprocess) {
  BootstrapRun out;
  out.point = fit_and_estimate(config, data);
  BootstrapConfig bc;
  bc.versions = config.versions;
  bc.em = config.em;
  bc.resamples = config.resamples;
  bc.level = config.level;
  bc.seed = config.seed;
  bc.estimate = estimate_options(config);
  bc.threads = config.threads;
  out.bootstrap = bootstrap(data, bc);
  out.point.report.ci = out.bootstrap.ci;
  out.point.report.level = config.level;
  write_outputs(config, out.point.report,
                {preprocess, &out.point.fit.traces, &out.bootstrap});
  if (!config.out_dir.empty()) {
    std::string text = "b\tkind\tt\tv\tt2\tv2\testimate\n";
    for (const auto& [key, reps] : out.bootstrap.replicates)
      for (std::size_t b = 0; b < reps.size(); ++b)
        text += std::to_string(b) + "\t" + to_string(key.kind) + "\t" +
                index_field(key.t) + "\t" + index_field(key.v) + "\t" +
                index_field(key.t2) + "\t" + index_field(key.v2) + "\t" +
                format_double(reps[b]) + "\n";
    write_file(config.out_dir / "replicates.tsv", text);
  }
  return out;
}

void write_metrics(const MonteCarloResult& result, const fs::path& path) {
  std::string text = "p\tsnr\tn\tt\tv\tv2\tbias\tsd\tfailures\n";
  for (const auto& r : result.rows) {
    if (r.a.t != r.b.t) continue;
    text += std::to_string(r.p) + "\t" + format_double(r.snr) + "\t" +
            std::to_string(r.n) + "\t" + std::to_string(r.a.t) + "\t" +
            std::to_string(r.a.v) + "\t" + std::to_string(r.b.v) + "\t" +
            format_double(r.bias) + "\t" + format_double(r.sd) + "\t" +
            std::to_string(r.failures) + "\n";
  }
  write_file(path, text);
}

void write_replicates(const MonteCarloResult& result, const fs::path& path) {
  std::string text = "rep\tt\tv\tt2\tv2\testimate\ttruth\n";
  for (std::size_t m = 0; m < result.estimates.size(); ++m)
    for (std::size_t c = 0; c < result.rows.size(); ++c) {
      const MetricsRow& r = result.rows[c];
      text += std::to_string(result.replicate_ids[m]) + "\t" +
              std::to_string(r.a.t) + "\t" + std::to_string(r.a.v) + "\t" +
              std::to_string(r.b.t) + "\t" + std::to_string(r.b.v) + "\t" +
              format_double(result.estimates[m][c]) + "\t" +
              format_double(r.truth) + "\n";
    }
  write_file(path, text);
}

}  // namespace lvmoe
