// Copyright 2026 The btshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Batch entry points: battle-log parsing, JSON configs, report writing.
// Needs nlohmann/json on the include path.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "btshift/estimators.hpp"
#include "btshift/simulation.hpp"

namespace btshift::cli {

using json = nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_data = 3, exit_numerical = 4 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::invalid_argument:
      return exit_config;
    case ErrorKind::numerical:
      return exit_numerical;
    default:
      return exit_data;
  }
}

inline std::string error_json(const Error& e) {
  return json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump();
}

// ---------------------------------------------------------------- CSV

struct CsvRow {
  std::size_t line = 0;  // 1-based line where the row starts
  std::vector<std::string> fields;
};

/// Comma-separated values with optional double-quoted fields ("" escapes a
/// quote; quoted fields may span lines). Blank lines are skipped.
inline std::vector<CsvRow> parse_csv(const std::string& text) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool quoted = false, in_field = false, after_quote = false;
  std::size_t line = 1;
  row.line = 1;
  auto end_field = [&] {
    row.fields.push_back(field);
    field.clear();
    in_field = false;
    after_quote = false;
  };
  auto end_row = [&] {
    if (!(row.fields.empty() && field.empty() && !in_field)) {
      end_field();
      rows.push_back(std::move(row));
    }
    row = CsvRow{};
    row.line = line;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
          after_quote = true;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      if (in_field && !field.empty()) {
        throw Error(ErrorKind::data, "line " + std::to_string(line) + ": stray quote inside field");
      }
      quoted = true;
      in_field = true;
    } else if (c == ',') {
      end_field();
      in_field = true;
    } else if (c == '\r') {
      continue;
    } else if (c == '\n') {
      ++line;
      end_row();
    } else {
      if (after_quote) {
        throw Error(ErrorKind::data, "line " + std::to_string(line) + ": text after closing quote");
      }
      field += c;
      in_field = true;
    }
  }
  if (quoted) throw Error(ErrorKind::data, "unterminated quoted field at end of file");
  end_row();
  return rows;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::data, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write to a sibling temporary file, then rename over the target.
inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::config, "cannot write '" + tmp + "'");
    out << content;
    if (!out) throw Error(ErrorKind::config, "write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::config, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// ---------------------------------------------------------- battle logs

enum class CovariateType { categorical, numeric };

struct CovariateSpec {
  std::string name;
  CovariateType type = CovariateType::categorical;
};

struct BattleLog {
  std::vector<std::string> players;  // index k-1 holds player k
  std::vector<std::string> columns;  // encoded covariate columns
  std::map<std::string, std::vector<std::string>> levels;  // categorical levels, sorted
  ComparisonDataset data;
};

namespace detail {

inline std::map<std::string, std::size_t> header_index(const CsvRow& header, const std::string& what) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t c = 0; c < header.fields.size(); ++c) {
    if (!idx.emplace(header.fields[c], c).second) {
      throw Error(ErrorKind::data, what + ": duplicate column '" + header.fields[c] + "'");
    }
  }
  return idx;
}

inline std::size_t require_column(const std::map<std::string, std::size_t>& idx, const std::string& name,
                                  const std::string& what) {
  auto it = idx.find(name);
  if (it == idx.end()) throw Error(ErrorKind::data, what + ": missing column '" + name + "'");
  return it->second;
}

inline double parse_number(const std::string& s, std::size_t line, const std::string& col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::data,
                "line " + std::to_string(line) + ": column '" + col + "' is not a number: '" + s + "'");
  }
  return v;
}

/// Raw covariate strings of every data row, in spec order.
inline std::vector<std::vector<std::string>> covariate_cells(const std::vector<CsvRow>& rows,
                                                             const std::vector<CovariateSpec>& specs,
                                                             const std::string& what) {
  const auto idx = header_index(rows.front(), what);
  std::vector<std::size_t> cols;
  for (const auto& s : specs) cols.push_back(require_column(idx, s.name, what));
  std::vector<std::vector<std::string>> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].fields.size() != rows.front().fields.size()) {
      throw Error(ErrorKind::data, what + " line " + std::to_string(rows[r].line) + ": expected " +
                                       std::to_string(rows.front().fields.size()) + " fields, found " +
                                       std::to_string(rows[r].fields.size()));
    }
    std::vector<std::string> cells;
    for (std::size_t c : cols) cells.push_back(rows[r].fields[c]);
    out.push_back(std::move(cells));
  }
  return out;
}

/// Numeric columns pass through; categorical ones become indicators of all
/// levels but the first.
inline std::vector<double> encode(const std::vector<std::string>& cells, const std::vector<CovariateSpec>& specs,
                                  const std::map<std::string, std::vector<std::string>>& levels, std::size_t line,
                                  const std::string& what) {
  std::vector<double> x;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    if (specs[c].type == CovariateType::numeric) {
      x.push_back(parse_number(cells[c], line, specs[c].name));
      continue;
    }
    const auto& lv = levels.at(specs[c].name);
    auto it = std::find(lv.begin(), lv.end(), cells[c]);
    if (it == lv.end()) {
      throw Error(ErrorKind::data, what + " line " + std::to_string(line) + ": category '" + cells[c] +
                                       "' of column '" + specs[c].name + "' is unseen in the labeled log");
    }
    for (std::size_t q = 1; q < lv.size(); ++q) x.push_back(it == lv.begin() + static_cast<long>(q) ? 1.0 : 0.0);
  }
  return x;
}

}  // namespace detail

/// Canonical record order that does not depend on player indexing or on the
/// input row order: records sort by (player names, covariates, outcome as
/// seen from the alphabetically first player); unlabeled rows by covariates.
inline void canonical_order(ComparisonDataset& data, const std::vector<std::string>& names) {
  struct Key {
    std::string lo, hi;
    std::vector<double> x;
    double y;
    auto operator<=>(const Key&) const = default;
  };
  auto key = [&](const ComparisonRecord& r) {
    const std::string& a = names[static_cast<std::size_t>(r.pair.first - 1)];
    const std::string& b = names[static_cast<std::size_t>(r.pair.second - 1)];
    return a < b ? Key{a, b, r.x, r.y} : Key{b, a, r.x, 1.0 - r.y};
  };
  std::stable_sort(data.labeled.begin(), data.labeled.end(),
                   [&](const ComparisonRecord& p, const ComparisonRecord& q) { return key(p) < key(q); });
  if (data.unlabeled) std::stable_sort(data.unlabeled->begin(), data.unlabeled->end());
}

/// Reads a battle log (model_a, model_b, winner plus covariate columns).
/// Player 1 is `reference`; the others are numbered by first appearance.
/// Pairs are stored with k < l and y = 1 when player k wins; ties give 0.5.
inline BattleLog parse_battle_log_text(const std::string& text, const std::vector<CovariateSpec>& covariates,
                                       const std::string& reference,
                                       const std::optional<std::string>& unlabeled_text = std::nullopt) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw Error(ErrorKind::data, "battle log is empty (a header row is required)");
  const auto idx = detail::header_index(rows.front(), "battle log");
  const std::size_t ca = detail::require_column(idx, "model_a", "battle log");
  const std::size_t cb = detail::require_column(idx, "model_b", "battle log");
  const std::size_t cw = detail::require_column(idx, "winner", "battle log");
  const auto cells = detail::covariate_cells(rows, covariates, "battle log");

  BattleLog log;
  log.players.push_back(reference);
  std::map<std::string, int> index{{reference, 1}};
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t c : {ca, cb}) {
      const std::string& name = rows[r].fields[c];
      if (name.empty()) throw Error(ErrorKind::data, "line " + std::to_string(rows[r].line) + ": empty model name");
      if (index.emplace(name, static_cast<int>(log.players.size()) + 1).second) log.players.push_back(name);
    }
  }
  if (log.players.size() < 2) throw Error(ErrorKind::data, "battle log names fewer than two models");
  if (std::count_if(rows.begin() + 1, rows.end(), [&](const CsvRow& row) {
        return row.fields[ca] == reference || row.fields[cb] == reference;
      }) == 0) {
    throw Error(ErrorKind::data, "reference model '" + reference + "' does not appear in the battle log");
  }

  for (std::size_t c = 0; c < covariates.size(); ++c) {
    if (covariates[c].type != CovariateType::categorical) {
      log.columns.push_back(covariates[c].name);
      continue;
    }
    std::set<std::string> lv;
    for (const auto& row : cells) lv.insert(row[c]);
    log.levels[covariates[c].name] = std::vector<std::string>(lv.begin(), lv.end());
    for (auto it = std::next(lv.begin()); it != lv.end(); ++it) log.columns.push_back(covariates[c].name + "=" + *it);
  }

  log.data.players = static_cast<int>(log.players.size());
  log.data.dimension = static_cast<int>(log.columns.size());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    const std::size_t line = rows[r].line;
    const int ia = index.at(f[ca]), ib = index.at(f[cb]);
    if (ia == ib) throw Error(ErrorKind::data, "line " + std::to_string(line) + ": a model cannot face itself");
    double ya = 0.0;  // outcome for model_a
    if (f[cw] == "model_a") {
      ya = 1.0;
    } else if (f[cw] == "model_b") {
      ya = 0.0;
    } else if (f[cw] == "tie") {
      ya = 0.5;
    } else {
      throw Error(ErrorKind::data, "line " + std::to_string(line) + ": winner '" + f[cw] +
                                       "' is not one of model_a, model_b, tie");
    }
    ComparisonRecord rec;
    rec.x = detail::encode(cells[r - 1], covariates, log.levels, line, "battle log");
    rec.pair = {std::min(ia, ib), std::max(ia, ib)};
    rec.y = ia < ib ? ya : 1.0 - ya;
    log.data.labeled.push_back(std::move(rec));
  }

  if (unlabeled_text) {
    const auto urows = parse_csv(*unlabeled_text);
    if (urows.empty()) throw Error(ErrorKind::data, "unlabeled file is empty (a header row is required)");
    const auto ucells = detail::covariate_cells(urows, covariates, "unlabeled file");
    std::vector<std::vector<double>> xs;
    for (std::size_t r = 0; r < ucells.size(); ++r) {
      xs.push_back(detail::encode(ucells[r], covariates, log.levels, urows[r + 1].line, "unlabeled file"));
    }
    log.data.unlabeled = std::move(xs);
  }
  log.data.validate();
  return log;
}

inline BattleLog parse_battle_log(const std::string& path, const std::vector<CovariateSpec>& covariates,
                                  const std::string& reference,
                                  const std::optional<std::string>& unlabeled_path = std::nullopt) {
  std::optional<std::string> utext;
  if (unlabeled_path) utext = read_file(*unlabeled_path);
  return parse_battle_log_text(read_file(path), covariates, reference, utext);
}

// ------------------------------------------------------------- configs

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::config, where + " must be a JSON object");
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw Error(ErrorKind::config, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
T get_or(const json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::config, "key '" + key + "' in " + where + " has the wrong type");
  }
}

template <class T>
T require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) {
    throw Error(ErrorKind::config, "missing required key '" + key + "' in " + where);
  }
  return get_or<T>(obj, key, T{}, where);
}

inline std::optional<std::string> optional_string(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return require<std::string>(obj, key, where);
}

inline json nullable(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

}  // namespace detail

inline LearnerSpec learner_from_json(const json& j, const LearnerSpec& fallback, const std::string& where) {
  if (j.is_null()) return fallback;
  detail::check_keys(j, {"kind", "degree", "interactions", "max_power", "ridge", "neighbors", "inner_folds", "library"},
                     where);
  LearnerSpec s;
  try {
    s.kind = learner_kind_from_string(detail::get_or<std::string>(j, "kind", to_string(fallback.kind), where));
  } catch (const Error& e) {
    throw Error(ErrorKind::config, std::string(e.what()) + " (" + where + ")");
  }
  const bool same = s.kind == fallback.kind;
  s.degree = detail::get_or<int>(j, "degree", same ? fallback.degree : 1, where);
  s.interactions = detail::get_or<bool>(j, "interactions", same ? fallback.interactions : false, where);
  s.max_power = detail::get_or<int>(j, "max_power", same ? fallback.max_power : 0, where);
  s.ridge = detail::get_or<double>(j, "ridge", fallback.ridge, where);
  s.neighbors = detail::get_or<int>(j, "neighbors", fallback.neighbors, where);
  s.inner_folds = detail::get_or<int>(j, "inner_folds", fallback.inner_folds, where);
  if (j.contains("library")) {
    if (!j.at("library").is_array()) throw Error(ErrorKind::config, "library in " + where + " must be an array");
    for (std::size_t q = 0; q < j.at("library").size(); ++q) {
      s.library.push_back(learner_from_json(j.at("library")[q], LearnerSpec{}, where + ".library[" + std::to_string(q) + "]"));
    }
  }
  s.validate();
  return s;
}

inline json learner_to_json(const LearnerSpec& s) {
  json j{{"kind", to_string(s.kind)},   {"degree", s.degree},       {"interactions", s.interactions},
         {"max_power", s.max_power},    {"ridge", s.ridge},         {"neighbors", s.neighbors},
         {"inner_folds", s.inner_folds}};
  if (!s.library.empty()) {
    j["library"] = json::array();
    for (const auto& l : s.library) j["library"].push_back(learner_to_json(l));
  }
  return j;
}

struct EstimateConfig {
  std::string input;
  std::optional<std::string> unlabeled;
  std::string reference;
  std::vector<CovariateSpec> covariates;
  Estimand estimand = Estimand::phi;
  Regime regime = Regime::no_shift;
  std::vector<std::pair<std::string, std::string>> gamma;  // cond_bt_if only
  std::vector<std::tuple<std::string, std::string, double>> rho;  // empty: uniform
  NuisanceSpec nuisance;
  double level = 0.95;
  SolverOptions solver;
  std::string output;
  std::optional<std::string> table;

  static EstimateConfig from_json(const json& j);
  json to_json() const;
};

inline Regime regime_from_string(const std::string& s) {
  for (Regime r : {Regime::no_shift, Regime::fusion, Regime::cond_bt_if, Regime::cond_bt_eif}) {
    if (s == to_string(r)) return r;
  }
  throw Error(ErrorKind::config, "unknown regime '" + s + "' (no_shift, fusion, cond_bt_if, cond_bt_eif)");
}

inline EstimateConfig EstimateConfig::from_json(const json& j) {
  const std::string W = "estimate config";
  detail::check_keys(j, {"command", "input", "unlabeled", "reference", "covariates", "estimand", "regime", "gamma",
                         "rho", "nuisance", "seed", "level", "solver", "output", "table"},
                     W);
  EstimateConfig c;
  c.input = detail::require<std::string>(j, "input", W);
  c.unlabeled = detail::optional_string(j, "unlabeled", W);
  c.reference = detail::require<std::string>(j, "reference", W);
  c.output = detail::require<std::string>(j, "output", W);
  c.table = detail::optional_string(j, "table", W);
  if (j.contains("covariates") && !j.at("covariates").is_null()) {
    if (!j.at("covariates").is_array()) throw Error(ErrorKind::config, "covariates must be an array");
    for (const auto& cj : j.at("covariates")) {
      detail::check_keys(cj, {"name", "type"}, "covariates entry");
      CovariateSpec s;
      s.name = detail::require<std::string>(cj, "name", "covariates entry");
      const auto type = detail::get_or<std::string>(cj, "type", "categorical", "covariates entry");
      if (type == "categorical") {
        s.type = CovariateType::categorical;
      } else if (type == "numeric") {
        s.type = CovariateType::numeric;
      } else {
        throw Error(ErrorKind::config, "covariate type must be categorical or numeric, got '" + type + "'");
      }
      c.covariates.push_back(s);
    }
  }
  const auto est = detail::get_or<std::string>(j, "estimand", "phi", W);
  if (est != "phi" && est != "psi") throw Error(ErrorKind::config, "estimand must be phi or psi");
  c.estimand = est == "phi" ? Estimand::phi : Estimand::psi;
  c.regime = regime_from_string(detail::get_or<std::string>(j, "regime", "no_shift", W));
  if (j.contains("gamma") && !j.at("gamma").is_null()) {
    for (const auto& g : j.at("gamma")) {
      if (!g.is_array() || g.size() != 2 || !g[0].is_string() || !g[1].is_string()) {
        throw Error(ErrorKind::config, "gamma entries must be [model, model] pairs");
      }
      c.gamma.emplace_back(g[0].get<std::string>(), g[1].get<std::string>());
    }
  }
  if (c.regime == Regime::cond_bt_if && c.gamma.empty()) {
    throw Error(ErrorKind::config, "regime cond_bt_if needs a non-empty gamma pair list");
  }
  if (j.contains("rho") && !j.at("rho").is_null()) {
    const json& r = j.at("rho");
    if (r.is_string()) {
      if (r.get<std::string>() != "uniform") throw Error(ErrorKind::config, "rho must be \"uniform\" or a table");
    } else if (r.is_array()) {
      for (const auto& e : r) {
        detail::check_keys(e, {"a", "b", "weight"}, "rho entry");
        c.rho.emplace_back(detail::require<std::string>(e, "a", "rho entry"),
                           detail::require<std::string>(e, "b", "rho entry"),
                           detail::require<double>(e, "weight", "rho entry"));
      }
    } else {
      throw Error(ErrorKind::config, "rho must be \"uniform\" or a table");
    }
  }
  const json nj = j.contains("nuisance") ? j.at("nuisance") : json::object();
  detail::check_keys(nj, {"outcome", "propensity", "ratio", "ratio_route", "folds", "clip_eps", "ratio_cap"},
                     "nuisance");
  const NuisanceSpec def;
  auto sub = [&](const char* key) { return nj.contains(key) ? nj.at(key) : json(nullptr); };
  c.nuisance.outcome = learner_from_json(sub("outcome"), def.outcome, "nuisance.outcome");
  c.nuisance.propensity = learner_from_json(sub("propensity"), def.propensity, "nuisance.propensity");
  c.nuisance.ratio = learner_from_json(sub("ratio"), def.ratio, "nuisance.ratio");
  const auto route = detail::get_or<std::string>(nj, "ratio_route", "classifier", "nuisance");
  if (route != "classifier" && route != "categorical") {
    throw Error(ErrorKind::config, "ratio_route must be classifier or categorical");
  }
  c.nuisance.ratio_route = route == "classifier" ? RatioRoute::classifier : RatioRoute::categorical;
  c.nuisance.folds = detail::get_or<int>(nj, "folds", def.folds, "nuisance");
  c.nuisance.clip_eps = detail::get_or<double>(nj, "clip_eps", def.clip_eps, "nuisance");
  c.nuisance.ratio_cap = detail::get_or<double>(nj, "ratio_cap", def.ratio_cap, "nuisance");
  c.nuisance.seed = detail::get_or<std::uint64_t>(j, "seed", 1, W);
  c.nuisance.validate();
  c.level = detail::get_or<double>(j, "level", 0.95, W);
  if (!(c.level > 0.0 && c.level < 1.0)) throw Error(ErrorKind::config, "level must be in (0,1)");
  const json sj = j.contains("solver") ? j.at("solver") : json::object();
  detail::check_keys(sj, {"tol", "max_iter"}, "solver");
  c.solver.tol = detail::get_or<double>(sj, "tol", c.solver.tol, "solver");
  c.solver.max_iter = detail::get_or<int>(sj, "max_iter", c.solver.max_iter, "solver");
  try {
    c.solver.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::config, e.what());
  }
  if (c.regime == Regime::fusion && !c.unlabeled) {
    throw Error(ErrorKind::config, "regime fusion needs an unlabeled covariate file");
  }
  return c;
}

inline json EstimateConfig::to_json() const {
  json j;
  j["command"] = "estimate";
  j["input"] = input;
  j["unlabeled"] = detail::nullable(unlabeled);
  j["reference"] = reference;
  j["covariates"] = json::array();
  for (const auto& s : covariates) {
    j["covariates"].push_back({{"name", s.name}, {"type", s.type == CovariateType::numeric ? "numeric" : "categorical"}});
  }
  j["estimand"] = to_string(estimand);
  j["regime"] = to_string(regime);
  j["gamma"] = json::array();
  for (const auto& [a, b] : gamma) j["gamma"].push_back({a, b});
  if (rho.empty()) {
    j["rho"] = "uniform";
  } else {
    j["rho"] = json::array();
    for (const auto& [a, b, w] : rho) j["rho"].push_back({{"a", a}, {"b", b}, {"weight", w}});
  }
  j["nuisance"] = {{"outcome", learner_to_json(nuisance.outcome)},
                   {"propensity", learner_to_json(nuisance.propensity)},
                   {"ratio", learner_to_json(nuisance.ratio)},
                   {"ratio_route", nuisance.ratio_route == RatioRoute::classifier ? "classifier" : "categorical"},
                   {"folds", nuisance.folds},
                   {"clip_eps", nuisance.clip_eps},
                   {"ratio_cap", nuisance.ratio_cap}};
  j["seed"] = nuisance.seed;
  j["level"] = level;
  j["solver"] = {{"tol", solver.tol}, {"max_iter", solver.max_iter}};
  j["output"] = output;
  j["table"] = detail::nullable(table);
  return j;
}

// ----------------------------------------------------------- reporting

/// Half-up rounding to two decimals (ties away from zero), as printed text.
inline std::string fixed2(double v) {
  const double r = std::floor(std::abs(v) * 100.0 + 0.5 + 1e-9) / 100.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", r == 0.0 ? 0.0 : std::copysign(r, v));
  return buf;
}

struct TableRow {
  std::string estimate;
  std::string std;
  std::string ci;
};

/// Printed columns of one player: the interval is built from full-precision
/// values and rounded afterwards.
inline TableRow format_row(double estimate, double std_error, double level = 0.95) {
  const double z = normal_quantile(0.5 + 0.5 * level);
  return {fixed2(estimate), fixed2(std_error),
          "(" + fixed2(estimate - z * std_error) + ", " + fixed2(estimate + z * std_error) + ")"};
}

inline std::string format_table(const json& report) {
  std::vector<const json*> rows;
  for (const auto& p : report.at("players")) rows.push_back(&p);
  std::stable_sort(rows.begin(), rows.end(), [](const json* a, const json* b) {
    return a->at("estimate").get<double>() > b->at("estimate").get<double>();
  });
  std::size_t width = 5;
  for (const json* p : rows) width = std::max(width, p->at("name").get<std::string>().size());
  const double level = report.at("level").get<double>();
  std::ostringstream out;
  char pct[16];
  std::snprintf(pct, sizeof pct, "%g%%", 100.0 * level);
  out << std::string("model") << std::string(width - 5 + 2, ' ') << "estimate  std   " << pct << " CI\n";
  for (const json* p : rows) {
    const std::string name = p->at("name").get<std::string>();
    const TableRow r = format_row(p->at("estimate").get<double>(), p->at("std").get<double>(), level);
    char line[256];
    std::snprintf(line, sizeof line, "%8s  %5s  %s", r.estimate.c_str(), r.std.c_str(), r.ci.c_str());
    out << name << std::string(width - name.size(), ' ') << line << "\n";
  }
  return out.str();
}

inline json diagnostics_json(const Diagnostics& d) {
  return {{"max_solver_iterations", d.max_solver_iterations},
          {"total_solver_iterations", d.total_solver_iterations},
          {"clipped_outcome", d.clipped_outcome},
          {"clipped_propensity", d.clipped_propensity},
          {"clipped_ratio", d.clipped_ratio},
          {"fold_seeds", d.fold_seeds},
          {"records", d.records}};
}

// ------------------------------------------------------------ commands

inline Vector resolve_rho(const EstimateConfig& c, const BattleLog& log) {
  const int K = log.data.players;
  if (c.rho.empty()) return PairwiseScheme::uniform(K).rho();
  Vector rho = Vector::Zero(pair_count(K));
  auto idx = [&](const std::string& name) {
    auto it = std::find(log.players.begin(), log.players.end(), name);
    if (it == log.players.end()) throw Error(ErrorKind::config, "rho names unknown model '" + name + "'");
    return static_cast<int>(it - log.players.begin()) + 1;
  };
  for (const auto& [a, b, w] : c.rho) {
    const int ia = idx(a), ib = idx(b);
    if (ia == ib) throw Error(ErrorKind::config, "rho entry pairs a model with itself");
    rho[pair_to_index({std::min(ia, ib), std::max(ia, ib)}, K)] += w;
  }
  return PairwiseScheme(K, rho).rho();
}

/// Runs the configured estimator; returns the report JSON.
inline json estimate_report(const EstimateConfig& c, BattleLog log) {
  canonical_order(log.data, log.players);
  const int K = log.data.players;
  const Vector rho = resolve_rho(c, log);
  const bool fusion = log.data.fusion();
  const NuisanceBundle b = fit_nuisance(log.data, c.nuisance);
  EstimatorOptions opts;
  opts.solver = c.solver;
  opts.level = c.level;
  EstimateReport rep;
  const bool phi = c.estimand == Estimand::phi;
  switch (c.regime) {
    case Regime::no_shift:
      rep = phi ? one_step_phi(log.data, b, rho, opts) : one_step_psi(log.data, b, rho, opts);
      break;
    case Regime::fusion:
      rep = phi ? one_step_phi_fusion(log.data, b, rho, opts) : one_step_psi_fusion(log.data, b, rho, opts);
      break;
    case Regime::cond_bt_if: {
      std::vector<Pair> pairs;
      for (const auto& [a, bb] : c.gamma) {
        auto ia = std::find(log.players.begin(), log.players.end(), a);
        auto ib = std::find(log.players.begin(), log.players.end(), bb);
        if (ia == log.players.end() || ib == log.players.end()) {
          throw Error(ErrorKind::config, "gamma names a model absent from the log");
        }
        const int ka = static_cast<int>(ia - log.players.begin()) + 1;
        const int kb = static_cast<int>(ib - log.players.begin()) + 1;
        pairs.push_back({std::min(ka, kb), std::max(ka, kb)});
      }
      const ComparisonMatrix gamma = build_gamma(pairs, K);
      rep = phi ? cond_bt_if_phi(log.data, b, gamma, opts, fusion)
                : cond_bt_psi(log.data, b, gamma, rho, opts, fusion, false);
      break;
    }
    case Regime::cond_bt_eif:
      rep = phi ? cond_bt_eif_phi(log.data, b, opts, fusion) : cond_bt_psi(log.data, b, std::nullopt, rho, opts, fusion, true);
      break;
    default:
      throw Error(ErrorKind::config, "regime not available from the command line");
  }
  json players = json::array();
  players.push_back({{"name", log.players[0]}, {"index", 1}, {"reference", true}, {"estimate", 0.0},
                     {"plug_in", 0.0}, {"std", 0.0}, {"ci", {0.0, 0.0}}});
  const Vector se = rep.std_errors();
  for (int k = 2; k <= K; ++k) {
    const auto q = static_cast<Eigen::Index>(k - 2);
    players.push_back({{"name", log.players[static_cast<std::size_t>(k - 1)]},
                       {"index", k},
                       {"reference", false},
                       {"estimate", rep.point[q]},
                       {"plug_in", rep.plug_in[q]},
                       {"std", se[q]},
                       {"ci", {rep.wald[static_cast<std::size_t>(q)].lower, rep.wald[static_cast<std::size_t>(q)].upper}}});
  }
  json cov = json::array();
  for (Eigen::Index r = 0; r < rep.covariance.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index q = 0; q < rep.covariance.cols(); ++q) row.push_back(rep.covariance(r, q));
    cov.push_back(row);
  }
  json pairs_rho = json::array();
  for (int j = 0; j < pair_count(K); ++j) {
    const Pair p = index_to_pair(j, K);
    pairs_rho.push_back({log.players[static_cast<std::size_t>(p.first - 1)],
                         log.players[static_cast<std::size_t>(p.second - 1)], rho[j]});
  }
  json diag = diagnostics_json(rep.diagnostics);
  diag["labeled"] = log.data.n();
  diag["unlabeled"] = log.data.m();
  diag["observed_pairs"] = b.observed_count();
  diag["covariate_columns"] = log.columns;
  return {{"players", players},
          {"reference", log.players[0]},
          {"regime", to_string(c.regime)},
          {"estimand", to_string(c.estimand)},
          {"fusion", fusion},
          {"level", c.level},
          {"rho", pairs_rho},
          {"covariance", cov},
          {"diagnostics", diag},
          {"config", c.to_json()}};
}

inline json cmd_estimate(const json& config) {
  const EstimateConfig c = EstimateConfig::from_json(config);
  BattleLog log = parse_battle_log(c.input, c.covariates, c.reference, c.unlabeled);
  const json report = estimate_report(c, std::move(log));
  atomic_write(c.output, report.dump(2) + "\n");
  if (c.table) atomic_write(*c.table, format_table(report));
  return report;
}

struct SimulateConfig {
  SettingSpec spec;
  int replications = 10;
  std::string output_json;
  std::optional<std::string> output_csv;

  static SimulateConfig from_json(const json& j) {
    const std::string W = "simulate config";
    detail::check_keys(j, {"command", "setting", "n", "m", "replications", "seed", "mode", "regimes", "folds", "level",
                           "stack", "neighbors", "threads", "output_json", "output_csv"},
                       W);
    SimulateConfig c;
    const auto setting = detail::get_or<std::string>(j, "setting", "I", W);
    if (setting != "I" && setting != "II") throw Error(ErrorKind::config, "setting must be I or II");
    c.spec.setting = setting == "I" ? Setting::I : Setting::II;
    c.spec.n = detail::get_or<std::size_t>(j, "n", 2000, W);
    c.spec.m = detail::get_or<std::size_t>(j, "m", c.spec.n, W);
    c.replications = detail::get_or<int>(j, "replications", 10, W);
    c.spec.seed = detail::get_or<std::uint64_t>(j, "seed", 1, W);
    const auto mode = detail::get_or<std::string>(j, "mode", "flexible", W);
    if (mode == "flexible") {
      c.spec.mode = NuisanceMode::flexible;
    } else if (mode == "working") {
      c.spec.mode = NuisanceMode::working;
    } else if (mode == "oracle") {
      c.spec.mode = NuisanceMode::oracle;
    } else {
      throw Error(ErrorKind::config, "mode must be flexible, working or oracle");
    }
    if (j.contains("regimes") && !j.at("regimes").is_null()) {
      c.spec.regimes = detail::get_or<std::vector<std::string>>(j, "regimes", {}, W);
    } else {
      c.spec.regimes = c.spec.setting == Setting::I ? std::vector<std::string>{"phi_fusion", "psi_fusion"}
                                                    : std::vector<std::string>{"cond_if_phi", "cond_eif_phi"};
    }
    c.spec.folds = detail::get_or<int>(j, "folds", 5, W);
    c.spec.level = detail::get_or<double>(j, "level", 0.95, W);
    c.spec.stack = detail::get_or<bool>(j, "stack", false, W);
    c.spec.neighbors = detail::get_or<int>(j, "neighbors", 50, W);
    c.spec.threads = detail::get_or<unsigned>(j, "threads", 0, W);
    c.output_json = detail::require<std::string>(j, "output_json", W);
    c.output_csv = detail::optional_string(j, "output_csv", W);
    if (c.replications < 1) throw Error(ErrorKind::config, "replications must be >= 1");
    if (c.spec.folds < 2) throw Error(ErrorKind::config, "folds must be >= 2");
    c.spec.validate();
    return c;
  }

  json to_json() const {
    return {{"command", "simulate"},
            {"setting", to_string(spec.setting)},
            {"n", spec.n},
            {"m", spec.m},
            {"replications", replications},
            {"seed", spec.seed},
            {"mode", to_string(spec.mode)},
            {"regimes", spec.regimes},
            {"folds", spec.folds},
            {"level", spec.level},
            {"stack", spec.stack},
            {"neighbors", spec.neighbors},
            {"threads", spec.threads},
            {"output_json", output_json},
            {"output_csv", detail::nullable(output_csv)}};
  }
};

inline const char* metrics_csv_header() {
  return "regime,estimator,component,truth,mean_estimate,scaled_bias,coverage,mean_width,mean_std,replications\n";
}

inline std::string metrics_csv(const ReplicationTable& t) {
  std::string out = metrics_csv_header();
  for (const auto& r : t.rows) {
    out += r.regime + "," + r.estimator + "," + std::to_string(r.component) + "," + csv_number(r.truth) + "," +
           csv_number(r.mean_estimate) + "," + csv_number(r.scaled_bias) + "," + csv_number(r.coverage) + "," +
           csv_number(r.mean_width) + "," + csv_number(r.mean_std) + "," + std::to_string(r.replications) + "\n";
  }
  return out;
}

inline json metrics_json(const ReplicationTable& t, const SimulateConfig& c) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"regime", r.regime},
                    {"estimator", r.estimator},
                    {"component", r.component},
                    {"truth", r.truth},
                    {"mean_estimate", r.mean_estimate},
                    {"scaled_bias", r.scaled_bias},
                    {"coverage", r.coverage},
                    {"mean_width", r.mean_width},
                    {"mean_std", r.mean_std},
                    {"replications", r.replications}});
  }
  json errors = json::array();
  for (std::size_t r = 0; r < t.runs.size(); ++r) {
    if (!t.runs[r].ok) errors.push_back({{"replication", r}, {"message", t.runs[r].error}});
  }
  return {{"requested", t.requested}, {"failures", t.failures}, {"errors", errors}, {"rows", rows},
          {"config", c.to_json()}};
}

inline json cmd_simulate(const json& config) {
  const SimulateConfig c = SimulateConfig::from_json(config);
  const ReplicationTable t = run_replications(c.spec, c.replications);
  const json out = metrics_json(t, c);
  atomic_write(c.output_json, out.dump(2) + "\n");
  if (c.output_csv) atomic_write(*c.output_csv, metrics_csv(t));
  return out;
}

/// Marginal BT maximum likelihood over all labeled comparisons (ties count
/// half), standard errors from the inverse observed information.
inline json marginal_bt_report(const BattleLog& log, double level, const SolverOptions& solver) {
  const int K = log.data.players;
  const int P = pair_count(K);
  Vector count = Vector::Zero(P), wins = Vector::Zero(P);
  for (const auto& r : log.data.labeled) {
    const int j = pair_to_index(r.pair, K);
    count[j] += 1.0;
    wins[j] += r.y;
  }
  if (!btshift::detail::weights_connect(K, count)) {
    throw Error(ErrorKind::identification,
                "the comparison graph is disconnected; strengths are not identified");
  }
  // A finite maximizer exists iff the win graph (ties count both ways) is
  // strongly connected.
  std::vector<std::vector<int>> beats(static_cast<std::size_t>(K)), beaten(static_cast<std::size_t>(K));
  for (const auto& r : log.data.labeled) {
    const auto k = static_cast<std::size_t>(r.pair.first - 1), l = static_cast<std::size_t>(r.pair.second - 1);
    if (r.y > 0.0) {
      beats[k].push_back(static_cast<int>(l));
      beaten[l].push_back(static_cast<int>(k));
    }
    if (r.y < 1.0) {
      beats[l].push_back(static_cast<int>(k));
      beaten[k].push_back(static_cast<int>(l));
    }
  }
  auto reaches_all = [K](const std::vector<std::vector<int>>& adj) {
    std::vector<bool> seen(static_cast<std::size_t>(K), false);
    std::vector<int> stack{0};
    seen[0] = true;
    int count_seen = 1;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int w : adj[static_cast<std::size_t>(v)]) {
        if (!seen[static_cast<std::size_t>(w)]) {
          seen[static_cast<std::size_t>(w)] = true;
          ++count_seen;
          stack.push_back(w);
        }
      }
    }
    return count_seen == K;
  };
  if (!reaches_all(beats) || !reaches_all(beaten)) {
    throw Error(ErrorKind::numerical,
                "marginal BT likelihood has no finite maximizer: some group of models wins or loses "
                "every comparison against the rest");
  }
  const double n = count.sum();
  const Vector rho = count / n;
  StrengthVector theta = StrengthVector::Zero(K - 1);
  auto score = [&](const StrengthVector& th) {
    Vector g = Vector::Zero(K - 1);
    for (int j = 0; j < P; ++j) {
      if (count[j] == 0.0) continue;
      const Pair p = index_to_pair(j, K);
      const double s = sigmoid(btshift::detail::strength(th, p.first) - btshift::detail::strength(th, p.second));
      const double r = (wins[j] - count[j] * s) / n;
      if (p.first >= 2) g[p.first - 2] += r;
      g[p.second - 2] -= r;
    }
    return g;
  };
  auto loglik = [&](const StrengthVector& th) {
    double v = 0.0;
    for (int j = 0; j < P; ++j) {
      if (count[j] == 0.0) continue;
      const Pair p = index_to_pair(j, K);
      const double d = btshift::detail::strength(th, p.first) - btshift::detail::strength(th, p.second);
      v += wins[j] * -std::log1p(std::exp(-d)) + (count[j] - wins[j]) * -std::log1p(std::exp(d));
    }
    return v / n;
  };
  int it = 0;
  Vector g = score(theta);
  while (g.lpNorm<Eigen::Infinity>() > solver.tol) {
    if (++it > solver.max_iter) {
      throw Error(ErrorKind::numerical,
                  "marginal BT likelihood has no finite maximizer (a model wins or loses every comparison?)");
    }
    const Vector step = jac_U_theta(theta, rho).llt().solve(g);
    double t = 1.0;
    const double base = loglik(theta);
    while (loglik(theta + t * step) < base - 1e-15 && t > 1e-8) t *= 0.5;
    theta += t * step;
    g = score(theta);
  }
  const Matrix cov = (n * jac_U_theta(theta, rho)).inverse();
  const double z = normal_quantile(0.5 + 0.5 * level);
  json players = json::array();
  players.push_back({{"name", log.players[0]}, {"index", 1}, {"reference", true}, {"estimate", 0.0},
                     {"std", 0.0}, {"ci", {0.0, 0.0}}});
  for (int k = 2; k <= K; ++k) {
    const double se = std::sqrt(cov(k - 2, k - 2));
    players.push_back({{"name", log.players[static_cast<std::size_t>(k - 1)]},
                       {"index", k},
                       {"reference", false},
                       {"estimate", theta[k - 2]},
                       {"std", se},
                       {"ci", {theta[k - 2] - z * se, theta[k - 2] + z * se}}});
  }
  return {{"players", players}, {"reference", log.players[0]}, {"regime", "marginal_bt"},
          {"estimand", "marginal"}, {"level", level}, {"diagnostics", {{"labeled", log.data.n()}, {"iterations", it}}}};
}

inline json cmd_marginal_bt(const json& config) {
  const std::string W = "marginal-bt config";
  detail::check_keys(config, {"command", "input", "reference", "level", "output", "table"}, W);
  const std::string input = detail::require<std::string>(config, "input", W);
  const std::string reference = detail::require<std::string>(config, "reference", W);
  const std::string output = detail::require<std::string>(config, "output", W);
  const auto table = detail::optional_string(config, "table", W);
  const double level = detail::get_or<double>(config, "level", 0.95, W);
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::config, "level must be in (0,1)");
  const BattleLog log = parse_battle_log(input, {}, reference);
  json report = marginal_bt_report(log, level, SolverOptions{});
  report["config"] = {{"command", "marginal-bt"}, {"input", input},   {"reference", reference},
                      {"level", level},           {"output", output}, {"table", detail::nullable(table)}};
  atomic_write(output, report.dump(2) + "\n");
  if (table) atomic_write(*table, format_table(report));
  return report;
}

inline json load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::config, e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::config, "config '" + path + "' is not valid JSON: " + e.what());
  }
}

/// Dispatches a subcommand; errors go to `err` as one JSON line.
inline int run_command(const std::string& command, const std::string& config_path, std::ostream& err) {
  try {
    const json config = load_config(config_path);
    if (config.contains("command") && config.at("command") != command) {
      throw Error(ErrorKind::config, "config is for command '" + config.at("command").dump() + "'");
    }
    if (command == "estimate") {
      cmd_estimate(config);
    } else if (command == "simulate") {
      cmd_simulate(config);
    } else if (command == "marginal-bt") {
      cmd_marginal_bt(config);
    } else {
      throw Error(ErrorKind::config, "unknown command '" + command + "'");
    }
    return exit_ok;
  } catch (const Error& e) {
    err << error_json(e) << "\n";
    return exit_code_for(e.kind());
  } catch (const json::exception& e) {
    err << error_json(Error(ErrorKind::config, e.what())) << "\n";
    return exit_config;
  } catch (const std::exception& e) {
    err << error_json(Error(ErrorKind::numerical, e.what())) << "\n";
    return exit_numerical;
  }
}

}  // namespace btshift::cli
