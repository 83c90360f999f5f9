#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "attriq/errors.hpp"
#include "attriq/registry.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

// Generic CSV table with '#'-prefixed metadata lines, a format tag, a
// record_id column and named value columns. Backing store for the attribute
// probability matrix, distortion predictions and score files.
struct CsvTable {
  std::string format;  // e.g. "attriq-probmatrix"
  std::map<std::string, std::string> meta;
  std::vector<std::string> columns;
  std::vector<std::string> row_ids;
  Tensor values;  // (rows, columns)

  std::string meta_or(const std::string& key,
                      const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

inline constexpr const char* kProbMatrixFormat = "attriq-probmatrix";
inline constexpr const char* kDistPredFormat = "attriq-distpreds";
inline constexpr const char* kScoresFormat = "attriq-scores";

namespace csv_detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace csv_detail

inline void write_csv_table(const CsvTable& table, const std::string& path) {
  if (table.values.shape.size() != 2 ||
      table.values.shape[0] != table.row_ids.size() ||
      table.values.shape[1] != table.columns.size())
    throw ShapeError("csv table: values " + table.values.shape_str() +
                     " do not match " + std::to_string(table.row_ids.size()) +
                     " rows x " + std::to_string(table.columns.size()) +
                     " columns");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open CSV for writing: " + path);
  out << "# " << table.format << " v1\n";
  for (const auto& [k, v] : table.meta) out << "# " << k << "=" << v << "\n";
  out << "record_id";
  for (const auto& c : table.columns) out << "," << c;
  out << "\n";
  for (std::size_t r = 0; r < table.row_ids.size(); ++r) {
    out << table.row_ids[r];
    for (std::size_t c = 0; c < table.columns.size(); ++c)
      out << "," << csv_detail::format_double(table.values.at(r, c));
    out << "\n";
  }
  if (!out) throw DataError("write failure on CSV: " + path);
}

inline CsvTable load_csv_table(const std::string& path,
                               const std::string& expected_format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV: " + path);
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool saw_format = false;
  bool saw_header = false;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string where = path + ":" + std::to_string(line_no);
    if (line[0] == '#') {
      std::string body = line.substr(1);
      while (!body.empty() && body.front() == ' ') body.erase(body.begin());
      if (!saw_format) {
        auto space = body.find(' ');
        table.format = body.substr(0, space);
        saw_format = true;
        if (table.format != expected_format)
          throw ParseError(where + ": format '" + table.format +
                           "' does not match expected '" + expected_format +
                           "'");
        continue;
      }
      auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ParseError(where + ": metadata line without '='");
      table.meta[body.substr(0, eq)] = body.substr(eq + 1);
      continue;
    }
    if (!saw_format)
      throw ParseError(path + ":1: missing format tag line");
    auto fields = csv_detail::split_csv_line(line);
    if (!saw_header) {
      if (fields.empty() || fields[0] != "record_id")
        throw ParseError(where + ": header must start with record_id");
      table.columns.assign(fields.begin() + 1, fields.end());
      if (table.columns.empty())
        throw ParseError(where + ": no value columns");
      saw_header = true;
      continue;
    }
    if (fields.size() != table.columns.size() + 1)
      throw ParseError(where + ": expected " +
                       std::to_string(table.columns.size() + 1) +
                       " fields, got " + std::to_string(fields.size()));
    table.row_ids.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      try {
        std::size_t used = 0;
        double v = std::stod(fields[c], &used);
        if (used != fields[c].size()) throw std::invalid_argument("trailing");
        values.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(where + ": bad number '" + fields[c] + "'");
      }
    }
  }
  if (!saw_header) throw ParseError(path + ": missing header line");
  table.values =
      Tensor::from({table.row_ids.size(), table.columns.size()},
                   std::move(values));
  if (!table.values.all_finite())
    throw ParseError(path + ": non-finite value in table");
  return table;
}

// Input-purity gate for the regressor: the columns must be exactly the
// registry's attribute columns, same order, nothing else.
inline void require_prob_columns(const CsvTable& table,
                                 const AttributeRegistry& reg) {
  std::vector<std::string> expected = reg.column_names();
  if (table.columns != expected) {
    std::ostringstream os;
    os << "probability matrix columns do not match the registry (expected "
       << expected.size() << " attribute columns";
    for (std::size_t i = 0; i < table.columns.size(); ++i)
      if (i >= expected.size() || table.columns[i] != expected[i]) {
        os << "; first mismatch at column " << i << ": '"
           << table.columns[i] << "'";
        break;
      }
    os << ")";
    throw ConfigError(os.str());
  }
}

// ---- score files -----------------------------------------------------

// Raw-score table: one "score" column plus declared range and polarity.
struct ScoreFile {
  std::vector<std::string> row_ids;
  std::vector<double> raw;
  double range_lo = 0.0;
  double range_hi = 1.0;
  bool higher_better = true;
  std::map<std::string, std::string> meta;
};

inline void write_scores(const ScoreFile& scores, const std::string& path) {
  CsvTable t;
  t.format = kScoresFormat;
  t.meta = scores.meta;
  t.meta["range_lo"] = csv_detail::format_double(scores.range_lo);
  t.meta["range_hi"] = csv_detail::format_double(scores.range_hi);
  t.meta["polarity"] = scores.higher_better ? "higher_better" : "lower_better";
  t.columns = {"score"};
  t.row_ids = scores.row_ids;
  t.values = Tensor::zeros({scores.raw.size(), 1});
  for (std::size_t i = 0; i < scores.raw.size(); ++i)
    t.values.at(i, 0) = scores.raw[i];
  write_csv_table(t, path);
}

inline ScoreFile load_scores(const std::string& path) {
  CsvTable t = load_csv_table(path, kScoresFormat);
  if (t.columns != std::vector<std::string>{"score"})
    throw ParseError(path + ": score file must have exactly one column "
                            "'score'");
  ScoreFile s;
  s.meta = t.meta;
  try {
    s.range_lo = std::stod(t.meta_or("range_lo", "0"));
    s.range_hi = std::stod(t.meta_or("range_hi", "1"));
  } catch (const std::exception&) {
    throw ParseError(path + ": bad range metadata");
  }
  std::string pol = t.meta_or("polarity", "higher_better");
  if (pol != "higher_better" && pol != "lower_better")
    throw ParseError(path + ": unknown polarity '" + pol + "'");
  s.higher_better = pol == "higher_better";
  if (s.range_hi <= s.range_lo)
    throw ParseError(path + ": range_hi must exceed range_lo");
  s.row_ids = t.row_ids;
  s.raw.resize(t.row_ids.size());
  for (std::size_t i = 0; i < s.raw.size(); ++i) s.raw[i] = t.values.at(i, 0);
  return s;
}

}  // namespace attriq
