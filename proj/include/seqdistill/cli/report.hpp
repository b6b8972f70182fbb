#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "seqdistill/eval/diagnostics.hpp"
#include "seqdistill/io.hpp"

namespace seqdistill::cli {

// Provenance carried by every output file.
struct ReportHeader {
  std::string command;
  std::string config_hash;
  std::string input_hash;
  std::uint64_t seed = 0;
  std::string candidates_hash;  // empty when no evaluation was run
};

// Git-style blob hash (SHA-256 flavour) of one input.
inline std::string blob_hash(std::string_view content) {
  return io::Sha256().update("blob " + std::to_string(content.size())).update("\0", 1).update(content).hex();
}

// Combined hash of several inputs, in order.
inline std::string inputs_hash(const std::vector<std::string>& blob_hashes) {
  io::Sha256 h;
  for (const auto& b : blob_hashes) h.update(b).update("\n");
  return h.hex();
}

struct Table {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::pair<std::string, std::string>> header_fields(const ReportHeader& h) {
  std::vector<std::pair<std::string, std::string>> f{{"command", h.command},
                                                     {"config_hash", h.config_hash},
                                                     {"input_hash", h.input_hash},
                                                     {"seed", std::to_string(h.seed)}};
  if (!h.candidates_hash.empty()) f.emplace_back("candidates_hash", h.candidates_hash);
  return f;
}

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string to_csv(const ReportHeader& h, const std::vector<Table>& tables) {
  std::string out;
  for (const auto& [k, v] : header_fields(h)) out += "# " + k + "=" + v + "\n";
  for (std::size_t t = 0; t < tables.size(); ++t) {
    if (t) out += "\n";
    const Table& tb = tables[t];
    for (std::size_t c = 0; c < tb.columns.size(); ++c) out += (c ? "," : "") + csv_cell(tb.columns[c]);
    out += "\n";
    for (const auto& row : tb.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + csv_cell(row[c]);
      out += "\n";
    }
  }
  return out;
}

inline std::string to_json(const ReportHeader& h, const std::vector<Table>& tables, const nlohmann::json& config) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : header_fields(h)) j[k] = v;
  j["config"] = config;
  j["tables"] = nlohmann::ordered_json::array();
  for (const auto& tb : tables) {
    nlohmann::ordered_json t;
    t["title"] = tb.title;
    t["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : tb.rows) {
      nlohmann::ordered_json r;
      for (std::size_t c = 0; c < tb.columns.size(); ++c) r[tb.columns[c]] = row[c];
      t["rows"].push_back(r);
    }
    j["tables"].push_back(t);
  }
  return j.dump(2) + "\n";
}

inline std::string to_markdown(const ReportHeader& h, const std::vector<Table>& tables) {
  std::string out;
  for (const auto& [k, v] : header_fields(h)) out += "<!-- " + k + "=" + v + " -->\n";
  for (const auto& tb : tables) {
    out += "\n### " + tb.title + "\n\n|";
    for (const auto& c : tb.columns) out += " " + c + " |";
    out += "\n|";
    for (std::size_t c = 0; c < tb.columns.size(); ++c) out += c ? " ---: |" : " --- |";
    out += "\n";
    for (const auto& row : tb.rows) {
      out += "|";
      for (const auto& cell : row) out += " " + cell + " |";
      out += "\n";
    }
  }
  return out;
}

enum class ReportFormat { csv, json, markdown };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  fail(ErrorKind::config, "unknown report format '" + s + "' (expected csv, json or markdown)");
}

// Writes base.csv / base.json / base.md for the requested formats.
inline void write_report(const std::string& base, const ReportHeader& h, const std::vector<Table>& tables,
                         const nlohmann::json& config, const std::vector<ReportFormat>& formats) {
  for (ReportFormat f : formats) {
    switch (f) {
      case ReportFormat::csv: io::atomic_write(base + ".csv", to_csv(h, tables)); break;
      case ReportFormat::json: io::atomic_write(base + ".json", to_json(h, tables, config)); break;
      case ReportFormat::markdown: io::atomic_write(base + ".md", to_markdown(h, tables)); break;
    }
  }
}

// -------------------------------------------------------------- renderers

inline std::string metric_cell(const eval::EvalReport& r, const std::string& name) {
  return r.empty() ? "N/A" : eval::format_metric(r.at(name));
}

// experiment, subset, metric, value
inline Table eval_table(const std::string& experiment, const std::vector<eval::EvalReport>& reports) {
  Table t{"evaluation", {"experiment", "subset", "metric", "value"}, {}};
  for (const auto& r : reports) {
    for (const auto& name : eval::metric_names()) t.rows.push_back({experiment, r.subset, name, metric_cell(r, name)});
    t.rows.push_back({experiment, r.subset, "users", std::to_string(r.users)});
  }
  return t;
}

// model, metric, original, shuffled, change_ratio
inline Table shuffle_table(const std::vector<eval::DiagnosticReport>& reports) {
  Table t{reports.empty() ? "shuffle" : eval::to_string(reports.front().mode),
          {"model", "metric", "original", "shuffled", "change_ratio"},
          {}};
  for (const auto& r : reports)
    for (const auto& name : eval::metric_names())
      t.rows.push_back({r.model, name, metric_cell(r.original, name), metric_cell(r.shuffled, name),
                        eval::format_percent(r.change.count(name) ? r.change.at(name) : std::nullopt)});
  return t;
}

inline Table similarity_table(const std::vector<eval::DiagnosticReport>& reports) {
  Table t{"rep-sim", {"model", "users", "skipped", "mean_cosine", "std", "min", "max"}, {}};
  for (const auto& r : reports) {
    if (!r.similarity) continue;
    const auto& s = *r.similarity;
    t.rows.push_back({r.model, std::to_string(s.users), std::to_string(s.skipped), eval::format_metric(s.mean),
                      eval::format_metric(s.stddev), eval::format_metric(s.min), eval::format_metric(s.max)});
  }
  return t;
}

}  // namespace seqdistill::cli
