#include "ctxlstm/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include "ctxlstm/common.hpp"
#include "json.hpp"

namespace ctxlstm {

void TaskReport::validate() const {
  if (!std::isfinite(value)) fail(ErrorKind::Numerical, "non-finite " + metric + " in " + task + " report");
  if (metric == "perplexity" && value < 1.0)
    fail(ErrorKind::Numerical, "perplexity below 1 in " + task + " report");
  if (metric == "accuracy" && (value < 0.0 || value > 1.0))
    fail(ErrorKind::Numerical, "accuracy outside [0,1] in " + task + " report");
}

std::string format_metric(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_report_table(std::ostream& out, const std::vector<TaskReport>& reports) {
  std::vector<std::pair<std::string, std::string>> tables;
  for (const auto& r : reports) {
    r.validate();
    const std::pair key{r.task, r.metric};
    if (std::find(tables.begin(), tables.end(), key) == tables.end()) tables.push_back(key);
  }
  bool first = true;
  for (const auto& [task, metric] : tables) {
    if (!first) out << '\n';
    first = false;
    std::vector<std::string> rows;
    std::set<std::size_t> hidden;
    std::map<std::pair<std::string, std::size_t>, const TaskReport*> cells;
    for (const auto& r : reports) {
      if (r.task != task || r.metric != metric) continue;
      if (std::find(rows.begin(), rows.end(), r.features) == rows.end()) rows.push_back(r.features);
      hidden.insert(r.hidden);
      cells[{r.features, r.hidden}] = &r;
    }
    out << task << ' ' << metric;
    for (auto h : hidden) out << "\thidden=" << h;
    out << '\n';
    for (const auto& row : rows) {
      out << row;
      for (auto h : hidden) {
        out << '\t';
        const auto it = cells.find({row, h});
        if (it == cells.end()) {
          out << '-';
          continue;
        }
        out << format_metric(it->second->value);
        if (it->second->ci_half_width > 0) out << "±" << format_metric(it->second->ci_half_width);
      }
      out << '\n';
    }
  }
}

void write_report_records(std::ostream& out, const std::vector<TaskReport>& reports) {
  for (const auto& r : reports) {
    r.validate();
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["features"] = r.features;
    j["hidden"] = r.hidden;
    j["metric"] = r.metric;
    // Strings keep the rendering independent of the JSON float printer.
    j["value"] = format_metric(r.value);
    j["ci_half_width"] = format_metric(r.ci_half_width);
    out << j.dump() << '\n';
  }
}

std::vector<TaskReport> read_report_records(std::istream& in) {
  std::vector<TaskReport> reports;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaskReport r;
      r.task = j.at("task").get<std::string>();
      r.features = j.at("features").get<std::string>();
      r.hidden = j.at("hidden").get<std::size_t>();
      r.metric = j.at("metric").get<std::string>();
      r.value = std::stod(j.at("value").get<std::string>());
      r.ci_half_width = std::stod(j.at("ci_half_width").get<std::string>());
      reports.push_back(std::move(r));
    } catch (const std::exception& e) {
      fail(ErrorKind::Format, std::string("bad report record: ") + e.what());
    }
  }
  return reports;
}

}  // namespace ctxlstm
