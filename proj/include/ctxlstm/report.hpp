#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctxlstm {

// One result cell of Tables 2-5: (task, feature set, hidden size) -> value.
struct TaskReport {
  std::string task;      // "word", "score", "score-hard", "topic", "bow-dnn"
  std::string features;  // row label, e.g. "Word + SentSegTopic"
  std::size_t hidden = 0;
  std::string metric;    // "perplexity" or "accuracy"
  double value = 0;
  double ci_half_width = 0;  // 0 when not applicable

  void validate() const;
  bool operator==(const TaskReport&) const = default;
};

// Tab-separated table per (task, metric): rows are feature sets in first
// appearance order, columns are hidden sizes ascending. Cells with a
// confidence interval print as "value±half".
void write_report_table(std::ostream& out, const std::vector<TaskReport>& reports);

// One JSON object per line.
void write_report_records(std::ostream& out, const std::vector<TaskReport>& reports);
std::vector<TaskReport> read_report_records(std::istream& in);

// Fixed-precision rendering shared by the table and the record stream so
// reports are byte-identical across runs with identical inputs.
std::string format_metric(double v);

}  // namespace ctxlstm
