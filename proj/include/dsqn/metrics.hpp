#pragma once

#include <fstream>
#include <mutex>
#include <optional>
#include <string>

namespace dsqn {

// One row of training telemetry. Episode rows fill episode_return / loss /
// epsilon; evaluation rows fill eval_mean. Absent fields serialize as empty
// CSV cells and JSON nulls.
struct MetricsRow {
  long step = 0;
  long episode = 0;
  std::optional<double> episode_return;
  std::optional<double> loss;
  std::optional<double> epsilon;
  std::optional<double> eval_mean;
};

// Fixed "%.10g" rendering, independent of locale and stream state, so that
// bitwise-equal runs emit byte-identical files.
std::string format_double(double v);

// Appends every row to <dir>/metrics.csv and <dir>/metrics.jsonl with
// identical values. Evaluation rows flush both files.
class MetricsSink {
 public:
  explicit MetricsSink(const std::string& dir);
  ~MetricsSink();

  MetricsSink(const MetricsSink&) = delete;
  MetricsSink& operator=(const MetricsSink&) = delete;

  void write(const MetricsRow& row);
  void flush();
  const std::string& dir() const { return dir_; }

  static const char* csv_header();

 private:
  std::string dir_;
  std::ofstream csv_;
  std::ofstream jsonl_;
  std::mutex mu_;
};

}  // namespace dsqn
