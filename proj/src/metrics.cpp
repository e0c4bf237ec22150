#include "dsqn/metrics.hpp"

#include <cstdio>
#include <filesystem>

#include "dsqn/check.hpp"

namespace dsqn {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

namespace {

std::string csv_cell(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string();
}

std::string json_cell(const std::optional<double>& v) {
  return v.has_value() ? format_double(*v) : std::string("null");
}

}  // namespace

const char* MetricsSink::csv_header() { return "step,episode,return,loss,epsilon,eval_mean"; }

MetricsSink::MetricsSink(const std::string& dir) : dir_(dir) {
  std::filesystem::create_directories(dir_);
  const auto csv_path = std::filesystem::path(dir_) / "metrics.csv";
  const auto jsonl_path = std::filesystem::path(dir_) / "metrics.jsonl";
  csv_.open(csv_path, std::ios::binary | std::ios::trunc);
  jsonl_.open(jsonl_path, std::ios::binary | std::ios::trunc);
  DSQN_REQUIRE(csv_.is_open() && jsonl_.is_open(), "cannot create metrics files in " + dir_);
  csv_ << csv_header() << "\n";
  csv_.flush();
}

MetricsSink::~MetricsSink() { flush(); }

void MetricsSink::write(const MetricsRow& row) {
  std::lock_guard<std::mutex> lock(mu_);
  csv_ << row.step << ',' << row.episode << ',' << csv_cell(row.episode_return) << ','
       << csv_cell(row.loss) << ',' << csv_cell(row.epsilon) << ',' << csv_cell(row.eval_mean)
       << '\n';
  jsonl_ << "{\"step\":" << row.step << ",\"episode\":" << row.episode
         << ",\"return\":" << json_cell(row.episode_return) << ",\"loss\":" << json_cell(row.loss)
         << ",\"epsilon\":" << json_cell(row.epsilon)
         << ",\"eval_mean\":" << json_cell(row.eval_mean) << "}\n";
  if (row.eval_mean.has_value()) {
    csv_.flush();
    jsonl_.flush();
  }
}

void MetricsSink::flush() {
  std::lock_guard<std::mutex> lock(mu_);
  if (csv_.is_open()) csv_.flush();
  if (jsonl_.is_open()) jsonl_.flush();
}

}  // namespace dsqn
