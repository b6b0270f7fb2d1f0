#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gshield/metrics.hpp"

namespace gshield::report {

/// Plot-ready sample: one point of a named series.
struct SeriesPoint {
    double x = 0.0;
    std::string series;
    double value = 0.0;

    friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct ExperimentReport {
    std::string run_id;
    std::string command;
    /// Config text that replays the run.
    std::string config;
    metrics::MetricsReport metrics;
    std::vector<SeriesPoint> series;
    std::map<std::string, double> timing;
    /// Free-form scalar results (e.g. detector accuracy).
    std::map<std::string, double> scalars;
    int exit_status = 0;
};

/// Line-delimited JSON. Every line has a "record" field:
///   run     {run_id, command, config, exit_status, timing, scalars}
///   row     {scene, scenario, values}
///   summary {scenario, count, mean, median, ratio_to_clean, median_ratio_to_clean}
///   point   {x, series, value}
/// Non-finite numbers are written as the strings "inf", "-inf" and "nan".
std::string to_jsonl(const ExperimentReport& report);
/// Throws DataError on malformed lines or unknown record types.
ExperimentReport parse_jsonl(const std::string& text);

/// scene,scenario,<columns in sorted order>
std::string rows_csv(const metrics::MetricsReport& report);
/// scenario,statistic,<columns> with statistic in mean / median / ratio_to_clean / median_ratio_to_clean.
std::string summary_csv(const metrics::MetricsReport& report);
/// x,series,value
std::string series_csv(const std::vector<SeriesPoint>& series);

/// Writes report.jsonl, rows.csv, summary.csv and series.csv into `directory`.
void write(const std::filesystem::path& directory, const ExperimentReport& report);
ExperimentReport read(const std::filesystem::path& jsonl_path);

/// Concatenates rows (scene ids prefixed "run/" when run ids differ), series
/// (series names prefixed likewise) and scalars, then re-aggregates.
ExperimentReport merge(const std::vector<ExperimentReport>& reports);

} // namespace gshield::report
