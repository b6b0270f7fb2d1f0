#include "gshield/report.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "gshield/corpus.hpp"
#include "gshield/error.hpp"

namespace gshield::report {

namespace {

using json = nlohmann::ordered_json;

json number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

double to_double(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return INFINITY;
        if (s == "-inf") return -INFINITY;
        if (s == "nan") return NAN;
    }
    throw DataError("report: expected a number, got " + j.dump());
}

json number_map(const std::map<std::string, double>& m) {
    json out = json::object();
    for (const auto& [k, v] : m) out[k] = number(v);
    return out;
}

std::map<std::string, double> to_map(const json& j) {
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items()) out[k] = to_double(v);
    return out;
}

std::string csv_number(double v) { return fmt::format("{}", v); }

std::set<std::string> columns_of(const metrics::MetricsReport& report) {
    std::set<std::string> columns;
    for (const auto& row : report.rows)
        for (const auto& [k, _] : row.values) columns.insert(k);
    return columns;
}

std::string header(std::initializer_list<std::string> lead, const std::set<std::string>& columns) {
    std::string out;
    for (const auto& c : lead) out += (out.empty() ? "" : ",") + c;
    for (const auto& c : columns) out += "," + c;
    return out + "\n";
}

std::string cells(const std::map<std::string, double>& values, const std::set<std::string>& columns) {
    std::string out;
    for (const auto& c : columns) {
        const auto it = values.find(c);
        out += "," + (it == values.end() ? std::string{} : csv_number(it->second));
    }
    return out;
}

} // namespace

std::string to_jsonl(const ExperimentReport& report) {
    std::string out;
    out += json{{"record", "run"},
                {"run_id", report.run_id},
                {"command", report.command},
                {"config", report.config},
                {"exit_status", report.exit_status},
                {"timing", number_map(report.timing)},
                {"scalars", number_map(report.scalars)}}
               .dump() +
           "\n";
    for (const auto& row : report.metrics.rows) {
        out += json{{"record", "row"}, {"scene", row.scene}, {"scenario", row.scenario}, {"values", number_map(row.values)}}
                   .dump() +
               "\n";
    }
    for (const auto& s : report.metrics.summaries) {
        out += json{{"record", "summary"},
                    {"scenario", s.scenario},
                    {"count", s.count},
                    {"mean", number_map(s.mean)},
                    {"median", number_map(s.median)},
                    {"ratio_to_clean", number_map(s.ratio_to_clean)},
                    {"median_ratio_to_clean", number_map(s.median_ratio_to_clean)}}
                   .dump() +
               "\n";
    }
    for (const auto& p : report.series) {
        out += json{{"record", "point"}, {"x", number(p.x)}, {"series", p.series}, {"value", number(p.value)}}.dump() +
               "\n";
    }
    return out;
}

ExperimentReport parse_jsonl(const std::string& text) {
    ExperimentReport report;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            const auto kind = j.at("record").get<std::string>();
            if (kind == "run") {
                report.run_id = j.at("run_id").get<std::string>();
                report.command = j.at("command").get<std::string>();
                report.config = j.at("config").get<std::string>();
                report.exit_status = j.at("exit_status").get<int>();
                report.timing = to_map(j.at("timing"));
                report.scalars = to_map(j.at("scalars"));
            } else if (kind == "row") {
                report.metrics.rows.push_back(
                    {j.at("scene").get<std::string>(), j.at("scenario").get<std::string>(), to_map(j.at("values"))});
            } else if (kind == "summary") {
                metrics::ScenarioSummary s;
                s.scenario = j.at("scenario").get<std::string>();
                s.count = j.at("count").get<std::size_t>();
                s.mean = to_map(j.at("mean"));
                s.median = to_map(j.at("median"));
                s.ratio_to_clean = to_map(j.at("ratio_to_clean"));
                s.median_ratio_to_clean = to_map(j.at("median_ratio_to_clean"));
                report.metrics.summaries.push_back(std::move(s));
            } else if (kind == "point") {
                report.series.push_back({to_double(j.at("x")), j.at("series").get<std::string>(), to_double(j.at("value"))});
            } else {
                throw DataError("unknown record type '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw DataError(fmt::format("report line {}: {}", number, e.what()));
        } catch (const DataError& e) {
            throw DataError(fmt::format("report line {}: {}", number, e.what()));
        }
    }
    return report;
}

std::string rows_csv(const metrics::MetricsReport& report) {
    const auto columns = columns_of(report);
    std::string out = header({"scene", "scenario"}, columns);
    for (const auto& row : report.rows) out += row.scene + "," + row.scenario + cells(row.values, columns) + "\n";
    return out;
}

std::string summary_csv(const metrics::MetricsReport& report) {
    const auto columns = columns_of(report);
    std::string out = header({"scenario", "statistic"}, columns);
    for (const auto& s : report.summaries) {
        out += s.scenario + ",mean" + cells(s.mean, columns) + "\n";
        out += s.scenario + ",median" + cells(s.median, columns) + "\n";
        out += s.scenario + ",ratio_to_clean" + cells(s.ratio_to_clean, columns) + "\n";
        out += s.scenario + ",median_ratio_to_clean" + cells(s.median_ratio_to_clean, columns) + "\n";
    }
    return out;
}

std::string series_csv(const std::vector<SeriesPoint>& series) {
    std::string out = "x,series,value\n";
    for (const auto& p : series) out += csv_number(p.x) + "," + p.series + "," + csv_number(p.value) + "\n";
    return out;
}

void write(const std::filesystem::path& directory, const ExperimentReport& report) {
    std::filesystem::create_directories(directory);
    corpus::write_atomic(directory / "report.jsonl", to_jsonl(report));
    corpus::write_atomic(directory / "rows.csv", rows_csv(report.metrics));
    corpus::write_atomic(directory / "summary.csv", summary_csv(report.metrics));
    corpus::write_atomic(directory / "series.csv", series_csv(report.series));
}

ExperimentReport read(const std::filesystem::path& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw DataError(jsonl_path.string() + ": cannot read report");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_jsonl(buffer.str());
}

ExperimentReport merge(const std::vector<ExperimentReport>& reports) {
    if (reports.empty()) throw DataError("report: nothing to merge");
    std::set<std::string> ids;
    for (const auto& r : reports) ids.insert(r.run_id);
    const bool prefix = ids.size() > 1;
    ExperimentReport out;
    out.command = "report";
    std::vector<metrics::MetricRow> rows;
    for (const auto& r : reports) {
        out.run_id += (out.run_id.empty() ? "" : "+") + r.run_id;
        const std::string p = prefix ? r.run_id + "/" : "";
        for (auto row : r.metrics.rows) {
            row.scene = p + row.scene;
            rows.push_back(std::move(row));
        }
        for (auto point : r.series) {
            point.series = p + point.series;
            out.series.push_back(std::move(point));
        }
        for (const auto& [k, v] : r.scalars) out.scalars[p + k] = v;
        for (const auto& [k, v] : r.timing) out.timing[p + k] = v;
        out.exit_status = std::max(out.exit_status, r.exit_status);
    }
    if (!rows.empty()) out.metrics = metrics::aggregate(std::move(rows));
    return out;
}

} // namespace gshield::report
