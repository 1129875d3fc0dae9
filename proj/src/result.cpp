#include "mfbdsde/result.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <system_error>

#include "json.hpp"
#include "mfbdsde/errors.hpp"

namespace mfbdsde {

namespace {

using ordered_json = nlohmann::ordered_json;

/// Shortest round-tripping decimal form; keeps files byte-stable.
std::string format_double(double x) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc{}) throw InvalidArgumentError("unformattable number");
    return std::string(buf, ptr);
}

double parse_double_field(const std::string& text) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
    if (ec != std::errc{} || ptr != text.data() + text.size())
        throw ParseError("malformed numeric field: \"" + text + "\"", 0);
    return x;
}

void append_csv_field(std::string& line, std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        line.append(field);
        return;
    }
    line.push_back('"');
    for (char c : field) {
        if (c == '"') line.push_back('"');
        line.push_back(c);
    }
    line.push_back('"');
}

void write_csv_row(std::ostream& out, std::string_view a, std::string_view b,
                   std::string_view c, std::string_view d) {
    std::string line;
    append_csv_field(line, a);
    line.push_back(',');
    append_csv_field(line, b);
    line.push_back(',');
    append_csv_field(line, c);
    line.push_back(',');
    append_csv_field(line, d);
    line.append("\r\n");
    out << line;
}

/// Splits an RFC-4180 stream into records of unquoted fields.
std::vector<std::vector<std::string>> read_csv_records(std::istream& in) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool any = false;
    char c = 0;
    while (in.get(c)) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                quoted = true;
                break;
            case ',':
                record.push_back(std::move(field));
                field.clear();
                break;
            case '\r':
                break;
            case '\n':
                record.push_back(std::move(field));
                field.clear();
                records.push_back(std::move(record));
                record.clear();
                break;
            default:
                field.push_back(c);
        }
    }
    if (quoted) throw ParseError("unterminated quoted field", 0);
    if (!field.empty() || !record.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    if (!any) throw ParseError("empty result file", 0);
    return records;
}

}  // namespace

void write_json(const ResultRecord& rec, std::ostream& out) {
    ordered_json j;
    j["version"] = rec.version;
    j["command"] = rec.command;
    j["preset"] = rec.preset;
    j["seed"] = rec.seed;
    j["wall_seconds"] = rec.wall_seconds;
    ordered_json scalars = ordered_json::object();
    for (const auto& [name, value] : rec.scalars) scalars[name] = value;
    j["scalars"] = std::move(scalars);
    ordered_json series = ordered_json::object();
    for (const auto& [name, values] : rec.series) series[name] = values;
    j["series"] = std::move(series);
    ordered_json config = ordered_json::object();
    for (const auto& [key, value] : rec.config_echo) config[key] = value;
    j["config"] = std::move(config);
    out << j.dump(2) << '\n';
}

ResultRecord read_json(std::istream& in) {
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed result json: ") + e.what(), 0);
    }
    try {
        ResultRecord rec;
        rec.version = j.at("version").get<std::string>();
        if (rec.version != result_schema_version)
            throw ParseError("unsupported result version: " + rec.version, 0);
        rec.command = j.at("command").get<std::string>();
        rec.preset = j.at("preset").get<std::string>();
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.wall_seconds = j.at("wall_seconds").get<double>();
        for (const auto& [name, value] : j.at("scalars").items())
            rec.scalars[name] = value.get<double>();
        for (const auto& [name, values] : j.at("series").items())
            rec.series.emplace_back(name, values.get<std::vector<double>>());
        for (const auto& [key, value] : j.at("config").items())
            rec.config_echo[key] = value.get<std::string>();
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("result json missing fields: ") + e.what(), 0);
    }
}

void write_csv(const ResultRecord& rec, std::ostream& out) {
    write_csv_row(out, "section", "name", "index", "value");
    write_csv_row(out, "meta", "version", "", rec.version);
    write_csv_row(out, "meta", "command", "", rec.command);
    write_csv_row(out, "meta", "preset", "", rec.preset);
    write_csv_row(out, "meta", "seed", "", std::to_string(rec.seed));
    write_csv_row(out, "meta", "wall_seconds", "", format_double(rec.wall_seconds));
    for (const auto& [name, value] : rec.scalars)
        write_csv_row(out, "scalar", name, "", format_double(value));
    for (const auto& [name, values] : rec.series)
        for (std::size_t i = 0; i < values.size(); ++i)
            write_csv_row(out, "series", name, std::to_string(i), format_double(values[i]));
    for (const auto& [key, value] : rec.config_echo)
        write_csv_row(out, "config", key, "", value);
}

ResultRecord read_csv(std::istream& in) {
    const auto records = read_csv_records(in);
    if (records.empty() || records.front() !=
                               std::vector<std::string>{"section", "name", "index", "value"})
        throw ParseError("missing result csv header", 0);
    ResultRecord rec;
    rec.version.clear();
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& row = records[r];
        if (row.size() != 4)
            throw ParseError("result csv row " + std::to_string(r) + " has " +
                             std::to_string(row.size()) + " fields", 0);
        const std::string& section = row[0];
        const std::string& name = row[1];
        const std::string& value = row[3];
        if (section == "meta") {
            if (name == "version") {
                rec.version = value;
            } else if (name == "command") {
                rec.command = value;
            } else if (name == "preset") {
                rec.preset = value;
            } else if (name == "seed") {
                rec.seed = std::stoull(value);
            } else if (name == "wall_seconds") {
                rec.wall_seconds = parse_double_field(value);
            } else {
                throw ParseError("unknown meta row: " + name, 0);
            }
        } else if (section == "scalar") {
            rec.scalars[name] = parse_double_field(value);
        } else if (section == "series") {
            if (rec.series.empty() || rec.series.back().first != name)
                rec.series.emplace_back(name, std::vector<double>{});
            rec.series.back().second.push_back(parse_double_field(value));
        } else if (section == "config") {
            rec.config_echo[name] = value;
        } else {
            throw ParseError("unknown result csv section: " + section, 0);
        }
    }
    if (rec.version != result_schema_version)
        throw ParseError("unsupported result version: " + rec.version, 0);
    return rec;
}

void write_result_file(const ResultRecord& rec, const std::string& path,
                       const std::string& format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgumentError("cannot write output file: " + path);
    if (format == "json") {
        write_json(rec, out);
    } else if (format == "csv") {
        write_csv(rec, out);
    } else {
        throw InvalidArgumentError("unknown output format: " + format);
    }
}

}  // namespace mfbdsde
