#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace mfbdsde {

inline constexpr std::string_view result_schema_version = "mfbdsde-result/1";

/// Serializable experiment outcome.  Ordered containers keep the emitted
/// files byte-stable for identical runs.  Every Monte Carlo scalar "foo"
/// carries a companion "foo_se".
struct ResultRecord {
    std::string command;
    std::string preset;
    std::uint64_t seed = 0;
    std::map<std::string, double> scalars;
    std::vector<std::pair<std::string, std::vector<double>>> series;
    std::map<std::string, std::string> config_echo;
    double wall_seconds = 0.0;
    std::string version{result_schema_version};
};

void write_json(const ResultRecord& rec, std::ostream& out);
void write_csv(const ResultRecord& rec, std::ostream& out);

/// Loaders for the two emitted formats; every written file round-trips.
ResultRecord read_json(std::istream& in);
ResultRecord read_csv(std::istream& in);

/// Writes rec to path in the requested format ("json" or "csv").
void write_result_file(const ResultRecord& rec, const std::string& path,
                       const std::string& format);

}  // namespace mfbdsde
