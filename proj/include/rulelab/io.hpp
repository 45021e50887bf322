#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace rulelab {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);
json read_json_file(const fs::path& path);
// Pretty-printed with a trailing newline; key order is nlohmann's sorted order,
// which keeps output byte-stable.
void write_json_file(const fs::path& path, const json& value);

// Shortest round-trip decimal representation; used for every CSV number so
// reports are byte-stable and lossless.
std::string format_double(double value);

std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

}  // namespace rulelab
