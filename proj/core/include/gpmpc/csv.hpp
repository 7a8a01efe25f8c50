#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace gpmpc {

/// Fixed-format double used for every file we emit. Scenario outputs
/// must be byte-reproducible for a given seed, so all serialization
/// funnels through this one formatter.
std::string format_double(double value);

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column_index(const std::string& name) const;  // -1 when absent
};

std::string to_csv_string(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// FNV-1a 64-bit over raw bytes; used for output manifests.
std::string content_hash_hex(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace gpmpc
