#pragma once

#include <filesystem>
#include <string>

namespace succlab {

/// Throws IoError when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// printf-style "%.<digits>g" formatting; 17 digits round-trips a double.
std::string format_double(double value, int digits = 17);

}  // namespace succlab
