#pragma once

#include <string>

namespace guard_lab {

// Shortest round-trip decimal form; identical bytes for identical doubles.
std::string format_double(double v);

// Writes via a temporary sibling file and rename.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace guard_lab
