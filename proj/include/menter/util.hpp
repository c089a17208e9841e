#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace menter {

/// ASCII lowercase fold. Identifiers in the netlist dialect are case-insensitive.
std::string fold(std::string_view s);

std::string trim(std::string_view s);

/// Splits on runs of spaces/tabs; never returns empty tokens.
std::vector<std::string> split_ws(std::string_view s);

/// Shortest scientific-notation form that round-trips the double exactly.
std::string format_magnitude(double v);

uint64_t fnv1a64(std::string_view s);
std::string to_hex(uint64_t v);

std::string iso8601_now();

std::optional<std::string> read_file(const std::string& path);
bool write_file(const std::string& path, std::string_view content);

}  // namespace menter
