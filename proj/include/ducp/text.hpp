/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ducp {

/// Decimal rendering with 17 significant digits (round-trips every double).
std::string format_double(double value);

/// Parses a double, rejecting trailing garbage. Throws UsageError.
double parse_double(std::string_view text);
long long parse_int(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);

std::string read_file(const std::string& path);
/// Writes with LF line endings exactly as given.
void write_file(const std::string& path, const std::string& contents);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace ducp
