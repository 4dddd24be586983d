#pragma once

#include <string>
#include <vector>

namespace cbrl {

// Answer normalization used by the verifier: per line, runs of spaces/tabs
// collapse to a single space and the line is trimmed; leading and trailing
// empty lines are dropped. Comparison stays case-sensitive.
std::string normalize_answer(const std::string& s);

std::string trim(const std::string& s);

std::vector<std::string> split(const std::string& s, char sep);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

bool starts_with(const std::string& s, const std::string& prefix);

}  // namespace cbrl
