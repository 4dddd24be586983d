#include "cbrl/text.hpp"

namespace cbrl {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  auto is_ws = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
  };
  while (a < b && is_ws(s[a])) ++a;
  while (b > a && is_ws(s[b - 1])) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

std::string normalize_answer(const std::string& s) {
  std::vector<std::string> lines = split(s, '\n');
  for (auto& line : lines) {
    std::string collapsed;
    bool in_space = false;
    for (char c : line) {
      if (c == '\r') continue;
      if (c == ' ' || c == '\t') {
        in_space = true;
        continue;
      }
      if (in_space && !collapsed.empty()) collapsed += ' ';
      in_space = false;
      collapsed += c;
    }
    line = collapsed;
  }
  size_t first = 0, last = lines.size();
  while (first < last && lines[first].empty()) ++first;
  while (last > first && lines[last - 1].empty()) --last;
  std::string out;
  for (size_t i = first; i < last; ++i) {
    if (i > first) out += '\n';
    out += lines[i];
  }
  return out;
}

}  // namespace cbrl
