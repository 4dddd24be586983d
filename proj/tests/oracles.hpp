#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracles {

// Insertion sort by raw code points (independent of std::sort).
inline std::vector<std::string> insertion_sort_codepoints(std::vector<std::string> words) {
  for (size_t i = 1; i < words.size(); ++i) {
    std::string key = words[i];
    size_t j = i;
    auto less = [](const std::string& a, const std::string& b) {
      size_t n = std::min(a.size(), b.size());
      for (size_t k = 0; k < n; ++k) {
        unsigned char ca = static_cast<unsigned char>(a[k]);
        unsigned char cb = static_cast<unsigned char>(b[k]);
        if (ca != cb) return ca < cb;
      }
      return a.size() < b.size();
    };
    while (j > 0 && less(key, words[j - 1])) {
      words[j] = words[j - 1];
      --j;
    }
    words[j] = key;
  }
  return words;
}

// Exact rational value for the expression strings the puzzle generator emits
// (numbers, + - * /, parentheses). Recursive descent, throws on any parse
// failure. Independent of the generator's own Term machinery.
struct Rational {
  long long num = 0;
  long long den = 1;
};

inline Rational rat_norm(long long n, long long d) {
  if (d < 0) {
    n = -n;
    d = -d;
  }
  long long g = std::gcd(n < 0 ? -n : n, d);
  if (g > 1) {
    n /= g;
    d /= g;
  }
  return {n, d};
}

class ExprEval {
 public:
  explicit ExprEval(const std::string& s) : s_(s) {}
  Rational parse() {
    Rational v = expr();
    if (pos_ != s_.size()) throw std::runtime_error("trailing characters in expression");
    return v;
  }

 private:
  Rational expr() {
    Rational v = term();
    while (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
      char op = s_[pos_++];
      Rational r = term();
      v = op == '+' ? rat_norm(v.num * r.den + r.num * v.den, v.den * r.den)
                    : rat_norm(v.num * r.den - r.num * v.den, v.den * r.den);
    }
    return v;
  }
  Rational term() {
    Rational v = atom();
    while (pos_ < s_.size() && (s_[pos_] == '*' || s_[pos_] == '/')) {
      char op = s_[pos_++];
      Rational r = atom();
      if (op == '*') {
        v = rat_norm(v.num * r.num, v.den * r.den);
      } else {
        if (r.num == 0) throw std::runtime_error("division by zero");
        v = rat_norm(v.num * r.den, v.den * r.num);
      }
    }
    return v;
  }
  Rational atom() {
    if (pos_ < s_.size() && s_[pos_] == '(') {
      ++pos_;
      Rational v = expr();
      if (pos_ >= s_.size() || s_[pos_] != ')') throw std::runtime_error("missing )");
      ++pos_;
      return v;
    }
    size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') ++pos_;
    if (pos_ == start) throw std::runtime_error("expected number");
    return {std::stoll(s_.substr(start, pos_ - start)), 1};
  }
  std::string s_;
  size_t pos_ = 0;
};

// Leaf numbers used by an expression, in textual order.
inline std::vector<long long> expression_leaves(const std::string& s) {
  std::vector<long long> leaves;
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] >= '0' && s[i] <= '9') {
      size_t start = i;
      while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
      leaves.push_back(std::stoll(s.substr(start, i - start)));
    } else {
      ++i;
    }
  }
  return leaves;
}

// Independent solvability decision for the 24 game: dynamic programming over
// multisets of reachable rationals (no expression strings involved).
inline bool puzzle24_solvable_dp(const std::array<int, 4>& numbers) {
  using R = std::pair<long long, long long>;  // normalized num/den
  auto norm = [](long long n, long long d) {
    Rational r = rat_norm(n, d);
    return R{r.num, r.den};
  };
  std::function<bool(std::vector<R>)> reach = [&](std::vector<R> vals) {
    if (vals.size() == 1) return vals[0] == R{24, 1};
    for (size_t i = 0; i < vals.size(); ++i) {
      for (size_t j = 0; j < vals.size(); ++j) {
        if (i == j) continue;
        std::vector<R> rest;
        for (size_t k = 0; k < vals.size(); ++k)
          if (k != i && k != j) rest.push_back(vals[k]);
        auto [an, ad] = vals[i];
        auto [bn, bd] = vals[j];
        std::vector<R> combos;
        combos.push_back(norm(an * bd + bn * ad, ad * bd));
        combos.push_back(norm(an * bd - bn * ad, ad * bd));
        combos.push_back(norm(an * bn, ad * bd));
        if (bn != 0) combos.push_back(norm(an * bd, ad * bn));
        for (const auto& c : combos) {
          std::vector<R> next = rest;
          next.push_back(c);
          if (reach(next)) return true;
        }
      }
    }
    return false;
  };
  std::vector<R> vals;
  for (int v : numbers) vals.push_back({v, 1});
  return reach(vals);
}

}  // namespace oracles
