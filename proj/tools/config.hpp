#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rmtlab/core.hpp"

namespace rmtlab::cli {

enum class KeyType { text, integer, number, boolean, integers, numbers, complexes, texts };

struct KeySpec {
  std::string_view name;
  KeyType type;
};

// Echo order follows this table.
inline constexpr KeySpec kKeys[] = {
    {"experiment", KeyType::text},      {"N", KeyType::integer},
    {"sizes", KeyType::integers},       {"field", KeyType::text},
    {"distribution", KeyType::text},    {"seed", KeyType::integer},
    {"trials", KeyType::integer},       {"z", KeyType::complexes},
    {"z_max", KeyType::number},         {"z_count", KeyType::integer},
    {"include_edge", KeyType::boolean}, {"eta_rule", KeyType::text},
    {"eta", KeyType::numbers},          {"eta_min", KeyType::number},
    {"eta_max", KeyType::number},       {"eta_count", KeyType::integer},
    {"c", KeyType::number},             {"C", KeyType::number},
    {"xi", KeyType::number},            {"product_exponent", KeyType::number},
    {"steps", KeyType::integer},        {"pairs", KeyType::integer},
    {"T", KeyType::number},             {"dt", KeyType::number},
    {"beta_term", KeyType::boolean},    {"window", KeyType::integer},
    {"slack", KeyType::number},         {"distribution_b", KeyType::text},
    {"field_b", KeyType::text},         {"variance_b", KeyType::number},
    {"seed_b", KeyType::integer},       {"expect", KeyType::text},
    {"envelope_factor", KeyType::number}, {"stat_cap", KeyType::number},
    {"growth_cap", KeyType::number},    {"ks_cap", KeyType::number},
    {"criteria", KeyType::texts},       {"output", KeyType::text},
};

inline const KeySpec* find_key(std::string_view name) {
  for (const auto& k : kKeys)
    if (k.name == name) return &k;
  return nullptr;
}

using Value = std::variant<std::string, std::uint64_t, double, bool, std::vector<std::uint64_t>, std::vector<double>,
                           std::vector<cplx>, std::vector<std::string>>;

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_complex(cplx v) {
  const double im = v.imag();
  return format_number(v.real()) + (std::signbit(im) ? "-" : "+") + format_number(std::abs(im)) + "i";
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_uint(std::string_view s, std::uint64_t& out) {
  s = trim(s);
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc() && p == s.data() + s.size()) return true;
  // Scientific integers such as 1e9.
  double d = 0.0;
  if (!parse_double(s, d) || d < 0.0 || d != std::floor(d) || d > 9.007199254740992e15) return false;
  out = static_cast<std::uint64_t>(d);
  return true;
}

/// a, bi, a+bi, a-bi, with i alone meaning 1.
inline bool parse_complex(std::string_view s, cplx& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.back() != 'i') {
    double re = 0.0;
    if (!parse_double(s, re)) return false;
    out = re;
    return true;
  }
  const std::string_view body = s.substr(0, s.size() - 1);
  std::size_t split = std::string_view::npos;
  for (std::size_t k = body.size(); k-- > 1;)
    if ((body[k] == '+' || body[k] == '-') && body[k - 1] != 'e' && body[k - 1] != 'E') {
      split = k;
      break;
    }
  auto imag_part = [](std::string_view t, double& v) {
    if (t.empty() || t == "+") return v = 1.0, true;
    if (t == "-") return v = -1.0, true;
    return parse_double(t, v);
  };
  double re = 0.0, im = 0.0;
  if (split == std::string_view::npos) {
    if (!imag_part(body, im)) return false;
  } else if (!parse_double(body.substr(0, split), re) || !imag_part(body.substr(split), im)) {
    return false;
  }
  out = {re, im};
  return true;
}

inline std::vector<std::string_view> split_list(std::string_view s, bool& ok) {
  ok = s.size() >= 2 && s.front() == '[' && s.back() == ']';
  std::vector<std::string_view> items;
  if (!ok) return items;
  const std::string_view inner = trim(s.substr(1, s.size() - 2));
  if (inner.empty()) return items;
  std::size_t start = 0;
  while (true) {
    const auto comma = inner.find(',', start);
    items.push_back(trim(inner.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto it : items) ok = ok && !it.empty();
  return items;
}

template <class Xs, class Fmt>
std::string join(const Xs& xs, Fmt fmt) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + fmt(xs[i]);
  return s + "]";
}

inline std::string unquote(std::string_view s, bool& ok) {
  ok = true;
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return std::string(s.substr(1, s.size() - 2));
  ok = s.find_first_of(" \t\"[],") == std::string_view::npos && !s.empty();
  return std::string(s);
}

}  // namespace detail

class Config {
 public:
  struct Entry {
    Value value;
    int line = 0;
  };

  static Config parse(std::string_view text, const std::string& source = "config") {
    Config cfg;
    cfg.source_ = source;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      bool in_quote = false;
      for (std::size_t k = 0; k < line.size(); ++k) {
        if (line[k] == '"') in_quote = !in_quote;
        if (line[k] == '#' && !in_quote) {
          line = line.substr(0, k);
          break;
        }
      }
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) cfg.fail(line_no, "", "expected 'key = value'");
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string_view raw = detail::trim(line.substr(eq + 1));
      const KeySpec* spec = find_key(key);
      if (!spec) cfg.fail(line_no, key, "unknown key");
      if (cfg.entries_.count(key)) cfg.fail(line_no, key, "duplicate key (first set on line " +
                                                              std::to_string(cfg.entries_[key].line) + ")");
      if (raw.empty()) cfg.fail(line_no, key, "missing value");
      cfg.entries_[key] = {cfg.parse_value(*spec, raw, line_no), line_no};
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  [[nodiscard]] bool has(const std::string& key) const { return entries_.count(key) != 0; }
  [[nodiscard]] int line(const std::string& key) const { return has(key) ? entries_.at(key).line : 0; }
  [[nodiscard]] const std::map<std::string, Entry>& entries() const { return entries_; }

  template <class T>
  [[nodiscard]] T get(const std::string& key, T fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    if constexpr (std::is_same_v<T, double>) {
      if (const auto* u = std::get_if<std::uint64_t>(&it->second.value)) return static_cast<double>(*u);
    }
    return std::get<T>(it->second.value);
  }

  template <class T>
  [[nodiscard]] T require_key(const std::string& key) const {
    if (!has(key)) throw ConfigError(source_ + ": missing required key '" + key + "'");
    return get<T>(key, T{});
  }

  void set(const std::string& key, Value v) {
    const int l = line(key);
    entries_[key] = {std::move(v), l};
  }

  [[noreturn]] void fail(int line_no, const std::string& key, const std::string& msg) const {
    std::string where = source_;
    if (line_no > 0) where += ":" + std::to_string(line_no);
    if (!key.empty()) where += ": key '" + key + "'";
    throw ConfigError(where + ": " + msg);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const { fail(line(key), key, msg); }

  /// Canonical text; parsing it yields the same configuration.
  [[nodiscard]] std::string echo() const {
    std::string out;
    for (const auto& k : kKeys) {
      const auto it = entries_.find(std::string(k.name));
      if (it == entries_.end()) continue;
      out += std::string(k.name) + " = " + render(it->second.value) + "\n";
    }
    return out;
  }

  static std::string render(const Value& v) {
    struct Visitor {
      std::string operator()(const std::string& s) const { return "\"" + s + "\""; }
      std::string operator()(std::uint64_t u) const { return std::to_string(u); }
      std::string operator()(double d) const { return format_number(d); }
      std::string operator()(bool b) const { return b ? "true" : "false"; }
      std::string operator()(const std::vector<std::uint64_t>& xs) const { return detail::join(xs, [](auto x) { return std::to_string(x); }); }
      std::string operator()(const std::vector<double>& xs) const { return detail::join(xs, format_number); }
      std::string operator()(const std::vector<cplx>& xs) const { return detail::join(xs, format_complex); }
      std::string operator()(const std::vector<std::string>& xs) const {
        return detail::join(xs, [](const std::string& s) { return "\"" + s + "\""; });
      }
    };
    return std::visit(Visitor{}, v);
  }

 private:
  Value parse_value(const KeySpec& spec, std::string_view raw, int line_no) const {
    const std::string key(spec.name);
    bool ok = true;
    auto list = [&] {
      auto items = detail::split_list(raw, ok);
      if (!ok) fail(line_no, key, "expected a list like [a, b]");
      return items;
    };
    switch (spec.type) {
      case KeyType::text: {
        auto s = detail::unquote(raw, ok);
        if (!ok) fail(line_no, key, "expected a string");
        return s;
      }
      case KeyType::integer: {
        std::uint64_t u = 0;
        if (!detail::parse_uint(raw, u)) fail(line_no, key, "expected a non-negative integer, got '" + std::string(raw) + "'");
        return u;
      }
      case KeyType::number: {
        double d = 0.0;
        if (!detail::parse_double(raw, d)) fail(line_no, key, "expected a finite number, got '" + std::string(raw) + "'");
        return d;
      }
      case KeyType::boolean:
        if (raw == "true") return true;
        if (raw == "false") return false;
        fail(line_no, key, "expected true or false");
      case KeyType::integers: {
        std::vector<std::uint64_t> out;
        for (auto it : list()) {
          std::uint64_t u = 0;
          if (!detail::parse_uint(it, u)) fail(line_no, key, "bad integer '" + std::string(it) + "'");
          out.push_back(u);
        }
        return out;
      }
      case KeyType::numbers: {
        std::vector<double> out;
        if (raw.front() != '[') {
          double d = 0.0;
          if (!detail::parse_double(raw, d)) fail(line_no, key, "expected a number or list of numbers");
          return std::vector<double>{d};
        }
        for (auto it : list()) {
          double d = 0.0;
          if (!detail::parse_double(it, d)) fail(line_no, key, "bad number '" + std::string(it) + "'");
          out.push_back(d);
        }
        return out;
      }
      case KeyType::complexes: {
        std::vector<cplx> out;
        auto one = [&](std::string_view t) {
          bool q = true;
          const auto s = detail::unquote(t, q);
          cplx c;
          if (!q || !detail::parse_complex(s, c)) fail(line_no, key, "bad complex number '" + std::string(t) + "'");
          out.push_back(c);
        };
        if (raw.front() != '[') {
          one(raw);
        } else {
          for (auto it : list()) one(it);
        }
        return out;
      }
      case KeyType::texts: {
        std::vector<std::string> out;
        for (auto it : list()) {
          auto s = detail::unquote(it, ok);
          if (!ok) fail(line_no, key, "bad string '" + std::string(it) + "'");
          out.push_back(std::move(s));
        }
        return out;
      }
    }
    fail(line_no, key, "unsupported key type");
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace rmtlab::cli
