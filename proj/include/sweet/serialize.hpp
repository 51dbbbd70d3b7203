#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "sweet/errors.hpp"
#include "sweet/types.hpp"

// Line-based text format shared by all artifacts. Every file starts with a
// kind tag and a format version, e.g.
//
//   sweet/tabular_mdp 1
//   S 3 A 2 H 4 s1 0
//   row 0 0 0 : 0.5 0.25 0.25
//   ...
//   end
//
// Doubles are written with the shortest decimal representation that parses
// back to the identical 64-bit value, so round-trips are lossless.
namespace sweet {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError(where + ": bad real '" + tok + "'");
  return v;
}

inline long long parse_int(const std::string& tok, const std::string& where) {
  long long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw ParseError(where + ": bad integer '" + tok + "'");
  return v;
}

// Tokenizing reader that tracks file and line for error messages.
class LineReader {
 public:
  LineReader(std::istream& in, std::string name)
      : in_(in), name_(std::move(name)) {}

  // Next non-empty, non-comment line split on whitespace.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      tokens.clear();
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  std::string where() const {
    return name_ + ":" + std::to_string(line_no_);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(where() + ": " + msg);
  }

 private:
  std::istream& in_;
  std::string name_;
  int line_no_ = 0;
};

inline void expect_header(LineReader& r, const std::string& kind) {
  std::vector<std::string> t;
  if (!r.next(t)) r.fail("empty file, expected '" + kind + "'");
  if (t.size() != 2 || t[0] != kind) r.fail("expected header '" + kind + " 1'");
  if (t[1] != "1") r.fail("unsupported version '" + t[1] + "'");
}

// ---- TabularMdp ----

inline void write_mdp(std::ostream& out, const TabularMdp& m) {
  out << "sweet/tabular_mdp 1\n";
  out << "S " << m.num_states << " A " << m.num_actions << " H " << m.horizon
      << " s1 " << m.initial_state << "\n";
  for (int h = 0; h < m.horizon; ++h)
    for (int s = 0; s < m.num_states; ++s)
      for (int a = 0; a < m.num_actions; ++a) {
        out << "row " << h << " " << s << " " << a << " :";
        for (int s2 = 0; s2 < m.num_states; ++s2)
          out << " " << format_double(m.p(h, s, a, s2));
        out << "\n";
      }
  out << "end\n";
}

inline TabularMdp read_mdp(std::istream& in, const std::string& name) {
  LineReader r(in, name);
  expect_header(r, "sweet/tabular_mdp");
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 8 || t[0] != "S" || t[2] != "A" ||
      t[4] != "H" || t[6] != "s1")
    r.fail("expected 'S <n> A <n> H <n> s1 <n>'");
  TabularMdp m(static_cast<int>(parse_int(t[1], r.where())),
               static_cast<int>(parse_int(t[3], r.where())),
               static_cast<int>(parse_int(t[5], r.where())),
               static_cast<int>(parse_int(t[7], r.where())));
  const int rows = m.horizon * m.num_states * m.num_actions;
  for (int i = 0; i < rows; ++i) {
    if (!r.next(t)) r.fail("unexpected end of kernel rows");
    if (t.size() != static_cast<std::size_t>(5 + m.num_states) || t[0] != "row" ||
        t[4] != ":")
      r.fail("malformed kernel row");
    int h = static_cast<int>(parse_int(t[1], r.where()));
    int s = static_cast<int>(parse_int(t[2], r.where()));
    int a = static_cast<int>(parse_int(t[3], r.where()));
    if (h < 0 || h >= m.horizon || s < 0 || s >= m.num_states || a < 0 ||
        a >= m.num_actions)
      r.fail("kernel row index out of range");
    for (int s2 = 0; s2 < m.num_states; ++s2)
      m.p(h, s, a, s2) = parse_double(t[5 + s2], r.where());
  }
  if (!r.next(t) || t[0] != "end") r.fail("expected 'end'");
  m.validate();
  return m;
}

// ---- SaTable-shaped payloads (utilities, bonuses) ----

inline void write_sa_table(std::ostream& out, const SaTable& u,
                           const std::string& kind) {
  out << kind << " 1\n";
  out << "S " << u.num_states << " A " << u.num_actions << " H " << u.horizon
      << "\n";
  for (int h = 0; h < u.horizon; ++h)
    for (int s = 0; s < u.num_states; ++s) {
      out << "row " << h << " " << s << " :";
      for (int a = 0; a < u.num_actions; ++a)
        out << " " << format_double(u.at(h, s, a));
      out << "\n";
    }
  out << "end\n";
}

inline SaTable read_sa_table(std::istream& in, const std::string& name,
                             const std::string& kind) {
  LineReader r(in, name);
  expect_header(r, kind);
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 6 || t[0] != "S" || t[2] != "A" || t[4] != "H")
    r.fail("expected 'S <n> A <n> H <n>'");
  SaTable u(static_cast<int>(parse_int(t[5], r.where())),
            static_cast<int>(parse_int(t[1], r.where())),
            static_cast<int>(parse_int(t[3], r.where())));
  const int rows = u.horizon * u.num_states;
  for (int i = 0; i < rows; ++i) {
    if (!r.next(t)) r.fail("unexpected end of table rows");
    if (t.size() != static_cast<std::size_t>(4 + u.num_actions) ||
        t[0] != "row" || t[3] != ":")
      r.fail("malformed table row");
    int h = static_cast<int>(parse_int(t[1], r.where()));
    int s = static_cast<int>(parse_int(t[2], r.where()));
    if (h < 0 || h >= u.horizon || s < 0 || s >= u.num_states)
      r.fail("table row index out of range");
    for (int a = 0; a < u.num_actions; ++a)
      u.at(h, s, a) = parse_double(t[4 + a], r.where());
  }
  if (!r.next(t) || t[0] != "end") r.fail("expected 'end'");
  return u;
}

inline void write_utility(std::ostream& out, const Utility& u) {
  out << "sweet/utility 1\n";
  out << "normalized " << (u.normalized ? 1 : 0) << "\n";
  write_sa_table(out, u, "sweet/sa_table");
}

inline Utility read_utility(std::istream& in, const std::string& name) {
  LineReader r(in, name);
  expect_header(r, "sweet/utility");
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 2 || t[0] != "normalized")
    r.fail("expected 'normalized <0|1>'");
  Utility u;
  u.normalized = parse_int(t[1], r.where()) != 0;
  static_cast<SaTable&>(u) = read_sa_table(in, name, "sweet/sa_table");
  return u;
}

// ---- Policies ----

inline void write_policy(std::ostream& out, const MarkovPolicy& p) {
  out << "sweet/markov_policy 1\n";
  out << "S " << p.num_states << " A " << p.num_actions << " H " << p.horizon
      << "\n";
  for (int h = 0; h < p.horizon; ++h)
    for (int s = 0; s < p.num_states; ++s) {
      out << "row " << h << " " << s << " :";
      for (int a = 0; a < p.num_actions; ++a)
        out << " " << format_double(p.at(h, s, a));
      out << "\n";
    }
  out << "end\n";
}

inline MarkovPolicy read_policy(std::istream& in, const std::string& name) {
  LineReader r(in, name);
  expect_header(r, "sweet/markov_policy");
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 6 || t[0] != "S" || t[2] != "A" || t[4] != "H")
    r.fail("expected 'S <n> A <n> H <n>'");
  MarkovPolicy p(static_cast<int>(parse_int(t[5], r.where())),
                 static_cast<int>(parse_int(t[1], r.where())),
                 static_cast<int>(parse_int(t[3], r.where())));
  const int rows = p.horizon * p.num_states;
  for (int i = 0; i < rows; ++i) {
    if (!r.next(t)) r.fail("unexpected end of policy rows");
    if (t.size() != static_cast<std::size_t>(4 + p.num_actions) ||
        t[0] != "row" || t[3] != ":")
      r.fail("malformed policy row");
    int h = static_cast<int>(parse_int(t[1], r.where()));
    int s = static_cast<int>(parse_int(t[2], r.where()));
    if (h < 0 || h >= p.horizon || s < 0 || s >= p.num_states)
      r.fail("policy row index out of range");
    for (int a = 0; a < p.num_actions; ++a)
      p.at(h, s, a) = parse_double(t[4 + a], r.where());
  }
  if (!r.next(t) || t[0] != "end") r.fail("expected 'end'");
  p.validate();
  return p;
}

inline void write_mixture(std::ostream& out, const MixturePolicy& mix) {
  out << "sweet/mixture_policy 1\n";
  out << "vertices " << mix.vertices.size() << "\n";
  out << "weights";
  for (double w : mix.weights) out << " " << format_double(w);
  out << "\n";
  for (const auto& v : mix.vertices) write_policy(out, v);
  out << "end\n";
}

inline MixturePolicy read_mixture(std::istream& in, const std::string& name) {
  LineReader r(in, name);
  expect_header(r, "sweet/mixture_policy");
  std::vector<std::string> t;
  if (!r.next(t) || t.size() != 2 || t[0] != "vertices")
    r.fail("expected 'vertices <n>'");
  int n = static_cast<int>(parse_int(t[1], r.where()));
  if (n <= 0) r.fail("mixture needs at least one vertex");
  if (!r.next(t) || t.size() != static_cast<std::size_t>(1 + n) ||
      t[0] != "weights")
    r.fail("expected 'weights ...'");
  MixturePolicy mix;
  for (int i = 0; i < n; ++i)
    mix.weights.push_back(parse_double(t[1 + i], r.where()));
  for (int i = 0; i < n; ++i) mix.vertices.push_back(read_policy(in, name));
  if (!r.next(t) || t[0] != "end") r.fail("expected 'end'");
  mix.validate();
  return mix;
}

// ---- file helpers ----

template <typename T, typename WriteFn>
void save_file(const std::string& path, const T& value, WriteFn fn) {
  std::ofstream out(path);
  if (!out) throw ParseError(path + ": cannot open for writing");
  fn(out, value);
  if (!out) throw ParseError(path + ": write failed");
}

template <typename ReadFn>
auto load_file(const std::string& path, ReadFn fn) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  return fn(in, path);
}

}  // namespace sweet
