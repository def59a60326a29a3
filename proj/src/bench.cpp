/*
 * Copyright 2026 The fixpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fixpt/bench.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fixpt/errors.hpp"

namespace fixpt {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr double kResidualFloor = 1e-300;
constexpr double kResidualCeil = 1e300;

double clamp_residual(double r) {
  if (std::isnan(r)) return kResidualCeil;
  return std::clamp(r, kResidualFloor, kResidualCeil);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_residual(double r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12e", r);
  return buf;
}

template <typename T>
bool parse_field(std::string_view s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_real(std::string_view s, double& out) {
  if (s == "inf" || s == "+inf") {
    out = std::numeric_limits<double>::infinity();
    return true;
  }
  if (s == "nan") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  return parse_field(s, out);
}

// Line number of each value in a JSON document, keyed by a path such as
// "solvers[1].beta". Only called on text nlohmann already accepted.
class JsonLines {
 public:
  explicit JsonLines(std::string_view text) { scan(text); }

  // Falls back to the nearest enclosing path that was seen.
  std::size_t line_of(std::string path) const {
    for (;;) {
      auto it = lines_.find(path);
      if (it != lines_.end()) return it->second;
      if (path.empty()) return 1;
      const std::size_t cut = path.find_last_of(".[");
      path = cut == std::string::npos ? std::string() : path.substr(0, cut);
    }
  }

 private:
  struct Frame {
    bool array;
    std::string path;
    std::size_t index = 0;
    std::string key;
    bool want_key = false;
  };

  std::string child_path(const std::vector<Frame>& st) const {
    if (st.empty()) return "";
    const Frame& f = st.back();
    if (f.array) return f.path + "[" + std::to_string(f.index) + "]";
    return f.path.empty() ? f.key : f.path + "." + f.key;
  }

  void scan(std::string_view t) {
    std::vector<Frame> st;
    std::size_t line = 1;
    bool in_scalar = false;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const char c = t[i];
      if (c == '\n') ++line;
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        in_scalar = false;
        continue;
      }
      if (c == '"') {
        std::string s;
        for (++i; i < t.size() && t[i] != '"'; ++i) {
          if (t[i] == '\\' && i + 1 < t.size()) ++i;
          if (t[i] == '\n') ++line;
          s.push_back(t[i]);
        }
        if (!st.empty() && !st.back().array && st.back().want_key) {
          st.back().key = s;
          st.back().want_key = false;
          lines_.emplace(child_path(st), line);
        } else if (!st.empty() && st.back().array) {
          lines_.emplace(child_path(st), line);
        }
        in_scalar = false;
        continue;
      }
      switch (c) {
        case '{':
        case '[': {
          const std::string p = child_path(st);
          lines_.emplace(p, line);
          st.push_back(Frame{c == '[', p, 0, "", c == '{'});
          break;
        }
        case '}':
        case ']':
          if (!st.empty()) st.pop_back();
          break;
        case ',':
          if (!st.empty()) {
            if (st.back().array) {
              ++st.back().index;
            } else {
              st.back().want_key = true;
            }
          }
          break;
        case ':':
          break;
        default:
          if (!in_scalar && !st.empty() && st.back().array) lines_.emplace(child_path(st), line);
          in_scalar = true;
          continue;
      }
      in_scalar = false;
    }
  }

  std::map<std::string, std::size_t> lines_;
};

// Axis value of record i.
double axis_value(const IterationRecord& r, TraceAxis axis) {
  return axis == TraceAxis::Seconds ? r.elapsed_seconds : static_cast<double>(r.fevals);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json optional_number(const std::optional<double>& v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

}  // namespace

// ---- traces ----------------------------------------------------------------

Trace trace_from_solver(std::string name, const SolverTrace& t) {
  return Trace{std::move(name), t.iterations};
}

std::string trace_to_csv(const Trace& t) {
  std::string out = "k,fevals,residual,elapsed_seconds\n";
  char buf[160];
  for (const IterationRecord& r : t.records) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.9f\n", r.k, r.fevals,
                  format_residual(r.residual).c_str(), r.elapsed_seconds);
    out += buf;
  }
  return out;
}

Trace trace_from_csv(std::string_view text, std::string name) {
  Trace t;
  t.name = std::move(name);
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::string where = t.name + ": line " + std::to_string(line_no);
    if (!header_seen) {
      if (line != "k,fevals,residual,elapsed_seconds") {
        throw ParseError(where + ": expected header k,fevals,residual,elapsed_seconds");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cols.push_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (cols.size() != 4) {
      throw ParseError(where + ": expected 4 columns, found " + std::to_string(cols.size()));
    }
    IterationRecord r;
    if (!parse_field(cols[0], r.k)) throw ParseError(where + ": bad k '" + std::string(cols[0]) + "'");
    if (!parse_field(cols[1], r.fevals)) {
      throw ParseError(where + ": bad fevals '" + std::string(cols[1]) + "'");
    }
    if (!parse_real(cols[2], r.residual) || r.residual < 0.0) {
      throw ParseError(where + ": bad residual '" + std::string(cols[2]) + "'");
    }
    if (!parse_real(cols[3], r.elapsed_seconds) || !(r.elapsed_seconds >= 0.0)) {
      throw ParseError(where + ": bad elapsed_seconds '" + std::string(cols[3]) + "'");
    }
    if (!t.records.empty() && r.elapsed_seconds < t.records.back().elapsed_seconds) {
      throw ParseError(where + ": elapsed_seconds decreases");
    }
    t.records.push_back(r);
  }
  if (!header_seen) throw ParseError(t.name + ": line 1: empty file");
  return t;
}

void write_trace_csv(const fs::path& path, const Trace& t) { write_file(path, trace_to_csv(t)); }

Trace read_trace_csv(const fs::path& path) {
  return trace_from_csv(read_file(path), path.stem().string());
}

double residual_at_time(const Trace& t, double seconds) {
  const auto& rs = t.records;
  if (rs.empty()) throw InvalidArgument("residual_at_time: empty trace '" + t.name + "'");
  if (seconds <= rs.front().elapsed_seconds) {
    // Several records may share the first timestamp; use the last of them.
    std::size_t i = 0;
    while (i + 1 < rs.size() && rs[i + 1].elapsed_seconds <= seconds) ++i;
    return clamp_residual(rs[i].residual);
  }
  if (seconds >= rs.back().elapsed_seconds) return clamp_residual(rs.back().residual);
  const auto hi = std::upper_bound(
      rs.begin(), rs.end(), seconds,
      [](double s, const IterationRecord& r) { return s < r.elapsed_seconds; });
  const IterationRecord& b = *hi;
  const IterationRecord& a = *(hi - 1);
  if (a.elapsed_seconds == seconds) return clamp_residual(a.residual);
  const double la = std::log(clamp_residual(a.residual));
  const double lb = std::log(clamp_residual(b.residual));
  const double w = (seconds - a.elapsed_seconds) / (b.elapsed_seconds - a.elapsed_seconds);
  return std::exp(la + w * (lb - la));
}

CrossoverReport detect_crossover(const Trace& forward, const Trace& anderson) {
  if (forward.records.empty() || anderson.records.empty()) {
    throw InvalidArgument("detect_crossover: empty trace '" +
                          (forward.records.empty() ? forward.name : anderson.name) + "'");
  }
  const double lo =
      std::max(forward.records.front().elapsed_seconds, anderson.records.front().elapsed_seconds);
  const double hi =
      std::min(forward.records.back().elapsed_seconds, anderson.records.back().elapsed_seconds);
  CrossoverReport rep;
  if (lo > hi) return rep;

  std::set<double> times;
  for (const Trace* t : {&forward, &anderson}) {
    for (const IterationRecord& r : t->records) {
      if (r.elapsed_seconds >= lo && r.elapsed_seconds <= hi) times.insert(r.elapsed_seconds);
    }
  }
  const std::vector<double> ts(times.begin(), times.end());
  std::vector<double> ratio(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    ratio[i] = residual_at_time(anderson, ts[i]) / residual_at_time(forward, ts[i]);
  }
  std::size_t cross = ts.size();
  while (cross > 0 && ratio[cross - 1] <= 1.0) --cross;
  if (cross == ts.size()) return rep;
  rep.crossover_time_seconds = ts[cross];
  double penalty = 1.0;
  for (std::size_t i = 0; i < cross; ++i) penalty = std::max(penalty, ratio[i]);
  rep.mixing_penalty_ratio = penalty;
  return rep;
}

std::optional<double> time_to_tol(const Trace& t, double tol, TraceAxis axis) {
  if (!(tol > 0.0)) throw InvalidArgument("time_to_tol: tol must be > 0");
  const auto& rs = t.records;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    if (!(rs[i].residual < tol)) continue;
    const double xi = axis_value(rs[i], axis);
    if (i == 0) return xi;
    const double xp = axis_value(rs[i - 1], axis);
    const double lp = std::log(clamp_residual(rs[i - 1].residual));
    const double li = std::log(clamp_residual(rs[i].residual));
    if (!(lp > li)) return xi;
    const double w = (lp - std::log(tol)) / (lp - li);
    return xp + w * (xi - xp);
  }
  return std::nullopt;
}

double speedup(const Trace& a, const Trace& b, double tol, TraceAxis axis) {
  const auto ta = time_to_tol(a, tol, axis);
  if (!ta) throw NotReached("trace '" + a.name + "' never reaches tol " + fmt("%g", tol));
  const auto tb = time_to_tol(b, tol, axis);
  if (!tb) throw NotReached("trace '" + b.name + "' never reaches tol " + fmt("%g", tol));
  if (*ta == *tb) return 1.0;
  if (*ta <= 0.0) throw InvalidArgument("speedup: trace '" + a.name + "' reaches tol at time 0");
  return *tb / *ta;
}

// ---- plotting --------------------------------------------------------------

std::string plot_svg(const std::vector<Trace>& traces,
                     const std::optional<CrossoverReport>& crossover) {
  if (traces.empty()) throw InvalidArgument("plot_svg: no traces");
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  constexpr double kW = 1000, kH = 410;
  constexpr double kPanelW = 380, kPanelH = 300, kTop = 50, kLeft0 = 80, kGap = 100;

  double lmin = std::numeric_limits<double>::infinity();
  double lmax = -lmin;
  double kmax = 1.0, tmax = 0.0;
  for (const Trace& t : traces) {
    for (const IterationRecord& r : t.records) {
      const double l = std::log10(clamp_residual(r.residual));
      lmin = std::min(lmin, l);
      lmax = std::max(lmax, l);
      kmax = std::max(kmax, static_cast<double>(r.k));
      tmax = std::max(tmax, r.elapsed_seconds);
    }
  }
  if (!std::isfinite(lmin)) lmin = lmax = 0.0;
  double ylo = std::floor(lmin), yhi = std::ceil(lmax);
  if (yhi <= ylo) yhi = ylo + 1.0;
  if (tmax <= 0.0) tmax = 1.0;

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  struct Panel {
    const char* id;
    const char* xlabel;
    double x0;
    double xmax;
  };
  const Panel panels[2] = {{"iteration", "iteration k", kLeft0, kmax},
                           {"time", "wall-clock time [s]", kLeft0 + kPanelW + kGap, tmax}};
  const double decade_step = std::max(1.0, std::ceil((yhi - ylo) / 10.0));

  auto py = [&](double residual) {
    const double l = std::log10(clamp_residual(residual));
    return kTop + kPanelH * (yhi - l) / (yhi - ylo);
  };

  for (const Panel& p : panels) {
    auto px = [&](double v) { return p.x0 + kPanelW * v / p.xmax; };
    s << "<g class=\"panel\" id=\"panel-" << p.id << "\">\n"
      << "<rect x=\"" << p.x0 << "\" y=\"" << kTop << "\" width=\"" << kPanelW << "\" height=\""
      << kPanelH << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double d = ylo; d <= yhi + 1e-9; d += decade_step) {
      const double y = kTop + kPanelH * (yhi - d) / (yhi - ylo);
      s << "<line x1=\"" << p.x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << p.x0 + kPanelW
        << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << p.x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e"
        << static_cast<int>(d) << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
      double v = p.xmax * i / 4.0;
      if (p.id[0] == 'i') v = std::round(v);
      const double x = px(v);
      s << "<line x1=\"" << x << "\" y1=\"" << kTop + kPanelH << "\" x2=\"" << x << "\" y2=\""
        << kTop + kPanelH + 4 << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << x << "\" y=\"" << kTop + kPanelH + 18 << "\" text-anchor=\"middle\">"
        << fmt("%.3g", v) << "</text>\n";
    }
    s << "<text class=\"xlabel\" x=\"" << p.x0 + kPanelW / 2 << "\" y=\"" << kTop + kPanelH + 40
      << "\" text-anchor=\"middle\">" << p.xlabel << "</text>\n"
      << "<text class=\"ylabel\" transform=\"translate(" << p.x0 - 55 << ','
      << kTop + kPanelH / 2 << ") rotate(-90)\" text-anchor=\"middle\">relative residual</text>\n";

    for (std::size_t ti = 0; ti < traces.size(); ++ti) {
      const Trace& t = traces[ti];
      s << "<polyline class=\"series\" data-name=\"" << xml_escape(t.name) << "\" data-panel=\""
        << p.id << "\" fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kColors[ti % 8]
        << "\" points=\"";
      for (std::size_t i = 0; i < t.records.size(); ++i) {
        const IterationRecord& r = t.records[i];
        const double xv = p.id[0] == 'i' ? static_cast<double>(r.k) : r.elapsed_seconds;
        s << (i ? " " : "") << fmt("%.2f", px(xv)) << ',' << fmt("%.2f", py(r.residual));
      }
      s << "\"/>\n";
    }
    if (p.id[0] == 't' && crossover && crossover->crossover_time_seconds && traces.size() >= 2) {
      const double tc = *crossover->crossover_time_seconds;
      const double x = px(tc);
      s << "<g class=\"crossover\" data-time=\"" << fmt("%.9g", tc) << "\">\n"
        << "<line x1=\"" << x << "\" y1=\"" << kTop << "\" x2=\"" << x << "\" y2=\""
        << kTop + kPanelH << "\" stroke=\"black\" stroke-dasharray=\"4,3\"/>\n"
        << "<circle cx=\"" << x << "\" cy=\"" << py(residual_at_time(traces[1], tc))
        << "\" r=\"4\" fill=\"none\" stroke=\"black\"/>\n"
        << "<text x=\"" << x + 4 << "\" y=\"" << kTop + 12 << "\">crossover</text>\n</g>\n";
    }
    s << "</g>\n";
  }

  s << "<g class=\"legend\">\n";
  for (std::size_t ti = 0; ti < traces.size(); ++ti) {
    const double y = kTop - 30;
    const double x = kLeft0 + 160.0 * ti;
    s << "<line x1=\"" << x << "\" y1=\"" << y << "\" x2=\"" << x + 20 << "\" y2=\"" << y
      << "\" stroke=\"" << kColors[ti % 8] << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << x + 26 << "\" y=\"" << y + 4 << "\">" << xml_escape(traces[ti].name)
      << "</text>\n";
  }
  s << "</g>\n</svg>\n";
  return s.str();
}

// ---- configuration ---------------------------------------------------------

fs::path BenchConfig::resolved_output_dir() const {
  const fs::path p(output_dir);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

BenchConfig BenchConfig::from_json(std::string_view text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line.
    const std::size_t at = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line = 1 + std::count(text.begin(), text.begin() + at, '\n') -
                             (at > 0 && at <= text.size() && text[at - 1] == '\n' ? 1 : 0);
    throw ParseError("config line " + std::to_string(line) + ": malformed JSON: " + e.what());
  }
  const JsonLines lines(text);
  auto fail = [&](const std::string& path, const std::string& msg) -> void {
    throw InvalidArgument("config line " + std::to_string(lines.line_of(path)) + ": " + path +
                          ": " + msg);
  };
  auto only_keys = [&](const json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : obj.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
        fail(path.empty() ? k : path + "." + k, "unknown field");
      }
    }
  };

  if (!j.is_object()) fail("", "expected a JSON object");
  only_keys(j, "", {"problem", "solvers", "repetitions", "output_dir", "tolerances"});

  BenchConfig c;
  c.base_dir = base_dir;
  if (!j.contains("problem")) fail("problem", "missing required field");
  try {
    c.problem = ProblemSpec::from_json(j.at("problem").dump(), "problem");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    const std::size_t colon = msg.find(": ");
    if (colon == std::string::npos) fail("problem", msg);
    fail(msg.substr(0, colon), msg.substr(colon + 2));
  }

  if (!j.contains("solvers")) fail("solvers", "missing required field");
  const json& sv = j.at("solvers");
  if (!sv.is_array()) fail("solvers", "expected an array");
  if (sv.empty()) fail("solvers", "needs at least one solver");
  std::set<std::string> names;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    const std::string base = "solvers[" + std::to_string(i) + "]";
    const json& o = sv[i];
    if (!o.is_object()) fail(base, "expected an object");
    only_keys(o, base, {"name", "kind", "m", "lambda", "beta", "tol", "max_iter"});
    SolverSpec s;
    if (!o.contains("kind")) fail(base + ".kind", "missing required field");
    if (!o.at("kind").is_string()) fail(base + ".kind", "expected a string");
    const std::string kind = o.at("kind").get<std::string>();
    if (kind == "forward") {
      s.kind = SolverKind::Forward;
    } else if (kind == "anderson") {
      s.kind = SolverKind::Anderson;
    } else {
      fail(base + ".kind", "unknown solver '" + kind + "' (expected forward or anderson)");
    }
    s.name = kind;
    if (o.contains("name")) {
      if (!o.at("name").is_string()) fail(base + ".name", "expected a string");
      s.name = o.at("name").get<std::string>();
      const bool ok = !s.name.empty() && std::all_of(s.name.begin(), s.name.end(), [](char ch) {
        return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
      });
      if (!ok) fail(base + ".name", "use letters, digits, '_' or '-'");
    }
    if (!names.insert(s.name).second) fail(base + ".name", "duplicate solver name '" + s.name + "'");

    auto count = [&](const char* key, std::size_t& out, std::size_t min) {
      if (!o.contains(key)) return;
      const json& v = o.at(key);
      if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min)) {
        fail(base + "." + key, "expected an integer >= " + std::to_string(min));
      }
      out = v.get<std::size_t>();
    };
    auto real = [&](const char* key, double& out) {
      if (!o.contains(key)) return;
      if (!o.at(key).is_number()) fail(base + "." + key, "expected a number");
      out = o.at(key).get<double>();
    };
    count("m", s.cfg.m, 1);
    count("max_iter", s.cfg.max_iter, 2);
    real("lambda", s.cfg.lambda);
    real("beta", s.cfg.beta);
    real("tol", s.cfg.tol);
    if (!(s.cfg.lambda >= 0.0)) fail(base + ".lambda", "must be >= 0");
    if (!(s.cfg.beta > 0.0 && s.cfg.beta <= 1.0)) fail(base + ".beta", "must lie in (0, 1]");
    if (!(s.cfg.tol > 0.0)) fail(base + ".tol", "must be > 0");
    c.solvers.push_back(s);
  }

  if (j.contains("repetitions")) {
    const json& v = j.at("repetitions");
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      fail("repetitions", "expected an integer >= 1");
    }
    c.repetitions = v.get<std::size_t>();
  }
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string() || j.at("output_dir").get<std::string>().empty()) {
      fail("output_dir", "expected a non-empty string");
    }
    c.output_dir = j.at("output_dir").get<std::string>();
  }
  if (j.contains("tolerances")) {
    const json& v = j.at("tolerances");
    if (!v.is_array()) fail("tolerances", "expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string p = "tolerances[" + std::to_string(i) + "]";
      if (!v[i].is_number() || !(v[i].get<double>() > 0.0)) fail(p, "expected a number > 0");
      c.tolerances.push_back(v[i].get<double>());
    }
  }
  return c;
}

BenchConfig BenchConfig::load(const fs::path& path) {
  const std::string text = read_file(path);
  fs::path base = path.parent_path();
  if (base.empty()) base = ".";
  return from_json(text, base);
}

std::string BenchConfig::to_json() const {
  json j;
  j["problem"] = json::parse(problem.to_json());
  j["solvers"] = json::array();
  for (const SolverSpec& s : solvers) {
    json o = {{"name", s.name}, {"kind", to_string(s.kind)}, {"tol", s.cfg.tol},
              {"max_iter", s.cfg.max_iter}, {"lambda", s.cfg.lambda}};
    if (s.kind == SolverKind::Anderson) {
      o["m"] = s.cfg.m;
      o["beta"] = s.cfg.beta;
    }
    j["solvers"].push_back(o);
  }
  j["repetitions"] = repetitions;
  j["output_dir"] = output_dir;
  j["tolerances"] = tolerances;
  return j.dump(2);
}

// ---- running ---------------------------------------------------------------

namespace {

struct RepResult {
  std::optional<SolverTrace> trace;
  std::string error;
};

RepResult run_one(const BenchProblem& p, const SolverSpec& s) {
  RepResult r;
  try {
    r.trace = solve(s.kind, *p.map, p.x, p.z0, s.cfg);
  } catch (const Divergence& e) {
    r.error = e.what();
  } catch (const SingularSystem& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg, const RunOptions& opts) {
  if (cfg.solvers.empty()) throw InvalidArgument("run_bench: no solvers");
  if (cfg.repetitions == 0) throw InvalidArgument("run_bench: repetitions must be >= 1");
  for (const SolverSpec& s : cfg.solvers) s.cfg.validate();
  const fs::path out_dir = opts.output_dir ? *opts.output_dir : cfg.resolved_output_dir();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  const BenchProblem problem = build_problem(cfg.problem);
  const std::size_t ns = cfg.solvers.size();
  const std::size_t nr = cfg.repetitions;
  std::vector<RepResult> reps(ns * nr);
  if (opts.parallel) {
    std::vector<std::future<RepResult>> jobs;
    for (std::size_t i = 0; i < ns * nr; ++i) {
      jobs.push_back(std::async(std::launch::async, run_one, std::cref(problem),
                                std::cref(cfg.solvers[i / nr])));
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) reps[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < ns * nr; ++i) reps[i] = run_one(problem, cfg.solvers[i / nr]);
  }

  BenchResult result;
  json summary;
  summary["config"] = json::parse(cfg.to_json());
  summary["timing"] = opts.parallel ? "parallel" : "serial";
  summary["solvers"] = json::array();

  for (std::size_t si = 0; si < ns; ++si) {
    const SolverSpec& spec = cfg.solvers[si];
    SolverOutcome out;
    out.name = spec.name;
    json files = json::array();
    std::vector<const SolverTrace*> ok;
    for (std::size_t r = 0; r < nr; ++r) {
      const RepResult& rr = reps[si * nr + r];
      if (!rr.trace) {
        if (out.message.empty()) out.message = "repetition " + std::to_string(r + 1) + ": " + rr.error;
        continue;
      }
      const std::string file = spec.name + "_rep" + std::to_string(r + 1) + ".csv";
      write_trace_csv(out_dir / file, trace_from_solver(spec.name, *rr.trace));
      files.push_back(file);
      ok.push_back(&*rr.trace);
    }
    if (!out.message.empty()) {
      out.status = "diverged";
      result.any_diverged = true;
    }
    if (!ok.empty()) {
      const SolverTrace& first = *ok.front();
      Trace med = trace_from_solver(spec.name, first);
      for (std::size_t i = 0; i < med.records.size(); ++i) {
        std::vector<double> ts;
        for (const SolverTrace* t : ok) {
          if (i < t->iterations.size()) ts.push_back(t->iterations[i].elapsed_seconds);
        }
        med.records[i].elapsed_seconds = median(ts);
      }
      // Medians of a nondecreasing column can dip; keep the column monotone.
      for (std::size_t i = 1; i < med.records.size(); ++i) {
        med.records[i].elapsed_seconds =
            std::max(med.records[i].elapsed_seconds, med.records[i - 1].elapsed_seconds);
      }
      write_trace_csv(out_dir / (spec.name + ".csv"), med);
      out.fevals = first.fevals();
      out.final_residual = first.final_residual();
      if (out.status.empty()) out.status = first.converged ? "converged" : "max_iter";
      out.trace = std::move(med);
    }

    json js = {{"name", spec.name},
               {"kind", to_string(spec.kind)},
               {"status", out.status},
               {"fevals", out.fevals},
               {"iterations", out.trace ? out.trace->records.size() : 0},
               {"final_residual", optional_number(out.trace ? std::optional(out.final_residual)
                                                            : std::nullopt)},
               {"files", files}};
    if (!out.message.empty()) js["message"] = out.message;
    json reached = json::array();
    for (double tol : cfg.tolerances) {
      json e = {{"tol", tol}, {"fevals", nullptr}, {"seconds", nullptr}};
      if (out.trace) {
        for (const IterationRecord& r : out.trace->records) {
          if (r.residual < tol) {
            e["fevals"] = r.fevals;
            e["seconds"] = r.elapsed_seconds;
            break;
          }
        }
      }
      reached.push_back(e);
    }
    js["reached"] = reached;
    summary["solvers"].push_back(js);
    result.solvers.push_back(std::move(out));
  }

  const SolverOutcome* fwd = nullptr;
  const SolverOutcome* aa = nullptr;
  for (std::size_t si = 0; si < ns; ++si) {
    const SolverOutcome& o = result.solvers[si];
    if (!o.trace || o.trace->records.empty()) continue;
    if (!fwd && cfg.solvers[si].kind == SolverKind::Forward) fwd = &o;
    if (!aa && cfg.solvers[si].kind == SolverKind::Anderson) aa = &o;
  }
  summary["crossover"] = nullptr;
  std::vector<Trace> plotted;
  for (const SolverOutcome& o : result.solvers) {
    if (o.trace) plotted.push_back(*o.trace);
  }
  if (fwd && aa) {
    CrossoverReport rep = detect_crossover(*fwd->trace, *aa->trace);
    json speedups = json::array();
    for (double tol : cfg.tolerances) {
      std::optional<double> s;
      try {
        s = speedup(*aa->trace, *fwd->trace, tol);
      } catch (const NotReached&) {
      } catch (const InvalidArgument&) {
      }
      rep.speedup_to_tol.emplace_back(tol, s);
      std::optional<double> sf;
      try {
        sf = speedup(*aa->trace, *fwd->trace, tol, TraceAxis::Fevals);
      } catch (const NotReached&) {
      }
      speedups.push_back({{"tol", tol}, {"time_ratio", optional_number(s)},
                          {"feval_ratio", optional_number(sf)}});
    }
    summary["crossover"] = {{"forward", fwd->name},
                            {"anderson", aa->name},
                            {"crossover_time_seconds", optional_number(rep.crossover_time_seconds)},
                            {"mixing_penalty_ratio", optional_number(rep.mixing_penalty_ratio)},
                            {"speedup_to_tol", speedups}};
    // The marker is drawn on the second series, so put the pair first.
    std::vector<Trace> ordered{*fwd->trace, *aa->trace};
    for (const Trace& t : plotted) {
      if (t.name != fwd->name && t.name != aa->name) ordered.push_back(t);
    }
    plotted = std::move(ordered);
    result.crossover = rep;
  }
  if (!plotted.empty()) write_file(out_dir / "plot.svg", plot_svg(plotted, result.crossover));

  result.summary_json = summary.dump(2) + "\n";
  write_file(out_dir / "summary.json", result.summary_json);
  return result;
}

}  // namespace fixpt
