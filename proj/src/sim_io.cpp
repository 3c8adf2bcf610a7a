#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "lyapnet/sim.hpp"

namespace lyapnet {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(fmt::format("line {}.{}", line, col), fmt::format("not a number: '{}'", s));
  }
}

}  // namespace

std::string format_number(double v) { return fmt::format("{:.12g}", v); }

void write_trace_header(std::ostream& os, int r) {
  os << "slot,state,cost";
  for (int j = 1; j <= r; ++j) os << ",U_" << j;
  for (int j = 1; j <= r; ++j) os << ",W_" << j;
  os << ",dropped_this_slot\n";
}

void write_trace_row(std::ostream& os, const SlotRecord& rec, int r) {
  os << rec.slot << ',' << rec.state << ',' << format_number(rec.cost);
  for (int j = 0; j < r; ++j) os << ',' << format_number(rec.u(j));
  for (int j = 0; j < r; ++j) {
    os << ',';
    if (rec.w.size() == r) os << format_number(rec.w(j));
  }
  os << ',' << format_number(rec.dropped) << '\n';
}

Trace read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("header", "empty trace file");
  const auto header = split_csv(line);
  int r = 0;
  for (const auto& h : header) r += h.rfind("U_", 0) == 0 ? 1 : 0;
  const auto expected = static_cast<std::size_t>(4 + 2 * r);
  if (r == 0 || header.size() != expected || header[0] != "slot" || header[1] != "state" || header[2] != "cost") {
    throw ValidationError("header", "not a trace CSV header: " + line);
  }

  Trace tr;
  tr.r = r;
  std::vector<std::vector<double>> us;
  std::vector<std::vector<double>> ws;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != expected) {
      throw ValidationError(fmt::format("line {}", lineno), fmt::format("expected {} fields, got {}", expected, f.size()));
    }
    tr.slot.push_back(static_cast<std::uint64_t>(parse_double(f[0], lineno, "slot")));
    tr.state.push_back(static_cast<int>(parse_double(f[1], lineno, "state")));
    tr.cost.push_back(parse_double(f[2], lineno, "cost"));
    std::vector<double> u(static_cast<std::size_t>(r));
    std::vector<double> w;
    for (int j = 0; j < r; ++j) u[static_cast<std::size_t>(j)] = parse_double(f[3 + j], lineno, header[3 + j]);
    const bool has_w = !f[3 + r].empty();
    if (us.empty()) tr.has_virtual = has_w;
    if (has_w != tr.has_virtual) throw ValidationError(fmt::format("line {}", lineno), "W columns present on some rows only");
    if (has_w) {
      w.resize(static_cast<std::size_t>(r));
      for (int j = 0; j < r; ++j) {
        w[static_cast<std::size_t>(j)] = parse_double(f[3 + r + j], lineno, header[3 + r + j]);
      }
    }
    tr.dropped.push_back(parse_double(f[3 + 2 * r], lineno, "dropped_this_slot"));
    us.push_back(std::move(u));
    if (has_w) ws.push_back(std::move(w));
  }
  const auto T = static_cast<Eigen::Index>(us.size());
  tr.u.resize(r, T);
  if (tr.has_virtual) tr.w.resize(r, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int j = 0; j < r; ++j) {
      tr.u(j, t) = us[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
      if (tr.has_virtual) tr.w(j, t) = ws[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
    }
  }
  return tr;
}

void write_report_header(std::ostream& os, int r) {
  os << "scenario,algorithm,V,seed,slots,burn_in,avg_cost,avg_total_backlog,avg_total_virtual_backlog,"
        "drop_fraction,dropped_total,offered_exogenous";
  for (int j = 1; j <= r; ++j) os << ",avg_U_" << j;
  for (int j = 1; j <= r; ++j) os << ",avg_W_" << j;
  for (int j = 1; j <= r; ++j) os << ",placeholder_" << j;
  os << '\n';
}

void write_report_row(std::ostream& os, const SimReport& rep, std::string_view scenario, int r) {
  os << scenario << ',' << rep.algorithm << ',' << format_number(rep.V) << ',' << rep.seed << ',' << rep.slots << ','
     << rep.burn_in << ',' << format_number(rep.avg_cost) << ',' << format_number(rep.avg_total_backlog) << ','
     << format_number(rep.avg_total_virtual_backlog) << ',' << format_number(rep.drop_fraction) << ','
     << format_number(rep.dropped_total) << ',' << format_number(rep.offered_exogenous);
  auto cols = [&](const Vector& v) {
    for (int j = 0; j < r; ++j) {
      os << ',';
      if (v.size() == r) os << format_number(v(j));
    }
  };
  cols(rep.avg_backlog);
  cols(rep.avg_virtual_backlog);
  cols(rep.placeholders);
  os << '\n';
}

}  // namespace lyapnet
