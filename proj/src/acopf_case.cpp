#include "dc3/acopf/case.hpp"

#include <complex>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "dc3/io.hpp"

namespace dc3::acopf {

namespace {

[[noreturn]] void fail(const std::string& origin, int line,
                       const std::string& what) {
  throw ParseError((origin.empty() ? "case" : origin) + ":" +
                   std::to_string(line) + ": " + what);
}

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops everything from the first '%' onward.
std::string uncomment(const std::string& s) {
  std::size_t p = s.find('%');
  return p == std::string::npos ? s : s.substr(0, p);
}

struct MatrixBlock {
  std::vector<std::vector<double>> rows;
};

}  // namespace

CaseData parse_case(const std::string& text, const std::string& origin) {
  CaseData c;
  bool saw_base = false;
  std::unordered_map<std::string, Matrix> tables;

  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  std::string pending_table;  // name of the matrix being filled
  MatrixBlock block;
  int block_start = 0;

  auto finish_block = [&](int at_line) {
    if (block.rows.empty())
      fail(origin, block_start, "matrix 'mpc." + pending_table + "' is empty");
    const std::size_t cols = block.rows[0].size();
    Matrix m(static_cast<Eigen::Index>(block.rows.size()),
             static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < block.rows.size(); ++i) {
      if (block.rows[i].size() != cols)
        fail(origin, at_line,
             "row " + std::to_string(i + 1) + " of 'mpc." + pending_table +
                 "' has " + std::to_string(block.rows[i].size()) +
                 " entries, expected " + std::to_string(cols));
      for (std::size_t j = 0; j < cols; ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            block.rows[i][j];
    }
    tables[pending_table] = std::move(m);
    pending_table.clear();
    block.rows.clear();
  };

  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = strip(uncomment(raw));
    if (line.empty()) continue;

    if (!pending_table.empty()) {
      bool closing = false;
      std::size_t close = line.find(']');
      if (close != std::string::npos) {
        closing = true;
        line = strip(line.substr(0, close));
      }
      if (!line.empty()) {
        if (line.back() == ';') line.pop_back();
        std::istringstream row(line);
        std::vector<double> vals;
        double v;
        while (row >> v) vals.push_back(v);
        if (!row.eof()) {
          row.clear();
          std::string junk;
          row >> junk;
          fail(origin, lineno, "bad number '" + junk + "'");
        }
        if (!vals.empty()) block.rows.push_back(std::move(vals));
      }
      if (closing) finish_block(lineno);
      continue;
    }

    if (line.rfind("function", 0) == 0) {
      std::size_t eq = line.find('=');
      if (eq != std::string::npos) {
        std::string nm = strip(line.substr(eq + 1));
        if (!nm.empty() && nm.back() == ';') nm.pop_back();
        c.name = strip(nm);
      }
      continue;
    }
    if (line.rfind("mpc.version", 0) == 0) continue;
    if (line.rfind("mpc.baseMVA", 0) == 0) {
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) fail(origin, lineno, "expected '='");
      std::string v = strip(line.substr(eq + 1));
      if (!v.empty() && v.back() == ';') v.pop_back();
      try {
        c.base_mva = std::stod(v);
      } catch (const std::exception&) {
        fail(origin, lineno, "bad baseMVA value '" + v + "'");
      }
      if (c.base_mva <= 0.0) fail(origin, lineno, "baseMVA must be positive");
      saw_base = true;
      continue;
    }
    if (line.rfind("mpc.", 0) == 0) {
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) fail(origin, lineno, "expected '='");
      std::string key = strip(line.substr(4, eq - 4));
      std::size_t open = line.find('[', eq);
      if (open == std::string::npos)
        fail(origin, lineno, "expected matrix literal for 'mpc." + key + "'");
      pending_table = key;
      block_start = lineno;
      std::string rest = strip(line.substr(open + 1));
      if (!rest.empty())
        fail(origin, lineno, "matrix rows must start on the next line");
      continue;
    }
    fail(origin, lineno, "unrecognized statement '" + line + "'");
  }
  if (!pending_table.empty())
    fail(origin, block_start, "unterminated matrix 'mpc." + pending_table + "'");
  if (!saw_base) fail(origin, lineno, "missing mpc.baseMVA");

  auto take = [&](const char* key, int min_cols) -> Matrix {
    auto it = tables.find(key);
    if (it == tables.end())
      fail(origin, lineno, std::string("missing table 'mpc.") + key + "'");
    if (it->second.cols() < min_cols)
      fail(origin, lineno,
           std::string("table 'mpc.") + key + "' needs >= " +
               std::to_string(min_cols) + " columns");
    return it->second;
  };
  c.bus = take("bus", BUS_COLS);
  c.gen = take("gen", GEN_COLS);
  c.branch = take("branch", BRANCH_COLS);
  c.gencost = take("gencost", GENCOST_COLS);
  if (c.gencost.rows() != c.gen.rows())
    fail(origin, lineno, "gencost must have one row per generator");
  return c;
}

CaseData load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_case(buf.str(), path);
}

std::string format_case(const CaseData& c) {
  std::ostringstream out;
  auto table = [&](const char* key, const Matrix& m) {
    out << "mpc." << key << " = [\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out << '\t';
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out << '\t';
        out << dc3::format_double(m(i, j));
      }
      out << ";\n";
    }
    out << "];\n\n";
  };
  out << "function mpc = " << c.name << "\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << dc3::format_double(c.base_mva) << ";\n\n";
  table("bus", c.bus);
  table("gen", c.gen);
  table("branch", c.branch);
  table("gencost", c.gencost);
  return out.str();
}

void save_case(const std::string& path, const CaseData& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << format_case(c);
  if (!out) throw IoError("write failed for '" + path + "'");
}

Eigen::MatrixXcd build_admittance(const CaseData& c) {
  using cplx = std::complex<double>;
  const Eigen::Index nb = c.bus.rows();
  std::unordered_map<long long, Eigen::Index> bus_of;
  for (Eigen::Index i = 0; i < nb; ++i)
    bus_of[static_cast<long long>(c.bus(i, col::BUS_I))] = i;

  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(nb, nb);
  for (Eigen::Index k = 0; k < c.branch.rows(); ++k) {
    if (c.branch(k, col::BR_STATUS) == 0.0) continue;
    auto fit = bus_of.find(static_cast<long long>(c.branch(k, col::F_BUS)));
    auto tit = bus_of.find(static_cast<long long>(c.branch(k, col::T_BUS)));
    if (fit == bus_of.end() || tit == bus_of.end())
      throw ContractError("branch " + std::to_string(k + 1) +
                          " references an unknown bus");
    const Eigen::Index f = fit->second, t = tit->second;
    const double r = c.branch(k, col::BR_R);
    const double x = c.branch(k, col::BR_X);
    if (r == 0.0 && x == 0.0)
      throw ContractError("branch " + std::to_string(k + 1) +
                          " has zero impedance");
    const cplx ys = 1.0 / cplx(r, x);
    const cplx ych(0.0, c.branch(k, col::BR_B) / 2.0);
    double tap_mag = c.branch(k, col::TAP);
    if (tap_mag == 0.0) tap_mag = 1.0;
    const double shift = c.branch(k, col::SHIFT) * M_PI / 180.0;
    const cplx tap = std::polar(tap_mag, shift);

    Y(f, f) += (ys + ych) / (tap_mag * tap_mag);
    Y(t, t) += ys + ych;
    Y(f, t) += -ys / std::conj(tap);
    Y(t, f) += -ys / tap;
  }
  for (Eigen::Index i = 0; i < nb; ++i)
    Y(i, i) += cplx(c.bus(i, col::GS), c.bus(i, col::BS)) / c.base_mva;
  return Y;
}

}  // namespace dc3::acopf
