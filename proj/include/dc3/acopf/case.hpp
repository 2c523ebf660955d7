#pragma once

#include <string>

#include <Eigen/Dense>

#include "dc3/error.hpp"

namespace dc3::acopf {

using Matrix = Eigen::MatrixXd;

// MATPOWER case-format v2 tables, verbatim (MW / MVAr / degrees units).
struct CaseData {
  std::string name = "case";
  double base_mva = 100.0;
  Matrix bus;      // nb x 13
  Matrix gen;      // ng x 10
  Matrix branch;   // nl x 11
  Matrix gencost;  // ng x 7
};

// Column layout of the tables above.
namespace col {
// bus
inline constexpr int BUS_I = 0, BUS_TYPE = 1, PD = 2, QD = 3, GS = 4, BS = 5,
                     AREA = 6, VM = 7, VA = 8, BASE_KV = 9, ZONE = 10,
                     VMAX = 11, VMIN = 12;
// gen
inline constexpr int GEN_BUS = 0, PG = 1, QG = 2, QMAX = 3, QMIN = 4, VG = 5,
                     MBASE = 6, GEN_STATUS = 7, PMAX = 8, PMIN = 9;
// branch
inline constexpr int F_BUS = 0, T_BUS = 1, BR_R = 2, BR_X = 3, BR_B = 4,
                     RATE_A = 5, RATE_B = 6, RATE_C = 7, TAP = 8, SHIFT = 9,
                     BR_STATUS = 10;
// gencost
inline constexpr int COST_MODEL = 0, STARTUP = 1, SHUTDOWN = 2, NCOST = 3,
                     C2 = 4, C1 = 5, C0 = 6;
}  // namespace col

inline constexpr int BUS_COLS = 13, GEN_COLS = 10, BRANCH_COLS = 11,
                     GENCOST_COLS = 7;

// Parse case-format text. `origin` names the source in error messages.
// Errors carry 1-based line numbers.
CaseData parse_case(const std::string& text, const std::string& origin = "");
CaseData load_case(const std::string& path);

// Canonical case-format text; values rendered with full precision so
// parse(format(c)) reproduces c exactly.
std::string format_case(const CaseData& c);
void save_case(const std::string& path, const CaseData& c);

// Bus admittance matrix in per unit, buses ordered as in c.bus. Includes
// line charging, off-nominal taps, phase shifts, and bus shunts;
// out-of-service branches contribute nothing.
Eigen::MatrixXcd build_admittance(const CaseData& c);

}  // namespace dc3::acopf
