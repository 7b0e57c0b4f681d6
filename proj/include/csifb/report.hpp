/**
 * @file report.hpp
 * @brief Sweep result tables: versioned CSV and a plain SVG line chart whose
 * points carry the CSV's values verbatim.
 */
#pragma once

#include <string>
#include <vector>

namespace csifb::report {

constexpr int kSweepSchemaVersion = 1;

struct SweepRow {
  std::string scenario;
  unsigned k = 0;
  double snr_db = 0.0;
  double gamma = 0.0;
  double nmse_db = 0.0;
  double nominal_bpp = 0.0;
  double entropy_bpp = 0.0;
  double measured_bpp = 0.0;
};

/// Shortest decimal that parses back to the same double; "inf"/"-inf"/"nan".
std::string format_number(double v);

/// "schema,scenario,k,snr_db,gamma,nmse_db,nominal_bpp,entropy_bpp,measured_bpp".
std::string sweep_header();
std::string sweep_csv(const std::vector<SweepRow>& rows);
/// Inverse of sweep_csv; throws DataError on a wrong header or schema.
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

/// Fig-3 style trend checks on a sweep-snr table. Within each scenario:
/// NMSE must not increase along `k_order` at any SNR; NMSE must not rise by
/// more than `snr_tol_db` between consecutive finite SNRs at fixed k; the
/// lowest k may improve by at most `floor_db` from its second-highest to its
/// highest finite SNR. Returns one message per violation.
std::vector<std::string> snr_trend_violations(const std::vector<SweepRow>& rows, const std::vector<unsigned>& k_order,
                                              double snr_tol_db, double floor_db);

/// Rate-distortion check: within each scenario, after sorting by measured
/// BPP, NMSE may rise by at most `tol_db` between consecutive points.
std::vector<std::string> rate_trend_violations(const std::vector<SweepRow>& rows, double tol_db);

enum class XAxis { kSnr, kMeasuredBpp };

/// One polyline per series (same scenario and k for kSnr, same scenario for
/// kMeasuredBpp, points sorted by x). Each point is a <circle> with
/// data-x/data-y attributes holding format_number of the plotted values.
/// Non-finite NMSE values are skipped.
std::string sweep_svg(const std::vector<SweepRow>& rows, XAxis axis, const std::string& title);

}  // namespace csifb::report
