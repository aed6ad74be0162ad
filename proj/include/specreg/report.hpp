#pragma once

#include <string>
#include <vector>

namespace specreg {

/// Cross-run report: overlaid log-log spectrum plots (1/n reference line,
/// grey unregularized band, 90%-variance star), accuracy-vs-epsilon curves
/// with +-1 std bands, and a summary CSV of fitted exponents, effective
/// dimensions and attacked accuracies. Every plotted number comes from the
/// run directories' CSVs/manifests.
void report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace specreg
