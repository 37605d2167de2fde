#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmkm/evaluate.hpp"

namespace cmkm::plot {

/// Metric versus label fraction (log-scaled x axis), one line per method with
/// a shaded 95% band, written as a standalone SVG image.
void write_semisup_svg(const std::filesystem::path& path, const std::vector<evaluate::EvalResult>& rows,
                       const std::string& title);

/// Plot-ready columns: fraction, then <method>_mean, <method>_ci_low,
/// <method>_ci_high for every method in first-appearance order.
void write_semisup_table(const std::filesystem::path& path, const std::vector<evaluate::EvalResult>& rows);

}  // namespace cmkm::plot
