#pragma once

#include <string>
#include <vector>

#include "distalign/experiment.hpp"

namespace distalign {

/// Markdown table with one row per trace row (iteration, per-group frequency, KL)
/// followed by the best iteration.
std::string render_markdown(const std::vector<TraceRow>& rows, const std::vector<std::string>& labels);

/// Line chart of KL against iteration.
std::string render_svg(const std::vector<TraceRow>& rows);

}  // namespace distalign
