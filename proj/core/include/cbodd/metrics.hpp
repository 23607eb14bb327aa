#pragma once

#include <span>

namespace cbodd {

/// Area under the ROC curve as a ranking statistic:
/// (#concordant pairs + 0.5 * #tied pairs) / (#positives * #negatives),
/// computed by sorting in O(n log n). Labels must be 0 or 1 (LabelError);
/// both classes must be present (MetricError).
double auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace cbodd
