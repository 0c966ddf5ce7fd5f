#pragma once

#include <ostream>
#include <string>

#include "ssmoe/metrics/cost.hpp"
#include "ssmoe/metrics/metrics.hpp"

namespace ssmoe::cli {

void print_metric_table(std::ostream& os, const metrics::MetricReport& r);
/// One JSON object per row, then the "mean" row.
void print_metric_records(std::ostream& os, const metrics::MetricReport& r);

void print_cost_table(std::ostream& os, const std::string& label, const metrics::CostReport& r, bool per_layer);
void print_cost_record(std::ostream& os, const std::string& label, const metrics::CostReport& r);

}  // namespace ssmoe::cli
