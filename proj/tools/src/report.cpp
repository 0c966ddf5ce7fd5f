#include "report.hpp"

#include <cstdio>
#include <nlohmann/json.hpp>

namespace ssmoe::cli {

namespace {

std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w, bool right = false) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace

void print_metric_table(std::ostream& os, const metrics::MetricReport& r) {
  std::size_t w = 8;
  for (const auto& row : r.rows) w = std::max(w, row.name.size() + 2);
  os << pad("image", w) << pad("psnr_y", 10, true) << pad("ssim", 10, true) << pad("lsd", 10, true) << "\n";
  auto line = [&](const metrics::MetricRow& row) {
    os << pad(row.name, w) << pad(fixed(row.psnr_y, 3), 10, true) << pad(fixed(row.ssim, 4), 10, true)
       << pad(fixed(row.lsd, 3), 10, true) << "\n";
  };
  for (const auto& row : r.rows) line(row);
  os << std::string(w + 30, '-') << "\n";
  line(r.mean);
}

void print_metric_records(std::ostream& os, const metrics::MetricReport& r) {
  auto rec = [&](const metrics::MetricRow& row, bool aggregate) {
    nlohmann::json j{{"image", row.name}, {"psnr_y", row.psnr_y}, {"ssim", row.ssim}, {"lsd", row.lsd}};
    if (aggregate) j["aggregate"] = true;
    os << j.dump() << "\n";
  };
  for (const auto& row : r.rows) rec(row, false);
  rec(r.mean, true);
}

void print_cost_table(std::ostream& os, const std::string& label, const metrics::CostReport& r, bool per_layer) {
  os << label << " (" << metrics::to_string(r.mode) << ", " << r.num_stages << " stage expert"
     << (r.num_stages == 1 ? "" : "s") << ")\n";
  if (per_layer) {
    os << "  " << pad("layer", 36) << pad("kind", 10) << pad("params", 14, true) << pad("MACs", 16, true) << "\n";
    for (const auto& e : r.layers) {
      os << "  " << pad(e.name, 36) << pad(e.kind, 10) << pad(std::to_string(e.params), 14, true)
         << pad(std::to_string(e.macs), 16, true) << "\n";
    }
  }
  os << "  params            " << r.param_count << " (" << fixed(static_cast<double>(r.param_count) / 1e6, 3) << " M)\n";
  os << "  MACs per step     " << r.flops_per_step << " (" << fixed(static_cast<double>(r.flops_per_step) / 1e12, 4)
     << " T)\n";
  os << "  steps             " << r.sampling_steps << "\n";
  os << "  total MACs        " << r.total_flops << " (" << fixed(static_cast<double>(r.total_flops) / 1e12, 4)
     << " T)\n";
}

void print_cost_record(std::ostream& os, const std::string& label, const metrics::CostReport& r) {
  nlohmann::json j{{"model", label},
                   {"moe_mode", metrics::to_string(r.mode)},
                   {"stages", r.num_stages},
                   {"param_count", r.param_count},
                   {"flops_per_step", r.flops_per_step},
                   {"sampling_steps", r.sampling_steps},
                   {"total_flops", r.total_flops}};
  os << j.dump() << "\n";
}

}  // namespace ssmoe::cli
