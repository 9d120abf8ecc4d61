#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"

namespace tdsr::cli {

/// Exit codes: 0 success, 1 runtime failure or partial failure, 2 invalid usage or config.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the tdsr executable and the tests. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// One run's metrics.csv.
struct MetricsTable {
  struct Row {
    int epoch;
    LossComponentId component;
    double raw_value, weight, weighted_value;
  };
  std::vector<Row> rows;

  std::vector<int> epochs() const;
  std::vector<LossComponentId> components() const;
};

/// Throws "metrics CSV line N: ..." on malformed input.
MetricsTable parse_metrics_csv(const std::string& text);

/// Raw-loss curves (log scale, top) and DWA weight curves (bottom), one colour per component.
ImageTensor render_curves(const MetricsTable& table);

/// epoch,weight_sum,n_components
std::string weight_sums_csv(const MetricsTable& table);

}  // namespace tdsr::cli
