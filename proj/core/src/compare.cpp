#include <json.hpp>
#include <stdexcept>

#include "gpmpc/scenario.hpp"

namespace gpmpc {

Comparison compare_runs(const RunLog& a, const RunLog& b) {
  if (a.application != b.application) {
    throw std::invalid_argument("compare_runs: runs are from different applications");
  }
  if (a.seed != b.seed) {
    throw std::invalid_argument("compare_runs: runs use different seeds");
  }
  if (a.steps.columns != b.steps.columns) {
    throw std::invalid_argument("compare_runs: step schemas differ");
  }
  Comparison out;
  out.application = a.application;
  out.seed = a.seed;
  for (const auto& [key, value_a] : a.summary) {
    const auto it = b.summary.find(key);
    if (it == b.summary.end()) continue;
    MetricDelta d;
    d.value_a = value_a;
    d.value_b = it->second;
    d.delta = it->second - value_a;
    out.metrics[key] = d;
  }
  return out;
}

std::string comparison_json(const Comparison& comparison) {
  nlohmann::json j;
  j["application"] = comparison.application;
  j["seed"] = comparison.seed;
  nlohmann::json metrics;
  for (const auto& [key, d] : comparison.metrics) {
    metrics[key] = {{"a", d.value_a},
                    {"b", d.value_b},
                    {"delta", d.delta},
                    {"sign", d.delta > 0.0 ? 1 : (d.delta < 0.0 ? -1 : 0)}};
  }
  j["metrics"] = metrics;
  return j.dump(2) + "\n";
}

}  // namespace gpmpc
