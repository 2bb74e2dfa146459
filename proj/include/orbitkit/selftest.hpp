#pragma once

#include <functional>
#include <string>
#include <vector>

namespace orbitkit {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Fast invariant suite: gradient checks, flow identities, zero-init neutrality, metric,
/// renderer and sampler oracles, checkpoint round trip. Each check reports as it finishes.
std::vector<SelfTestResult> run_selftest(const std::function<void(const SelfTestResult&)>& on_result = {});

}  // namespace orbitkit
