#pragma once

#include <optional>
#include <string>
#include <vector>

#include "phijack/policy.hpp"

namespace phijack {

// Rollouts and Failure Rate measurement over the victim zoo.

struct RolloutResult {
  bool success = false;
  int steps_used = 0;
  std::vector<std::array<double, 2>> trajectory;  // tip (row,col) per step
};

// Applies the patch (when given) to every rendered frame before the policy
// sees it; success as soon as the end-effector comes within the success
// radius of the target.
RolloutResult rollout(const Policy& policy, const Scene& scene, const Patch* patch,
                      int max_steps = kDefaultMaxSteps);

struct PolicyFr {
  std::string policy_id;
  std::string family;
  int encoder_seed = 0;
  int episodes = 0;
  int failures = 0;
  double fr = 0.0;
};

struct FRReport {
  std::vector<PolicyFr> rows;
  uint64_t seed = 0;
  std::string patch_id;      // "benign" when no patch
  std::string surrogate_id;  // excluded from the transfer average
  double transfer_avg = 0.0;

  const PolicyFr* find(const std::string& policy_id) const;
};

// Paired evaluation: episode i uses the same scene for every policy. The
// number of worker threads is capped by PHIJACK_THREADS (default 1); results
// are reduced in episode order regardless.
FRReport failure_rate(const std::vector<Policy>& policies, const Patch* patch,
                      const std::string& patch_id, int episodes_per_policy, uint64_t seed,
                      const std::string& surrogate_id);

void save_fr_report(const FRReport& report, const std::string& path);
FRReport load_fr_report(const std::string& path);

// methods x victims FR matrix with a Transfer Avg. column, sorted by it.
struct ComparisonTable {
  std::vector<std::string> victim_ids;
  struct Row {
    std::string method;
    std::vector<double> fr;
    double transfer_avg = 0.0;
  };
  std::vector<Row> rows;  // sorted by transfer_avg, descending
};

ComparisonTable compare_report(const std::vector<FRReport>& reports);
void save_comparison(const ComparisonTable& table, const std::string& path);

int worker_thread_cap();  // PHIJACK_THREADS, default 1

}  // namespace phijack
