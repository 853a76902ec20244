#pragma once

#include <memory>
#include <string>
#include <vector>

#include "phijack/attack.hpp"
#include "phijack/config.hpp"
#include "phijack/evaluate.hpp"
#include "phijack/manifest.hpp"
#include "phijack/policy.hpp"
#include "phijack/pretrain.hpp"

namespace phijack {

// Experiment orchestration: pretrain -> attack -> evaluate -> ablate, with
// every cross-stage handoff going through the serialized artifact so a
// reloaded run reproduces byte-identical reports.

struct ZooSettings {
  EncoderConfig arch;      // seed field ignored; per-encoder seeds derive from the run seed
  int encoder_count = 2;
  PretrainConfig pretrain;
  CloneConfig clone;
  double clone_gate_l2 = 1.0;
  int gate_episodes = 200;
  double gate_max_fr = 0.10;
  LocalizerParams localizer;
};

struct RunSettings {
  std::string mode;
  uint64_t seed = 0;
  std::string out;
  std::string zoo_dir;
  std::string patch_path;  // evaluate: input patch ("": benign only)
  std::string surrogate_id = "A-e0";
  int episodes = 200;
  uint64_t eval_seed = 0;  // derived from seed unless overridden

  ZooSettings zoo;
  AttackConfig attack;
  int train_set_size = 256;

  std::string baseline_kind = "random";
  std::string ablate_variant;
  std::string ablate_values;
  int ablate_episodes = 100;

  uint64_t config_hash = 0;
};

// Parses + validates a config (unknown keys are hard usage errors).
RunSettings parse_settings(const Config& cfg, const std::string& mode);

// The full documented key set.
const std::vector<std::string>& known_config_keys();

struct Zoo {
  std::vector<std::shared_ptr<const VisionEncoder>> encoders;
  std::vector<Policy> policies;
  Manifest manifest;
  std::string dir;

  const Policy& find_policy(const std::string& id) const;
  std::vector<Policy> victims() const { return policies; }
};

// pretrain mode: builds encoders + cloned heads, runs the benign competence
// gate, writes everything plus the zoo manifest into settings.out.
void run_pretrain(const RunSettings& settings);

// Loads a zoo directory, verifying every artifact checksum first.
Zoo load_zoo(const std::string& dir);

void run_attack(const RunSettings& settings);
void run_baseline(const RunSettings& settings);
void run_evaluate(const RunSettings& settings);
void run_ablate(const RunSettings& settings);

// CLI entry: dispatches on mode. Throws phijack::Error; the binary maps
// error kinds onto exit codes.
void run_mode(const RunSettings& settings);

// exit code mapping: 0 ok, 2 usage, 3 integrity, 4 training failure, 1 other
int exit_code_for(ErrorKind kind);

}  // namespace phijack
