#include "phijack/runner.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>

#include "phijack/kernels.hpp"

namespace phijack {

namespace fs = std::filesystem;

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "mode", "seed", "out", "zoo", "patch", "episodes", "surrogate", "eval.seed",
      "encoder.patch_size", "encoder.depth", "encoder.dim", "encoder.heads",
      "encoder.mlp_hidden", "encoder.count",
      "pretrain.scenes", "pretrain.epochs", "pretrain.batch", "pretrain.temperature",
      "pretrain.lr", "pretrain.margin_stop", "pretrain.margin_gate", "pretrain.heldout",
      "pretrain.min_coverage",
      "clone.scenes", "clone.epochs", "clone.batch", "clone.lr", "clone.hidden",
      "clone.pool_temperature", "clone.heldout", "clone.gate_l2",
      "gate.episodes", "gate.max_fr",
      "policy.top_k", "policy.temperature",
      "attack.steps", "attack.inner_steps", "attack.batch", "attack.lr", "attack.optimizer",
      "attack.fraction", "attack.anchor", "attack.variant",
      "objective.alpha", "objective.lambda", "objective.tau", "objective.top_k",
      "objective.epsilon",
      "train.size",
      "baseline.kind",
      "ablate.variant", "ablate.values", "ablate.episodes",
  };
  return keys;
}

RunSettings parse_settings(const Config& cfg, const std::string& mode) {
  cfg.require_known_keys(known_config_keys());
  if (const auto m = cfg.get("mode"); m.has_value() && *m != mode) {
    fail(ErrorKind::Usage, "config mode '" + *m + "' does not match requested mode '" + mode + "'");
  }
  if (!cfg.has("seed")) fail(ErrorKind::Usage, "config requires a seed");

  RunSettings s;
  s.mode = mode;
  s.seed = cfg.get_u64("seed", 0);
  s.out = cfg.get_string("out", "");
  s.zoo_dir = cfg.get_string("zoo", "");
  s.patch_path = cfg.get_string("patch", "");
  s.surrogate_id = cfg.get_string("surrogate", "A-e0");
  s.episodes = cfg.get_int("episodes", 200);
  s.eval_seed = cfg.get_u64("eval.seed", sub_seed(s.seed, "eval"));

  s.zoo.arch.patch_size = cfg.get_int("encoder.patch_size", 8);
  s.zoo.arch.depth = cfg.get_int("encoder.depth", 2);
  s.zoo.arch.dim = cfg.get_int("encoder.dim", 32);
  s.zoo.arch.heads = cfg.get_int("encoder.heads", 4);
  s.zoo.arch.mlp_hidden = cfg.get_int("encoder.mlp_hidden", 64);
  s.zoo.encoder_count = cfg.get_int("encoder.count", 2);

  s.zoo.pretrain.scenes = cfg.get_int("pretrain.scenes", 2000);
  s.zoo.pretrain.epochs = cfg.get_int("pretrain.epochs", 20);
  s.zoo.pretrain.batch = cfg.get_int("pretrain.batch", 8);
  s.zoo.pretrain.temperature = cfg.get_double("pretrain.temperature", 0.07);
  s.zoo.pretrain.lr = cfg.get_double("pretrain.lr", 3e-3);
  s.zoo.pretrain.margin_stop = cfg.get_double("pretrain.margin_stop", 0.30);
  s.zoo.pretrain.margin_gate = cfg.get_double("pretrain.margin_gate", 0.20);
  s.zoo.pretrain.heldout_scenes = cfg.get_int("pretrain.heldout", 48);
  s.zoo.pretrain.min_coverage = cfg.get_double("pretrain.min_coverage", 0.12);

  s.zoo.clone.scenes = cfg.get_int("clone.scenes", 260);
  s.zoo.clone.epochs = cfg.get_int("clone.epochs", 60);
  s.zoo.clone.batch = cfg.get_int("clone.batch", 64);
  s.zoo.clone.lr = cfg.get_double("clone.lr", 2e-3);
  s.zoo.clone.hidden = cfg.get_int("clone.hidden", 32);
  s.zoo.clone.pool_temperature = cfg.get_double("clone.pool_temperature", 0.06);
  s.zoo.clone.heldout_scenes = cfg.get_int("clone.heldout", 40);
  s.zoo.clone_gate_l2 = cfg.get_double("clone.gate_l2", 1.0);
  s.zoo.gate_episodes = cfg.get_int("gate.episodes", 200);
  s.zoo.gate_max_fr = cfg.get_double("gate.max_fr", 0.10);
  s.zoo.localizer.top_k = cfg.get_int("policy.top_k", 2);
  s.zoo.localizer.temperature = cfg.get_double("policy.temperature", 0.08);

  s.attack.attack_steps = cfg.get_int("attack.steps", 500);
  s.attack.inner_steps = cfg.get_int("attack.inner_steps", 50);
  s.attack.batch_size = cfg.get_int("attack.batch", 4);
  s.attack.learning_rate = cfg.get_double("attack.lr", 0.01);
  const std::string opt = cfg.get_string("attack.optimizer", "adam");
  if (opt == "adam") {
    s.attack.optimizer = OptimizerKind::Adam;
  } else if (opt == "signed") {
    s.attack.optimizer = OptimizerKind::SignedGradient;
  } else {
    fail(ErrorKind::Usage, "attack.optimizer must be adam or signed, got '" + opt + "'");
  }
  s.attack.patch_fraction = cfg.get_double("attack.fraction", 0.05);
  const std::string anchor = cfg.get_string("attack.anchor", "auto");
  if (anchor == "auto") {
    s.attack.anchor_row = -1;
    s.attack.anchor_col = -1;
  } else {
    const auto comma = anchor.find(',');
    if (comma == std::string::npos) {
      fail(ErrorKind::Usage, "attack.anchor must be 'auto' or 'row,col'");
    }
    try {
      s.attack.anchor_row = std::stoi(anchor.substr(0, comma));
      s.attack.anchor_col = std::stoi(anchor.substr(comma + 1));
    } catch (const std::exception&) {
      fail(ErrorKind::Usage, "attack.anchor must be 'auto' or 'row,col'");
    }
  }
  s.attack.variant = variant_from_name(cfg.get_string("attack.variant", "full"));
  s.attack.seed = sub_seed(s.seed, "attack");

  s.attack.objective.alpha = cfg.get_double("objective.alpha", 2.0);
  s.attack.objective.lambda = cfg.get_double("objective.lambda", 0.2);
  s.attack.objective.tau = cfg.get_int("objective.tau", 5);
  s.attack.objective.top_k = cfg.get_int("objective.top_k", 2);
  s.attack.objective.epsilon = cfg.get_double("objective.epsilon", 1e-8);

  s.train_set_size = cfg.get_int("train.size", 256);
  s.baseline_kind = cfg.get_string("baseline.kind", "random");
  s.ablate_variant = cfg.get_string("ablate.variant", "");
  s.ablate_values = cfg.get_string("ablate.values", "");
  s.ablate_episodes = cfg.get_int("ablate.episodes", 100);

  s.config_hash = bytes_checksum(cfg.serialize().data(), cfg.serialize().size());

  if (s.out.empty()) fail(ErrorKind::Usage, "config requires an output directory (out)");
  const bool needs_zoo = mode == "attack" || mode == "evaluate" || mode == "ablate" ||
                         mode == "baseline";
  if (needs_zoo && s.zoo_dir.empty()) {
    fail(ErrorKind::Usage, "mode '" + mode + "' requires a zoo directory (zoo)");
  }
  return s;
}

namespace {

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void base_manifest(Manifest& m, const RunSettings& s) {
  m.set("version", kVersionString);
  m.set("mode", s.mode);
  m.set("seed", std::to_string(s.seed));
  m.set("config_hash", checksum_hex(s.config_hash));
  m.set("kernels", kern::active_backend());
  m.set("layouts", kLayoutRegistryVersion);
  m.set("created", timestamp_now());
}

std::string policy_id(PolicyFamily family, int tag) {
  return std::string(family_name(family)) + "-e" + std::to_string(tag);
}

}  // namespace

void run_pretrain(const RunSettings& s) {
  fs::create_directories(s.out);
  Manifest manifest;
  base_manifest(manifest, s);

  std::vector<std::shared_ptr<const VisionEncoder>> encoders;
  for (int k = 0; k < s.zoo.encoder_count; ++k) {
    EncoderConfig arch = s.zoo.arch;
    arch.seed = sub_seed(s.seed, "encoder", static_cast<uint64_t>(k));
    PretrainResult pre =
        pretrain_contrastive(arch, s.zoo.pretrain, sub_seed(s.seed, "enc-data", k));
    const std::string path = s.out + "/encoder_e" + std::to_string(k) + ".phe";
    save_encoder(pre.encoder, path);
    manifest.add_artifact("encoder_e" + std::to_string(k), path);
    manifest.set("margin.token.e" + std::to_string(k), std::to_string(pre.margin.token_margin));
    manifest.set("margin.concept.e" + std::to_string(k),
                 std::to_string(pre.margin.concept_margin));
    manifest.set("pretrain.epochs_run.e" + std::to_string(k), std::to_string(pre.epochs_run));
    // downstream stages must see exactly what the checkpoint holds
    encoders.push_back(std::make_shared<VisionEncoder>(load_encoder(path)));
  }

  std::vector<Policy> policies;
  for (int k = 0; k < s.zoo.encoder_count; ++k) {
    Policy a;
    a.id = policy_id(PolicyFamily::TokenArgmax, k);
    a.family = PolicyFamily::TokenArgmax;
    a.encoder_tag = k;
    a.encoder = encoders[k];
    a.localizer = s.zoo.localizer;
    policies.push_back(a);

    for (PolicyFamily fam : {PolicyFamily::LearnedHead, PolicyFamily::MultiFrame}) {
      CloneConfig ccfg = s.zoo.clone;
      ccfg.pool_temperature = s.zoo.localizer.temperature;
      CloneResult clone = clone_head(
          *encoders[k], fam, ccfg,
          sub_seed(s.seed, std::string("clone-") + family_name(fam), static_cast<uint64_t>(k)));
      if (clone.heldout_l2 > s.zoo.clone_gate_l2) {
        fail(ErrorKind::Training, "behavior cloning for " + policy_id(fam, k) +
                                      " missed the expert-error gate: " +
                                      std::to_string(clone.heldout_l2) + " px > " +
                                      std::to_string(s.zoo.clone_gate_l2) + " px");
      }
      const int window = fam == PolicyFamily::MultiFrame ? 2 : 1;
      const std::string path = s.out + "/head_" + policy_id(fam, k) + ".phh";
      save_head(clone.head, fam, window, k, ccfg.pool_temperature, path);
      manifest.add_artifact("head_" + policy_id(fam, k), path);
      manifest.set("clone.l2." + policy_id(fam, k), std::to_string(clone.heldout_l2));

      LoadedHead loaded = load_head(path);
      Policy p;
      p.id = policy_id(fam, k);
      p.family = fam;
      p.encoder_tag = k;
      p.encoder = encoders[k];
      p.localizer = s.zoo.localizer;
      p.localizer.temperature = loaded.pool_temperature;
      p.head = std::move(loaded.head);
      p.frame_window = loaded.frame_window;
      policies.push_back(std::move(p));
    }
  }

  // clean competence gate: the zoo is unusable if any victim fails benignly
  FRReport benign = failure_rate(policies, nullptr, "benign", s.zoo.gate_episodes,
                                 sub_seed(s.seed, "benign-gate"), "");
  const std::string benign_path = s.out + "/benign_gate.csv";
  save_fr_report(benign, benign_path);
  manifest.add_artifact("benign_gate", benign_path);
  for (const auto& row : benign.rows) {
    manifest.set("benign_fr." + row.policy_id, std::to_string(row.fr));
    if (row.fr > s.zoo.gate_max_fr) {
      manifest.save(s.out + "/zoo_manifest.txt");
      fail(ErrorKind::Training, "policy " + row.policy_id + " fails the benign gate: FR " +
                                    std::to_string(row.fr) + " > " +
                                    std::to_string(s.zoo.gate_max_fr));
    }
  }

  manifest.set("policy.top_k", std::to_string(s.zoo.localizer.top_k));
  manifest.set("policy.temperature", std::to_string(s.zoo.localizer.temperature));
  manifest.set("encoder.count", std::to_string(s.zoo.encoder_count));
  manifest.save(s.out + "/zoo_manifest.txt");
}

Zoo load_zoo(const std::string& dir) {
  Zoo zoo;
  zoo.dir = dir;
  zoo.manifest = Manifest::load(dir + "/zoo_manifest.txt");

  const int count = std::stoi(zoo.manifest.get("encoder.count").value_or("0"));
  if (count < 1) fail(ErrorKind::Integrity, "zoo manifest lists no encoders");
  LocalizerParams loc;
  loc.top_k = std::stoi(zoo.manifest.get("policy.top_k").value_or("4"));
  loc.temperature = std::stod(zoo.manifest.get("policy.temperature").value_or("0.06"));

  for (int k = 0; k < count; ++k) {
    const std::string path = dir + "/encoder_e" + std::to_string(k) + ".phe";
    zoo.manifest.verify_artifact("encoder_e" + std::to_string(k), path);
    zoo.encoders.push_back(std::make_shared<VisionEncoder>(load_encoder(path)));
  }
  for (int k = 0; k < count; ++k) {
    Policy a;
    a.id = policy_id(PolicyFamily::TokenArgmax, k);
    a.family = PolicyFamily::TokenArgmax;
    a.encoder_tag = k;
    a.encoder = zoo.encoders[k];
    a.localizer = loc;
    zoo.policies.push_back(a);

    for (PolicyFamily fam : {PolicyFamily::LearnedHead, PolicyFamily::MultiFrame}) {
      const std::string name = "head_" + policy_id(fam, k);
      const std::string path = dir + "/" + name + ".phh";
      zoo.manifest.verify_artifact(name, path);
      LoadedHead loaded = load_head(path);
      Policy p;
      p.id = policy_id(fam, k);
      p.family = fam;
      p.encoder_tag = k;
      p.encoder = zoo.encoders[k];
      p.localizer = loc;
      p.localizer.temperature = loaded.pool_temperature;
      p.head = std::move(loaded.head);
      p.frame_window = loaded.frame_window;
      zoo.policies.push_back(std::move(p));
    }
  }
  return zoo;
}

const Policy& Zoo::find_policy(const std::string& id) const {
  for (const auto& p : policies) {
    if (p.id == id) return p;
  }
  fail(ErrorKind::Usage, "policy '" + id + "' not in zoo");
}

namespace {

void emit_patch_artifacts(const RunSettings& s, Manifest& manifest, const Patch& patch,
                          const std::vector<LossLogRow>* log) {
  fs::create_directories(s.out);
  const std::string patch_path = s.out + "/patch.phj";
  save_patch(patch, patch_path);
  save_patch_ppm(patch, s.out + "/patch.ppm");
  manifest.add_artifact("patch", patch_path);
  manifest.add_artifact("patch_ppm", s.out + "/patch.ppm");
  if (log != nullptr) {
    const std::string log_path = s.out + "/loss_log.csv";
    save_loss_log(*log, log_path);
    manifest.add_artifact("loss_log", log_path);
  }
  manifest.save(s.out + "/manifest.txt");
}

}  // namespace

void run_attack(const RunSettings& s) {
  Zoo zoo = load_zoo(s.zoo_dir);
  const Policy& surrogate = zoo.find_policy(s.surrogate_id);
  const ObservationSet train =
      make_observation_set(s.seed, "train", s.train_set_size, ObservationSet::Split::Train);

  AttackConfig cfg = s.attack;
  AttackResult result = optimize_patch(train, *surrogate.encoder, cfg);

  Manifest manifest;
  base_manifest(manifest, s);
  manifest.set("surrogate", s.surrogate_id);
  manifest.set("variant", variant_name(cfg.variant));
  manifest.set("encoder_checksum",
               checksum_hex(file_checksum(s.zoo_dir + "/encoder_e" +
                                          std::to_string(surrogate.encoder_tag) + ".phe")));
  emit_patch_artifacts(s, manifest, result.patch, &result.log);
}

void run_baseline(const RunSettings& s) {
  Zoo zoo = load_zoo(s.zoo_dir);
  Manifest manifest;
  base_manifest(manifest, s);
  manifest.set("baseline", s.baseline_kind);

  const ObservationSet train =
      make_observation_set(s.seed, "train", s.train_set_size, ObservationSet::Split::Train);

  if (s.baseline_kind == "random") {
    const Image& probe = train.observations.front().image;
    Patch p = baseline_random(s.attack, probe.height, probe.width);
    emit_patch_artifacts(s, manifest, p, nullptr);
  } else if (s.baseline_kind == "arm-image") {
    Patch p = baseline_arm_image(train, s.attack);
    emit_patch_artifacts(s, manifest, p, nullptr);
  } else if (s.baseline_kind == "action-error") {
    std::string bid = "B-e0";
    if (s.surrogate_id.rfind("B-", 0) == 0) bid = s.surrogate_id;
    const Policy& surrogate = zoo.find_policy(bid);
    manifest.set("surrogate", bid);
    AttackResult result = baseline_action_error(train, surrogate, s.attack);
    emit_patch_artifacts(s, manifest, result.patch, &result.log);
  } else {
    fail(ErrorKind::Usage, "baseline.kind must be random, arm-image or action-error");
  }
}

void run_evaluate(const RunSettings& s) {
  Zoo zoo = load_zoo(s.zoo_dir);
  fs::create_directories(s.out);
  Manifest manifest;
  base_manifest(manifest, s);

  FRReport benign =
      failure_rate(zoo.policies, nullptr, "benign", s.episodes, s.eval_seed, s.surrogate_id);
  save_fr_report(benign, s.out + "/benign_report.csv");
  manifest.add_artifact("benign_report", s.out + "/benign_report.csv");

  if (!s.patch_path.empty()) {
    const Patch patch = load_patch(s.patch_path);
    manifest.set("patch_input", s.patch_path);
    manifest.set("patch_checksum", checksum_hex(file_checksum(s.patch_path)));
    FRReport report = failure_rate(zoo.policies, &patch, fs::path(s.patch_path).stem().string(),
                                   s.episodes, s.eval_seed, s.surrogate_id);
    save_fr_report(report, s.out + "/fr_report.csv");
    manifest.add_artifact("fr_report", s.out + "/fr_report.csv");
  }
  manifest.save(s.out + "/manifest.txt");
}

void run_ablate(const RunSettings& s) {
  Zoo zoo = load_zoo(s.zoo_dir);
  const Policy& surrogate = zoo.find_policy(s.surrogate_id);
  const ObservationSet train =
      make_observation_set(s.seed, "train", s.train_set_size, ObservationSet::Split::Train);
  fs::create_directories(s.out);

  Manifest manifest;
  base_manifest(manifest, s);
  manifest.set("ablate.variant", s.ablate_variant);

  struct Arm {
    std::string name;
    AttackConfig cfg;
  };
  std::vector<Arm> arms;
  if (s.ablate_variant == "lambda-sweep") {
    const auto values = parse_double_list(
        s.ablate_values.empty() ? "0.1,0.2,0.3,0.5" : s.ablate_values);
    if (values.empty()) fail(ErrorKind::Usage, "lambda-sweep needs ablate.values");
    for (double v : values) {
      AttackConfig cfg = s.attack;
      cfg.variant = AttackVariant::Full;
      cfg.objective.lambda = v;
      char name[32];
      std::snprintf(name, sizeof(name), "lambda=%g", v);
      arms.push_back({name, cfg});
    }
  } else if (s.ablate_variant == "tau-sweep") {
    const auto values =
        parse_int_list(s.ablate_values.empty() ? "3,5,10" : s.ablate_values);
    if (values.empty()) fail(ErrorKind::Usage, "tau-sweep needs ablate.values");
    for (int v : values) {
      AttackConfig cfg = s.attack;
      cfg.variant = AttackVariant::Full;
      cfg.objective.tau = v;
      arms.push_back({"tau=" + std::to_string(v), cfg});
    }
    AttackConfig joint = s.attack;
    joint.variant = AttackVariant::NoAlternate;
    arms.push_back({"no-alternate", joint});
  } else if (s.ablate_variant == "full" || s.ablate_variant == "no-suppress" ||
             s.ablate_variant == "no-sem-inject" || s.ablate_variant == "no-vis-inject" ||
             s.ablate_variant == "no-alternate") {
    AttackConfig cfg = s.attack;
    cfg.variant = variant_from_name(s.ablate_variant);
    arms.push_back({s.ablate_variant, cfg});
  } else {
    fail(ErrorKind::Usage, "ablate.variant must be a loss variant, lambda-sweep or tau-sweep");
  }

  std::vector<FRReport> reports;
  for (const Arm& arm : arms) {
    const std::string arm_dir = s.out + "/arm_" + arm.name;
    fs::create_directories(arm_dir);
    AttackResult result = optimize_patch(train, *surrogate.encoder, arm.cfg);
    const std::string patch_path = arm_dir + "/patch.phj";
    save_patch(result.patch, patch_path);
    save_patch_ppm(result.patch, arm_dir + "/patch.ppm");
    save_loss_log(result.log, arm_dir + "/loss_log.csv");
    manifest.add_artifact("patch_" + arm.name, patch_path);
    manifest.add_artifact("loss_log_" + arm.name, arm_dir + "/loss_log.csv");

    const Patch reloaded = load_patch(patch_path);
    FRReport report = failure_rate(zoo.policies, &reloaded, arm.name, s.ablate_episodes,
                                   s.eval_seed, s.surrogate_id);
    save_fr_report(report, arm_dir + "/fr_report.csv");
    manifest.add_artifact("fr_report_" + arm.name, arm_dir + "/fr_report.csv");
    reports.push_back(std::move(report));
  }

  const ComparisonTable table = compare_report(reports);
  save_comparison(table, s.out + "/comparison.csv");
  manifest.add_artifact("comparison", s.out + "/comparison.csv");
  manifest.save(s.out + "/manifest.txt");
}

void run_mode(const RunSettings& s) {
  if (s.mode == "pretrain") {
    run_pretrain(s);
  } else if (s.mode == "attack") {
    run_attack(s);
  } else if (s.mode == "baseline") {
    run_baseline(s);
  } else if (s.mode == "evaluate") {
    run_evaluate(s);
  } else if (s.mode == "ablate") {
    run_ablate(s);
  } else {
    fail(ErrorKind::Usage, "unknown mode '" + s.mode +
                               "' (expected pretrain|attack|baseline|evaluate|ablate)");
  }
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Integrity: return 3;
    case ErrorKind::Training: return 4;
    default: return 1;
  }
}

}  // namespace phijack
