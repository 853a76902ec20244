#include <cstdio>
#include <cstring>
#include <exception>
#include <string>

#include "phijack/config.hpp"
#include "phijack/runner.hpp"

namespace {

void usage(std::FILE* to) {
  std::fprintf(to,
               "usage: phijack <mode> --config <path> [--seed N] [--out <dir>]\n"
               "\n"
               "modes:\n"
               "  pretrain   build the encoder + policy zoo (with competence gates)\n"
               "  attack     optimize the hijack patch against the surrogate\n"
               "  baseline   generate a baseline patch (random | arm-image | action-error)\n"
               "  evaluate   measure failure rates for a patch file (plus benign)\n"
               "  ablate     run loss-variant or sweep experiments with comparison table\n"
               "\n"
               "exit codes: 0 ok, 2 config error, 3 integrity error, 4 training failure\n");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage(stderr);
    return 2;
  }
  const std::string mode = argv[1];
  if (mode == "--help" || mode == "-h" || mode == "help") {
    usage(stdout);
    return 0;
  }

  std::string config_path;
  std::string seed_override;
  std::string out_override;
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    const auto next = [&](const char* what) -> std::string {
      if (i + 1 >= argc) {
        std::fprintf(stderr, "phijack: %s expects a value\n", what);
        std::exit(2);
      }
      return argv[++i];
    };
    if (arg == "--config") {
      config_path = next("--config");
    } else if (arg == "--seed") {
      seed_override = next("--seed");
    } else if (arg == "--out") {
      out_override = next("--out");
    } else {
      std::fprintf(stderr, "phijack: unknown argument '%s'\n", arg.c_str());
      usage(stderr);
      return 2;
    }
  }
  if (config_path.empty()) {
    std::fprintf(stderr, "phijack: --config is required\n");
    return 2;
  }

  try {
    phijack::Config cfg = phijack::Config::parse_file(config_path);
    if (!seed_override.empty()) cfg.set("seed", seed_override);
    if (!out_override.empty()) cfg.set("out", out_override);
    phijack::RunSettings settings = phijack::parse_settings(cfg, mode);
    phijack::run_mode(settings);
    return 0;
  } catch (const phijack::Error& e) {
    std::fprintf(stderr, "phijack: %s error: %s\n", phijack::error_kind_name(e.kind()), e.what());
    return phijack::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "phijack: %s\n", e.what());
    return 1;
  }
}
