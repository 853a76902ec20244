#include "phijack/evaluate.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "phijack/rng.hpp"

namespace phijack {

int worker_thread_cap() {
  const char* env = std::getenv("PHIJACK_THREADS");
  if (env == nullptr) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

RolloutResult rollout(const Policy& policy, const Scene& scene, const Patch* patch,
                      int max_steps) {
  RolloutResult result;
  Scene state = scene;
  std::vector<Image> history;
  result.trajectory.push_back({state.tip_row, state.tip_col});
  if (at_target(state)) {
    result.success = true;
    return result;
  }
  for (int step = 0; step < max_steps; ++step) {
    Image frame = render_scene(state).image;
    if (patch != nullptr) {
      frame = compose_adversarial(frame, *patch).first;
    }
    history.push_back(std::move(frame));
    while (static_cast<int>(history.size()) < policy.required_history()) {
      history.insert(history.begin(), history.front());
    }
    if (static_cast<int>(history.size()) > policy.required_history()) {
      history.erase(history.begin(),
                    history.end() - policy.required_history());
    }
    const Action a = act(policy, history, scene.instruction());
    apply_action(state, a);
    result.steps_used = step + 1;
    result.trajectory.push_back({state.tip_row, state.tip_col});
    if (at_target(state)) {
      result.success = true;
      break;
    }
  }
  return result;
}

const PolicyFr* FRReport::find(const std::string& policy_id) const {
  for (const auto& r : rows) {
    if (r.policy_id == policy_id) return &r;
  }
  return nullptr;
}

FRReport failure_rate(const std::vector<Policy>& policies, const Patch* patch,
                      const std::string& patch_id, int episodes_per_policy, uint64_t seed,
                      const std::string& surrogate_id) {
  if (episodes_per_policy < 1) fail(ErrorKind::Usage, "failure_rate needs at least one episode");
  FRReport report;
  report.seed = seed;
  report.patch_id = patch_id;
  report.surrogate_id = surrogate_id;

  // one shared scene stream: episode i is identical across policies
  std::vector<Observation> scenes;
  scenes.reserve(episodes_per_policy);
  for (int ep = 0; ep < episodes_per_policy; ++ep) {
    scenes.push_back(
        generate_scene(sub_seed(seed, "eval-scene", static_cast<uint64_t>(ep)), ep % kLayoutCount));
  }

  const int threads = worker_thread_cap();
  for (const Policy& policy : policies) {
    std::vector<uint8_t> failed(episodes_per_policy, 0);
    const auto run_range = [&](int lo, int hi) {
      for (int ep = lo; ep < hi; ++ep) {
        const RolloutResult rr = rollout(policy, scenes[ep].scene, patch);
        failed[ep] = rr.success ? 0 : 1;
      }
    };
    if (threads <= 1 || episodes_per_policy < 2 * threads) {
      run_range(0, episodes_per_policy);
    } else {
      std::vector<std::thread> pool;
      const int chunk = (episodes_per_policy + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        const int lo = t * chunk;
        const int hi = std::min(episodes_per_policy, lo + chunk);
        if (lo < hi) pool.emplace_back(run_range, lo, hi);
      }
      for (auto& th : pool) th.join();
    }
    // ordered reduction by episode index
    int failures = 0;
    for (int ep = 0; ep < episodes_per_policy; ++ep) failures += failed[ep];
    PolicyFr row;
    row.policy_id = policy.id;
    row.family = family_name(policy.family);
    row.encoder_seed = policy.encoder_tag;
    row.episodes = episodes_per_policy;
    row.failures = failures;
    row.fr = static_cast<double>(failures) / episodes_per_policy;
    report.rows.push_back(row);
  }

  double sum = 0.0;
  int n = 0;
  for (const auto& r : report.rows) {
    if (r.policy_id == surrogate_id) continue;
    sum += r.fr;
    ++n;
  }
  report.transfer_avg = n > 0 ? sum / n : 0.0;
  return report;
}

namespace {
std::string fr_to_string(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

void save_fr_report(const FRReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << "policy_id,family,encoder_seed,episodes,failures,fr\n";
  for (const auto& r : report.rows) {
    os << r.policy_id << "," << r.family << "," << r.encoder_seed << "," << r.episodes << ","
       << r.failures << "," << fr_to_string(r.fr) << "\n";
  }
  os << "transfer_avg,,,,," << fr_to_string(report.transfer_avg) << "\n";
  os << "# patch_id=" << report.patch_id << " seed=" << report.seed
     << " surrogate=" << report.surrogate_id << "\n";
}

FRReport load_fr_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  FRReport report;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string tok;
      while (meta >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq);
        const std::string value = tok.substr(eq + 1);
        if (key == "patch_id") report.patch_id = value;
        if (key == "seed") report.seed = std::stoull(value);
        if (key == "surrogate") report.surrogate_id = value;
      }
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() < 6) fail(ErrorKind::Integrity, path + ": malformed FR row: " + line);
    if (fields[0] == "transfer_avg") {
      report.transfer_avg = std::stod(fields[5]);
      continue;
    }
    PolicyFr row;
    row.policy_id = fields[0];
    row.family = fields[1];
    row.encoder_seed = std::stoi(fields[2]);
    row.episodes = std::stoi(fields[3]);
    row.failures = std::stoi(fields[4]);
    row.fr = std::stod(fields[5]);
    report.rows.push_back(row);
  }
  return report;
}

ComparisonTable compare_report(const std::vector<FRReport>& reports) {
  if (reports.empty()) fail(ErrorKind::Usage, "compare_report needs at least one report");
  ComparisonTable table;
  for (const auto& r : reports.front().rows) table.victim_ids.push_back(r.policy_id);
  for (const auto& rep : reports) {
    if (rep.rows.size() != table.victim_ids.size()) {
      fail(ErrorKind::Domain, "compare_report: victim sets differ between reports");
    }
    ComparisonTable::Row row;
    row.method = rep.patch_id;
    for (size_t i = 0; i < table.victim_ids.size(); ++i) {
      if (rep.rows[i].policy_id != table.victim_ids[i]) {
        fail(ErrorKind::Domain, "compare_report: victim sets differ between reports");
      }
      if (rep.rows[i].episodes != reports.front().rows[i].episodes) {
        fail(ErrorKind::Domain, "compare_report: episode counts differ between reports");
      }
      row.fr.push_back(rep.rows[i].fr);
    }
    row.transfer_avg = rep.transfer_avg;
    table.rows.push_back(std::move(row));
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const auto& a, const auto& b) { return a.transfer_avg > b.transfer_avg; });
  return table;
}

void save_comparison(const ComparisonTable& table, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << "method";
  for (const auto& v : table.victim_ids) os << "," << v;
  os << ",transfer_avg\n";
  for (const auto& row : table.rows) {
    os << row.method;
    for (double f : row.fr) os << "," << fr_to_string(f);
    os << "," << fr_to_string(row.transfer_avg) << "\n";
  }
}

}  // namespace phijack
