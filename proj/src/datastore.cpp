#include "corl/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace corl {

void EpisodeSet::finalize() {
  for (auto& ep : episodes) {
    CORL_CHECK(ep.T > 0, "episode without steps");
    CORL_CHECK(int(ep.states.size()) == ep.T * state_dim &&
                   int(ep.actions.size()) == ep.T * action_dim &&
                   int(ep.rewards.size()) == ep.T,
               "episode field sizes inconsistent");
    ep.rtg.assign(size_t(ep.T), 0.0);
    double acc = 0.0;
    for (int t = ep.T - 1; t >= 0; --t) {
      acc += ep.rewards[size_t(t)];
      ep.rtg[size_t(t)] = acc;
    }
    ep.ret = acc;
  }
}

void save_episodes(const EpisodeSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  CORL_CHECK(out.good(), "cannot open for write: " + path);
  nlohmann::json header;
  header["format_version"] = 1;
  header["task_id"] = set.task_id;
  header["episode_count"] = int(set.episodes.size());
  header["state_dim"] = set.state_dim;
  header["action_dim"] = set.action_dim;
  out << header.dump() << "\n";
  for (const auto& ep : set.episodes) {
    nlohmann::json je;
    auto nest = [](const std::vector<double>& flat, int width) {
      nlohmann::json rows = nlohmann::json::array();
      for (size_t i = 0; i < flat.size(); i += size_t(width)) {
        nlohmann::json row = nlohmann::json::array();
        for (int k = 0; k < width; ++k) row.push_back(flat[i + size_t(k)]);
        rows.push_back(std::move(row));
      }
      return rows;
    };
    je["states"] = nest(ep.states, set.state_dim);
    je["actions"] = nest(ep.actions, set.action_dim);
    je["rewards"] = ep.rewards;
    je["ret"] = ep.ret;
    out << je.dump() << "\n";
  }
  CORL_CHECK(out.good(), "write failed: " + path);
}

EpisodeSet load_episodes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  CORL_CHECK(in.good(), "cannot open: " + path);
  std::string line;
  CORL_CHECK(bool(std::getline(in, line)), "empty dataset file: " + path);
  auto header = nlohmann::json::parse(line);
  CORL_CHECK(header.at("format_version").get<int>() == 1,
             "unsupported dataset format version in " + path);

  EpisodeSet set;
  set.task_id = header.at("task_id").get<int>();
  set.state_dim = header.at("state_dim").get<int>();
  set.action_dim = header.at("action_dim").get<int>();
  const int expected = header.at("episode_count").get<int>();

  auto flatten = [](const nlohmann::json& rows, int width,
                    std::vector<double>& out) {
    for (const auto& row : rows) {
      CORL_CHECK(int(row.size()) == width, "row width mismatch in dataset");
      for (const auto& v : row) out.push_back(v.get<double>());
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto je = nlohmann::json::parse(line);
    Episode ep;
    flatten(je.at("states"), set.state_dim, ep.states);
    flatten(je.at("actions"), set.action_dim, ep.actions);
    ep.rewards = je.at("rewards").get<std::vector<double>>();
    ep.T = int(ep.rewards.size());
    const double stored_ret = je.at("ret").get<double>();
    double acc = 0.0;
    for (double r : ep.rewards) acc += r;
    CORL_CHECK(std::fabs(acc - stored_ret) <= 1e-9,
               "return-to-go inconsistent with rewards in " + path);
    set.episodes.push_back(std::move(ep));
  }
  CORL_CHECK(int(set.episodes.size()) == expected,
             "episode count mismatch in " + path);
  set.finalize();
  return set;
}

WindowBatch make_window_batch(int b, int m, int state_dim, int action_dim) {
  WindowBatch wb;
  wb.B = b;
  wb.M = m;
  wb.state_dim = state_dim;
  wb.action_dim = action_dim;
  wb.rtg = Tensor({b, m});
  wb.states = Tensor({b, m, state_dim});
  wb.actions = Tensor({b, m, action_dim});
  wb.timesteps.assign(size_t(b) * m, 0);
  wb.loss_mask.assign(size_t(b) * m, 0);
  return wb;
}

void fill_window(const EpisodeSet& set, int e, int end, int m, WindowBatch& out,
                 int slot) {
  const Episode& ep = set.episodes[size_t(e)];
  CORL_CHECK(end >= 0 && end < ep.T, "window end out of range");
  CORL_CHECK(!ep.rtg.empty(), "episode set not finalized");
  const int s = set.state_dim, a = set.action_dim;
  for (int k = 0; k < m; ++k) {
    const int step = end - m + 1 + k;
    const size_t flat = size_t(slot) * m + size_t(k);
    if (step < 0) continue;  // left padding stays zeroed, timestep 0
    out.rtg[int64_t(flat)] = ep.rtg[size_t(step)];
    for (int i = 0; i < s; ++i)
      out.states[int64_t(flat) * s + i] = ep.states[size_t(step) * s + size_t(i)];
    for (int i = 0; i < a; ++i)
      out.actions[int64_t(flat) * a + i] = ep.actions[size_t(step) * a + size_t(i)];
    out.timesteps[flat] = step + 1;
    out.loss_mask[flat] = 1;
  }
}

WindowBatch sample_windows(const EpisodeSet& set, int batch, int m, Rng& rng) {
  CORL_CHECK(!set.episodes.empty(), "sampling from empty episode set");
  CORL_CHECK(batch > 0 && m > 0, "bad window batch request");
  WindowBatch wb = make_window_batch(batch, m, set.state_dim, set.action_dim);
  for (int b = 0; b < batch; ++b) {
    const int e = rng.uniform_int(int(set.episodes.size()));
    const int end = rng.uniform_int(set.episodes[size_t(e)].T);
    fill_window(set, e, end, m, wb, b);
  }
  return wb;
}

double return_percentile(const EpisodeSet& set, double pct) {
  CORL_CHECK(!set.episodes.empty(), "percentile of empty episode set");
  CORL_CHECK(pct >= 0.0 && pct <= 100.0, "percentile out of range");
  std::vector<double> rets;
  rets.reserve(set.episodes.size());
  for (const auto& ep : set.episodes) rets.push_back(ep.ret);
  std::sort(rets.begin(), rets.end());
  const double pos = pct / 100.0 * double(rets.size() - 1);
  const size_t lo = size_t(pos);
  if (lo + 1 >= rets.size()) return rets.back();
  const double frac = pos - double(lo);
  return rets[lo] * (1.0 - frac) + rets[lo + 1] * frac;
}

}  // namespace corl
