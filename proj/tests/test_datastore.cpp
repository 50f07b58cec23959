#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "corl/common.hpp"
#include "corl/datastore.hpp"
#include "corl/rng.hpp"
#include "corl/world.hpp"

using namespace corl;

namespace {

EpisodeSet tiny_set(int episodes, int T, uint64_t seed) {
  EpisodeSet set;
  set.task_id = 3;
  set.state_dim = 2;
  set.action_dim = 1;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    Episode ep;
    ep.T = T;
    for (int t = 0; t < T; ++t) {
      ep.states.push_back(rng.uniform(-1, 1));
      ep.states.push_back(rng.uniform(-1, 1));
      ep.actions.push_back(rng.uniform(-1, 1));
      ep.rewards.push_back(rng.uniform(-2, 0));
    }
    set.episodes.push_back(std::move(ep));
  }
  set.finalize();
  return set;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("finalize computes exact reward suffix sums") {
  EpisodeSet set = tiny_set(4, 7, 42);
  for (const Episode& ep : set.episodes) {
    double acc = 0.0;
    for (int t = ep.T - 1; t >= 0; --t) {
      acc += ep.rewards[size_t(t)];
      CHECK(ep.rtg[size_t(t)] == acc);  // same association order: exact
    }
    CHECK(ep.ret == acc);
    CHECK(ep.rtg[0] == ep.ret);
  }
  EpisodeSet bad;
  bad.state_dim = 2;
  bad.action_dim = 1;
  Episode ep;
  ep.T = 2;
  ep.states = {1, 2, 3, 4};
  ep.actions = {0.5};  // one short
  ep.rewards = {0, 0};
  bad.episodes.push_back(ep);
  CHECK_THROWS_AS(bad.finalize(), Error);
}

TEST_CASE("episode files round-trip bit-exact doubles") {
  const std::string path = "/tmp/corl_ds_roundtrip.jsonl";
  EpisodeSet set = tiny_set(5, 9, 7);
  // Include values that expose sloppy float printing.
  set.episodes[0].rewards[0] = 0.1 + 0.2;
  set.episodes[0].rewards[1] = -1.0 / 3.0;
  set.episodes[0].states[0] = 1e-17;
  set.finalize();
  save_episodes(set, path);
  EpisodeSet back = load_episodes(path);
  CHECK(back.task_id == set.task_id);
  CHECK(back.state_dim == 2);
  CHECK(back.action_dim == 1);
  REQUIRE(back.episodes.size() == set.episodes.size());
  for (size_t e = 0; e < set.episodes.size(); ++e) {
    CHECK(back.episodes[e].states == set.episodes[e].states);
    CHECK(back.episodes[e].actions == set.episodes[e].actions);
    CHECK(back.episodes[e].rewards == set.episodes[e].rewards);
    CHECK(back.episodes[e].rtg == set.episodes[e].rtg);
    CHECK(back.episodes[e].ret == set.episodes[e].ret);
  }
  std::remove(path.c_str());
}

TEST_CASE("a generated dataset survives save and load unchanged") {
  SuiteSpec suite = load_suite("");
  EpisodeSet set = generate_dataset(suite_task(suite, 4), 8, 1234);
  const std::string path = "/tmp/corl_ds_task4.jsonl";
  save_episodes(set, path);
  EpisodeSet back = load_episodes(path);
  REQUIRE(back.episodes.size() == 8);
  for (size_t e = 0; e < 8; ++e) {
    CHECK(back.episodes[e].states == set.episodes[e].states);
    CHECK(back.episodes[e].actions == set.episodes[e].actions);
    CHECK(back.episodes[e].rewards == set.episodes[e].rewards);
    CHECK(back.episodes[e].rtg == set.episodes[e].rtg);
  }
  std::remove(path.c_str());
}

TEST_CASE("loader rejects corrupted files") {
  const std::string path = "/tmp/corl_ds_corrupt.jsonl";
  EpisodeSet set = tiny_set(3, 5, 99);
  save_episodes(set, path);
  const std::string text = slurp(path);

  SUBCASE("a flipped reward digit no longer matches the stored return") {
    // Rewards are drawn from (-2, 0), so "-1." appears; bump a digit.
    auto pos = text.find("-1.");
    REQUIRE(pos != std::string::npos);
    std::string bad = text;
    bad[pos + 3] = bad[pos + 3] == '9' ? '8' : char(bad[pos + 3] + 1);
    spit(path, bad);
    CHECK_THROWS_AS((void)load_episodes(path), Error);
  }

  SUBCASE("episode count mismatch") {
    auto pos = text.find("\"episode_count\":3");
    REQUIRE(pos != std::string::npos);
    std::string bad = text;
    bad.replace(pos, 17, "\"episode_count\":4");
    spit(path, bad);
    CHECK_THROWS_AS((void)load_episodes(path), Error);
  }

  SUBCASE("wrong format version") {
    auto pos = text.find("\"format_version\":1");
    REQUIRE(pos != std::string::npos);
    std::string bad = text;
    bad.replace(pos, 18, "\"format_version\":2");
    spit(path, bad);
    CHECK_THROWS_AS((void)load_episodes(path), Error);
  }

  SUBCASE("missing and empty files") {
    CHECK_THROWS_AS((void)load_episodes("/tmp/corl_ds_missing.jsonl"), Error);
    spit(path, "");
    CHECK_THROWS_AS((void)load_episodes(path), Error);
  }

  std::remove(path.c_str());
}

TEST_CASE("fill_window pads the left edge and indexes timesteps from one") {
  EpisodeSet set = tiny_set(2, 5, 11);
  WindowBatch wb = make_window_batch(2, 4, set.state_dim, set.action_dim);

  fill_window(set, 1, 0, 4, wb, 0);  // only step 0 is real
  CHECK(wb.timesteps[0] == 0);
  CHECK(wb.timesteps[1] == 0);
  CHECK(wb.timesteps[2] == 0);
  CHECK(wb.timesteps[3] == 1);
  CHECK(wb.loss_mask[0] == 0);
  CHECK(wb.loss_mask[3] == 1);
  CHECK(wb.states[0] == 0.0);
  CHECK(wb.rtg[0] == 0.0);
  const Episode& ep = set.episodes[1];
  CHECK(wb.states.at3(0, 3, 0) == ep.states[0]);
  CHECK(wb.states.at3(0, 3, 1) == ep.states[1]);
  CHECK(wb.actions.at3(0, 3, 0) == ep.actions[0]);
  CHECK(wb.rtg.at2(0, 3) == ep.rtg[0]);

  fill_window(set, 0, 4, 4, wb, 1);  // steps 1..4, no padding
  const Episode& e0 = set.episodes[0];
  for (int k = 0; k < 4; ++k) {
    const int step = k + 1;
    CHECK(wb.timesteps[size_t(4 + k)] == step + 1);
    CHECK(wb.loss_mask[size_t(4 + k)] == 1);
    CHECK(wb.states.at3(1, k, 0) == e0.states[size_t(step) * 2]);
    CHECK(wb.actions.at3(1, k, 0) == e0.actions[size_t(step)]);
    CHECK(wb.rtg.at2(1, k) == e0.rtg[size_t(step)]);
  }

  CHECK_THROWS_AS(fill_window(set, 0, 5, 4, wb, 0), Error);
  CHECK_THROWS_AS(fill_window(set, 0, -1, 4, wb, 0), Error);
  EpisodeSet unfin = tiny_set(1, 3, 5);
  unfin.episodes[0].rtg.clear();
  CHECK_THROWS_AS(fill_window(unfin, 0, 1, 2, wb, 0), Error);
}

TEST_CASE("sample_windows draws (episode, end) pairs uniformly") {
  EpisodeSet set = tiny_set(3, 5, 2024);
  Rng rng(555);
  const int draws = 15000;
  std::vector<int> counts(15, 0);
  for (int i = 0; i < draws; ++i) {
    WindowBatch wb = sample_windows(set, 1, 3, rng);
    // Identify the drawn (episode, end) from the last slot's content.
    REQUIRE(wb.loss_mask[2] == 1);
    const int step = wb.timesteps[2] - 1;
    int eid = -1;
    for (int e = 0; e < 3; ++e)
      if (set.episodes[size_t(e)].states[size_t(step) * 2] ==
          wb.states.at3(0, 2, 0))
        eid = e;
    REQUIRE(eid >= 0);
    counts[size_t(eid * 5 + step)] += 1;
  }
  const double expect = draws / 15.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  MESSAGE("chi2(14 dof) = ", chi2);
  CHECK(chi2 < 36.13);  // p = 0.001 tail for 14 dof
  CHECK(*std::min_element(counts.begin(), counts.end()) > 0);

  WindowBatch big = sample_windows(set, 6, 4, rng);
  CHECK(big.B == 6);
  CHECK(big.M == 4);
  CHECK(big.states.dim(0) == 6);
  CHECK(big.states.dim(1) == 4);
  CHECK(big.states.dim(2) == 2);

  EpisodeSet empty;
  empty.state_dim = 2;
  empty.action_dim = 1;
  CHECK_THROWS_AS((void)sample_windows(empty, 1, 3, rng), Error);
}

TEST_CASE("return percentile interpolates order statistics") {
  EpisodeSet set;
  set.state_dim = 1;
  set.action_dim = 1;
  auto add = [&set](double ret) {
    Episode ep;
    ep.T = 1;
    ep.states = {0.0};
    ep.actions = {0.0};
    ep.rewards = {ret};
    set.episodes.push_back(std::move(ep));
  };
  // Insert out of order; percentile must sort.
  add(3);
  add(1);
  add(4);
  add(2);
  set.finalize();
  CHECK(return_percentile(set, 0) == 1.0);
  CHECK(return_percentile(set, 100) == 4.0);
  CHECK(return_percentile(set, 50) == doctest::Approx(2.5));
  CHECK(return_percentile(set, 95) == doctest::Approx(3.85));
  CHECK_THROWS_AS((void)return_percentile(set, -1), Error);
  CHECK_THROWS_AS((void)return_percentile(set, 101), Error);

  // Monotone in pct and bounded by the extremes on random data.
  EpisodeSet rnd = tiny_set(17, 3, 31);
  double prev = return_percentile(rnd, 0);
  for (int p = 5; p <= 100; p += 5) {
    const double v = return_percentile(rnd, p);
    CHECK(v >= prev - 1e-15);
    prev = v;
  }
  EpisodeSet one = tiny_set(1, 3, 8);
  CHECK(return_percentile(one, 37.5) == one.episodes[0].ret);

  EpisodeSet empty;
  CHECK_THROWS_AS((void)return_percentile(empty, 50), Error);
}
