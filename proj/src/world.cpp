#include "corl/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "corl/common.hpp"

#include "json.hpp"

namespace corl {

namespace {

double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

double dist2d(double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

EnvState env_reset(const TaskSpec& task, Rng& rng) {
  EnvState st;
  const double j = task.start_jitter;
  st.ax = clampd(task.agent_x + rng.uniform(-j, j), -task.arena, task.arena);
  st.ay = clampd(task.agent_y + rng.uniform(-j, j), -task.arena, task.arena);
  st.ox = clampd(task.object_x + rng.uniform(-j, j), -task.arena, task.arena);
  st.oy = clampd(task.object_y + rng.uniform(-j, j), -task.arena, task.arena);
  return st;
}

double env_step(const TaskSpec& task, EnvState& st, double action[2]) {
  CORL_CHECK(std::isfinite(action[0]) && std::isfinite(action[1]),
             "non-finite action");
  CORL_CHECK(st.t < task.horizon, "step past horizon");
  action[0] = clampd(action[0], -1.0, 1.0);
  action[1] = clampd(action[1], -1.0, 1.0);

  const double dx = task.gain * (task.flip_x ? -action[0] : action[0]);
  const double dy = task.gain * (task.flip_y ? -action[1] : action[1]);
  const bool contact =
      dist2d(st.ax, st.ay, st.ox, st.oy) <= task.contact_radius;

  const double nax = clampd(st.ax + dx, -task.arena, task.arena);
  const double nay = clampd(st.ay + dy, -task.arena, task.arena);
  if (contact) {
    const double k = 1.0 - task.friction;
    st.ox = clampd(st.ox + k * (nax - st.ax), -task.arena, task.arena);
    st.oy = clampd(st.oy + k * (nay - st.ay), -task.arena, task.arena);
  }
  st.ax = nax;
  st.ay = nay;
  st.t += 1;

  const double d = dist2d(st.ox, st.oy, task.goal_x, task.goal_y);
  if (d < task.success_radius) st.success = true;
  return -task.shaping * d;
}

bool env_done(const TaskSpec& task, const EnvState& st) {
  return st.t >= task.horizon;
}

void observe(const EnvState& st, const TaskSpec& task, double out[6]) {
  out[0] = st.ax;
  out[1] = st.ay;
  out[2] = st.ox;
  out[3] = st.oy;
  out[4] = task.goal_x;
  out[5] = task.goal_y;
}

void expert_action(const TaskSpec& task, const EnvState& st, double out[2]) {
  out[0] = out[1] = 0.0;
  const double tgx = task.goal_x - st.ox, tgy = task.goal_y - st.oy;
  const double d_og = std::sqrt(tgx * tgx + tgy * tgy);
  if (d_og < 0.5 * task.success_radius) return;  // hold at the goal

  double desired_x, desired_y;
  const bool contact =
      dist2d(st.ax, st.ay, st.ox, st.oy) <= task.contact_radius;
  if (!contact) {
    desired_x = st.ox - st.ax;
    desired_y = st.oy - st.ay;
  } else {
    // In contact the object mirrors (1 - friction) of the agent's motion, so
    // step straight along the goal direction; the final step lands the object
    // exactly on the goal. Friction makes the agent creep ahead of the
    // object; when contact breaks, the approach phase re-centers it.
    const double slip = 1.0 - task.friction;
    const double s = std::min(0.9 * slip * task.gain, d_og);  // object step
    desired_x = tgx / d_og * (s / slip);
    desired_y = tgy / d_og * (s / slip);
  }
  double rx = desired_x / task.gain;
  double ry = desired_y / task.gain;
  const double m = std::max(std::fabs(rx), std::fabs(ry));
  if (m > 1.0) {  // direction-preserving saturation
    rx /= m;
    ry /= m;
  }
  out[0] = task.flip_x ? -rx : rx;
  out[1] = task.flip_y ? -ry : ry;
}

void behavior_action(const TaskSpec& task, const EnvState& st, double competence,
                     Rng& rng, double out[2]) {
  CORL_CHECK(competence >= 0.0 && competence <= 1.0, "competence out of range");
  if (competence < 1.0 && rng.uniform() < 1.0 - competence) {
    // Lapse step: uniform random action. Gaussian jitter alone never fails
    // within the horizon, so lapses are what create the quality spread.
    out[0] = rng.uniform(-1.0, 1.0);
    out[1] = rng.uniform(-1.0, 1.0);
    return;
  }
  expert_action(task, st, out);
  const double sigma = 0.6 * (1.0 - competence);
  if (sigma > 0.0) {
    out[0] += sigma * rng.normal();
    out[1] += sigma * rng.normal();
  }
  out[0] = clampd(out[0], -1.0, 1.0);
  out[1] = clampd(out[1], -1.0, 1.0);
}

double competence_for_episode(int episode_index) {
  switch (episode_index % 4) {
    case 0: return 0.3;
    case 1: return 0.6;
    default: return 1.0;
  }
}

EpisodeSet generate_dataset(const TaskSpec& task, int episodes, uint64_t seed) {
  CORL_CHECK(episodes > 0, "dataset needs at least one episode");
  EpisodeSet set;
  set.task_id = task.id;
  set.state_dim = 6;
  set.action_dim = 2;
  set.episodes.reserve(size_t(episodes));
  for (int e = 0; e < episodes; ++e) {
    Rng rng(stream_seed(seed, "episode", {uint64_t(task.id), uint64_t(e)}));
    const double c = competence_for_episode(e);
    EnvState st = env_reset(task, rng);
    Episode ep;
    ep.T = task.horizon;
    ep.states.reserve(size_t(task.horizon) * 6);
    ep.actions.reserve(size_t(task.horizon) * 2);
    ep.rewards.reserve(size_t(task.horizon));
    while (!env_done(task, st)) {
      double obs[6];
      observe(st, task, obs);
      double a[2];
      behavior_action(task, st, c, rng, a);
      const double r = env_step(task, st, a);
      ep.states.insert(ep.states.end(), obs, obs + 6);
      ep.actions.insert(ep.actions.end(), a, a + 2);
      ep.rewards.push_back(r);
    }
    set.episodes.push_back(std::move(ep));
  }
  set.finalize();
  return set;
}

double scripted_success_rate(const TaskSpec& task, double competence,
                             int episodes, uint64_t seed) {
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    Rng rng(stream_seed(seed, "scripted", {uint64_t(task.id), uint64_t(e)}));
    EnvState st = env_reset(task, rng);
    while (!env_done(task, st)) {
      double a[2];
      behavior_action(task, st, competence, rng, a);
      env_step(task, st, a);
    }
    hits += st.success;
  }
  return double(hits) / double(episodes);
}

// ----------------------------- suite -----------------------------

namespace {

// Byte-identical copy of data/ocw_suite.json; a unit test enforces equality.
const char* kBuiltinSuite = R"json({
  "format_version": 1,
  "name": "synthetic-ocw-v1",
  "state_dim": 6,
  "action_dim": 2,
  "horizon": 50,
  "success_radius": 0.1,
  "arena": 1.0,
  "start_jitter": 0.05,
  "tasks": [
    {"id": 1, "name": "push-west", "description": "Push the puck to the west goal.",
     "gain": 0.12, "contact_radius": 0.3, "friction": 0.0, "flip_x": false, "flip_y": false,
     "goal": [-0.8, 0.0], "agent_start": [0.5, 0.4], "object_start": [0.0, 0.0]},
    {"id": 2, "name": "reach-northeast", "description": "Reach the northeast corner marker.",
     "gain": 0.1, "contact_radius": 10.0, "friction": 0.0, "flip_x": false, "flip_y": false,
     "goal": [0.7, 0.7], "agent_start": [-0.2, -0.2], "object_start": [-0.2, -0.2]},
    {"id": 3, "name": "rotate-clockwise", "description": "Rotate the valve handle clockwise.",
     "gain": 0.15, "contact_radius": 0.3, "friction": 0.2, "flip_x": true, "flip_y": false,
     "goal": [0.5, 0.0], "agent_start": [-0.4, 0.6], "object_start": [0.0, 0.5]},
    {"id": 4, "name": "push-east", "description": "Push the puck to the east goal.",
     "gain": 0.12, "contact_radius": 0.3, "friction": 0.0, "flip_x": false, "flip_y": false,
     "goal": [0.8, 0.0], "agent_start": [-0.5, 0.4], "object_start": [0.0, 0.0]},
    {"id": 5, "name": "pull-south", "description": "Pull the puck to the south goal.",
     "gain": 0.18, "contact_radius": 0.35, "friction": 0.5, "flip_x": false, "flip_y": true,
     "goal": [0.0, -0.7], "agent_start": [0.3, -0.5], "object_start": [0.0, 0.1]},
    {"id": 6, "name": "reach-southwest", "description": "Reach the southwest corner marker.",
     "gain": 0.1, "contact_radius": 10.0, "friction": 0.0, "flip_x": true, "flip_y": true,
     "goal": [-0.7, -0.7], "agent_start": [0.2, 0.2], "object_start": [0.2, 0.2]},
    {"id": 7, "name": "push-north", "description": "Push the puck to the north goal.",
     "gain": 0.12, "contact_radius": 0.3, "friction": 0.0, "flip_x": false, "flip_y": false,
     "goal": [0.0, 0.8], "agent_start": [0.4, -0.5], "object_start": [0.0, 0.0]},
    {"id": 8, "name": "rotate-counterclockwise", "description": "Rotate the valve handle counterclockwise.",
     "gain": 0.15, "contact_radius": 0.3, "friction": 0.2, "flip_x": true, "flip_y": false,
     "goal": [-0.5, 0.0], "agent_start": [0.4, 0.6], "object_start": [0.0, 0.5]},
    {"id": 9, "name": "pull-west", "description": "Pull the puck to the west goal.",
     "gain": 0.18, "contact_radius": 0.35, "friction": 0.5, "flip_x": false, "flip_y": true,
     "goal": [-0.7, 0.0], "agent_start": [-0.5, 0.3], "object_start": [0.1, 0.0]},
    {"id": 10, "name": "push-south", "description": "Push the puck to the south goal.",
     "gain": 0.12, "contact_radius": 0.3, "friction": 0.0, "flip_x": false, "flip_y": false,
     "goal": [0.0, -0.8], "agent_start": [-0.4, 0.5], "object_start": [0.0, 0.0]}
  ],
  "orders": [
    [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
    [7, 9, 10, 8, 6, 4, 1, 5, 2, 3],
    [6, 10, 4, 5, 7, 8, 3, 9, 2, 1],
    [2, 6, 7, 1, 10, 5, 8, 3, 9, 4]
  ]
}
)json";

SuiteSpec parse_suite(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  CORL_CHECK(j.at("format_version").get<int>() == 1,
             "unsupported suite format version");
  SuiteSpec suite;
  suite.name = j.at("name").get<std::string>();
  suite.state_dim = j.at("state_dim").get<int>();
  suite.action_dim = j.at("action_dim").get<int>();
  CORL_CHECK(suite.state_dim == 6 && suite.action_dim == 2,
             "suite dims must be state 6 / action 2");
  const int horizon = j.at("horizon").get<int>();
  const double success_radius = j.at("success_radius").get<double>();
  const double arena = j.at("arena").get<double>();
  const double jitter = j.at("start_jitter").get<double>();
  CORL_CHECK(horizon > 0 && success_radius > 0 && arena > 0, "bad suite bounds");

  for (const auto& jt : j.at("tasks")) {
    TaskSpec t;
    t.id = jt.at("id").get<int>();
    t.name = jt.at("name").get<std::string>();
    t.description = jt.at("description").get<std::string>();
    t.gain = jt.at("gain").get<double>();
    t.contact_radius = jt.at("contact_radius").get<double>();
    t.friction = jt.at("friction").get<double>();
    t.flip_x = jt.at("flip_x").get<bool>();
    t.flip_y = jt.at("flip_y").get<bool>();
    t.goal_x = jt.at("goal").at(0).get<double>();
    t.goal_y = jt.at("goal").at(1).get<double>();
    t.agent_x = jt.at("agent_start").at(0).get<double>();
    t.agent_y = jt.at("agent_start").at(1).get<double>();
    t.object_x = jt.at("object_start").at(0).get<double>();
    t.object_y = jt.at("object_start").at(1).get<double>();
    t.start_jitter = jitter;
    t.horizon = horizon;
    t.success_radius = success_radius;
    t.arena = arena;
    CORL_CHECK(t.gain > 0 && t.contact_radius > 0 && t.friction >= 0 &&
                   t.friction < 1,
               "bad dynamics for task " + t.name);
    CORL_CHECK(!t.description.empty(), "task without description: " + t.name);
    suite.tasks.push_back(std::move(t));
  }
  const int n = int(suite.tasks.size());
  CORL_CHECK(n > 0, "suite has no tasks");
  for (int i = 0; i < n; ++i)
    CORL_CHECK(suite.tasks[size_t(i)].id == i + 1,
               "task ids must be 1..N in order");

  for (const auto& jo : j.at("orders")) {
    auto order = jo.get<std::vector<int>>();
    CORL_CHECK(int(order.size()) == n, "order length mismatch");
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i)
      CORL_CHECK(sorted[size_t(i)] == i + 1, "order is not a permutation");
    suite.orders.push_back(std::move(order));
  }
  CORL_CHECK(!suite.orders.empty(), "suite has no orders");
  return suite;
}

}  // namespace

const std::string& builtin_suite_text() {
  static const std::string text = kBuiltinSuite;
  return text;
}

uint64_t builtin_suite_hash() { return fnv1a_str(builtin_suite_text()); }

SuiteSpec load_suite(const std::string& path) {
  if (path.empty()) return parse_suite(builtin_suite_text());
  std::ifstream in(path, std::ios::binary);
  CORL_CHECK(in.good(), "cannot open suite file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  SuiteSpec suite = parse_suite(text);
  if (suite.name == "synthetic-ocw-v1") {
    CORL_CHECK(fnv1a_str(text) == builtin_suite_hash(),
               "suite file does not match the pinned manifest: " + path);
  }
  return suite;
}

const TaskSpec& suite_task(const SuiteSpec& suite, int id) {
  CORL_CHECK(id >= 1 && id <= int(suite.tasks.size()), "task id out of range");
  return suite.tasks[size_t(id - 1)];
}

std::vector<int> task_sequence(const SuiteSpec& suite, int order, int repeat) {
  CORL_CHECK(order >= 0 && order < int(suite.orders.size()),
             "order index out of range");
  CORL_CHECK(repeat == 1 || repeat == 2, "repeat must be 1 or 2");
  std::vector<int> seq = suite.orders[size_t(order)];
  if (repeat == 2) {
    auto once = seq;
    seq.insert(seq.end(), once.begin(), once.end());
  }
  return seq;
}

}  // namespace corl
