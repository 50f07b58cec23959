#pragma once

#include <string>
#include <vector>

#include "corl/datastore.hpp"
#include "corl/rng.hpp"

namespace corl {

// A point-mass manipulation task in the [-arena, arena]^2 plane. The agent
// drags the object whenever it is within contact_radius; friction attenuates
// the transferred displacement. Reach-style tasks use a contact radius larger
// than the arena with the object starting on the agent.
struct TaskSpec {
  int id = 0;
  std::string name;
  std::string description;
  double gain = 0.1;
  double contact_radius = 0.3;
  double friction = 0.0;
  bool flip_x = false;
  bool flip_y = false;
  double goal_x = 0.0, goal_y = 0.0;
  double agent_x = 0.0, agent_y = 0.0;
  double object_x = 0.0, object_y = 0.0;
  double start_jitter = 0.05;
  double shaping = 1.0;
  int horizon = 50;
  double success_radius = 0.1;
  double arena = 1.0;
};

struct SuiteSpec {
  std::string name;
  int state_dim = 6;
  int action_dim = 2;
  std::vector<TaskSpec> tasks;
  std::vector<std::vector<int>> orders;  // 1-based task ids
};

struct EnvState {
  double ax = 0, ay = 0;  // agent
  double ox = 0, oy = 0;  // object
  int t = 0;
  bool success = false;
};

EnvState env_reset(const TaskSpec& task, Rng& rng);
// Clips the action into [-1,1]^2 in place, advances one step, returns reward.
double env_step(const TaskSpec& task, EnvState& st, double action[2]);
bool env_done(const TaskSpec& task, const EnvState& st);
void observe(const EnvState& st, const TaskSpec& task, double out[6]);

// Two-phase scripted controller: close on the object, then track it while
// nudging it toward the goal. Knows the task dynamics (gain, flips).
void expert_action(const TaskSpec& task, const EnvState& st, double out[2]);
// Degraded expert: with probability (1 - competence) the step is a uniform
// random lapse; otherwise expert plus Gaussian noise 0.6 * (1 - competence),
// clipped into the action box.
void behavior_action(const TaskSpec& task, const EnvState& st, double competence,
                     Rng& rng, double out[2]);

// Competence mixture {0.3, 0.6, 1.0} weighted {0.25, 0.25, 0.5}, assigned by
// episode index so proportions are exact.
double competence_for_episode(int episode_index);

EpisodeSet generate_dataset(const TaskSpec& task, int episodes, uint64_t seed);

// Success fraction of the scripted controller at the given competence.
double scripted_success_rate(const TaskSpec& task, double competence,
                             int episodes, uint64_t seed);

// ----------------------------- suite -----------------------------

// Empty path loads the built-in manifest. A file whose "name" matches the
// built-in suite must hash to the pinned value; other suites load freely.
SuiteSpec load_suite(const std::string& path);
const std::string& builtin_suite_text();
uint64_t builtin_suite_hash();

const TaskSpec& suite_task(const SuiteSpec& suite, int id);
// Task id sequence for (order, repeat); repeat=2 appends the order again.
std::vector<int> task_sequence(const SuiteSpec& suite, int order, int repeat);

}  // namespace corl
