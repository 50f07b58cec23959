#pragma once

#include <string>
#include <vector>

#include "corl/rng.hpp"
#include "corl/tensor.hpp"

namespace corl {

// One trajectory: state/action/reward per step, plus the derived
// return-to-go suffix sums. `ret` is stored in the file so a corrupted
// reward stream is detectable on load.
struct Episode {
  int T = 0;
  std::vector<double> states;   // T * state_dim
  std::vector<double> actions;  // T * action_dim
  std::vector<double> rewards;  // T
  std::vector<double> rtg;      // derived
  double ret = 0.0;
};

struct EpisodeSet {
  int task_id = 0;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<Episode> episodes;

  // Recomputes return-to-go suffix sums and episode returns.
  void finalize();
};

// Sampled training micro-batch: M-step windows with left padding at episode
// starts. Timestep 0 marks a padded slot; the loss mask excludes it.
struct WindowBatch {
  int B = 0, M = 0, state_dim = 0, action_dim = 0;
  Tensor rtg;      // [B, M]
  Tensor states;   // [B, M, S]
  Tensor actions;  // [B, M, A]
  std::vector<int> timesteps;      // B*M
  std::vector<uint8_t> loss_mask;  // B*M
};

void save_episodes(const EpisodeSet& set, const std::string& path);
EpisodeSet load_episodes(const std::string& path);

// Uniform over (episode, end index) pairs.
WindowBatch sample_windows(const EpisodeSet& set, int batch, int m, Rng& rng);

// Single window of episode `e` ending at step `end` (inclusive).
void fill_window(const EpisodeSet& set, int e, int end, int m, WindowBatch& out,
                 int slot);
WindowBatch make_window_batch(int b, int m, int state_dim, int action_dim);

// Linear interpolation between order statistics; pct in [0, 100].
double return_percentile(const EpisodeSet& set, double pct);

}  // namespace corl
