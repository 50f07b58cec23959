#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "corl/adam.hpp"
#include "corl/backbone.hpp"
#include "corl/datastore.hpp"
#include "corl/param_store.hpp"
#include "corl/policy.hpp"

namespace corl {

// ------------------------- parameter regularizers -------------------------

enum class RegMethod { kL2, kEwc, kMas };

// Per-parameter importance weights and the anchor values they pull toward.
// Importances accumulate additively across task boundaries; the snapshot is
// refreshed at each boundary.
struct ImportanceTable {
  std::map<std::string, Tensor> importance;  // F_j >= 0
  std::map<std::string, Tensor> snapshot;    // anchor values
};

// Uniform importances (the plain-L2 case) plus a fresh snapshot.
ImportanceTable make_uniform_table(const ParamStore& store,
                                   const std::vector<std::string>& names);

// Refreshes the anchor to the current values, keeping importances.
void refresh_snapshot(ImportanceTable& table, const ParamStore& store);

// lambda * sum_j F_j (theta_j - anchor_j)^2 over the table's entries; when
// accumulate_grads, adds 2*lambda*F_j*(theta_j - anchor_j) to the grads.
// Throws if an importance entry lacks its anchor.
double reg_penalty(ParamStore& store, const ImportanceTable& table,
                   double lambda, bool accumulate_grads);

// Generic per-sample importance accumulation: sample_grad(i) must run one
// forward/backward that leaves d(criterion)/d(theta) in the store's grads.
// EWC squares the per-sample gradients (Fisher diagonal under the Gaussian
// likelihood the squared-error loss implies); MAS takes absolute values
// (sensitivity of the squared output norm). Results are averaged over n and
// added into the table. Throws when n == 0.
void accumulate_importance(RegMethod method, ParamStore& store,
                           const std::vector<std::string>& names,
                           const std::function<void(int)>& sample_grad, int n,
                           ImportanceTable& table);

// DT-pipeline importance update: n single-window samples from the dataset.
// EWC criterion: 1/2 sum of squared action errors over real positions.
// MAS criterion: sum of squared predicted-action norms over real positions.
void importance_update_dt(RegMethod method, ParamStore& store,
                          const BackboneConfig& cfg,
                          const BackboneBinding& bind,
                          const std::string& head_prefix,
                          const EpisodeSet& data, int n, Rng& rng,
                          const std::vector<std::string>& names,
                          ImportanceTable& table);

// ------------------------- knowledge distillation -------------------------

// Keeps the previous boundary's parameters and distills every prior head's
// outputs on current-task inputs: the penalty is the mean over prior heads
// of the masked MSE between the old network's actions and the current one's
// through the same (frozen) heads. Returns a feature_loss hook; gradients
// flow into the trunk features only.
struct LwfState {
  ParamStore old_params;                 // boundary snapshot (deep copy)
  std::vector<std::string> prior_heads;  // head prefixes frozen at boundary
  double lambda = 1.0;
};

std::function<double(const WindowBatch&, const Tensor&, Tensor&)>
make_lwf_hook(LwfState& lwf, ParamStore& store, const BackboneConfig& cfg,
              const BackboneBinding& bind);

// ------------------------- gradient projection -------------------------

// Flattened-gradient helpers over a fixed name list.
std::vector<double> gather_grads(const ParamStore& store,
                                 const std::vector<std::string>& names);
void scatter_grads(ParamStore& store, const std::vector<std::string>& names,
                   const std::vector<double>& g);

// If <g_new, g_old> > 0 (or g_old is zero) returns g_new unchanged;
// otherwise removes the conflicting component:
// g_new - (<g_new,g_old>/<g_old,g_old>) g_old.
std::vector<double> agem_project(const std::vector<double>& g_new,
                                 const std::vector<double>& g_old);

// Episodic memory for the projection reference: one dataset + head per past
// task. Reference gradients draw a window batch from one uniformly chosen
// past task and backpropagate its behavior-cloning loss through that task's
// frozen head, reporting only the shared-trunk gradient.
struct AgemMemory {
  std::vector<const EpisodeSet*> datasets;
  std::vector<std::string> heads;
};

std::vector<double> agem_reference_grads(ParamStore& store,
                                         const BackboneConfig& cfg,
                                         const BackboneBinding& bind,
                                         const AgemMemory& memory,
                                         const std::vector<std::string>& names,
                                         int batch, Rng& rng);

// post_backward hook: replaces the shared-trunk gradient with its projection
// against a fresh reference gradient; all other gradients pass through.
std::function<void()> make_agem_hook(ParamStore& store,
                                     const BackboneConfig& cfg,
                                     const BackboneBinding& bind,
                                     const AgemMemory& memory,
                                     std::vector<std::string> trunk_names,
                                     int ref_batch, Rng& rng);

// ------------------------- mixed-task batches -------------------------

// One batch source: a dataset and the head that predicts its actions.
struct MixedItem {
  const EpisodeSet* data = nullptr;
  std::string head_prefix;
};

// Slot assignments for rehearsal: the first round(mix*batch) slots use item
// 0 (the current task), the rest draw uniformly from items 1..n-1. With a
// single item every slot is 0 and no randomness is consumed.
std::vector<int> rehearsal_assignment(int batch, double mix, int n_items,
                                      Rng& rng);
// Every slot uniform over all items; with one item no randomness is consumed.
std::vector<int> uniform_assignment(int batch, int n_items, Rng& rng);

// One supervised step on a batch whose windows come from multiple tasks,
// each predicted through its own head. With a single item and the same RNG
// streams this reproduces dt_train_step bit for bit.
double mixed_train_step(ParamStore& store, const BackboneConfig& cfg,
                        const BackboneBinding& bind,
                        const std::vector<MixedItem>& items,
                        const std::vector<int>& slot_item, Adam& opt,
                        Rng& sample_rng, Rng& drop_rng);

}  // namespace corl
