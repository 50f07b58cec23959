#pragma once

#include <string>
#include <vector>

#include "corl/backbone.hpp"
#include "corl/param_store.hpp"
#include "corl/rng.hpp"

namespace corl {

// Additive task expansion: each task gets private low-rank adapter pairs on
// every MLP map in the trunk while the shared weights stay frozen. B starts
// at zero, so a freshly grown sub-network computes exactly the base trunk
// function and training only ever moves the private parameters.

// The trunk sites that receive adapters (the MLP maps of every layer).
std::vector<std::string> grow_adapter_sites(const BackboneConfig& cfg);

// Creates the adapter parameters for one task tag (e.g. "t3"): A random with
// fan-in h, B zero. Throws if the tag already has adapters.
void grow_add_adapters(ParamStore& store, const BackboneConfig& cfg,
                       const std::string& tag, int rank, Rng& rng);

// Names of one task's adapter parameters, in creation order.
std::vector<std::string> grow_param_names(const BackboneConfig& cfg,
                                          const std::string& tag);

// Parameters added per task at the given rank.
int64_t grow_param_count(const BackboneConfig& cfg, int rank);

// Binding that routes the trunk's MLP sites through the task's adapters.
BackboneBinding grow_binding(const BackboneConfig& cfg, const std::string& tag);

}  // namespace corl
