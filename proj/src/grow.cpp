#include "corl/grow.hpp"

#include "corl/common.hpp"

namespace corl {

namespace {

std::string adapter_base(const std::string& tag, const std::string& site) {
  return "grow." + tag + "." + site;
}

}  // namespace

std::vector<std::string> grow_adapter_sites(const BackboneConfig& cfg) {
  std::vector<std::string> sites;
  for (const std::string& s : backbone_site_names(cfg))
    if (s.find(".mlp.") != std::string::npos) sites.push_back(s);
  return sites;
}

void grow_add_adapters(ParamStore& store, const BackboneConfig& cfg,
                       const std::string& tag, int rank, Rng& rng) {
  CORL_CHECK(rank > 0, "adapter rank must be positive");
  for (const std::string& site : grow_adapter_sites(cfg)) {
    const std::string base = adapter_base(tag, site);
    CORL_CHECK(!store.has(base + ".A"), "adapters already grown for this tag");
    store.add_uniform(base + ".A", {rank, cfg.h}, cfg.h, rng);
    store.add(base + ".B", {cfg.h, rank});  // zero: exact no-op at birth
  }
}

std::vector<std::string> grow_param_names(const BackboneConfig& cfg,
                                          const std::string& tag) {
  std::vector<std::string> names;
  for (const std::string& site : grow_adapter_sites(cfg)) {
    names.push_back(adapter_base(tag, site) + ".A");
    names.push_back(adapter_base(tag, site) + ".B");
  }
  return names;
}

int64_t grow_param_count(const BackboneConfig& cfg, int rank) {
  // Per site: A is [rank, h], B is [h, rank].
  return int64_t(grow_adapter_sites(cfg).size()) * 2 * rank * cfg.h;
}

BackboneBinding grow_binding(const BackboneConfig& cfg, const std::string& tag) {
  BackboneBinding bind;
  for (const std::string& site : grow_adapter_sites(cfg)) {
    const std::string base = adapter_base(tag, site);
    bind.adapters[site] = {base + ".A", base + ".B"};
  }
  return bind;
}

}  // namespace corl
