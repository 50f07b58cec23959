#include "corl/prune.hpp"

#include <algorithm>
#include <cmath>

#include "corl/common.hpp"

namespace corl {

nlohmann::json PruneBook::to_json() const {
  nlohmann::json j;
  j["prefix"] = prefix;
  j["keep_fraction"] = keep_fraction;
  j["tasks_claimed"] = tasks_claimed;
  j["owner"] = nlohmann::json::object();
  for (const auto& [name, own] : owner) j["owner"][name] = own;
  j["exhausted"] = nlohmann::json::array();
  for (const auto& [name, task] : exhausted)
    j["exhausted"].push_back({name, task});
  return j;
}

PruneBook PruneBook::from_json(const nlohmann::json& j) {
  PruneBook book;
  book.prefix = j.at("prefix").get<std::string>();
  book.keep_fraction = j.at("keep_fraction").get<double>();
  book.tasks_claimed = j.at("tasks_claimed").get<int>();
  for (const auto& [name, own] : j.at("owner").items())
    book.owner[name] = own.get<std::vector<int>>();
  for (const auto& e : j.at("exhausted"))
    book.exhausted.emplace_back(e.at(0).get<std::string>(), e.at(1).get<int>());
  return book;
}

PruneBook prune_book_init(const BackboneConfig& cfg, const std::string& prefix,
                          double keep_fraction) {
  CORL_CHECK(keep_fraction > 0.0 && keep_fraction <= 1.0,
             "keep fraction must be in (0, 1]");
  PruneBook book;
  book.prefix = prefix;
  book.keep_fraction = keep_fraction;
  for (const std::string& name : backbone_trunk_weight_names(cfg, prefix))
    book.owner[name] = std::vector<int>(size_t(cfg.h) * cfg.h, 0);
  return book;
}

PruneClaim prune_claim(PruneBook& book, ParamStore& store, int k) {
  CORL_CHECK(k == book.tasks_claimed + 1, "claims must be sequential");
  PruneClaim claim;
  for (auto& [name, own] : book.owner) {
    Tensor& value = store.get(name).value;
    CORL_CHECK(size_t(value.size()) == own.size(),
               "ownership map does not match tensor");
    std::vector<int64_t> free_idx;
    for (size_t i = 0; i < own.size(); ++i)
      if (own[i] == 0) free_idx.push_back(int64_t(i));
    if (free_idx.empty()) {
      claim.kept[name] = 0;
      claim.exhausted_any = true;
      book.exhausted.emplace_back(name, k);
      continue;
    }
    const int64_t keep = std::max<int64_t>(
        1, llround(book.keep_fraction * double(free_idx.size())));
    std::sort(free_idx.begin(), free_idx.end(), [&](int64_t a, int64_t b) {
      const double ma = std::fabs(value[a]), mb = std::fabs(value[b]);
      if (ma != mb) return ma > mb;
      return a < b;
    });
    for (int64_t r = 0; r < int64_t(free_idx.size()); ++r) {
      if (r < keep)
        own[size_t(free_idx[size_t(r)])] = k;
      else
        value[free_idx[size_t(r)]] = 0.0;  // dropped weights leave every net
    }
    claim.kept[name] = keep;
  }
  book.tasks_claimed = k;
  return claim;
}

int64_t prune_free_count(const PruneBook& book, const std::string& name) {
  const auto it = book.owner.find(name);
  CORL_CHECK(it != book.owner.end(), "tensor not registered for pruning");
  int64_t n = 0;
  for (int o : it->second) n += (o == 0);
  return n;
}

std::vector<uint8_t> prune_visible_mask(const PruneBook& book,
                                        const std::string& name, int k) {
  const auto it = book.owner.find(name);
  CORL_CHECK(it != book.owner.end(), "tensor not registered for pruning");
  std::vector<uint8_t> mask(it->second.size(), 0);
  for (size_t i = 0; i < mask.size(); ++i)
    mask[i] = (it->second[i] >= 1 && it->second[i] <= k) ? 1 : 0;
  return mask;
}

BackboneBinding prune_binding(const PruneBook& book, int k, MaskSet& storage) {
  BackboneBinding bind;
  bind.prefix = book.prefix;
  for (const auto& [name, own] : book.owner) {
    storage.masks[name] = prune_visible_mask(book, name, k);
    // Site key = tensor name without the trunk prefix.
    const std::string site = name.substr(book.prefix.size());
    bind.masks[site] = &storage.masks[name];
  }
  return bind;
}

void prune_freeze_for_training(const PruneBook& book, ParamStore& store) {
  for (const auto& [name, own] : book.owner) {
    Param& p = store.get(name);
    p.ensure_freeze_mask();
    for (size_t i = 0; i < own.size(); ++i) p.frozen[i] = (own[i] != 0);
  }
}

void prune_freeze_for_retrain(const PruneBook& book, ParamStore& store, int k) {
  for (const auto& [name, own] : book.owner) {
    Param& p = store.get(name);
    p.ensure_freeze_mask();
    for (size_t i = 0; i < own.size(); ++i) p.frozen[i] = (own[i] != k);
  }
}

}  // namespace corl
