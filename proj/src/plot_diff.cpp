#include "stagecraft/plot_diff.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "stagecraft/error.hpp"

namespace stagecraft {

using nlohmann::json;

namespace {

bool has_duplicate_ids(const PlotChain& chain) {
  std::set<std::string_view> seen;
  for (const auto& p : chain.plots) {
    if (!seen.insert(p.id).second) return true;
  }
  return false;
}

// Longest run of shared ids that appear in the same relative order in both
// chains. `old_pos` holds, for each shared id in new-chain order, its index in
// the old chain; the result flags which of those entries are kept in place.
std::vector<bool> longest_ordered_subset(const std::vector<std::size_t>& old_pos) {
  const std::size_t n = old_pos.size();
  std::vector<std::size_t> len(n, 1);
  std::vector<std::ptrdiff_t> prev(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (old_pos[j] < old_pos[i] && len[j] + 1 > len[i]) {
        len[i] = len[j] + 1;
        prev[i] = static_cast<std::ptrdiff_t>(j);
      }
    }
  }
  std::vector<bool> keep(n, false);
  if (n == 0) return keep;
  auto best = static_cast<std::ptrdiff_t>(std::max_element(len.begin(), len.end()) - len.begin());
  for (auto i = best; i >= 0; i = prev[static_cast<std::size_t>(i)]) keep[static_cast<std::size_t>(i)] = true;
  return keep;
}

bool same_content(const Plot& a, const Plot& b) {
  return a.description == b.description && a.owner == b.owner && a.origin == b.origin;
}

}  // namespace

PlotChainDiff diff_chains(const PlotChain& old_chain, const PlotChain& new_chain) {
  if (has_duplicate_ids(old_chain)) throw AmbiguousDiff("old chain holds duplicate plot ids");
  if (has_duplicate_ids(new_chain)) throw AmbiguousDiff("new chain holds duplicate plot ids");

  std::map<std::string_view, std::size_t> old_index;
  for (std::size_t i = 0; i < old_chain.plots.size(); ++i) old_index.emplace(old_chain.plots[i].id, i);

  std::vector<std::size_t> shared_new;  // indices into new chain
  std::vector<std::size_t> shared_old;
  for (std::size_t i = 0; i < new_chain.plots.size(); ++i) {
    if (auto it = old_index.find(new_chain.plots[i].id); it != old_index.end()) {
      shared_new.push_back(i);
      shared_old.push_back(it->second);
    }
  }
  const auto keep = longest_ordered_subset(shared_old);

  std::set<std::size_t> kept_new;
  std::set<std::size_t> kept_old;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    if (keep[k]) {
      kept_new.insert(shared_new[k]);
      kept_old.insert(shared_old[k]);
    }
  }

  PlotChainDiff diff;
  for (std::size_t i = 0; i < old_chain.plots.size(); ++i) {
    if (!kept_old.contains(i)) diff.removed.push_back(old_chain.plots[i].id);
  }
  for (std::size_t i = 0; i < new_chain.plots.size(); ++i) {
    const Plot& np = new_chain.plots[i];
    if (!kept_new.contains(i)) {
      diff.inserted.push_back({i, np});
      continue;
    }
    const Plot& op = old_chain.plots[old_index.at(np.id)];
    if (!same_content(op, np)) {
      diff.modified.push_back({np.id, op.description, np.description, op.owner, np.owner, op.origin, np.origin,
                               op.completed});
    }
    if (op.completed != np.completed) diff.completion_changes.push_back({np.id, op.completed, np.completed});
  }
  return diff;
}

PlotChain apply_diff(const PlotChain& old_chain, const PlotChainDiff& diff) {
  const std::set<std::string_view> removed(diff.removed.begin(), diff.removed.end());
  PlotChain out;
  for (const auto& p : old_chain.plots) {
    if (!removed.contains(p.id)) out.plots.push_back(p);
  }
  auto locate = [&](const std::string& id) -> Plot& {
    auto it = std::find_if(out.plots.begin(), out.plots.end(), [&](const Plot& p) { return p.id == id; });
    if (it == out.plots.end()) throw UnknownPlot(id);
    return *it;
  };
  for (const auto& m : diff.modified) {
    Plot& p = locate(m.id);
    p.description = m.new_description;
    p.owner = m.new_owner;
    p.origin = m.new_origin;
  }
  for (const auto& c : diff.completion_changes) locate(c.id).completed = c.new_flag;

  auto inserted = diff.inserted;
  std::sort(inserted.begin(), inserted.end(),
            [](const InsertedPlot& a, const InsertedPlot& b) { return a.position < b.position; });
  for (const auto& ins : inserted) {
    const auto pos = std::min(ins.position, out.plots.size());
    out.plots.insert(out.plots.begin() + static_cast<std::ptrdiff_t>(pos), ins.plot);
  }
  return out;
}

json to_json(const PlotChainDiff& diff) {
  json modified = json::array();
  for (const auto& m : diff.modified) {
    json e = {{"id", m.id}, {"old", m.old_description}, {"new", m.new_description}};
    if (m.old_owner != m.new_owner) {
      e["old_owner"] = m.old_owner ? json(*m.old_owner) : json(nullptr);
      e["new_owner"] = m.new_owner ? json(*m.new_owner) : json(nullptr);
    }
    modified.push_back(std::move(e));
  }
  json inserted = json::array();
  for (const auto& i : diff.inserted) inserted.push_back({{"position", i.position}, {"plot", to_json(i.plot)}});
  json completions = json::array();
  for (const auto& c : diff.completion_changes) {
    completions.push_back({{"id", c.id}, {"old", c.old_flag}, {"new", c.new_flag}});
  }
  return {{"modified", modified}, {"inserted", inserted}, {"removed", diff.removed}, {"completion_changes", completions}};
}

std::string_view to_string(BoundViolation v) {
  switch (v) {
    case BoundViolation::DuplicateIds: return "duplicate_ids";
    case BoundViolation::CompletedPlotModified: return "completed_plot_modified";
    case BoundViolation::CompletedPlotRemoved: return "completed_plot_removed";
    case BoundViolation::PlotRemoved: return "plot_removed";
    case BoundViolation::CompletionReverted: return "completion_reverted";
    case BoundViolation::BudgetExceeded: return "budget_exceeded";
  }
  return "unknown";
}

ReflectionVerdict enforce_reflection_bound(const PlotChain& old_chain, const PlotChain& new_chain, int budget) {
  ReflectionVerdict verdict;
  verdict.chain = old_chain;
  try {
    verdict.diff = diff_chains(old_chain, new_chain);
  } catch (const AmbiguousDiff&) {
    verdict.violations.push_back(BoundViolation::DuplicateIds);
    return verdict;
  }

  std::set<BoundViolation> found;
  for (const auto& id : verdict.diff.removed) {
    found.insert(BoundViolation::PlotRemoved);
    if (old_chain.find(id)->completed) found.insert(BoundViolation::CompletedPlotRemoved);
  }
  for (const auto& m : verdict.diff.modified) {
    if (m.was_completed) {
      found.insert(BoundViolation::CompletedPlotModified);
    } else {
      ++verdict.changes_used;
    }
  }
  verdict.changes_used += static_cast<int>(verdict.diff.inserted.size());
  for (const auto& c : verdict.diff.completion_changes) {
    if (c.old_flag && !c.new_flag) found.insert(BoundViolation::CompletionReverted);
  }
  if (verdict.changes_used > budget) found.insert(BoundViolation::BudgetExceeded);

  verdict.violations.assign(found.begin(), found.end());
  verdict.accepted = verdict.violations.empty();
  if (verdict.accepted) verdict.chain = new_chain;
  return verdict;
}

}  // namespace stagecraft
