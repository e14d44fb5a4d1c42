#pragma once

#include <string>
#include <vector>

#include "stagecraft/script.hpp"

namespace stagecraft {

// Content change to a plot that keeps its id and relative position.
struct ModifiedPlot {
  std::string id;
  std::string old_description;
  std::string new_description;
  std::optional<std::string> old_owner;
  std::optional<std::string> new_owner;
  PlotOrigin old_origin = PlotOrigin::Scripted;
  PlotOrigin new_origin = PlotOrigin::Scripted;
  bool was_completed = false;  // flag in the old chain

  bool operator==(const ModifiedPlot&) const = default;
};

struct InsertedPlot {
  std::size_t position = 0;  // index in the new chain
  Plot plot;

  bool operator==(const InsertedPlot&) const = default;
};

struct CompletionChange {
  std::string id;
  bool old_flag = false;
  bool new_flag = false;

  bool operator==(const CompletionChange&) const = default;
};

// Edit script between two chains, keyed by plot id. Plots whose relative
// order changed are reported as a removal plus an insertion.
struct PlotChainDiff {
  std::vector<ModifiedPlot> modified;
  std::vector<InsertedPlot> inserted;
  std::vector<std::string> removed;
  std::vector<CompletionChange> completion_changes;

  bool operator==(const PlotChainDiff&) const = default;
  bool empty() const {
    return modified.empty() && inserted.empty() && removed.empty() && completion_changes.empty();
  }
};

/// Throws AmbiguousDiff when either chain holds duplicate ids.
PlotChainDiff diff_chains(const PlotChain& old_chain, const PlotChain& new_chain);

/// apply_diff(old, diff_chains(old, new)) == new.
PlotChain apply_diff(const PlotChain& old_chain, const PlotChainDiff& diff);

nlohmann::json to_json(const PlotChainDiff& diff);

enum class BoundViolation {
  DuplicateIds,
  CompletedPlotModified,
  CompletedPlotRemoved,
  PlotRemoved,
  CompletionReverted,
  BudgetExceeded,
};

std::string_view to_string(BoundViolation v);

struct ReflectionVerdict {
  bool accepted = false;
  PlotChain chain;  // the new chain on accept, the old chain on reject
  PlotChainDiff diff;
  std::vector<BoundViolation> violations;
  int changes_used = 0;  // modified incomplete plots + inserted plots
};

/// Accepts `new_chain` iff it removes nothing, leaves completed plots
/// untouched, never clears a completion flag, and spends at most `budget`
/// changes (one modified incomplete plot or one inserted plot each).
ReflectionVerdict enforce_reflection_bound(const PlotChain& old_chain, const PlotChain& new_chain, int budget = 1);

}  // namespace stagecraft
