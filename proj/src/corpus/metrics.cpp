#include "kads/metrics.hpp"

#include <algorithm>

#include "kads/error.hpp"

namespace kads {

ActionScore score_actions(std::string_view predicted, std::string_view gold, Task task, ActionStyle style) {
  const auto g = parse_action_target(gold, style);
  if (!g) throw InputError("gold target is not a valid action rendering: '" + std::string(gold) + "'");
  ActionScore s;
  const auto p = parse_action_target(predicted, style);
  if (!p) {
    s.malformed = true;
    return s;
  }
  const std::size_t n = std::max(p->size(), g->size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(p->size(), g->size()); ++i) {
    if ((*p)[i].bslot != (*g)[i].bslot) continue;
    ++hits;
    ++s.value_positions;
    if ((*p)[i].values == (*g)[i].values) ++s.value_hits;
  }
  if (task == Task::AST)
    s.bslot = hits == n ? 1.0 : 0.0;
  else
    s.bslot = n == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(n);
  if (task == Task::AST && s.bslot == 0.0) s.value_hits = s.value_positions = 0;
  return s;
}

AccuracySummary summarize(std::span<const ActionScore> scores) {
  AccuracySummary out;
  out.n = scores.size();
  if (scores.empty()) return out;
  std::size_t hits = 0, positions = 0;
  for (const auto& s : scores) {
    out.bslot_acc += s.bslot;
    hits += s.value_hits;
    positions += s.value_positions;
  }
  out.bslot_acc /= static_cast<double>(scores.size());
  out.value_acc = positions == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(positions);
  return out;
}

}  // namespace kads
