#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "kads/corpus.hpp"

namespace kads {

// Score of one predicted action string against its gold rendering.
// AST: b-slot credit is 1 only for an exact match of the whole b-slot
// sequence. WD: per-position exact match averaged over the longer of the two
// sequences. Values are compared only where predicted and gold b-slots agree.
// A malformed prediction earns no b-slot credit and no value positions.
struct ActionScore {
  double bslot = 0.0;
  std::size_t value_hits = 0;
  std::size_t value_positions = 0;
  bool malformed = false;
};

ActionScore score_actions(std::string_view predicted, std::string_view gold, Task task, ActionStyle style);

struct AccuracySummary {
  double bslot_acc = 0.0;
  // Value hits over b-slot-matched positions; 0 when there are none.
  double value_acc = 0.0;
  std::size_t n = 0;
};

AccuracySummary summarize(std::span<const ActionScore> scores);

}  // namespace kads
