#pragma once

#include <cstddef>
#include <limits>

namespace recbase::tok {

struct CurriculumConfig {
  bool enabled = true;
  size_t patience_epochs = 3;
  double rel_improvement_eps = 1e-3;
  size_t max_epochs_per_level = 20;
};

/// Staged activation of quantization levels.
struct CurriculumState {
  size_t used_level = 0;  // deepest active level, 0-based
  size_t epochs_in_level = 0;
  size_t stalled_epochs = 0;
  double best_loss_in_level = std::numeric_limits<double>::infinity();
};

enum class UnlockReason { kNone, kConverged, kEpochCap };

struct CurriculumUpdate {
  CurriculumState state;
  UnlockReason reason = UnlockReason::kNone;
};

/// Initial state: level 0 only, or every level when the curriculum is off.
CurriculumState initial_curriculum(const CurriculumConfig& config, size_t levels);

/// Records one epoch's loss. An epoch whose relative improvement over the
/// best loss seen in the level is below `rel_improvement_eps` counts as
/// stalled; `patience_epochs` consecutive stalls, or `max_epochs_per_level`
/// epochs in the level, unlock the next level and reset the counters.
CurriculumUpdate curriculum_step(const CurriculumState& state, double epoch_loss,
                                 const CurriculumConfig& config, size_t levels);

}  // namespace recbase::tok
