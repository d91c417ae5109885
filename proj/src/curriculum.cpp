#include "recbase/curriculum.hpp"

#include <cmath>

namespace recbase::tok {

CurriculumState initial_curriculum(const CurriculumConfig& config, size_t levels) {
  CurriculumState s;
  s.used_level = (config.enabled || levels == 0) ? 0 : levels - 1;
  return s;
}

CurriculumUpdate curriculum_step(const CurriculumState& state, double epoch_loss,
                                 const CurriculumConfig& config, size_t levels) {
  CurriculumUpdate out{state, UnlockReason::kNone};
  auto& s = out.state;
  ++s.epochs_in_level;
  if (std::isfinite(s.best_loss_in_level)) {
    const double denom = std::abs(s.best_loss_in_level);
    const double improvement = denom > 0.0 ? (s.best_loss_in_level - epoch_loss) / denom
                                           : (epoch_loss < s.best_loss_in_level ? 1.0 : 0.0);
    s.stalled_epochs = improvement < config.rel_improvement_eps ? s.stalled_epochs + 1 : 0;
  }
  if (epoch_loss < s.best_loss_in_level) s.best_loss_in_level = epoch_loss;

  if (!config.enabled || s.used_level + 1 >= levels) return out;

  if (s.stalled_epochs >= config.patience_epochs) {
    out.reason = UnlockReason::kConverged;
  } else if (s.epochs_in_level >= config.max_epochs_per_level) {
    out.reason = UnlockReason::kEpochCap;
  }
  if (out.reason != UnlockReason::kNone) {
    ++s.used_level;
    s.epochs_in_level = 0;
    s.stalled_epochs = 0;
    s.best_loss_in_level = std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace recbase::tok
