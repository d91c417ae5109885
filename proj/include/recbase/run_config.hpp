#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "recbase/benchmark.hpp"
#include "recbase/pipeline.hpp"

namespace recbase::cli {

/// Every accepted key with its default value. Module seeds are not listed:
/// they all follow the top-level `seed`.
nlohmann::json default_config();

/// Overlays `overlay` onto `base` in place. Keys absent from `base` and values
/// whose type differs from the default (negative numbers for counts included)
/// raise ErrorKind::kConfig naming the dotted key.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay);

/// Applies one `key.path=value` assignment. The value is parsed as JSON and
/// falls back to a plain string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Defaults, then the config file (if any), then the overrides in order.
nlohmann::json resolve_config(const std::optional<std::string>& file, std::span<const std::string> overrides);

/// Typed view of a resolved tree.
struct RunConfig {
  uint64_t seed = 42;
  data::BenchmarkConfig benchmark;
  eval::PipelineConfig pipeline;  // tokenizer, model, finetune and eval settings
  eval::AblationFlags flags;      // components enabled for single-arm commands
  std::vector<eval::AblationFlags> arms;
  std::vector<size_t> latency_batch_sizes;
  size_t latency_repeats = 3;
};

RunConfig typed_config(const nlohmann::json& tree);

}  // namespace recbase::cli
