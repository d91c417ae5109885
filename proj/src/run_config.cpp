#include "recbase/run_config.hpp"

#include <fstream>
#include <sstream>

#include "recbase/error.hpp"

namespace recbase::cli {

using nlohmann::json;

json default_config() {
  const data::BenchmarkConfig b;
  const eval::PipelineConfig p;
  json tokenizer = tok::to_json(p.tokenizer);
  tokenizer.erase("input_dim");
  tokenizer.erase("seed");
  json model = ar::to_json(p.model);
  model.erase("seed");

  json j;
  j["seed"] = p.seed;
  j["data"] = {{"min_history", p.min_history}, {"max_history", p.max_history}};
  j["benchmark"] = {{"n_domains", b.n_domains},
                    {"items_per_domain", b.items_per_domain},
                    {"dim", b.dim},
                    {"spread", b.spread},
                    {"mean_scale", b.mean_scale},
                    {"users_per_domain", b.users_per_domain},
                    {"min_length", b.min_length},
                    {"max_length", b.max_length},
                    {"markov_temperature", b.markov_temperature},
                    {"seed", b.seed}};
  j["tokenizer"] = tokenizer;
  j["model"] = model;
  j["finetune"] = {{"epochs", p.finetune.epochs}, {"learning_rate", p.finetune.learning_rate}};
  j["eval"] = {{"train_domains", json::array({"A", "B", "D", "E"})},
               {"eval_domain", "C"},
               {"negatives", p.negatives},
               {"finetune_fraction", p.finetune_fraction},
               {"strict", p.strict},
               {"score_untrained", true},
               {"threads", p.threads},
               {"latency_batch_sizes", json::array({1, 8, 32})},
               {"latency_repeats", 3}};
  j["ablation"] = {{"format", true},
                   {"init", true},
                   {"cur", true},
                   {"arms", json::array({"baseline", "wo-format", "wo-init", "wo-cur"})}};
  return j;
}

namespace {

std::string type_name(const json& v) {
  if (v.is_number_unsigned()) return "non-negative integer";
  if (v.is_number_integer()) return "integer";
  if (v.is_number_float()) return "number";
  return v.type_name();
}

bool compatible(const json& base, const json& value) {
  if (base.is_null()) return true;
  if (base.is_number_unsigned()) return value.is_number_unsigned();
  if (base.is_number_integer()) return value.is_number_integer();
  if (base.is_number_float()) return value.is_number();
  return base.type() == value.type();
}

void merge_at(json& base, const json& overlay, const std::string& path) {
  if (base.is_object()) {
    if (!overlay.is_object()) {
      throw Error(ErrorKind::kConfig, "config: '" + path + "' must be an object");
    }
    for (const auto& [key, value] : overlay.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      if (!base.contains(key)) throw Error(ErrorKind::kConfig, "config: unknown key '" + sub + "'");
      merge_at(base[key], value, sub);
    }
    return;
  }
  if (!compatible(base, overlay)) {
    throw Error(ErrorKind::kConfig, "config: '" + path + "' expects " + type_name(base) + ", got " +
                                        type_name(overlay) + " (" + overlay.dump() + ")");
  }
  if (base.is_array() && !base.empty()) {
    for (const auto& e : overlay) {
      if (!compatible(base.front(), e)) {
        throw Error(ErrorKind::kConfig, "config: elements of '" + path + "' must be " + type_name(base.front()));
      }
    }
  }
  if (base.is_number_float()) {
    base = overlay.get<double>();
  } else {
    base = overlay;
  }
}

}  // namespace

void merge_config(json& base, const json& overlay) { merge_at(base, overlay, ""); }

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kConfig, "config: override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json overlay = value;
  size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const size_t begin = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(begin, end - begin);
    if (part.empty()) throw Error(ErrorKind::kConfig, "config: bad key '" + key + "'");
    overlay = json{{part, overlay}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  merge_config(config, overlay);
}

json resolve_config(const std::optional<std::string>& file, std::span<const std::string> overrides) {
  json tree = default_config();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorKind::kConfig, "config: cannot open " + *file);
    std::stringstream ss;
    ss << in.rdbuf();
    json loaded = json::parse(ss.str(), nullptr, false);
    if (loaded.is_discarded()) throw Error(ErrorKind::kConfig, "config: " + *file + " is not valid JSON");
    merge_config(tree, loaded);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  typed_config(tree);  // validates ranges
  return tree;
}

RunConfig typed_config(const json& tree) {
  RunConfig rc;
  try {
    rc.seed = tree.at("seed").get<uint64_t>();

    const auto& b = tree.at("benchmark");
    rc.benchmark.n_domains = b.at("n_domains").get<size_t>();
    rc.benchmark.items_per_domain = b.at("items_per_domain").get<size_t>();
    rc.benchmark.dim = b.at("dim").get<size_t>();
    rc.benchmark.spread = b.at("spread").get<double>();
    rc.benchmark.mean_scale = b.at("mean_scale").get<double>();
    rc.benchmark.users_per_domain = b.at("users_per_domain").get<size_t>();
    rc.benchmark.min_length = b.at("min_length").get<size_t>();
    rc.benchmark.max_length = b.at("max_length").get<size_t>();
    rc.benchmark.markov_temperature = b.at("markov_temperature").get<double>();
    rc.benchmark.seed = b.at("seed").get<uint64_t>();

    auto& p = rc.pipeline;
    p.seed = rc.seed;
    p.tokenizer = tok::quantizer_config_from_json(tree.at("tokenizer"));
    p.tokenizer.seed = rc.seed;
    p.model = ar::ar_config_from_json(tree.at("model"));
    p.model.seed = rc.seed;
    p.finetune.epochs = tree.at("finetune").at("epochs").get<size_t>();
    p.finetune.learning_rate = tree.at("finetune").at("learning_rate").get<double>();
    p.min_history = tree.at("data").at("min_history").get<size_t>();
    p.max_history = tree.at("data").at("max_history").get<size_t>();

    const auto& e = tree.at("eval");
    p.train_domains = e.at("train_domains").get<std::vector<std::string>>();
    p.eval_domain = e.at("eval_domain").get<std::string>();
    p.negatives = e.at("negatives").get<size_t>();
    p.finetune_fraction = e.at("finetune_fraction").get<double>();
    p.strict = e.at("strict").get<bool>();
    p.score_untrained = e.at("score_untrained").get<bool>();
    p.threads = e.at("threads").get<size_t>();
    rc.latency_batch_sizes = e.at("latency_batch_sizes").get<std::vector<size_t>>();
    rc.latency_repeats = e.at("latency_repeats").get<size_t>();

    const auto& a = tree.at("ablation");
    rc.flags = {a.at("format").get<bool>(), a.at("init").get<bool>(), a.at("cur").get<bool>()};
    for (const auto& name : a.at("arms")) rc.arms.push_back(eval::parse_arm(name.get<std::string>()));
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kConfig, std::string("config: ") + ex.what());
  }

  if (rc.pipeline.train_domains.empty()) throw Error(ErrorKind::kConfig, "config: eval.train_domains is empty");
  if (rc.pipeline.finetune_fraction < 0.0 || rc.pipeline.finetune_fraction >= 1.0) {
    throw Error(ErrorKind::kConfig, "config: eval.finetune_fraction must lie in [0, 1)");
  }
  if (rc.pipeline.min_history < 2 || rc.pipeline.min_history > rc.pipeline.max_history) {
    throw Error(ErrorKind::kConfig, "config: need 2 <= data.min_history <= data.max_history");
  }
  for (size_t bs : rc.latency_batch_sizes) {
    if (bs == 0) throw Error(ErrorKind::kConfig, "config: latency batch sizes must be positive");
  }
  auto tok_check = rc.pipeline.tokenizer;
  tok_check.input_dim = 1;
  if (tok_check.identity_decoder) tok_check.input_dim = tok_check.latent_dim;
  tok_check.validate();
  const ar::TokenVocab vocab{tok_check.levels, tok_check.codebook_size, true};
  rc.pipeline.model.validate(vocab.period());
  return rc;
}

}  // namespace recbase::cli
