#include "recbase/pipeline.hpp"

#include <algorithm>

#include "recbase/error.hpp"
#include "recbase/hash.hpp"

namespace recbase::eval {

using nlohmann::json;

std::string AblationFlags::name() const {
  const int off = !format + !init + !cur;
  if (off == 0) return "baseline";
  if (off > 1) {
    std::string s = "w/o";
    if (!format) s += " format";
    if (!init) s += " init";
    if (!cur) s += " cur";
    return s;
  }
  return !format ? "w/o format" : (!init ? "w/o init" : "w/o cur");
}

std::vector<AblationFlags> standard_arms() {
  return {{true, true, true}, {false, true, true}, {true, false, true}, {true, true, false}};
}

AblationFlags parse_arm(const std::string& name) {
  for (const auto& arm : standard_arms()) {
    if (arm.name() == name) return arm;
  }
  const std::string compact = name.starts_with("wo-") ? "w/o " + name.substr(3) : name;
  for (const auto& arm : standard_arms()) {
    if (arm.name() == compact) return arm;
  }
  throw Error(ErrorKind::kConfig, "unknown ablation arm '" + name +
                                      "' (expected baseline, wo-format, wo-init or wo-cur)");
}

tok::QuantizerConfig arm_tokenizer_config(tok::QuantizerConfig config, const AblationFlags& flags) {
  if (!flags.init) config.reinit.enabled = false;
  if (!flags.cur) config.curriculum.enabled = false;
  return config;
}

BenchmarkData benchmark_data(const data::SyntheticBenchmark& bench, const PipelineConfig& config) {
  BenchmarkData out;
  out.catalog = bench.catalog;
  out.formatted = bench.embeddings;
  out.unformatted = bench.unformatted_embeddings;
  out.sequences = data::build_sequences(bench.interactions, bench.catalog, config.min_history, config.max_history);
  return out;
}

namespace {

std::vector<std::string> domain_items(const data::Catalog& catalog, std::span<const std::string> tags) {
  std::vector<std::string> ids;
  for (const auto& item : catalog.items()) {
    if (std::find(tags.begin(), tags.end(), item.domain_tag) != tags.end()) ids.push_back(item.item_id);
  }
  return ids;
}

ar::TokenCorpus make_corpus(std::span<const data::InteractionSequence> seqs, const ar::IdTable& ids,
                            const ar::TokenVocab& vocab) {
  ar::TokenCorpus corpus{vocab, {}};
  for (const auto& s : seqs) corpus.streams.push_back(ar::tokenize_sequence(s, ids, vocab));
  return corpus;
}

}  // namespace

ArmResult run_pipeline(const BenchmarkData& data, const PipelineConfig& config, const AblationFlags& flags) {
  if (config.train_domains.empty()) throw Error(ErrorKind::kConfig, "pipeline: no training domains");
  if (std::find(config.train_domains.begin(), config.train_domains.end(), config.eval_domain) !=
          config.train_domains.end() &&
      config.strict) {
    throw Error(ErrorKind::kConfig, "pipeline: eval domain '" + config.eval_domain + "' is also a training domain");
  }
  const auto& embeddings = flags.format ? data.formatted : data.unformatted;

  ArmResult result;
  result.flags = flags;

  auto tok_cfg = arm_tokenizer_config(config.tokenizer, flags);
  tok_cfg.input_dim = embeddings.dim();
  tok::ClVae tokenizer(tok_cfg);
  const auto train_items = domain_items(data.catalog, config.train_domains);
  if (train_items.empty()) throw Error(ErrorKind::kData, "pipeline: training domains have no items");
  result.tokenizer_report = tokenizer.train(embeddings.select(train_items));
  for (const auto& e : result.tokenizer_report.epochs) result.used_level_trace.push_back(e.used_level);
  result.tokenizer_hash = sha256_hex(tokenizer.serialize());

  const auto tokens = tokenizer.tokenize_catalog(embeddings);
  result.diagnostics = tokens.diagnostics;
  ar::IdTable ids;
  for (size_t i = 0; i < tokens.item_ids.size(); ++i) ids.emplace(tokens.item_ids[i], tokens.ids[i]);

  std::vector<data::InteractionSequence> train_seqs, eval_seqs;
  for (const auto& s : data.sequences) {
    if (s.domain_tag == config.eval_domain) {
      eval_seqs.push_back(s);
    } else if (std::find(config.train_domains.begin(), config.train_domains.end(), s.domain_tag) !=
               config.train_domains.end()) {
      train_seqs.push_back(s);
    }
  }
  if (train_seqs.empty()) throw Error(ErrorKind::kData, "pipeline: no training sequences");
  if (eval_seqs.empty()) throw Error(ErrorKind::kData, "pipeline: no sequences in eval domain " + config.eval_domain);
  const auto split = data::split_by_user(eval_seqs, config.finetune_fraction, 0.0, config.seed);

  const ar::TokenVocab vocab{tok_cfg.levels, tok_cfg.codebook_size, true};
  ar::ArModel model(config.model, vocab);

  const auto eval_pool = data.catalog.filter_domains(std::vector<std::string>{config.eval_domain});
  const auto records = build_eval_set(split.test, eval_pool, config.negatives, config.seed);
  if (config.strict) check_zero_shot(data.catalog, records, config.train_domains);

  if (config.score_untrained) {
    result.untrained = make_report(config.eval_domain + "/untrained", score_records(model, ids, records, config.threads),
                                   flags.name());
  }

  result.pretrain_nll = ar::pretrain(model, make_corpus(train_seqs, ids, vocab));
  result.model_hash = sha256_hex(model.serialize());
  result.zero_shot = make_report(config.eval_domain + "/zero-shot", score_records(model, ids, records, config.threads),
                                 flags.name());

  if (config.run_finetune) {
    if (split.train.empty()) throw Error(ErrorKind::kData, "pipeline: no eval-domain users left for fine-tuning");
    ar::finetune(model, make_corpus(split.train, ids, vocab), config.finetune);
    result.finetuned_hash = sha256_hex(model.serialize());
    result.finetuned = make_report(config.eval_domain + "/fine-tuned",
                                   score_records(model, ids, records, config.threads), flags.name());
  }
  return result;
}

std::vector<ArmResult> run_ablation(const BenchmarkData& data, const PipelineConfig& config,
                                    std::span<const AblationFlags> arms) {
  std::vector<ArmResult> out;
  for (const auto& arm : arms) out.push_back(run_pipeline(data, config, arm));
  return out;
}

json to_json(const ArmResult& r) {
  json j;
  j["arm"] = r.flags.name();
  j["flags"] = {{"format", r.flags.format}, {"init", r.flags.init}, {"cur", r.flags.cur}};
  j["zero_shot"] = to_json(r.zero_shot);
  if (r.untrained) j["untrained"] = to_json(*r.untrained);
  if (r.finetuned) j["finetuned"] = to_json(*r.finetuned);
  j["reinit_events"] = r.tokenizer_report.reinit_events;
  j["unlock_epochs"] = r.tokenizer_report.unlock_epochs;
  j["used_level_trace"] = r.used_level_trace;
  j["utilization"] = r.diagnostics.utilization;
  j["collision_rate"] = r.diagnostics.collision_rate;
  j["tokenizer_hash"] = r.tokenizer_hash;
  j["model_hash"] = r.model_hash;
  if (!r.finetuned_hash.empty()) j["finetuned_hash"] = r.finetuned_hash;
  return j;
}

}  // namespace recbase::eval
