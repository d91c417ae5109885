#include "recbase/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "recbase/error.hpp"
#include "recbase/hash.hpp"
#include "recbase/run_config.hpp"

namespace recbase::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- run directories --------------------------------------------------------------

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "missing input: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::kData, path.string() + " is not valid JSON");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write " + path.string());
  out << text;
}

/// An input run directory: its manifest plus hashes of the files read from it.
class InputDir {
 public:
  InputDir(std::string role, const std::string& dir) : role_(std::move(role)), dir_(dir) {
    if (!fs::is_directory(dir_)) throw Error(ErrorKind::kData, "missing " + role_ + " directory: " + dir);
    manifest_ = read_json(dir_ / "manifest.json");
  }

  const json& manifest() const { return manifest_; }
  const fs::path& dir() const { return dir_; }

  fs::path file(const std::string& name) {
    const auto p = dir_ / name;
    if (!fs::is_regular_file(p)) throw Error(ErrorKind::kData, "missing input: " + p.string());
    hashes_[name] = sha256_file(p);
    return p;
  }
  const std::string& hash(const std::string& name) const { return hashes_.at(name); }

  json record() const {
    json files = json::object();
    for (const auto& [k, v] : hashes_) files[k] = v;
    return {{"path", dir_.string()}, {"manifest", sha256_file(dir_ / "manifest.json")}, {"files", files}};
  }
  const std::string& role() const { return role_; }

 private:
  std::string role_;
  fs::path dir_;
  json manifest_;
  std::map<std::string, std::string> hashes_;
};

/// Output run directory. Files are registered as they are written; finish()
/// writes metrics.jsonl, config.json and manifest.json.
class RunWriter {
 public:
  RunWriter(const std::string& dir, std::string command, json config, bool emit)
      : dir_(dir), command_(std::move(command)), config_(std::move(config)), emit_(emit) {
    fs::create_directories(dir_);
  }

  fs::path file(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }

  void metric(json line) {
    if (emit_) std::cout << line.dump() << '\n';
    metrics_.push_back(std::move(line));
  }

  void finish(const std::vector<InputDir*>& inputs, const json& extra) {
    std::string lines;
    for (const auto& m : metrics_) lines += m.dump() + "\n";
    write_text(file("metrics.jsonl"), lines);
    write_text(file("config.json"), config_.dump(2) + "\n");

    json manifest;
    manifest["command"] = command_;
    manifest["version"] = kVersion;
    manifest["config"] = config_;
    json in = json::object();
    for (const auto* d : inputs) in[d->role()] = d->record();
    manifest["inputs"] = in;
    json out = json::object();
    for (const auto& name : outputs_) out[name] = sha256_file(dir_ / name);
    manifest["outputs"] = out;
    for (const auto& [k, v] : extra.items()) manifest[k] = v;
    write_text(dir_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string command_;
  json config_;
  bool emit_;
  std::vector<std::string> outputs_;
  std::vector<json> metrics_;
};

// --- data directory -----------------------------------------------------------------

struct DataDir {
  data::Catalog catalog;
  data::EmbeddingMatrix formatted;
  data::EmbeddingMatrix unformatted;
  std::vector<data::InteractionSequence> sequences;
};

DataDir load_data(InputDir& in, const eval::PipelineConfig& config, bool need_unformatted) {
  DataDir d;
  d.catalog = data::load_catalog(in.file("catalog.jsonl"));
  d.formatted = data::load_embeddings(in.file("embeddings.bin"), d.catalog);
  if (need_unformatted) d.unformatted = data::load_embeddings(in.file("embeddings_unformatted.bin"), d.catalog);
  const auto raw = data::load_interactions(in.file("interactions.jsonl"));
  d.sequences = data::build_sequences(raw, d.catalog, config.min_history, config.max_history);
  return d;
}

bool contains(std::span<const std::string> v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::vector<std::string> domain_items(const data::Catalog& catalog, std::span<const std::string> tags) {
  std::vector<std::string> ids;
  for (const auto& item : catalog.items()) {
    if (contains(tags, item.domain_tag)) ids.push_back(item.item_id);
  }
  return ids;
}

struct EvalSplit {
  std::vector<data::InteractionSequence> finetune;
  std::vector<data::InteractionSequence> test;
};

EvalSplit eval_split(const DataDir& d, const eval::PipelineConfig& config) {
  std::vector<data::InteractionSequence> seqs;
  for (const auto& s : d.sequences) {
    if (s.domain_tag == config.eval_domain) seqs.push_back(s);
  }
  if (seqs.empty()) throw Error(ErrorKind::kData, "no sequences in eval domain " + config.eval_domain);
  auto split = data::split_by_user(seqs, config.finetune_fraction, 0.0, config.seed);
  return {std::move(split.train), std::move(split.test)};
}

ar::TokenCorpus make_corpus(std::span<const data::InteractionSequence> seqs, const ar::IdTable& ids,
                            const ar::TokenVocab& vocab) {
  ar::TokenCorpus corpus{vocab, {}};
  for (const auto& s : seqs) corpus.streams.push_back(ar::tokenize_sequence(s, ids, vocab));
  return corpus;
}

std::vector<std::string> string_list(const json& manifest, const char* key) {
  if (!manifest.contains(key)) return {};
  return manifest.at(key).get<std::vector<std::string>>();
}

std::vector<std::string> merged(std::vector<std::string> a, std::span<const std::string> b) {
  for (const auto& s : b) {
    if (!contains(a, s)) a.push_back(s);
  }
  return a;
}

json to_json(const tok::CodebookDiagnostics& d) {
  return {{"utilization", d.utilization},
          {"collision_rate", d.collision_rate},
          {"collision_rate_by_depth", d.collision_rate_by_depth},
          {"usage_frequency", d.usage_frequency}};
}

json to_json(const ar::EpochNll& e) {
  return {{"kind", "epoch_nll"}, {"phase", e.phase}, {"epoch", e.epoch}, {"nll", e.nll}, {"tokens", e.tokens}};
}

// --- commands ---------------------------------------------------------------------

struct Options {
  std::optional<std::string> config_file;
  std::vector<std::string> overrides;
  std::string out;
  std::string data;
  std::string tokenizer;
  std::string ids;
  std::string model;
  std::string emit = "none";
  bool latency = false;
};

struct Context {
  std::string command;
  Options opt;
  json tree;
  RunConfig rc;
  bool emit() const { return opt.emit == "stdout"; }
};

void guard_inputs(const Context& ctx, std::initializer_list<const std::string*> inputs) {
  const auto out = fs::weakly_canonical(ctx.opt.out);
  for (const auto* in : inputs) {
    if (!in->empty() && fs::weakly_canonical(*in) == out) {
      throw Error(ErrorKind::kConfig, "--out must differ from input directory " + *in);
    }
  }
}

int cmd_synth(Context& ctx) {
  const auto bench = data::synth_benchmark(ctx.rc.benchmark);
  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  data::write_catalog(w.file("catalog.jsonl"), bench.catalog);
  data::write_embeddings(w.file("embeddings.bin"), bench.embeddings);
  data::write_embeddings(w.file("embeddings_unformatted.bin"), bench.unformatted_embeddings);
  std::vector<data::InteractionSequence> seqs;
  for (const auto& r : bench.interactions) seqs.push_back({r.user_id, r.items, ""});
  data::write_interactions(w.file("interactions.jsonl"), seqs);

  size_t interactions = 0;
  for (const auto& s : seqs) interactions += s.items.size();
  w.metric({{"kind", "data"},
            {"items", bench.catalog.size()},
            {"domains", bench.catalog.domains()},
            {"dim", bench.embeddings.dim()},
            {"users", seqs.size()},
            {"interactions", interactions}});
  w.finish({}, {{"domains", bench.catalog.domains()}});
  std::cerr << "synth-data: " << bench.catalog.size() << " items, " << seqs.size() << " users -> " << ctx.opt.out
            << "\n";
  return 0;
}

int cmd_tokenizer_train(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data});
  InputDir data_in("data", ctx.opt.data);
  const auto& p = ctx.rc.pipeline;
  const bool formatted = ctx.rc.flags.format;
  auto d = load_data(data_in, p, !formatted);
  const auto& embeddings = formatted ? d.formatted : d.unformatted;

  auto cfg = eval::arm_tokenizer_config(p.tokenizer, ctx.rc.flags);
  cfg.input_dim = embeddings.dim();
  const auto items = domain_items(d.catalog, p.train_domains);
  if (items.empty()) throw Error(ErrorKind::kData, "training domains have no items");

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  tok::ClVae tokenizer(cfg);
  const auto report = tokenizer.train(embeddings.select(items), [&](const tok::EpochMetrics& m) {
    auto line = tok::to_json(m);
    line["kind"] = "tokenizer_epoch";
    w.metric(line);
  });
  tokenizer.save(w.file("tokenizer.ckpt"));
  const auto diag = tokenizer.tokenize_catalog(embeddings.select(items)).diagnostics;
  auto summary = to_json(diag);
  summary["kind"] = "tokenizer_summary";
  summary["reinit_events"] = report.reinit_events;
  summary["unlock_epochs"] = report.unlock_epochs;
  w.metric(summary);
  w.finish({&data_in}, {{"training_domains", p.train_domains},
                        {"embeddings", formatted ? "formatted" : "unformatted"},
                        {"ablation", ctx.rc.flags.name()}});
  std::cerr << "tokenizer-train: " << items.size() << " items, level-0 utilization " << diag.utilization.at(0)
            << ", collision rate " << diag.collision_rate << "\n";
  return 0;
}

/// Loads a tokenizer directory and the embedding variant it was trained on.
struct LoadedTokenizer {
  tok::ClVae model;
  std::string hash;
  std::vector<std::string> training_domains;
  bool formatted = true;
};

LoadedTokenizer load_tokenizer(InputDir& in) {
  const auto path = in.file("tokenizer.ckpt");
  LoadedTokenizer t{tok::ClVae::load(path), in.hash("tokenizer.ckpt"), string_list(in.manifest(), "training_domains"),
                    in.manifest().value("embeddings", std::string("formatted")) == "formatted"};
  if (!t.model.trained()) throw Error(ErrorKind::kState, "tokenizer in " + in.dir().string() + " is not trained");
  return t;
}

int cmd_tokenize(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data, &ctx.opt.tokenizer});
  InputDir data_in("data", ctx.opt.data);
  InputDir tok_in("tokenizer", ctx.opt.tokenizer);
  auto t = load_tokenizer(tok_in);
  auto d = load_data(data_in, ctx.rc.pipeline, !t.formatted);
  const auto tokens = t.model.tokenize_catalog(t.formatted ? d.formatted : d.unformatted);

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  ar::write_id_table(w.file("ids.jsonl"), tokens.item_ids, tokens.ids);
  auto line = to_json(tokens.diagnostics);
  line["kind"] = "catalog_diagnostics";
  line["items"] = tokens.item_ids.size();
  w.metric(line);
  const auto& qc = t.model.config();
  w.finish({&data_in, &tok_in}, {{"training_domains", t.training_domains},
                                 {"tokenizer_hash", t.hash},
                                 {"vocab", ar::to_json(ar::TokenVocab{qc.levels, qc.codebook_size, true})}});
  std::cerr << "tokenize: " << tokens.item_ids.size() << " items, collision rate " << tokens.diagnostics.collision_rate
            << "\n";
  return 0;
}

int cmd_pretrain(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data, &ctx.opt.ids});
  InputDir data_in("data", ctx.opt.data);
  InputDir ids_in("ids", ctx.opt.ids);
  const auto& p = ctx.rc.pipeline;
  auto d = load_data(data_in, p, false);
  const auto ids = ar::load_id_table(ids_in.file("ids.jsonl"));
  const auto vocab = ar::vocab_from_json(ids_in.manifest().at("vocab"));

  std::vector<data::InteractionSequence> seqs;
  for (const auto& s : d.sequences) {
    if (contains(p.train_domains, s.domain_tag)) seqs.push_back(s);
  }
  if (seqs.empty()) throw Error(ErrorKind::kData, "no sequences in the training domains");

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  ar::ArModel model(p.model, vocab);
  model.train(make_corpus(seqs, ids, vocab), "pretrain", p.model.epochs, p.model.learning_rate,
              [&](const ar::EpochNll& e) { w.metric(to_json(e)); });
  model.save(w.file("model.ckpt"));
  w.finish({&data_in, &ids_in},
           {{"training_domains", merged(string_list(ids_in.manifest(), "training_domains"), p.train_domains)},
            {"tokenizer_hash", ids_in.manifest().at("tokenizer_hash")},
            {"sequences", seqs.size()}});
  std::cerr << "pretrain: " << seqs.size() << " sequences, " << p.model.epochs << " epochs\n";
  return 0;
}

json split_record(const eval::PipelineConfig& p) {
  return {{"domain", p.eval_domain}, {"fraction", p.finetune_fraction}, {"seed", p.seed}};
}

int cmd_finetune(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data, &ctx.opt.ids, &ctx.opt.model});
  InputDir data_in("data", ctx.opt.data);
  InputDir ids_in("ids", ctx.opt.ids);
  InputDir model_in("model", ctx.opt.model);
  const auto& p = ctx.rc.pipeline;
  if (ids_in.manifest().at("tokenizer_hash") != model_in.manifest().at("tokenizer_hash")) {
    throw Error(ErrorKind::kMismatch, "ids and model were produced by different tokenizers");
  }
  auto d = load_data(data_in, p, false);
  const auto ids = ar::load_id_table(ids_in.file("ids.jsonl"));
  auto model = ar::ArModel::load(model_in.file("model.ckpt"));
  const auto split = eval_split(d, p);
  if (split.finetune.empty()) throw Error(ErrorKind::kData, "no eval-domain users assigned to fine-tuning");

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  ar::finetune(model, make_corpus(split.finetune, ids, model.vocab()), p.finetune,
               [&](const ar::EpochNll& e) { w.metric(to_json(e)); });
  model.save(w.file("model.ckpt"));
  auto finetune_domains = string_list(model_in.manifest(), "finetune_domains");
  finetune_domains = merged(finetune_domains, std::vector<std::string>{p.eval_domain});
  w.finish({&data_in, &ids_in, &model_in}, {{"training_domains", model_in.manifest().at("training_domains")},
                                            {"finetune_domains", finetune_domains},
                                            {"finetune_split", split_record(p)},
                                            {"tokenizer_hash", model_in.manifest().at("tokenizer_hash")},
                                            {"sequences", split.finetune.size()}});
  std::cerr << "finetune: " << split.finetune.size() << " sequences, " << p.finetune.epochs << " epochs\n";
  return 0;
}

int cmd_eval(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data, &ctx.opt.tokenizer, &ctx.opt.model});
  InputDir data_in("data", ctx.opt.data);
  InputDir tok_in("tokenizer", ctx.opt.tokenizer);
  InputDir model_in("model", ctx.opt.model);
  const auto& p = ctx.rc.pipeline;
  const auto& mm = model_in.manifest();

  auto training = merged(string_list(tok_in.manifest(), "training_domains"), string_list(mm, "training_domains"));
  const auto finetune_domains = string_list(mm, "finetune_domains");
  const bool finetuned = contains(finetune_domains, p.eval_domain);
  if (p.strict && contains(training, p.eval_domain)) {
    throw Error(ErrorKind::kConfig, "domain overlap: eval domain '" + p.eval_domain +
                                        "' appears in the training manifest; zero-shot evaluation refused");
  }
  if (finetuned && mm.contains("finetune_split") && mm.at("finetune_split") != split_record(p)) {
    throw Error(ErrorKind::kConfig, "eval split differs from the one used for fine-tuning (" +
                                        mm.at("finetune_split").dump() + ")");
  }

  auto t = load_tokenizer(tok_in);
  if (mm.contains("tokenizer_hash") && mm.at("tokenizer_hash").get<std::string>() != t.hash) {
    throw Error(ErrorKind::kMismatch, "model was trained on ids from a different tokenizer");
  }
  const auto model = ar::ArModel::load(model_in.file("model.ckpt"));
  auto d = load_data(data_in, p, !t.formatted);

  const auto split = eval_split(d, p);
  const auto pool = d.catalog.filter_domains(std::vector<std::string>{p.eval_domain});
  const auto records = eval::build_eval_set(split.test, pool, p.negatives, p.seed);

  eval::ZeroShotOptions zo;
  zo.dataset = p.eval_domain + (finetuned ? "/fine-tuned" : "/zero-shot");
  zo.strict = p.strict;
  zo.training_domains = training;
  zo.fingerprint = sha256_hex(ctx.tree.dump()).substr(0, 16);
  zo.threads = p.threads;
  const auto out = eval::zero_shot_eval(model, t.model, d.catalog, t.formatted ? d.formatted : d.unformatted,
                                        records, zo);

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  std::string scores;
  for (const auto& s : out.scored) scores += eval::to_json(s).dump() + "\n";
  write_text(w.file("scores.jsonl"), scores);
  auto line = eval::to_json(out.report);
  line["kind"] = "metric_report";
  w.metric(line);
  if (ctx.opt.latency) {
    // Timings are not reproducible, so they go to their own file.
    std::string lat;
    for (const auto& r : eval::latency_report(model, out.ids, records, ctx.rc.latency_batch_sizes,
                                              ctx.rc.latency_repeats)) {
      auto j = eval::to_json(r);
      j["kind"] = "latency";
      if (ctx.emit()) std::cout << j.dump() << '\n';
      lat += j.dump() + "\n";
    }
    write_text(w.file("latency.jsonl"), lat);
  }
  w.finish({&data_in, &tok_in, &model_in}, {{"training_domains", training},
                                            {"finetune_domains", finetune_domains},
                                            {"eval_domain", p.eval_domain},
                                            {"tokenizer_hash", t.hash}});
  std::cerr << eval::summarize(out.report) << "\n";
  return 0;
}

int cmd_ablate(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data});
  InputDir data_in("data", ctx.opt.data);
  const auto& p = ctx.rc.pipeline;
  auto d = load_data(data_in, p, true);
  const eval::BenchmarkData bench{d.catalog, d.formatted, d.unformatted, d.sequences};

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  std::vector<std::string> table;
  for (const auto& arm : ctx.rc.arms) {
    const auto r = eval::run_pipeline(bench, p, arm);
    auto line = eval::to_json(r);
    line["kind"] = "ablation_arm";
    w.metric(line);
    std::ostringstream row;
    row << arm.name() << ": zero-shot AUC " << r.zero_shot.auc;
    if (r.finetuned) row << ", fine-tuned AUC " << r.finetuned->auc;
    row << ", level-0 utilization " << r.diagnostics.utilization.at(0) << ", collision rate "
        << r.diagnostics.collision_rate;
    table.push_back(row.str());
  }
  w.finish({&data_in}, {{"training_domains", p.train_domains}, {"eval_domain", p.eval_domain}});
  for (const auto& row : table) std::cerr << row << "\n";
  return 0;
}

int cmd_diagnose(Context& ctx) {
  guard_inputs(ctx, {&ctx.opt.data, &ctx.opt.tokenizer});
  InputDir data_in("data", ctx.opt.data);
  InputDir tok_in("tokenizer", ctx.opt.tokenizer);
  auto t = load_tokenizer(tok_in);
  auto d = load_data(data_in, ctx.rc.pipeline, !t.formatted);
  const auto& embeddings = t.formatted ? d.formatted : d.unformatted;
  const auto tokens = t.model.tokenize_catalog(embeddings);

  json diag = to_json(tokens.diagnostics);
  json by_domain = json::object();
  for (const auto& tag : d.catalog.domains()) {
    std::vector<tok::ConceptId> ids;
    for (size_t i = 0; i < tokens.item_ids.size(); ++i) {
      if (d.catalog.at(*d.catalog.find(tokens.item_ids[i])).domain_tag == tag) ids.push_back(tokens.ids[i]);
    }
    by_domain[tag] = to_json(tok::diagnostics(t.model.config().codebook_size, ids));
  }
  diag["by_domain"] = by_domain;

  RunWriter w(ctx.opt.out, ctx.command, ctx.tree, ctx.emit());
  write_text(w.file("diagnostics.json"), diag.dump(2) + "\n");
  std::string proj;
  for (size_t i = 0; i < embeddings.rows(); ++i) {
    const auto [mu, logvar] = t.model.encode(embeddings.row(i));
    const auto& item = d.catalog.at(*d.catalog.find(embeddings.ids()[i]));
    proj += json{{"item_id", item.item_id}, {"domain", item.domain_tag}, {"mu", mu}, {"code0", tokens.ids[i].codes.at(0)}, {"concept_id", tokens.ids[i].codes}}
                .dump() +
            "\n";
  }
  write_text(w.file("projection.jsonl"), proj);
  auto line = diag;
  line.erase("by_domain");
  line["kind"] = "catalog_diagnostics";
  w.metric(line);
  w.finish({&data_in, &tok_in}, {{"training_domains", t.training_domains}, {"tokenizer_hash", t.hash}});
  std::cerr << "diagnose: level utilization";
  for (double u : tokens.diagnostics.utilization) std::cerr << " " << u;
  std::cerr << ", collision rate " << tokens.diagnostics.collision_rate << "\n";
  return 0;
}

}  // namespace

int main(int argc, const char* const* argv) {
  CLI::App app{"Concept-id tokenizer, sequence model and zero-shot evaluation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_file, "JSON config file");
    sub->add_option("--set", opt.overrides, "Override key.path=value (repeatable)");
    sub->add_option("--out", opt.out, "Output run directory")->required();
    sub->add_option("--emit", opt.emit, "Also print metric records to stdout")->check(CLI::IsMember({"none", "stdout"}));
  };
  auto need = [&](CLI::App* sub, const char* flag, std::string& target, const char* help) {
    sub->add_option(flag, target, help)->required();
  };

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(Context&);
  };
  const Command commands[] = {
      {"synth-data", "Generate the synthetic multi-domain benchmark", cmd_synth},
      {"tokenizer-train", "Train the CL-VAE tokenizer on the training domains", cmd_tokenizer_train},
      {"tokenize", "Map every catalog item to its concept id", cmd_tokenize},
      {"pretrain", "Train the sequence model on training-domain histories", cmd_pretrain},
      {"finetune", "Continue training on eval-domain fine-tuning users", cmd_finetune},
      {"eval", "Score held-out eval-domain users and report AUC", cmd_eval},
      {"ablate", "Run the ablation arms end to end", cmd_ablate},
      {"diagnose", "Codebook diagnostics and projection export", cmd_diagnose},
  };
  std::map<const CLI::App*, const Command*> dispatch;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    const std::string name = c.name;
    if (name != "synth-data") need(sub, "--data", opt.data, "Data directory");
    if (name == "tokenize" || name == "eval" || name == "diagnose") {
      need(sub, "--tokenizer", opt.tokenizer, "Tokenizer run directory");
    }
    if (name == "pretrain" || name == "finetune") need(sub, "--ids", opt.ids, "Tokenized catalog directory");
    if (name == "finetune" || name == "eval") need(sub, "--model", opt.model, "Model run directory");
    if (name == "eval") sub->add_flag("--latency", opt.latency, "Also time scoring per batch size");
    dispatch[sub] = &c;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorKind::kConfig);
  }

  const Command* chosen = nullptr;
  for (const auto& [sub, c] : dispatch) {
    if (sub->parsed()) chosen = c;
  }
  try {
    Context ctx{chosen->name, opt, {}, {}};
    ctx.tree = resolve_config(opt.config_file, opt.overrides);
    ctx.rc = typed_config(ctx.tree);
    return chosen->fn(ctx);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("recbase");
  for (const auto& a : args) argv.push_back(a.c_str());
  return main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace recbase::cli
