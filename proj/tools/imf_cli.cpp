// Command-line front end: dataset preparation, structural pretraining,
// fusion training, ranking evaluation, and embedding export. One command
// per process. Every option resolves as flag > environment variable >
// config file > default, and the resolved configuration is written next to
// the outputs so a run can be reproduced from its artifacts alone.
//
// Exit codes: 0 success, 1 invalid inputs or configuration, 2 failure while
// executing a validated command.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "imf/error.hpp"
#include "imf/eval.hpp"
#include "imf/gat.hpp"
#include "imf/kg_data.hpp"
#include "imf/model.hpp"
#include "imf/tensor.hpp"
#include "imf/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace imf;

namespace {

// Commands run in two phases. Everything loaded or checked before the work
// starts is validation; failures after that point are runtime failures.
enum class Phase { kValidate, kExecute };
Phase g_phase = Phase::kValidate;

void begin_execution() { g_phase = Phase::kExecute; }

struct DatasetArgs {
  std::string dataset;
  std::string feats_struct, feats_visual, feats_text;
};

struct ModelArgs {
  std::size_t dim = 256;
  std::size_t rel_dim = 64;
  double lr = 1e-3;
  std::size_t batch = 128;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;
  std::string ablation = "full";
  std::string scorer = "contextual";
  double label_smoothing = 0.0;
  double contrastive_multiplier = 1.0;
  std::size_t eval_every = 5;
  std::size_t patience = 10;
};

// Registers an option with its IMF_* environment override, named after the
// long flag (--rel-dim -> IMF_REL_DIM).
template <typename T>
CLI::Option* opt(CLI::App& app, const std::string& flag, T& value, const std::string& help) {
  std::string env = "IMF_";
  for (char c : flag.substr(2)) env += c == '-' ? '_' : static_cast<char>(std::toupper(c));
  return app.add_option(flag, value, help)->envname(env);
}

void add_config_file(CLI::App& app) {
  app.set_config("--config", "", "config file with key=value lines; flags win")
      ->envname("IMF_CONFIG");
}

void add_dataset_args(CLI::App& app, DatasetArgs& a, bool features_required) {
  opt(app, "--dataset", a.dataset, "dataset directory with train/valid/test.txt")->required();
  CLI::Option* s = opt(app, "--features-struct", a.feats_struct, "structural feature file");
  CLI::Option* v = opt(app, "--features-visual", a.feats_visual, "visual feature file");
  CLI::Option* t = opt(app, "--features-text", a.feats_text, "textual feature file");
  if (features_required) {
    s->required();
    v->required();
    t->required();
  }
}

void add_model_args(CLI::App& app, ModelArgs& a) {
  opt(app, "--dim", a.dim, "shared embedding width D");
  opt(app, "--rel-dim", a.rel_dim, "relation width of the contextual transform");
  opt(app, "--lr", a.lr, "Adam learning rate");
  opt(app, "--batch", a.batch, "query batch size");
  opt(app, "--epochs", a.epochs, "training epochs");
  opt(app, "--seed", a.seed, "rng seed");
  opt(app, "--ablation", a.ablation, "full | S | S+V | S+T | no-DF | no-CL");
  opt(app, "--scorer", a.scorer, "contextual | transe | distmult");
  opt(app, "--label-smoothing", a.label_smoothing, "target smoothing in [0,1)");
  opt(app, "--contrastive-multiplier", a.contrastive_multiplier, "alignment loss multiplier");
  opt(app, "--eval-every", a.eval_every, "epochs between valid evaluations (0 disables)");
  opt(app, "--patience", a.patience, "evaluations without improvement before stopping");
}

// Feature loading failures must name the modality they concern.
ModalityFeatures load_modality(const std::string& path, std::size_t entities, Modality m) {
  if (path.empty()) {
    throw ConfigError(std::string(modality_name(m)) + " feature file not given");
  }
  if (!fs::exists(path)) {
    throw ConfigError(std::string(modality_name(m)) + " feature file not found: " + path);
  }
  try {
    return load_features(path, entities, m);
  } catch (const Error& e) {
    throw ConfigError(std::string(modality_name(m)) + " features rejected: " + e.what());
  }
}

struct LoadedRun {
  Dataset data;
  Tensor fs, fv, ft;
};

LoadedRun load_run_inputs(const DatasetArgs& a) {
  LoadedRun run;
  run.data = load_dataset(a.dataset);
  std::size_t e = run.data.vocab.num_entities();
  run.fs = load_modality(a.feats_struct, e, Modality::kStructural).matrix;
  run.fv = load_modality(a.feats_visual, e, Modality::kVisual).matrix;
  run.ft = load_modality(a.feats_text, e, Modality::kTextual).matrix;
  return run;
}

ModelConfig to_model_config(const ModelArgs& a) {
  ModelConfig mc;
  mc.dim = a.dim;
  mc.rel_dim = a.rel_dim;
  mc.scorer = parse_scorer(a.scorer);
  mc.ablation = parse_ablation(a.ablation);
  mc.label_smoothing = a.label_smoothing;
  mc.contrastive_multiplier = a.contrastive_multiplier;
  mc.seed = a.seed;
  return mc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) {
    throw DataError("cannot write " + path.string());
  }
}

// The resolved configuration of the invoked subcommand, reproducing the run.
void write_run_config(const fs::path& out_dir, const std::string& command, const json& keys) {
  json doc;
  doc["command"] = command;
  doc["config"] = keys;
  write_text(out_dir / "config.json", doc.dump(2) + "\n");
}

json dataset_json(const DatasetArgs& a) {
  return json{{"dataset", a.dataset},
              {"features_struct", a.feats_struct},
              {"features_visual", a.feats_visual},
              {"features_text", a.feats_text}};
}

json model_json(const ModelArgs& a) {
  return json{{"dim", a.dim},
              {"rel_dim", a.rel_dim},
              {"lr", a.lr},
              {"batch", a.batch},
              {"epochs", a.epochs},
              {"seed", a.seed},
              {"ablation", a.ablation},
              {"scorer", a.scorer},
              {"label_smoothing", a.label_smoothing},
              {"contrastive_multiplier", a.contrastive_multiplier},
              {"eval_every", a.eval_every},
              {"patience", a.patience}};
}

fs::path ensure_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out directory is required");
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + out + ": " + ec.message());
  return dir;
}

// Loss and valid-MRR curves per epoch, derived from the metric log.
void write_curves(const fs::path& metrics, const fs::path& csv) {
  std::ifstream in(metrics);
  if (!in) throw DataError("cannot reopen metric log " + metrics.string());
  std::map<std::size_t, double> loss;
  std::map<std::size_t, double> mrr;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    std::size_t epoch = rec.at("epoch").get<std::size_t>();
    if (rec.at("split") == "train") loss[epoch] = rec.at("loss").get<double>();
    if (rec.at("split") == "valid" && !rec.at("MRR").is_null()) {
      mrr[epoch] = rec.at("MRR").get<double>();
    }
  }
  std::string out = "epoch,loss,valid_mrr\n";
  char buf[128];
  for (const auto& [epoch, l] : loss) {
    if (mrr.count(epoch)) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", epoch, l, mrr[epoch]);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,\n", epoch, l);
    }
    out += buf;
  }
  write_text(csv, out);
}

// Names that valid or test use but train never mentions. Ids are assigned
// in first-seen order, so anything at or past the train-only counts came
// from a later split.
std::vector<std::string> uncovered_names(const Dataset& data, std::size_t train_ents,
                                         std::size_t train_rels) {
  std::set<std::uint32_t> ents, rels;
  for (const std::vector<Triple>* split : {&data.triples.valid, &data.triples.test}) {
    for (const Triple& t : *split) {
      if (t.head >= train_ents) ents.insert(t.head);
      if (t.tail >= train_ents) ents.insert(t.tail);
      if (t.rel >= train_rels) rels.insert(t.rel);
    }
  }
  std::vector<std::string> names;
  for (std::uint32_t e : ents) names.push_back("entity " + data.vocab.entity_name(e));
  for (std::uint32_t r : rels) names.push_back("relation " + data.vocab.relation_name(r));
  return names;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const std::string& p : parts) {
    if (!out.empty()) out += ", ";
    out += p;
  }
  return out;
}

// ---------------------------------------------------------------------------
// prepare: validate a raw directory and write indexed artifacts. A directory
// holding only all.txt is split 70/10/20 with the seeded shuffle; feature
// files are optional and re-encoded in the binary format when given.
// Prepared splits must reload under the strict vocabulary contract, so the
// training split has to cover every entity and relation.

int cmd_prepare(const DatasetArgs& a, const std::string& out, std::uint64_t seed) {
  Dataset data;
  if (fs::exists(fs::path(a.dataset) / "train.txt")) {
    // Load every split in building mode so coverage violations can be
    // listed exhaustively instead of stopping at the first unknown name.
    data.triples.train = load_triples((fs::path(a.dataset) / "train.txt").string(), data.vocab,
                                      VocabMode::kBuild);
    std::size_t train_ents = data.vocab.num_entities();
    std::size_t train_rels = data.vocab.num_relations();
    for (const char* name : {"valid.txt", "test.txt"}) {
      fs::path p = fs::path(a.dataset) / name;
      if (!fs::exists(p)) continue;
      auto& split = std::string(name) == "valid.txt" ? data.triples.valid : data.triples.test;
      split = load_triples(p.string(), data.vocab, VocabMode::kBuild);
    }
    std::vector<std::string> missing = uncovered_names(data, train_ents, train_rels);
    if (!missing.empty()) {
      throw ConfigError("train.txt never mentions: " + join(missing));
    }
  } else if (fs::exists(fs::path(a.dataset) / "all.txt")) {
    std::vector<Triple> all =
        load_triples((fs::path(a.dataset) / "all.txt").string(), data.vocab, VocabMode::kBuild);
    // Reshuffle with derived seeds until the training slice covers the
    // vocabulary; the loop is deterministic, so reruns reproduce the split.
    std::vector<std::string> missing;
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
      std::mt19937_64 rng(seed + attempt);
      data.triples = split_triples(all, 0.7, 0.1, rng);
      std::set<std::uint32_t> ents, rels;
      for (const Triple& t : data.triples.train) {
        ents.insert(t.head);
        ents.insert(t.tail);
        rels.insert(t.rel);
      }
      missing.clear();
      for (std::uint32_t e = 0; e < data.vocab.num_entities(); ++e) {
        if (!ents.count(e)) missing.push_back("entity " + data.vocab.entity_name(e));
      }
      for (std::uint32_t r = 0; r < data.vocab.num_relations(); ++r) {
        if (!rels.count(r)) missing.push_back("relation " + data.vocab.relation_name(r));
      }
      if (missing.empty()) {
        if (attempt > 0) {
          std::fprintf(stderr, "split covered the vocabulary after %llu reshuffles\n",
                       static_cast<unsigned long long>(attempt));
        }
        break;
      }
    }
    if (!missing.empty()) {
      throw ConfigError("no 70/10/20 split covers the vocabulary; still missing: " +
                        join(missing));
    }
  } else {
    throw ConfigError("dataset directory " + a.dataset + " has neither train.txt nor all.txt");
  }

  std::size_t entities = data.vocab.num_entities();
  std::size_t relations = data.vocab.num_relations();

  struct Loaded {
    const char* name;
    const std::string* path;
    Modality modality;
    std::optional<ModalityFeatures> feats;
  };
  std::vector<Loaded> feats = {{"struct", &a.feats_struct, Modality::kStructural, {}},
                               {"visual", &a.feats_visual, Modality::kVisual, {}},
                               {"text", &a.feats_text, Modality::kTextual, {}}};
  for (Loaded& f : feats) {
    if (!f.path->empty()) f.feats = load_modality(*f.path, entities, f.modality);
  }

  begin_execution();
  fs::path dir = ensure_out_dir(out);
  save_triples((dir / "train.txt").string(), data.triples.train, data.vocab);
  save_triples((dir / "valid.txt").string(), data.triples.valid, data.vocab);
  save_triples((dir / "test.txt").string(), data.triples.test, data.vocab);
  save_manifest((dir / "entities.txt").string(), data.vocab);
  std::string rel_manifest;
  for (std::size_t r = 0; r < relations; ++r) {
    rel_manifest += data.vocab.relation_name(static_cast<std::uint32_t>(r)) + "\n";
  }
  write_text(dir / "relations.txt", rel_manifest);
  for (Loaded& f : feats) {
    if (f.feats) {
      save_features((dir / (std::string(f.name) + ".feats")).string(), f.feats->matrix);
    }
  }

  json cfg = dataset_json(a);
  cfg["seed"] = seed;
  write_run_config(dir, "prepare", cfg);

  std::printf("entities   %zu\n", entities);
  std::printf("relations  %zu\n", relations);
  std::printf("train      %zu\n", data.triples.train.size());
  std::printf("valid      %zu\n", data.triples.valid.size());
  std::printf("test       %zu\n", data.triples.test.size());
  for (const Loaded& f : feats) {
    if (f.feats) std::printf("%-10s %zu x %zu\n", f.name, entities, f.feats->dim());
  }
  // Published FB15K-237 statistics, printed whenever the shape matches.
  if (entities == 14541 || relations == 237) {
    std::printf("FB15K-237 reference: 14541 entities (%s), 237 relations (%s)\n",
                entities == 14541 ? "match" : "MISMATCH", relations == 237 ? "match" : "MISMATCH");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain: graph-attention structural features from the training split.

int cmd_pretrain(const std::string& dataset, GatConfig gc, const std::string& out) {
  Dataset data = load_dataset(dataset);
  if (data.triples.train.empty()) throw ConfigError("dataset has no training triples");

  begin_execution();
  fs::path dir = ensure_out_dir(out);
  PretrainResult res = pretrain_structural(data.triples.train, data.vocab.num_entities(),
                                           data.vocab.num_relations(), gc);
  save_features((dir / "struct.feats").string(), res.features);

  std::string curve = "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < res.epoch_losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, res.epoch_losses[i]);
    curve += buf;
  }
  write_text(dir / "pretrain_curve.csv", curve);

  write_run_config(dir, "pretrain",
                   json{{"dataset", dataset},
                        {"dim", gc.dim},
                        {"layers", gc.layers},
                        {"heads", gc.heads},
                        {"margin", gc.margin},
                        {"lr", gc.lr},
                        {"epochs", gc.epochs},
                        {"batch", gc.batch},
                        {"seed", gc.seed}});
  std::printf("wrote %s (%zu x %zu), final loss %.6f\n", (dir / "struct.feats").c_str(),
              data.vocab.num_entities(), gc.dim,
              res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back());
  return 0;
}

// ---------------------------------------------------------------------------
// train: optimize the fusion model, keep the best checkpoint.

int cmd_train(const DatasetArgs& da, const ModelArgs& ma, const std::string& out) {
  LoadedRun run = load_run_inputs(da);
  ModelConfig mc = to_model_config(ma);
  fs::path dir = ensure_out_dir(out);

  ImfModel model(run.fs, run.fv, run.ft, run.data.vocab.num_relations(), mc);

  TrainConfig tc;
  tc.epochs = ma.epochs;
  tc.batch = ma.batch;
  tc.lr = ma.lr;
  tc.seed = ma.seed;
  tc.eval_every = ma.eval_every;
  tc.patience = ma.patience;
  tc.metrics_path = (dir / "metrics.jsonl").string();

  begin_execution();
  json cfg = dataset_json(da);
  cfg.update(model_json(ma));
  write_run_config(dir, "train", cfg);

  TrainResult res = train(model, run.data.triples, tc);
  save_checkpoint((dir / "checkpoint.bin").string(), res.best);
  if (!tc.metrics_path.empty() && fs::exists(tc.metrics_path)) {
    write_curves(dir / "metrics.jsonl", dir / "curves.csv");
  }

  if (res.aborted) {
    std::fprintf(stderr, "training aborted on non-finite loss; kept the last finite state\n");
    return 2;
  }
  std::printf("epochs run %zu\n", res.epochs.size());
  if (!res.epochs.empty()) std::printf("final loss %.6f\n", res.epochs.back().loss);
  if (res.evaluated) std::printf("best valid MRR %.4f\n", res.best_mrr);
  std::printf("checkpoint %s\n", (dir / "checkpoint.bin").c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval: filtered ranking report of a checkpoint on one split.

int cmd_eval(const DatasetArgs& da, const std::string& checkpoint, const std::string& split,
             std::uint64_t seed, bool dump_ranks, const std::string& out) {
  LoadedRun run = load_run_inputs(da);
  Checkpoint ck = load_checkpoint(checkpoint);
  ImfModel model(run.fs, run.fv, run.ft, ck);

  const TripleStore& st = run.data.triples;
  const std::vector<Triple>* queries = nullptr;
  if (split == "train") queries = &st.train;
  if (split == "valid") queries = &st.valid;
  if (split == "test") queries = &st.test;
  if (!queries) throw ConfigError("unknown split " + split + "; expected train, valid or test");
  if (queries->empty()) throw ConfigError("split " + split + " is empty");

  begin_execution();
  fs::path dir = ensure_out_dir(out);
  auto snapshot = model.snapshot();
  std::vector<double> weights = model.decision_weights();
  ScoreFn score = [&](std::uint32_t entity, std::uint32_t relctx) {
    return joint_predict(snapshot.modality_query(entity, relctx), weights);
  };

  PairIndex filter = build_filter(st);
  std::vector<RankRecord> dump;
  MetricsReport report = evaluate(score, *queries, filter, run.data.vocab.num_entities(),
                                  run.data.vocab.num_relations(), seed,
                                  dump_ranks ? &dump : nullptr);

  write_text(dir / "report.json", report_json(report) + "\n");
  write_text(dir / "report.txt", report_table(report));
  if (dump_ranks) {
    std::string csv = "head,rel,tail,direction,rank\n";
    char buf[128];
    for (const RankRecord& r : dump) {
      std::snprintf(buf, sizeof buf, "%u,%u,%u,%s,%u\n", r.triple.head, r.triple.rel,
                    r.triple.tail, r.head_query ? "head" : "tail", r.rank);
      csv += buf;
    }
    write_text(dir / "ranks.csv", csv);
  }

  json cfg = dataset_json(da);
  cfg["checkpoint"] = checkpoint;
  cfg["split"] = split;
  cfg["seed"] = seed;
  cfg["dump_ranks"] = dump_ranks;
  write_run_config(dir, "eval", cfg);

  std::fputs(report_table(report).c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// export-embeddings: one modality's entity matrix in the feature format.
// The contextual export conditions the fused modality on a relation
// context id (tail direction r, head direction r + |R|).

int cmd_export(const DatasetArgs& da, const std::string& checkpoint, const std::string& modality,
               std::int64_t relation, const std::string& out) {
  LoadedRun run = load_run_inputs(da);
  Checkpoint ck = load_checkpoint(checkpoint);
  ImfModel model(run.fs, run.fv, run.ft, ck);

  Tensor matrix;
  if (modality == "s") {
    matrix = model.entity_embeddings(Modality::kStructural);
  } else if (modality == "v") {
    matrix = model.entity_embeddings(Modality::kVisual);
  } else if (modality == "t") {
    matrix = model.entity_embeddings(Modality::kTextual);
  } else if (modality == "m") {
    matrix = model.entity_embeddings(Modality::kFused);
  } else if (modality == "contextual") {
    std::int64_t contexts = static_cast<std::int64_t>(2 * model.num_relations());
    if (relation < 0 || relation >= contexts) {
      throw ConfigError("contextual export needs --relation in [0, " + std::to_string(contexts) +
                        ")");
    }
    matrix = model.contextual_embeddings(Modality::kFused, static_cast<std::uint32_t>(relation));
  } else {
    throw ConfigError("unknown modality " + modality + "; expected s, v, t, m or contextual");
  }

  begin_execution();
  fs::path path(out);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw ConfigError("cannot create " + path.parent_path().string());
  }
  save_features(out, matrix);
  std::printf("wrote %s (%zu x %zu)\n", out.c_str(), matrix.shape()[0], matrix.shape()[1]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal knowledge-graph link prediction"};
  app.require_subcommand(1);

  // prepare
  DatasetArgs prep_data;
  std::string prep_out;
  std::uint64_t prep_seed = 1;
  CLI::App* prepare = app.add_subcommand("prepare", "validate and index a dataset directory");
  add_config_file(*prepare);
  add_dataset_args(*prepare, prep_data, false);
  opt(*prepare, "--seed", prep_seed, "shuffle seed for splitting unsplit data");
  opt(*prepare, "--out", prep_out, "output directory")->required();

  // pretrain
  std::string pre_dataset, pre_out;
  GatConfig gc;
  CLI::App* pretrain = app.add_subcommand("pretrain", "train structural features");
  add_config_file(*pretrain);
  opt(*pretrain, "--dataset", pre_dataset, "dataset directory")->required();
  opt(*pretrain, "--dim", gc.dim, "structural feature width");
  opt(*pretrain, "--layers", gc.layers, "attention layers");
  opt(*pretrain, "--heads", gc.heads, "attention heads per layer");
  opt(*pretrain, "--margin", gc.margin, "hinge margin");
  opt(*pretrain, "--lr", gc.lr, "Adam learning rate");
  opt(*pretrain, "--epochs", gc.epochs, "pretraining epochs");
  opt(*pretrain, "--batch", gc.batch, "triple batch size");
  opt(*pretrain, "--seed", gc.seed, "rng seed");
  opt(*pretrain, "--out", pre_out, "output directory")->required();

  // train
  DatasetArgs train_data;
  ModelArgs train_model;
  std::string train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "train the fusion model");
  add_config_file(*train_cmd);
  add_dataset_args(*train_cmd, train_data, true);
  add_model_args(*train_cmd, train_model);
  opt(*train_cmd, "--out", train_out, "output directory")->required();

  // eval
  DatasetArgs eval_data;
  std::string eval_ck, eval_split = "test", eval_out;
  std::uint64_t eval_seed = 1;
  bool eval_dump = false;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_config_file(*eval_cmd);
  add_dataset_args(*eval_cmd, eval_data, true);
  opt(*eval_cmd, "--checkpoint", eval_ck, "checkpoint file")->required();
  opt(*eval_cmd, "--split", eval_split, "train | valid | test");
  opt(*eval_cmd, "--seed", eval_seed, "tie-breaking seed");
  eval_cmd->add_flag("--dump-ranks", eval_dump, "write per-query ranks.csv");
  opt(*eval_cmd, "--out", eval_out, "output directory")->required();

  // export-embeddings
  DatasetArgs exp_data;
  std::string exp_ck, exp_modality, exp_out;
  std::int64_t exp_relation = -1;
  CLI::App* exp_cmd = app.add_subcommand("export-embeddings", "write one modality's embeddings");
  add_config_file(*exp_cmd);
  add_dataset_args(*exp_cmd, exp_data, true);
  opt(*exp_cmd, "--checkpoint", exp_ck, "checkpoint file")->required();
  opt(*exp_cmd, "--modality", exp_modality, "s | v | t | m | contextual")->required();
  opt(*exp_cmd, "--relation", exp_relation, "relation context id for the contextual export");
  opt(*exp_cmd, "--out", exp_out, "output feature file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(prep_data, prep_out, prep_seed);
    if (pretrain->parsed()) return cmd_pretrain(pre_dataset, gc, pre_out);
    if (train_cmd->parsed()) return cmd_train(train_data, train_model, train_out);
    if (eval_cmd->parsed()) return cmd_eval(eval_data, eval_ck, eval_split, eval_seed, eval_dump,
                                            eval_out);
    if (exp_cmd->parsed()) {
      return cmd_export(exp_data, exp_ck, exp_modality, exp_relation, exp_out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return g_phase == Phase::kValidate ? 1 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
