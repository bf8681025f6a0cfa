#include "imf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "imf/error.hpp"
#include "imf/fusion.hpp"

namespace imf {

namespace {

constexpr double kGammaRawInit = 0.5413248546129181;  // softplus(x) = 1

char modality_letter(Modality m) {
  switch (m) {
    case Modality::kStructural: return 's';
    case Modality::kVisual: return 'v';
    case Modality::kTextual: return 't';
    case Modality::kFused: return 'm';
  }
  throw ConfigError("unknown modality");
}

std::size_t modality_index(Modality m) { return static_cast<std::size_t>(m); }

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

AblationMode parse_ablation(const std::string& name) {
  if (name == "full") return AblationMode::kFull;
  if (name == "S") return AblationMode::kS;
  if (name == "S+V") return AblationMode::kSV;
  if (name == "S+T") return AblationMode::kST;
  if (name == "no-DF") return AblationMode::kNoDF;
  if (name == "no-CL") return AblationMode::kNoCL;
  throw ConfigError("unknown ablation '" + name +
                    "' (expected full, S, S+V, S+T, no-DF or no-CL)");
}

const char* ablation_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kFull: return "full";
    case AblationMode::kS: return "S";
    case AblationMode::kSV: return "S+V";
    case AblationMode::kST: return "S+T";
    case AblationMode::kNoDF: return "no-DF";
    case AblationMode::kNoCL: return "no-CL";
  }
  throw ConfigError("unknown ablation mode");
}

ImfModel::ImfModel(Tensor feats_s, Tensor feats_v, Tensor feats_t, std::size_t num_relations,
                   ModelConfig cfg)
    : cfg_(cfg),
      num_relations_(num_relations),
      feats_s_(std::move(feats_s)),
      feats_v_(std::move(feats_v)),
      feats_t_(std::move(feats_t)) {
  if (cfg_.dim == 0 || cfg_.rel_dim == 0) throw ConfigError("model widths must be positive");
  if (num_relations_ == 0) throw ConfigError("model needs at least one relation");
  if (feats_s_.rank() != 2 || feats_v_.rank() != 2 || feats_t_.rank() != 2) {
    throw DimensionError("feature matrices must be 2D");
  }
  num_entities_ = feats_s_.shape()[0];
  if (feats_v_.shape()[0] != num_entities_ || feats_t_.shape()[0] != num_entities_) {
    throw DimensionError("feature matrices disagree on the entity count");
  }
  if (cfg_.contrastive_multiplier < 0.0) {
    throw ConfigError("contrastive multiplier must be non-negative");
  }
  if (cfg_.label_smoothing < 0.0 || cfg_.label_smoothing >= 1.0) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }

  using M = Modality;
  switch (cfg_.ablation) {
    case AblationMode::kFull:
    case AblationMode::kNoCL:
      scored_ = {M::kStructural, M::kVisual, M::kTextual, M::kFused};
      fusion_inputs_ = {M::kStructural, M::kVisual, M::kTextual};
      cl_pairs_ = {{M::kStructural, M::kVisual},
                   {M::kStructural, M::kTextual},
                   {M::kVisual, M::kTextual}};
      break;
    case AblationMode::kS:
      scored_ = {M::kStructural};
      break;
    case AblationMode::kSV:
      scored_ = {M::kStructural, M::kVisual, M::kFused};
      fusion_inputs_ = {M::kStructural, M::kVisual};
      cl_pairs_ = {{M::kStructural, M::kVisual}};
      break;
    case AblationMode::kST:
      scored_ = {M::kStructural, M::kTextual, M::kFused};
      fusion_inputs_ = {M::kStructural, M::kTextual};
      cl_pairs_ = {{M::kStructural, M::kTextual}};
      break;
    case AblationMode::kNoDF:
      scored_ = {M::kFused};
      fusion_inputs_ = {M::kStructural, M::kVisual, M::kTextual};
      cl_pairs_ = {{M::kStructural, M::kVisual},
                   {M::kStructural, M::kTextual},
                   {M::kVisual, M::kTextual}};
      break;
  }
  if (cfg_.ablation == AblationMode::kNoCL || cfg_.contrastive_multiplier == 0.0) {
    cl_pairs_.clear();
  }
  init_params();
}

ImfModel::ImfModel(Tensor feats_s, Tensor feats_v, Tensor feats_t, const Checkpoint& ck)
    : ImfModel(std::move(feats_s), std::move(feats_v), std::move(feats_t), ck.num_relations,
               ck.config) {
  if (ck.num_entities != num_entities_) {
    throw DataError("checkpoint was trained on " + std::to_string(ck.num_entities) +
                    " entities, features carry " + std::to_string(num_entities_));
  }
  if (ck.params.size() != params_.size()) {
    throw DataError("checkpoint holds " + std::to_string(ck.params.size()) +
                    " parameters, configuration expects " + std::to_string(params_.size()));
  }
  for (const auto& [name, tensor] : ck.params) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("checkpoint has unknown parameter '" + name + "'");
    if (!it->second.same_shape(tensor)) {
      throw DataError("checkpoint parameter '" + name + "' is " + shape_str(tensor.shape()) +
                      ", expected " + shape_str(it->second.shape()));
    }
    it->second = tensor;
  }
}

std::string ImfModel::rel_param(Modality m) const {
  if (cfg_.scorer != ScorerKind::kContextual) return "rel_alt";
  if (cfg_.per_modality_relations) return std::string("rel_ctx.") + modality_letter(m);
  return "rel_ctx";
}

void ImfModel::init_params() {
  std::mt19937_64 rng(cfg_.seed);
  std::size_t d = cfg_.dim;
  auto feat_cols = [&](Modality m) {
    switch (m) {
      case Modality::kStructural: return feats_s_.shape()[1];
      case Modality::kVisual: return feats_v_.shape()[1];
      case Modality::kTextual: return feats_t_.shape()[1];
      default: throw ConfigError("fused modality has no input features");
    }
  };

  // Creation order is fixed so a seed fully determines every tensor.
  for (Modality m : fusion_inputs_) {
    std::string suffix(1, modality_letter(m));
    params_["latent_proj." + suffix] = Tensor::xavier_uniform({feat_cols(m), d}, rng);
    params_["core." + suffix] = Tensor::xavier_uniform({d, d}, rng);
  }
  for (Modality m : scored_) {
    if (m == Modality::kFused) continue;
    std::string suffix(1, modality_letter(m));
    params_["embed_proj." + suffix] = Tensor::xavier_uniform({feat_cols(m), d}, rng);
  }
  std::size_t contexts = 2 * num_relations_;
  if (cfg_.scorer == ScorerKind::kContextual) {
    for (Modality m : scored_) {
      std::string suffix(1, modality_letter(m));
      params_["scorer." + suffix + ".W"] = Tensor::xavier_uniform({cfg_.rel_dim, d * d}, rng);
      params_["scorer." + suffix + ".b"] = Tensor::zeros({1, d});
    }
    if (cfg_.per_modality_relations) {
      for (Modality m : scored_) {
        params_[rel_param(m)] = Tensor::xavier_uniform({contexts, cfg_.rel_dim}, rng);
      }
    } else {
      params_["rel_ctx"] = Tensor::xavier_uniform({contexts, cfg_.rel_dim}, rng);
    }
  } else {
    params_["rel_alt"] = Tensor::xavier_uniform({contexts, d}, rng);
  }
  params_["gamma_raw"] = Tensor::full({4, 1}, kGammaRawInit);
}

ImfModel::Embeddings ImfModel::build_embeddings(Tape& tape, std::map<std::string, Var>& leaves,
                                                bool trainable) const {
  for (const auto& [name, tensor] : params_) leaves[name] = tape.leaf(tensor, trainable);

  Embeddings emb;
  auto raw_feats = [&](Modality m) -> const Tensor& {
    switch (m) {
      case Modality::kStructural: return feats_s_;
      case Modality::kVisual: return feats_v_;
      default: return feats_t_;
    }
  };
  for (Modality m : fusion_inputs_) {
    std::string suffix(1, modality_letter(m));
    emb.latent[m] = project_latent(tape, tape.constant(raw_feats(m)),
                                   leaves.at("latent_proj." + suffix));
  }
  for (Modality m : scored_) {
    if (m == Modality::kFused) {
      // Element-wise product of the projected latents; a missing third
      // modality contributes an implicit all-ones factor.
      Var fused;
      bool first = true;
      for (Modality in : fusion_inputs_) {
        std::string suffix(1, modality_letter(in));
        Var factor = tape.matmul(emb.latent.at(in), leaves.at("core." + suffix));
        fused = first ? factor : tape.mul(fused, factor);
        first = false;
      }
      emb.entity[m] = fused;
    } else {
      std::string suffix(1, modality_letter(m));
      emb.entity[m] = tape.matmul(tape.constant(raw_feats(m)), leaves.at("embed_proj." + suffix));
    }
  }
  return emb;
}

Var ImfModel::modality_logits(Tape& tape, std::map<std::string, Var>& leaves,
                              const Embeddings& emb, Modality m,
                              std::span<const std::uint32_t> entity_ids,
                              const std::vector<std::uint32_t>& relctx_ids) const {
  Var candidates = emb.entity.at(m);
  Var queries = tape.gather_rows(candidates, {entity_ids.begin(), entity_ids.end()});
  std::string suffix(1, modality_letter(m));
  switch (cfg_.scorer) {
    case ScorerKind::kContextual: {
      Var hat = contextual_embed(tape, queries, relctx_ids, leaves.at(rel_param(m)),
                                 leaves.at("scorer." + suffix + ".W"),
                                 leaves.at("scorer." + suffix + ".b"));
      return tape.cosine_matrix(hat, candidates);
    }
    case ScorerKind::kTransE: {
      Var rel = tape.gather_rows(leaves.at("rel_alt"), relctx_ids);
      return transe_logits(tape, queries, rel, candidates);
    }
    case ScorerKind::kDistMult: {
      Var rel = tape.gather_rows(leaves.at("rel_alt"), relctx_ids);
      return distmult_logits(tape, queries, rel, candidates);
    }
  }
  throw ConfigError("unknown scorer kind");
}

ImfModel::BatchGraph ImfModel::batch_loss(Tape& tape, std::span<const std::uint32_t> entity_ids,
                                          std::span<const std::uint32_t> relctx_ids,
                                          const Tensor& targets) const {
  std::size_t b = entity_ids.size();
  if (b == 0) throw DataError("empty query batch");
  if (relctx_ids.size() != b) {
    throw DimensionError("batch has " + std::to_string(b) + " entities but " +
                         std::to_string(relctx_ids.size()) + " relation contexts");
  }
  if (targets.rank() != 2 || targets.shape()[0] != b || targets.shape()[1] != num_entities_) {
    throw DimensionError("targets are " + shape_str(targets.shape()) + ", expected [" +
                         std::to_string(b) + "x" + std::to_string(num_entities_) + "]");
  }
  for (std::uint32_t e : entity_ids) {
    if (e >= num_entities_) throw VocabError("entity id " + std::to_string(e) + " out of range");
  }
  for (std::uint32_t r : relctx_ids) {
    if (r >= 2 * num_relations_) {
      throw VocabError("relation context " + std::to_string(r) + " out of range");
    }
  }

  Tensor smoothed = targets;
  if (cfg_.label_smoothing > 0.0) {
    double ls = cfg_.label_smoothing;
    for (std::size_t i = 0; i < smoothed.size(); ++i) {
      smoothed[i] = (1.0 - ls) * smoothed[i] + ls / static_cast<double>(num_entities_);
    }
  }

  BatchGraph g;
  Embeddings emb = build_embeddings(tape, g.leaves, true);
  std::vector<std::uint32_t> relctx(relctx_ids.begin(), relctx_ids.end());
  Var target_var = tape.constant(std::move(smoothed));
  for (Modality m : scored_) {
    Var logits = modality_logits(tape, g.leaves, emb, m, entity_ids, relctx);
    g.modalities.push_back(m);
    g.losses.push_back(bce_from_logits(tape, logits, target_var));
    g.raw_weights.push_back(tape.gather_rows(
        g.leaves.at("gamma_raw"), {static_cast<std::uint32_t>(modality_index(m))}));
  }

  if (!cl_pairs_.empty()) {
    // The alignment loss runs over the distinct query entities of the batch.
    std::set<std::uint32_t> dedup(entity_ids.begin(), entity_ids.end());
    std::vector<std::uint32_t> anchor_rows(dedup.begin(), dedup.end());
    std::vector<std::array<Var, 2>> pairs;
    for (const auto& [p, q] : cl_pairs_) {
      pairs.push_back({tape.gather_rows(emb.latent.at(p), anchor_rows),
                       tape.gather_rows(emb.latent.at(q), anchor_rows)});
    }
    g.contrastive = contrastive_pairs(tape, pairs);
  }
  return g;
}

std::vector<Tensor> ImfModel::modality_scores(std::span<const std::uint32_t> entity_ids,
                                              std::span<const std::uint32_t> relctx_ids) const {
  if (entity_ids.empty()) throw DataError("empty query batch");
  if (relctx_ids.size() != entity_ids.size()) {
    throw DimensionError("batch has " + std::to_string(entity_ids.size()) + " entities but " +
                         std::to_string(relctx_ids.size()) + " relation contexts");
  }
  Tape tape;
  std::map<std::string, Var> leaves;
  Embeddings emb = build_embeddings(tape, leaves, false);
  std::vector<std::uint32_t> relctx(relctx_ids.begin(), relctx_ids.end());
  std::vector<Tensor> out;
  for (Modality m : scored_) {
    Var y = tape.sigmoid(modality_logits(tape, leaves, emb, m, entity_ids, relctx));
    out.push_back(tape.value(y));
  }
  return out;
}

ImfModel::ScoringSnapshot ImfModel::snapshot() const {
  ScoringSnapshot snap;
  snap.scorer = cfg_.scorer;
  snap.num_entities = num_entities_;
  snap.contexts = 2 * num_relations_;
  snap.modalities = scored_;
  snap.weights = decision_weights();
  for (Modality m : scored_) {
    snap.entity_embeds.push_back(entity_embeddings(m));
    std::string suffix(1, modality_letter(m));
    if (cfg_.scorer == ScorerKind::kContextual) {
      snap.w.push_back(params_.at("scorer." + suffix + ".W"));
      snap.bias.push_back(params_.at("scorer." + suffix + ".b"));
    } else {
      snap.w.emplace_back();
      snap.bias.emplace_back();
    }
    snap.rel_table.push_back(params_.at(rel_param(m)));
  }
  return snap;
}

std::vector<Tensor> ImfModel::ScoringSnapshot::modality_query(std::uint32_t entity,
                                                              std::uint32_t relctx) const {
  if (entity >= num_entities) {
    throw VocabError("entity id " + std::to_string(entity) + " out of range");
  }
  if (relctx >= contexts) {
    throw VocabError("relation context " + std::to_string(relctx) + " out of range");
  }
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < modalities.size(); ++k) {
    const Tensor& embeds = entity_embeds[k];
    const Tensor& rel = rel_table[k];
    std::size_t d = embeds.shape()[1];
    Tensor scores({num_entities});
    if (scorer == ScorerKind::kContextual) {
      // hat = e^T W(r) + b with W(r)[i][j] contracted on the fly.
      std::vector<double> hat(d);
      for (std::size_t j = 0; j < d; ++j) {
        double s = bias[k][j];
        for (std::size_t i = 0; i < d; ++i) {
          double wij = 0.0;
          for (std::size_t kk = 0; kk < rel.shape()[1]; ++kk) {
            wij += rel.at(relctx, kk) * w[k].at(kk, i * d + j);
          }
          s += embeds.at(entity, i) * wij;
        }
        hat[j] = s;
      }
      double nh = 0.0;
      for (double x : hat) nh += x * x;
      nh = std::max(std::sqrt(nh), Tape::kCosineEps);
      for (std::size_t i = 0; i < num_entities; ++i) {
        double dot = 0.0, ni = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += embeds.at(i, j) * hat[j];
          ni += embeds.at(i, j) * embeds.at(i, j);
        }
        ni = std::max(std::sqrt(ni), Tape::kCosineEps);
        scores[i] = 1.0 / (1.0 + std::exp(-dot / (ni * nh)));
      }
    } else {
      for (std::size_t i = 0; i < num_entities; ++i) {
        double logit = 0.0;
        if (scorer == ScorerKind::kTransE) {
          for (std::size_t j = 0; j < d; ++j) {
            logit -= std::abs(embeds.at(entity, j) + rel.at(relctx, j) - embeds.at(i, j));
          }
        } else {
          for (std::size_t j = 0; j < d; ++j) {
            logit += embeds.at(entity, j) * rel.at(relctx, j) * embeds.at(i, j);
          }
        }
        scores[i] = 1.0 / (1.0 + std::exp(-logit));
      }
    }
    out.push_back(std::move(scores));
  }
  return out;
}

std::vector<double> ImfModel::decision_weights() const {
  const Tensor& raw = params_.at("gamma_raw");
  std::vector<double> out;
  for (Modality m : scored_) out.push_back(softplus_scalar(raw[modality_index(m)]));
  return out;
}

Tensor ImfModel::entity_embeddings(Modality m) const {
  if (std::find(scored_.begin(), scored_.end(), m) == scored_.end()) {
    throw ConfigError(std::string("modality '") + modality_name(m) +
                      "' is not active under ablation " + ablation_name(cfg_.ablation));
  }
  Tape tape;
  std::map<std::string, Var> leaves;
  Embeddings emb = build_embeddings(tape, leaves, false);
  return tape.value(emb.entity.at(m));
}

Tensor ImfModel::contextual_embeddings(Modality m, std::uint32_t relctx) const {
  if (cfg_.scorer != ScorerKind::kContextual) {
    throw ConfigError("contextual export requires the contextual scorer");
  }
  if (relctx >= 2 * num_relations_) {
    throw VocabError("relation context " + std::to_string(relctx) + " out of range");
  }
  if (std::find(scored_.begin(), scored_.end(), m) == scored_.end()) {
    throw ConfigError(std::string("modality '") + modality_name(m) +
                      "' is not active under ablation " + ablation_name(cfg_.ablation));
  }
  Tape tape;
  std::map<std::string, Var> leaves;
  Embeddings emb = build_embeddings(tape, leaves, false);
  std::string suffix(1, modality_letter(m));
  std::vector<std::uint32_t> relctx_ids(num_entities_, relctx);
  Var hat = contextual_embed(tape, emb.entity.at(m), relctx_ids, leaves.at(rel_param(m)),
                             leaves.at("scorer." + suffix + ".W"),
                             leaves.at("scorer." + suffix + ".b"));
  return tape.value(hat);
}

Checkpoint ImfModel::checkpoint() const {
  return Checkpoint{cfg_, num_entities_, num_relations_, params_};
}

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

void write_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return v;
}

std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return v;
}

double read_f64(std::ifstream& in, const std::string& path) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write("IMFK", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(ck.config.dim));
  write_u32(out, static_cast<std::uint32_t>(ck.config.rel_dim));
  write_u32(out, static_cast<std::uint32_t>(ck.config.scorer));
  write_u32(out, static_cast<std::uint32_t>(ck.config.ablation));
  write_u32(out, ck.config.per_modality_relations ? 1 : 0);
  write_f64(out, ck.config.label_smoothing);
  write_f64(out, ck.config.contrastive_multiplier);
  write_u64(out, ck.config.seed);
  write_u64(out, ck.num_entities);
  write_u64(out, ck.num_relations);
  write_u64(out, ck.params.size());
  for (const auto& [name, tensor] : ck.params) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(tensor.data()),
              static_cast<std::streamsize>(tensor.size() * 8));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "IMFK", 4) != 0) {
    throw DataError(path + ": not a checkpoint file");
  }
  std::uint32_t version = read_u32(in, path);
  if (version != 1) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config.dim = read_u32(in, path);
  ck.config.rel_dim = read_u32(in, path);
  ck.config.scorer = static_cast<ScorerKind>(read_u32(in, path));
  ck.config.ablation = static_cast<AblationMode>(read_u32(in, path));
  ck.config.per_modality_relations = read_u32(in, path) != 0;
  ck.config.label_smoothing = read_f64(in, path);
  ck.config.contrastive_multiplier = read_f64(in, path);
  ck.config.seed = read_u64(in, path);
  ck.num_entities = read_u64(in, path);
  ck.num_relations = read_u64(in, path);
  std::uint64_t count = read_u64(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = read_u32(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::uint32_t rank = read_u32(in, path);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(read_u64(in, path));
    Tensor tensor(shape);
    in.read(reinterpret_cast<char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.size() * 8));
    if (!in) throw DataError(path + ": truncated checkpoint");
    ck.params.emplace(std::move(name), std::move(tensor));
  }
  return ck;
}

}  // namespace imf
