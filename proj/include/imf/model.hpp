#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imf/kg_data.hpp"
#include "imf/scorer.hpp"
#include "imf/tape.hpp"
#include "imf/tensor.hpp"

namespace imf {

enum class AblationMode { kFull, kS, kSV, kST, kNoDF, kNoCL };

// Parses "full" / "S" / "S+V" / "S+T" / "no-DF" / "no-CL"; throws ConfigError otherwise.
AblationMode parse_ablation(const std::string& name);
const char* ablation_name(AblationMode mode);

struct ModelConfig {
  std::size_t dim = 256;     // shared latent and scoring width D
  std::size_t rel_dim = 64;  // relation width of the contextual transform
  ScorerKind scorer = ScorerKind::kContextual;
  AblationMode ablation = AblationMode::kFull;
  // Relation embeddings are shared across modality scorers unless this is set.
  bool per_modality_relations = false;
  double label_smoothing = 0.0;
  double contrastive_multiplier = 1.0;
  std::uint64_t seed = 1;
};

// All parameter tensors of a run plus enough metadata to rebuild the model.
struct Checkpoint {
  ModelConfig config;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;
  std::map<std::string, Tensor> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// The two-stage fusion model over frozen per-modality feature matrices.
// Owns every trainable tensor; forward passes copy them onto a caller tape
// so the optimizer can fold gradients back into the owned storage.
//
// Query convention: a query is (entity id, relation context id). Tail
// queries for relation r use context r, head queries use context r + |R|,
// so the relation context table has 2|R| rows.
class ImfModel {
 public:
  ImfModel(Tensor feats_s, Tensor feats_v, Tensor feats_t, std::size_t num_relations,
           ModelConfig cfg);
  // Restores trained parameters; features must match the checkpoint dims.
  ImfModel(Tensor feats_s, Tensor feats_v, Tensor feats_t, const Checkpoint& ck);

  // Scored modalities under the configured ablation, in (s, v, t, m) order.
  const std::vector<Modality>& scored_modalities() const { return scored_; }
  // Modalities entering the fused factor product (empty when fusion is off).
  const std::vector<Modality>& fusion_inputs() const { return fusion_inputs_; }
  // Latent pairs aligned by the alignment loss (empty when it is off).
  const std::vector<std::array<Modality, 2>>& aligned_pairs() const { return cl_pairs_; }

  // Per-batch training graph: one loss per scored modality plus the optional
  // alignment loss, with every parameter exposed as a trainable leaf.
  struct BatchGraph {
    std::vector<Modality> modalities;
    std::vector<Var> losses;       // aligned with `modalities`
    std::vector<Var> raw_weights;  // aligned raw decision weights
    std::optional<Var> contrastive;
    std::map<std::string, Var> leaves;  // parameter name -> trainable leaf
  };
  BatchGraph batch_loss(Tape& tape, std::span<const std::uint32_t> entity_ids,
                        std::span<const std::uint32_t> relctx_ids, const Tensor& targets) const;

  // Inference: per-modality score vectors for a query batch, aligned with
  // scored_modalities(). Each tensor is [B x |E|] with values in (0,1).
  std::vector<Tensor> modality_scores(std::span<const std::uint32_t> entity_ids,
                                      std::span<const std::uint32_t> relctx_ids) const;

  // Read-only scoring state with the entity embeddings materialized once,
  // for evaluation loops that issue many queries against frozen parameters.
  struct ScoringSnapshot {
    ScorerKind scorer = ScorerKind::kContextual;
    std::size_t num_entities = 0;
    std::size_t contexts = 0;  // 2 * |R|
    std::vector<Modality> modalities;
    std::vector<Tensor> entity_embeds;  // aligned with `modalities`, each [E x D]
    std::vector<Tensor> w;              // contextual transform per modality (may be empty)
    std::vector<Tensor> bias;
    std::vector<Tensor> rel_table;  // relation table per modality (shared = copies)
    std::vector<double> weights;    // softplus decision weights

    // Per-modality score vectors over all entities for one query, each [E].
    std::vector<Tensor> modality_query(std::uint32_t entity, std::uint32_t relctx) const;
  };
  ScoringSnapshot snapshot() const;

  // Effective decision weights softplus(w_k) for the scored modalities.
  std::vector<double> decision_weights() const;

  // Entity embedding matrix of one modality ([|E| x D]; fused is recomputed).
  Tensor entity_embeddings(Modality m) const;
  // Contextual embeddings of all entities under one relation context.
  Tensor contextual_embeddings(Modality m, std::uint32_t relctx) const;

  Checkpoint checkpoint() const;

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }

 private:
  struct Embeddings {
    std::map<Modality, Var> entity;  // E_k for scored modalities
    std::map<Modality, Var> latent;  // fusion latents over all entities
  };
  Embeddings build_embeddings(Tape& tape, std::map<std::string, Var>& leaves,
                              bool trainable) const;
  Var modality_logits(Tape& tape, std::map<std::string, Var>& leaves, const Embeddings& emb,
                      Modality m, std::span<const std::uint32_t> entity_ids,
                      const std::vector<std::uint32_t>& relctx_ids) const;
  std::string rel_param(Modality m) const;
  void init_params();

  ModelConfig cfg_;
  std::size_t num_entities_ = 0;
  std::size_t num_relations_ = 0;
  Tensor feats_s_, feats_v_, feats_t_;
  std::vector<Modality> scored_;
  std::vector<Modality> fusion_inputs_;
  std::vector<std::array<Modality, 2>> cl_pairs_;
  std::map<std::string, Tensor> params_;
};

}  // namespace imf
