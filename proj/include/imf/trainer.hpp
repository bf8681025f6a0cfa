#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imf/kg_data.hpp"
#include "imf/model.hpp"
#include "imf/tape.hpp"
#include "imf/tensor.hpp"

namespace imf {

// Weighted sum of component losses on the tape:
//   sum_k softplus(raw_k) * L_k + multiplier * contrastive.
// Gradients flow through both the losses and the raw weights. Every input
// loss must be finite.
Var joint_loss(Tape& tape, const std::vector<Var>& losses, const std::vector<Var>& raw_weights,
               const std::optional<Var>& contrastive, double contrastive_multiplier);

// Decision-level fusion: sum_k w_k * y_k / sum_k w_k over aligned score
// vectors. Weights must be non-negative with a positive sum, so the result
// is a convex combination.
Tensor joint_predict(const std::vector<Tensor>& scores, const std::vector<double>& weights);

// Both prediction directions of a triple list as flat query arrays: a tail
// query (h, r) and a head query (t, r + |R|) per triple. With dedup set,
// repeated (entity, context) queries collapse to one.
struct QuerySet {
  std::vector<std::uint32_t> entities;
  std::vector<std::uint32_t> relctxs;
};
QuerySet build_queries(const std::vector<Triple>& triples, std::size_t num_relations, bool dedup);

// Multi-hot target rows for a query batch, looked up from the training
// index (tail buckets for contexts < |R|, head buckets above).
Tensor make_target_matrix(std::span<const std::uint32_t> entities,
                          std::span<const std::uint32_t> relctxs, const PairIndex& targets,
                          std::size_t num_entities, std::size_t num_relations);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t eval_every = 5;  // epochs between valid evaluations; 0 disables
  std::size_t patience = 10;   // evaluations without a new best MRR before stopping
  bool dedup_queries = true;
  std::string metrics_path;  // line-delimited JSON log; empty disables
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
};

struct TrainResult {
  Checkpoint best;  // best valid MRR; final state when never evaluated
  double best_mrr = 0.0;
  bool evaluated = false;
  bool aborted = false;  // non-finite loss; `best` holds the last good state
  std::vector<EpochRecord> epochs;
};

// Optimizes the model in place over the training split, evaluating on the
// valid split for checkpoint selection and early stopping.
TrainResult train(ImfModel& model, const TripleStore& triples, const TrainConfig& cfg);

}  // namespace imf
