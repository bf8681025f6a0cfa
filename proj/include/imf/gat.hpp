#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "imf/kg_data.hpp"
#include "imf/tape.hpp"

namespace imf {

// Undirected neighborhood structure with mandatory self-loops. Edges are
// grouped by the receiving node: segment i covers the edges flowing into
// entity i, segments.dst[e] is the sending neighbor, center_idx[e] == i.
struct GraphAdjacency {
  EdgeSegmentsPtr segments;
  std::vector<std::uint32_t> center_idx;
};

GraphAdjacency build_adjacency(const std::vector<Triple>& triples, std::size_t num_entities);

struct GatConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t dim = 256;  // output embedding width; hidden heads carve it up
  double leaky_slope = 0.2;
  double margin = 1.0;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch = 512;
  std::uint64_t seed = 1;
};

// Graph attention encoder over entity embeddings, trained with the
// translational hinge objective. Hidden layers concatenate their attention
// heads (each head dim/heads wide) behind an ELU; the final layer averages
// heads and stays linear. Relation embeddings participate in the energy only
// and are dropped when features are exported.
class GatModel {
 public:
  GatModel(std::size_t num_entities, std::size_t num_relations,
           const std::vector<Triple>& train, GatConfig cfg);

  // Records the whole-graph forward pass; fills `vars` with one leaf per
  // parameter (keyed like `params()`). When `attentions` is given, every
  // layer/head attention vector is appended for inspection.
  Var forward(Tape& tape, std::map<std::string, Var>& vars,
              std::vector<Var>* attentions = nullptr, bool trainable = true) const;

  // Plain-value forward pass: the current embeddings, no gradients.
  Tensor encode() const;

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  const GatConfig& config() const { return cfg_; }
  std::size_t num_entities() const { return num_entities_; }

 private:
  std::size_t num_entities_, num_relations_;
  GatConfig cfg_;
  GraphAdjacency adj_;
  std::map<std::string, Tensor> params_;
};

// Batched translational energy ||h + r - t||_1 over row-aligned [B x d]
// inputs, one column per row out.
Var transe_energy(Tape& tape, Var h_rows, Var r_rows, Var t_rows);

// Mean over the batch of max{0, margin + pos - neg}; inputs are the [B x 1]
// energy columns of aligned positive/negative batches.
Var hinge_loss(Tape& tape, Var pos_energy, Var neg_energy, double margin);

struct PretrainResult {
  Tensor features;  // num_entities x dim
  std::vector<double> epoch_losses;
};

// Algorithm: per epoch, shuffle triples, draw one uniform corruption per
// positive, minimize the hinge loss with Adam. Throws DataError if the loss
// leaves the finite range. Bit-identical output for identical seeds.
PretrainResult pretrain_structural(const std::vector<Triple>& train, std::size_t num_entities,
                                   std::size_t num_relations, const GatConfig& cfg);

}  // namespace imf
