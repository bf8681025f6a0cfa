#include "imf/gat.hpp"

#include <algorithm>
#include <cmath>

#include "imf/adam.hpp"

namespace imf {

GraphAdjacency build_adjacency(const std::vector<Triple>& triples, std::size_t num_entities) {
  std::vector<std::vector<std::uint32_t>> neigh(num_entities);
  for (std::size_t i = 0; i < num_entities; ++i) neigh[i].push_back(static_cast<std::uint32_t>(i));
  for (const Triple& t : triples) {
    if (t.head >= num_entities || t.tail >= num_entities) {
      throw DataError("adjacency: entity id out of range");
    }
    neigh[t.head].push_back(t.tail);
    neigh[t.tail].push_back(t.head);
  }
  auto seg = std::make_shared<EdgeSegments>();
  GraphAdjacency adj;
  seg->offsets.push_back(0);
  for (std::size_t i = 0; i < num_entities; ++i) {
    auto& n = neigh[i];
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
    for (std::uint32_t j : n) {
      seg->dst.push_back(j);
      adj.center_idx.push_back(static_cast<std::uint32_t>(i));
    }
    seg->offsets.push_back(static_cast<std::uint32_t>(seg->dst.size()));
  }
  adj.segments = std::move(seg);
  return adj;
}

GatModel::GatModel(std::size_t num_entities, std::size_t num_relations,
                   const std::vector<Triple>& train, GatConfig cfg)
    : num_entities_(num_entities), num_relations_(num_relations), cfg_(cfg) {
  if (cfg_.layers == 0 || cfg_.heads == 0) throw ConfigError("gat: layers and heads must be >= 1");
  if (cfg_.dim % cfg_.heads != 0) {
    throw ConfigError("gat: dim " + std::to_string(cfg_.dim) + " not divisible by heads " +
                      std::to_string(cfg_.heads));
  }
  if (cfg_.margin <= 0) throw ConfigError("gat: margin must be positive");
  adj_ = build_adjacency(train, num_entities);

  std::mt19937_64 rng(cfg_.seed);
  params_["embed"] = Tensor::xavier_uniform({num_entities, cfg_.dim}, rng);
  params_["rel"] = Tensor::xavier_uniform({std::max<std::size_t>(num_relations, 1), cfg_.dim}, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    bool last = l + 1 == cfg_.layers;
    // Hidden heads are concatenated back to `dim`; the last layer's heads
    // are full width and averaged.
    std::size_t head_out = last ? cfg_.dim : cfg_.dim / cfg_.heads;
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      std::string base = "l" + std::to_string(l) + ".h" + std::to_string(h) + ".";
      params_[base + "W"] = Tensor::xavier_uniform({cfg_.dim, head_out}, rng);
      params_[base + "a_src"] = Tensor::xavier_uniform({head_out, 1}, rng);
      params_[base + "a_dst"] = Tensor::xavier_uniform({head_out, 1}, rng);
    }
  }
}

Var GatModel::forward(Tape& tape, std::map<std::string, Var>& vars,
                      std::vector<Var>* attentions, bool trainable) const {
  for (const auto& [name, tensor] : params_) vars[name] = tape.leaf(tensor, trainable);

  Var x = vars.at("embed");
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    bool last = l + 1 == cfg_.layers;
    std::vector<Var> head_outs;
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      std::string base = "l" + std::to_string(l) + ".h" + std::to_string(h) + ".";
      Var z = tape.matmul(x, vars.at(base + "W"));
      // Edge logit: attention response of the receiving node plus that of
      // the sending neighbor, then leaky ReLU, then per-node softmax.
      Var s_center = tape.matmul(z, vars.at(base + "a_src"));
      Var s_neigh = tape.matmul(z, vars.at(base + "a_dst"));
      Var logits = tape.leaky_relu(tape.add(tape.gather_rows(s_center, adj_.center_idx),
                                            tape.gather_rows(s_neigh, adj_.segments->dst)),
                                   cfg_.leaky_slope);
      Var alpha = tape.segment_softmax(logits, adj_.segments);
      if (attentions) attentions->push_back(alpha);
      head_outs.push_back(tape.segment_weighted_sum(alpha, z, adj_.segments));
    }
    Var combined;
    if (last) {
      combined = head_outs[0];
      for (std::size_t h = 1; h < cfg_.heads; ++h) combined = tape.add(combined, head_outs[h]);
      combined = tape.affine(combined, 1.0 / static_cast<double>(cfg_.heads), 0.0);
    } else {
      combined = tape.elu(tape.concat_cols(head_outs));
    }
    x = combined;
  }
  return x;
}

Tensor GatModel::encode() const {
  Tape tape;
  std::map<std::string, Var> vars;
  return tape.value(forward(tape, vars, nullptr, false));
}

Var transe_energy(Tape& tape, Var h_rows, Var r_rows, Var t_rows) {
  return tape.sum_rows(tape.abs(tape.sub(tape.add(h_rows, r_rows), t_rows)));
}

Var hinge_loss(Tape& tape, Var pos_energy, Var neg_energy, double margin) {
  if (margin <= 0) throw ConfigError("hinge_loss: margin must be positive");
  if (!tape.value(pos_energy).same_shape(tape.value(neg_energy))) {
    throw DimensionError("hinge_loss: positive and negative batches misaligned, " +
                         shape_str(tape.value(pos_energy).shape()) + " vs " +
                         shape_str(tape.value(neg_energy).shape()));
  }
  Var slack = tape.relu(tape.affine(tape.sub(pos_energy, neg_energy), 1.0, margin));
  return tape.mean_all(slack);
}

PretrainResult pretrain_structural(const std::vector<Triple>& train, std::size_t num_entities,
                                   std::size_t num_relations, const GatConfig& cfg) {
  GatModel model(num_entities, num_relations, train, cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamOptimizer opt(cfg.lr);

  PretrainResult result;
  std::vector<Triple> order = train;
  std::size_t batch = cfg.batch == 0 ? train.size() : cfg.batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t stop = std::min(order.size(), start + batch);
      std::vector<Triple> pos(order.begin() + start, order.begin() + stop);
      std::vector<Triple> neg = corrupt_triples(pos, num_entities, rng);

      Tape tape;
      std::map<std::string, Var> vars;
      Var emb = model.forward(tape, vars);
      std::vector<std::uint32_t> ph, pr, pt, nh, nr, nt;
      for (const Triple& t : pos) {
        ph.push_back(t.head);
        pr.push_back(t.rel);
        pt.push_back(t.tail);
      }
      for (const Triple& t : neg) {
        nh.push_back(t.head);
        nr.push_back(t.rel);
        nt.push_back(t.tail);
      }
      Var rel = vars.at("rel");
      Var e_pos = transe_energy(tape, tape.gather_rows(emb, ph), tape.gather_rows(rel, pr),
                                tape.gather_rows(emb, pt));
      Var e_neg = transe_energy(tape, tape.gather_rows(emb, nh), tape.gather_rows(rel, nr),
                                tape.gather_rows(emb, nt));
      Var loss = hinge_loss(tape, e_pos, e_neg, cfg.margin);

      double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw DataError("structural pretraining diverged: non-finite loss at epoch " +
                        std::to_string(epoch));
      }
      epoch_loss += loss_value;
      ++steps;

      tape.backward(loss);
      for (auto& [name, tensor] : model.params()) {
        opt.update(name, tensor, tape.grad(vars.at(name)));
      }
    }
    result.epoch_losses.push_back(steps ? epoch_loss / static_cast<double>(steps) : 0.0);
  }
  result.features = model.encode();
  return result;
}

}  // namespace imf
