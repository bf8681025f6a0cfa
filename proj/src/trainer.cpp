#include "imf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "imf/adam.hpp"
#include "imf/error.hpp"
#include "imf/eval.hpp"
#include "json.hpp"

namespace imf {

Var joint_loss(Tape& tape, const std::vector<Var>& losses, const std::vector<Var>& raw_weights,
               const std::optional<Var>& contrastive, double contrastive_multiplier) {
  if (losses.empty()) throw DataError("joint loss needs at least one component");
  if (losses.size() != raw_weights.size()) {
    throw DimensionError("joint loss got " + std::to_string(losses.size()) + " losses and " +
                         std::to_string(raw_weights.size()) + " weights");
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    double v = tape.value(losses[i])[0];
    if (!std::isfinite(v)) {
      throw DataError("component loss " + std::to_string(i) + " is non-finite (" +
                      std::to_string(v) + ")");
    }
  }
  if (contrastive && !std::isfinite(tape.value(*contrastive)[0])) {
    throw DataError("contrastive loss is non-finite");
  }
  if (contrastive_multiplier < 0.0) {
    throw ConfigError("contrastive multiplier must be non-negative");
  }

  Var total;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    Var term = tape.mul(losses[i], tape.softplus(raw_weights[i]));
    total = i == 0 ? term : tape.add(total, term);
  }
  if (contrastive && contrastive_multiplier > 0.0) {
    Var cl = contrastive_multiplier == 1.0 ? *contrastive
                                           : tape.affine(*contrastive, contrastive_multiplier, 0.0);
    total = tape.add(total, cl);
  }
  return total;
}

Tensor joint_predict(const std::vector<Tensor>& scores, const std::vector<double>& weights) {
  if (scores.empty()) throw DataError("joint prediction needs at least one score vector");
  if (scores.size() != weights.size()) {
    throw DimensionError("joint prediction got " + std::to_string(scores.size()) +
                         " score vectors and " + std::to_string(weights.size()) + " weights");
  }
  double total_weight = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("decision weights must be non-negative");
    total_weight += w;
  }
  if (total_weight <= 0.0) throw ConfigError("decision weights sum to zero");
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (!scores[k].same_shape(scores[0])) {
      throw DimensionError("score vectors are misaligned: " + shape_str(scores[k].shape()) +
                           " vs " + shape_str(scores[0].shape()));
    }
  }
  Tensor out(scores[0].shape());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    double w = weights[k] / total_weight;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * scores[k][i];
  }
  return out;
}

QuerySet build_queries(const std::vector<Triple>& triples, std::size_t num_relations,
                       bool dedup) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  pairs.reserve(2 * triples.size());
  for (const Triple& t : triples) {
    pairs.emplace_back(t.head, t.rel);
    pairs.emplace_back(t.tail, t.rel + static_cast<std::uint32_t>(num_relations));
  }
  if (dedup) {
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  }
  QuerySet qs;
  qs.entities.reserve(pairs.size());
  qs.relctxs.reserve(pairs.size());
  for (auto [e, rc] : pairs) {
    qs.entities.push_back(e);
    qs.relctxs.push_back(rc);
  }
  return qs;
}

Tensor make_target_matrix(std::span<const std::uint32_t> entities,
                          std::span<const std::uint32_t> relctxs, const PairIndex& targets,
                          std::size_t num_entities, std::size_t num_relations) {
  if (entities.size() != relctxs.size() || entities.empty()) {
    throw DimensionError("target batch is misaligned or empty");
  }
  Tensor out({entities.size(), num_entities});
  for (std::size_t i = 0; i < entities.size(); ++i) {
    std::uint32_t rc = relctxs[i];
    const std::vector<std::uint32_t>* ids =
        rc < num_relations ? targets.tails(entities[i], rc)
                           : targets.heads(entities[i], rc - static_cast<std::uint32_t>(
                                                                 num_relations));
    if (!ids || ids->empty()) {
      throw DataError("query " + std::to_string(i) + " has no known answers in the index");
    }
    for (std::uint32_t id : *ids) out.at(i, id) = 1.0;
  }
  return out;
}

namespace {

void write_metric_line(std::ofstream& out, std::size_t epoch, const char* split,
                       const DirectionMetrics* m, double loss) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["MR"] = m ? nlohmann::json(m->mr) : nlohmann::json();
  j["MRR"] = m ? nlohmann::json(m->mrr) : nlohmann::json();
  j["H@1"] = m ? nlohmann::json(m->hits1) : nlohmann::json();
  j["H@10"] = m ? nlohmann::json(m->hits10) : nlohmann::json();
  j["loss"] = std::isfinite(loss) ? nlohmann::json(loss) : nlohmann::json();
  out << j.dump() << "\n";
}

}  // namespace

TrainResult train(ImfModel& model, const TripleStore& triples, const TrainConfig& cfg) {
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (triples.train.empty()) throw DataError("training split is empty");

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    metrics.open(cfg.metrics_path);
    if (!metrics) throw DataError("cannot write metrics log: " + cfg.metrics_path);
  }

  PairIndex targets = build_targets(triples.train);
  PairIndex filter = build_filter(triples);
  QuerySet queries = build_queries(triples.train, model.num_relations(), cfg.dedup_queries);
  std::size_t n = queries.entities.size();

  AdamOptimizer opt(cfg.lr);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  res.best = model.checkpoint();
  Checkpoint last_good = res.best;
  double best_mrr = -1.0;
  std::size_t since_best = 0;
  bool do_eval = cfg.eval_every > 0 && !triples.valid.empty();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch) {
      std::size_t stop = std::min(n, start + cfg.batch);
      std::vector<std::uint32_t> ents, rcs;
      ents.reserve(stop - start);
      rcs.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        ents.push_back(queries.entities[order[i]]);
        rcs.push_back(queries.relctxs[order[i]]);
      }
      Tensor batch_targets =
          make_target_matrix(ents, rcs, targets, model.num_entities(), model.num_relations());

      Tape tape;
      ImfModel::BatchGraph g = model.batch_loss(tape, ents, rcs, batch_targets);
      bool finite = true;
      for (Var l : g.losses) finite = finite && std::isfinite(tape.value(l)[0]);
      if (g.contrastive) finite = finite && std::isfinite(tape.value(*g.contrastive)[0]);
      if (!finite) {
        res.aborted = true;
        if (metrics.is_open()) {
          write_metric_line(metrics, epoch, "train", nullptr,
                            std::numeric_limits<double>::quiet_NaN());
        }
        res.best = best_mrr >= 0.0 ? res.best : last_good;
        return res;
      }

      Var joint = joint_loss(tape, g.losses, g.raw_weights, g.contrastive,
                             model.config().contrastive_multiplier);
      loss_sum += tape.value(joint)[0];
      ++batches;
      tape.backward(joint);
      for (const auto& [name, leaf] : g.leaves) {
        opt.update(name, model.params().at(name), tape.grad(leaf));
      }
    }

    double epoch_loss = loss_sum / static_cast<double>(batches);
    res.epochs.push_back({epoch, epoch_loss});
    if (metrics.is_open()) write_metric_line(metrics, epoch, "train", nullptr, epoch_loss);
    last_good = model.checkpoint();

    if (do_eval && (epoch + 1) % cfg.eval_every == 0) {
      ImfModel::ScoringSnapshot snap = model.snapshot();
      ScoreFn fn = [&snap](std::uint32_t e, std::uint32_t rc) {
        return joint_predict(snap.modality_query(e, rc), snap.weights);
      };
      MetricsReport rep = evaluate(fn, triples.valid, filter, model.num_entities(),
                                   model.num_relations(), cfg.seed);
      res.evaluated = true;
      if (metrics.is_open()) write_metric_line(metrics, epoch, "valid", &rep.both, epoch_loss);
      if (rep.both.mrr > best_mrr) {
        best_mrr = rep.both.mrr;
        res.best = last_good;
        res.best_mrr = best_mrr;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        return res;
      }
    }
  }
  if (!res.evaluated) {
    res.best = model.checkpoint();
  }
  return res;
}

}  // namespace imf
