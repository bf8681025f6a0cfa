#include "imf/scorer.hpp"

#include <map>

#include "imf/error.hpp"

namespace imf {

ScorerKind parse_scorer(const std::string& name) {
  if (name == "contextual") return ScorerKind::kContextual;
  if (name == "transe") return ScorerKind::kTransE;
  if (name == "distmult") return ScorerKind::kDistMult;
  throw ConfigError("unknown scorer '" + name + "' (expected contextual, transe or distmult)");
}

const char* scorer_name(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::kContextual: return "contextual";
    case ScorerKind::kTransE: return "transe";
    case ScorerKind::kDistMult: return "distmult";
  }
  throw ConfigError("unknown scorer kind");
}

Var contextual_embed(Tape& tape, Var entities, const std::vector<std::uint32_t>& rel_ids,
                     Var rel_table, Var W, Var bias) {
  const Tensor& ev = tape.value(entities);
  const Tensor& rv = tape.value(rel_table);
  const Tensor& wv = tape.value(W);
  if (ev.rank() != 2 || rv.rank() != 2 || wv.rank() != 2) {
    throw DimensionError("contextual_embed expects rank-2 operands");
  }
  std::size_t b = ev.shape()[0];
  std::size_t d = ev.shape()[1];
  if (rel_ids.size() != b) {
    throw DimensionError("contextual_embed: " + std::to_string(rel_ids.size()) +
                         " relation ids for " + std::to_string(b) + " query rows");
  }
  if (wv.shape()[0] != rv.shape()[1] || wv.shape()[1] != d * d) {
    throw DimensionError("contextual transform is " + shape_str(wv.shape()) + ", expected [" +
                         std::to_string(rv.shape()[1]) + "x" + std::to_string(d * d) + "]");
  }

  // One transform matrix per distinct relation; rows sharing it are gathered,
  // mapped as a block, and scattered back into batch order.
  std::map<std::uint32_t, std::vector<std::uint32_t>> groups;
  for (std::size_t i = 0; i < b; ++i) {
    if (rel_ids[i] >= rv.shape()[0]) {
      throw VocabError("relation context id " + std::to_string(rel_ids[i]) +
                       " out of range (table has " + std::to_string(rv.shape()[0]) + " rows)");
    }
    groups[rel_ids[i]].push_back(static_cast<std::uint32_t>(i));
  }

  std::vector<Var> blocks;
  std::vector<std::uint32_t> unperm(b);
  std::uint32_t pos = 0;
  for (const auto& [rid, rows] : groups) {
    Var rel_row = tape.gather_rows(rel_table, {rid});
    Var wr = tape.reshape(tape.matmul(rel_row, W), {d, d});
    Var block = tape.matmul(tape.gather_rows(entities, rows), wr);
    blocks.push_back(block);
    for (std::uint32_t r : rows) unperm[r] = pos++;
  }
  Var stacked = blocks.size() == 1 ? blocks[0] : tape.concat_rows(blocks);
  Var ordered = groups.size() == 1 ? stacked : tape.gather_rows(stacked, unperm);
  return tape.add(ordered, bias);
}

Var score_entities(Tape& tape, Var queries, Var candidates) {
  return tape.sigmoid(tape.cosine_matrix(queries, candidates));
}

Var transe_logits(Tape& tape, Var heads, Var rels, Var candidates) {
  return tape.neg(tape.l1_distance_matrix(tape.add(heads, rels), candidates));
}

Var distmult_logits(Tape& tape, Var heads, Var rels, Var candidates) {
  return tape.matmul_nt(tape.mul(heads, rels), candidates);
}

namespace {

void check_bce_shapes(Tape& tape, Var a, Var b, const char* what) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (!av.same_shape(bv)) {
    throw DimensionError(std::string(what) + " " + shape_str(av.shape()) + " and targets " +
                         shape_str(bv.shape()) + " differ in shape");
  }
}

}  // namespace

Var bce_from_scores(Tape& tape, Var scores, Var targets) {
  check_bce_shapes(tape, scores, targets, "scores");
  Var pos = tape.mul(targets, tape.log(scores));
  Var neg = tape.mul(tape.affine(targets, -1.0, 1.0), tape.log(tape.affine(scores, -1.0, 1.0)));
  return tape.neg(tape.mean_all(tape.add(pos, neg)));
}

Var bce_from_logits(Tape& tape, Var logits, Var targets) {
  check_bce_shapes(tape, logits, targets, "logits");
  return tape.mean_all(tape.sub(tape.softplus(logits), tape.mul(targets, logits)));
}

}  // namespace imf
