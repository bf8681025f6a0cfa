#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imf/tape.hpp"

namespace imf {

enum class ScorerKind { kContextual, kTransE, kDistMult };

// Parses "contextual" / "transe" / "distmult"; throws ConfigError otherwise.
ScorerKind parse_scorer(const std::string& name);
const char* scorer_name(ScorerKind kind);

// Relation-conditioned transform. For each query row i:
//   out[i] = entities[i] * R_i + bias,  R_i = reshape(rel_table[rel_ids[i]] * W, [D, D]).
// entities: [B x D], rel_table: [R x d_r], W: [d_r x D*D], bias: [1 x D] -> [B x D].
// Rows sharing a relation are transformed as one block.
Var contextual_embed(Tape& tape, Var entities, const std::vector<std::uint32_t>& rel_ids,
                     Var rel_table, Var W, Var bias);

// sigmoid(cosine(queries, candidates)): [B x D], [E x D] -> [B x E], strictly in (0,1).
Var score_entities(Tape& tape, Var queries, Var candidates);

// Alternate relational models, as pre-sigmoid logits over all candidates.
// heads and rels are row-aligned [B x D]; candidates [E x D] -> [B x E].
Var transe_logits(Tape& tape, Var heads, Var rels, Var candidates);    // -|h + r - t|_1
Var distmult_logits(Tape& tape, Var heads, Var rels, Var candidates);  // (h . r) * t

// Binary cross-entropy against multi-hot targets, averaged over candidates
// and then over queries: -(1/E) sum_i [t_i log y_i + (1 - t_i) log(1 - y_i)].
// `scores` must lie strictly inside (0,1).
Var bce_from_scores(Tape& tape, Var scores, Var targets);

// Same objective from pre-sigmoid logits via softplus(x) - t*x, which stays
// finite for unbounded logits.
Var bce_from_logits(Tape& tape, Var logits, Var targets);

}  // namespace imf
