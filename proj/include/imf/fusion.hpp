#pragma once

#include <array>
#include <vector>

#include "imf/tape.hpp"

namespace imf {

// Modality projection into the shared latent space: relu(rows * M).
// rows: [N x d_k], M: [d_k x D] -> [N x D].
Var project_latent(Tape& tape, Var rows, Var M);

// Decomposed bilinear pooling over three latent batches. Each latent block
// is pushed through its core factor and the results combine by element-wise
// product; this equals contracting the latents with the rank-D diagonal
// 4-mode core the factors span.
// latents: [N x D] each, factors: [D x D] each -> [N x D].
Var fuse_latents(Tape& tape, Var lat_s, Var lat_v, Var lat_t, Var core_s, Var core_v, Var core_t);

// Alignment loss over row-aligned latent batches of one or more modality
// pairs. For each pair (p, q) and each anchor row i, every row j of q acts
// as a shared negative:
//   sum_j [ d(p_i, q_i) - d(p_i, q_j) + 2 ],   d = negative cosine.
// The mean over anchors and pairs is returned; each bracket lies in [0, 4].
Var contrastive_pairs(Tape& tape, const std::vector<std::array<Var, 2>>& pairs);

// The fixed three-pair form over (s,v), (s,t), (v,t).
Var contrastive_loss(Tape& tape, Var lat_s, Var lat_v, Var lat_t);

}  // namespace imf
