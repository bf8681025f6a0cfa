#include "imf/fusion.hpp"

#include "imf/error.hpp"

namespace imf {

Var project_latent(Tape& tape, Var rows, Var M) {
  return tape.relu(tape.matmul(rows, M));
}

Var fuse_latents(Tape& tape, Var lat_s, Var lat_v, Var lat_t, Var core_s, Var core_v, Var core_t) {
  Var fs = tape.matmul(lat_s, core_s);
  Var fv = tape.matmul(lat_v, core_v);
  Var ft = tape.matmul(lat_t, core_t);
  return tape.mul(tape.mul(fs, fv), ft);
}

Var contrastive_pairs(Tape& tape, const std::vector<std::array<Var, 2>>& pairs) {
  if (pairs.empty()) throw DataError("contrastive loss: no modality pairs");
  std::size_t n = tape.value(pairs[0][0]).shape()[0];
  if (n == 0) throw DataError("contrastive loss: empty batch");

  // Per pair: sum_ij cos(p_i, q_j) - N * sum_i cos(p_i, q_i) + 2N^2, where
  // the anchor terms enter with flipped sign because d = -cosine. Dividing
  // by P*N^2 and folding the constant gives the mean over anchors.
  Var acc;
  bool first = true;
  for (const auto& [p, q] : pairs) {
    if (tape.value(p).shape()[0] != n || tape.value(q).shape()[0] != n) {
      throw DimensionError("contrastive loss: latent batches are not row-aligned");
    }
    Var all = tape.sum_all(tape.cosine_matrix(p, q));
    Var diag = tape.affine(tape.sum_all(tape.cosine_rows(p, q)), static_cast<double>(n), 0.0);
    Var term = tape.sub(all, diag);
    acc = first ? term : tape.add(acc, term);
    first = false;
  }
  double denom = static_cast<double>(pairs.size()) * static_cast<double>(n) * static_cast<double>(n);
  return tape.affine(acc, 1.0 / denom, 2.0);
}

Var contrastive_loss(Tape& tape, Var lat_s, Var lat_v, Var lat_t) {
  return contrastive_pairs(tape, {{lat_s, lat_v}, {lat_s, lat_t}, {lat_v, lat_t}});
}

}  // namespace imf
