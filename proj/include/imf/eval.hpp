#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "imf/kg_data.hpp"
#include "imf/tensor.hpp"

namespace imf {

// Rank of the true candidate under random placement inside its tie group:
//   rank = |{i : s_i > s_true}| + 1 + U,  U uniform over {0, ..., #ties}.
// Candidates listed in `filter` are removed from the comparison; the true
// id must not be among them.
std::uint32_t rank_one(const Tensor& scores, std::uint32_t true_id,
                       const std::vector<std::uint32_t>& filter, std::mt19937_64& rng);

struct DirectionMetrics {
  double mr = 0.0;
  double mrr = 0.0;
  double hits1 = 0.0;   // percentage
  double hits10 = 0.0;  // percentage
  std::size_t count = 0;
};

struct MetricsReport {
  DirectionMetrics head, tail, both;
};

// One ranked query, for per-query dumps.
struct RankRecord {
  Triple triple;
  bool head_query = false;  // true: predicting the head, false: the tail
  std::uint32_t rank = 0;
};

// Scores one query (entity, relation context) against all entities -> [|E|].
// Head queries use context r + |R|.
using ScoreFn = std::function<Tensor(std::uint32_t entity, std::uint32_t relctx)>;

// Filtered ranking over both directions of every triple in the split. The
// rng is split per query from the seed, so query order cannot change ranks.
MetricsReport evaluate(const ScoreFn& score, const std::vector<Triple>& split,
                       const PairIndex& filter, std::size_t num_entities,
                       std::size_t num_relations, std::uint64_t seed,
                       std::vector<RankRecord>* dump = nullptr);

std::string report_json(const MetricsReport& report);
std::string report_table(const MetricsReport& report);

}  // namespace imf
