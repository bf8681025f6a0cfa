#include "imf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "imf/error.hpp"
#include "json.hpp"

namespace imf {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint32_t rank_one(const Tensor& scores, std::uint32_t true_id,
                       const std::vector<std::uint32_t>& filter, std::mt19937_64& rng) {
  std::size_t n = scores.size();
  if (true_id >= n) {
    throw VocabError("true entity " + std::to_string(true_id) + " outside score vector of " +
                     std::to_string(n));
  }
  std::vector<char> removed(n, 0);
  for (std::uint32_t f : filter) {
    if (f == true_id) {
      throw LogicError("true entity " + std::to_string(true_id) + " is in the filter set");
    }
    if (f < n) removed[f] = 1;
  }
  double s_true = scores[true_id];
  if (!std::isfinite(s_true)) throw DataError("non-finite score for the true entity");
  std::uint32_t above = 0, ties = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == true_id || removed[i]) continue;
    double s = scores[i];
    if (!std::isfinite(s)) throw DataError("non-finite score at entity " + std::to_string(i));
    if (s > s_true) {
      ++above;
    } else if (s == s_true) {
      ++ties;
    }
  }
  std::uint32_t offset = ties == 0 ? 0 : std::uniform_int_distribution<std::uint32_t>(0, ties)(rng);
  return above + 1 + offset;
}

namespace {

struct Accumulator {
  double rank_sum = 0.0, rr_sum = 0.0;
  std::size_t hits1 = 0, hits10 = 0, count = 0;

  void add(std::uint32_t rank) {
    rank_sum += rank;
    rr_sum += 1.0 / rank;
    if (rank <= 1) ++hits1;
    if (rank <= 10) ++hits10;
    ++count;
  }

  DirectionMetrics metrics() const {
    DirectionMetrics m;
    m.count = count;
    if (count == 0) return m;
    m.mr = rank_sum / static_cast<double>(count);
    m.mrr = rr_sum / static_cast<double>(count);
    m.hits1 = 100.0 * static_cast<double>(hits1) / static_cast<double>(count);
    m.hits10 = 100.0 * static_cast<double>(hits10) / static_cast<double>(count);
    return m;
  }
};

// The filter lists every known positive including the query's own answer,
// which must stay in the candidate pool.
std::vector<std::uint32_t> without(const std::vector<std::uint32_t>* ids, std::uint32_t keep) {
  std::vector<std::uint32_t> out;
  if (!ids) return out;
  out.reserve(ids->size());
  for (std::uint32_t id : *ids) {
    if (id != keep) out.push_back(id);
  }
  return out;
}

}  // namespace

MetricsReport evaluate(const ScoreFn& score, const std::vector<Triple>& split,
                       const PairIndex& filter, std::size_t num_entities,
                       std::size_t num_relations, std::uint64_t seed,
                       std::vector<RankRecord>* dump) {
  if (split.empty()) throw DataError("cannot evaluate an empty split");
  Accumulator head_acc, tail_acc, both_acc;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const Triple& t = split[i];

    Tensor tail_scores = score(t.head, t.rel);
    if (tail_scores.size() != num_entities) {
      throw DimensionError("score vector has " + std::to_string(tail_scores.size()) +
                           " entries for " + std::to_string(num_entities) + " entities");
    }
    std::mt19937_64 tail_rng(splitmix64(seed ^ (2 * i)));
    std::uint32_t tr = rank_one(tail_scores, t.tail, without(filter.tails(t.head, t.rel), t.tail),
                                tail_rng);
    tail_acc.add(tr);
    both_acc.add(tr);
    if (dump) dump->push_back({t, false, tr});

    Tensor head_scores = score(t.tail, t.rel + static_cast<std::uint32_t>(num_relations));
    std::mt19937_64 head_rng(splitmix64(seed ^ (2 * i + 1)));
    std::uint32_t hr = rank_one(head_scores, t.head, without(filter.heads(t.tail, t.rel), t.head),
                                head_rng);
    head_acc.add(hr);
    both_acc.add(hr);
    if (dump) dump->push_back({t, true, hr});
  }
  return MetricsReport{head_acc.metrics(), tail_acc.metrics(), both_acc.metrics()};
}

namespace {

nlohmann::json direction_json(const DirectionMetrics& m) {
  return nlohmann::json{{"MR", m.mr}, {"MRR", m.mrr}, {"H@1", m.hits1}, {"H@10", m.hits10}};
}

}  // namespace

std::string report_json(const MetricsReport& report) {
  nlohmann::json j{{"head", direction_json(report.head)},
                   {"tail", direction_json(report.tail)},
                   {"both", direction_json(report.both)}};
  return j.dump(2);
}

std::string report_table(const MetricsReport& report) {
  std::ostringstream out;
  char line[96];
  std::snprintf(line, sizeof(line), "%-6s %10s %8s %8s %8s\n", "split", "MR", "MRR", "H@1",
                "H@10");
  out << line;
  auto row = [&](const char* name, const DirectionMetrics& m) {
    std::snprintf(line, sizeof(line), "%-6s %10.2f %8.4f %8.2f %8.2f\n", name, m.mr, m.mrr,
                  m.hits1, m.hits10);
    out << line;
  };
  row("head", report.head);
  row("tail", report.tail);
  row("both", report.both);
  return out.str();
}

}  // namespace imf
