#include "imf/kg_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_set>

namespace imf {

namespace {

// Packs a triple into one key for duplicate detection. Entity and relation
// ids must stay below 2^21, far above any supported dataset.
std::uint64_t pack(const Triple& t) {
  return (static_cast<std::uint64_t>(t.head) << 42) | (static_cast<std::uint64_t>(t.rel) << 21) |
         t.tail;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::uint32_t Vocab::add_entity(const std::string& name) {
  auto it = ent_ids_.find(name);
  if (it != ent_ids_.end()) return it->second;
  std::uint32_t id = static_cast<std::uint32_t>(ent_names_.size());
  ent_ids_.emplace(name, id);
  ent_names_.push_back(name);
  return id;
}

std::uint32_t Vocab::add_relation(const std::string& name) {
  auto it = rel_ids_.find(name);
  if (it != rel_ids_.end()) return it->second;
  std::uint32_t id = static_cast<std::uint32_t>(rel_names_.size());
  rel_ids_.emplace(name, id);
  rel_names_.push_back(name);
  return id;
}

std::uint32_t Vocab::entity_id(const std::string& name) const {
  auto it = ent_ids_.find(name);
  if (it == ent_ids_.end()) throw VocabError("unknown entity: " + name);
  return it->second;
}

std::uint32_t Vocab::relation_id(const std::string& name) const {
  auto it = rel_ids_.find(name);
  if (it == rel_ids_.end()) throw VocabError("unknown relation: " + name);
  return it->second;
}

std::vector<Triple> load_triples(const std::string& path, Vocab& vocab, VocabMode mode) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file: " + path);

  std::vector<Triple> out;
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    std::string h = line.substr(0, t1);
    std::string r = line.substr(t1 + 1, t2 - t1 - 1);
    std::string t = line.substr(t2 + 1);
    if (h.empty() || r.empty() || t.empty()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty field");
    }

    Triple trip;
    if (mode == VocabMode::kBuild) {
      trip = {vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)};
    } else {
      trip = {vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)};
    }
    if (seen.insert(pack(trip)).second) out.push_back(trip);
  }
  return out;
}

void save_triples(const std::string& path, const std::vector<Triple>& triples, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write triple file: " + path);
  for (const Triple& t : triples) {
    out << vocab.entity_name(t.head) << '\t' << vocab.relation_name(t.rel) << '\t'
        << vocab.entity_name(t.tail) << '\n';
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.triples.train = load_triples((fs::path(dir) / "train.txt").string(), ds.vocab, VocabMode::kBuild);
  fs::path valid = fs::path(dir) / "valid.txt";
  fs::path test = fs::path(dir) / "test.txt";
  if (fs::exists(valid)) ds.triples.valid = load_triples(valid.string(), ds.vocab, VocabMode::kReuse);
  if (fs::exists(test)) ds.triples.test = load_triples(test.string(), ds.vocab, VocabMode::kReuse);
  return ds;
}

TripleStore split_triples(std::vector<Triple> all, double train_frac, double valid_frac,
                          std::mt19937_64& rng) {
  if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac >= 1.0) {
    throw ConfigError("split fractions must satisfy 0 < train, 0 <= valid, train+valid < 1");
  }
  std::shuffle(all.begin(), all.end(), rng);
  std::size_t n = all.size();
  std::size_t n_train = static_cast<std::size_t>(n * train_frac);
  std::size_t n_valid = static_cast<std::size_t>(n * valid_frac);
  TripleStore out;
  out.train.assign(all.begin(), all.begin() + n_train);
  out.valid.assign(all.begin() + n_train, all.begin() + n_train + n_valid);
  out.test.assign(all.begin() + n_train + n_valid, all.end());
  return out;
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kStructural: return "structural";
    case Modality::kVisual: return "visual";
    case Modality::kTextual: return "textual";
    default: return "fused";
  }
}

namespace {

Tensor load_features_csv(const std::string& path) {
  std::ifstream in(path);
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0, cols = 0, rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    std::size_t row_cols = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      const char* comma = static_cast<const char*>(std::memchr(p, ',', end - p));
      const char* stop = comma ? comma : end;
      double v;
      auto [ptr, ec] = std::from_chars(p, stop, v);
      if (ec != std::errc() || ptr != stop) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad number");
      }
      values.push_back(v);
      ++row_cols;
      p = comma ? comma + 1 : end;
    }
    if (cols == 0) cols = row_cols;
    if (row_cols != cols) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                       " columns, got " + std::to_string(row_cols));
    }
    ++rows;
  }
  if (rows == 0) throw DataError("empty feature file: " + path);
  return Tensor({rows, cols}, std::move(values));
}

Tensor load_features_binary(std::ifstream& in, const std::string& path) {
  std::uint32_t version = 0, rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in || version != 1) {
    throw DataError(path + ": unsupported feature container version " + std::to_string(version));
  }
  if (rows == 0 || cols == 0) throw DataError(path + ": empty feature matrix");
  std::size_t count = static_cast<std::size_t>(rows) * cols;
  std::vector<float> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 4));
  if (!in) throw DataError(path + ": truncated feature data");
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(raw[i]);
  return out;
}

}  // namespace

ModalityFeatures load_features(const std::string& path, std::size_t num_entities, Modality modality) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  Tensor matrix;
  if (in && std::memcmp(magic, "MMFT", 4) == 0) {
    matrix = load_features_binary(in, path);
  } else {
    in.close();
    matrix = load_features_csv(path);
  }
  if (matrix.shape()[0] != num_entities) {
    throw DataError(path + ": feature rows " + std::to_string(matrix.shape()[0]) +
                    " != entity count " + std::to_string(num_entities));
  }
  std::size_t cols = matrix.shape()[1];
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    if (!std::isfinite(matrix[i])) {
      throw DataError(path + ": non-finite value at row " + std::to_string(i / cols));
    }
  }
  return ModalityFeatures{modality, std::move(matrix)};
}

void save_features(const std::string& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw DimensionError("save_features: matrix must be 2D");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file: " + path);
  std::uint32_t version = 1;
  std::uint32_t rows = static_cast<std::uint32_t>(matrix.shape()[0]);
  std::uint32_t cols = static_cast<std::uint32_t>(matrix.shape()[1]);
  out.write("MMFT", 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  std::vector<float> raw(matrix.size());
  for (std::size_t i = 0; i < matrix.size(); ++i) raw[i] = static_cast<float>(matrix[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

void save_manifest(const std::string& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  for (std::size_t i = 0; i < vocab.num_entities(); ++i) {
    out << vocab.entity_name(static_cast<std::uint32_t>(i)) << '\n';
  }
}

std::vector<std::string> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    names.push_back(line);
  }
  while (!names.empty() && names.back().empty()) names.pop_back();
  return names;
}

void PairIndex::insert(const Triple& t) {
  tail_buckets_[key(t.head, t.rel)].push_back(t.tail);
  head_buckets_[key(t.tail, t.rel)].push_back(t.head);
}

void PairIndex::finalize() {
  for (auto* buckets : {&tail_buckets_, &head_buckets_}) {
    for (auto& [k, v] : *buckets) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
}

const std::vector<std::uint32_t>* PairIndex::tails(std::uint32_t head, std::uint32_t rel) const {
  auto it = tail_buckets_.find(key(head, rel));
  return it == tail_buckets_.end() ? nullptr : &it->second;
}

const std::vector<std::uint32_t>* PairIndex::heads(std::uint32_t tail, std::uint32_t rel) const {
  auto it = head_buckets_.find(key(tail, rel));
  return it == head_buckets_.end() ? nullptr : &it->second;
}

PairIndex build_targets(const std::vector<Triple>& train) {
  PairIndex idx;
  for (const Triple& t : train) idx.insert(t);
  idx.finalize();
  return idx;
}

PairIndex build_filter(const TripleStore& store) {
  PairIndex idx;
  for (const auto* split : {&store.train, &store.valid, &store.test}) {
    for (const Triple& t : *split) idx.insert(t);
  }
  idx.finalize();
  return idx;
}

std::vector<Triple> corrupt_triples(const std::vector<Triple>& batch, std::size_t num_entities,
                                    std::mt19937_64& rng) {
  if (num_entities < 2) throw DataError("corrupt_triples: need at least 2 entities");
  std::uniform_int_distribution<int> side(0, 1);
  std::uniform_int_distribution<std::uint32_t> entity(0, static_cast<std::uint32_t>(num_entities - 2));
  std::vector<Triple> out;
  out.reserve(batch.size());
  for (const Triple& t : batch) {
    Triple neg = t;
    std::uint32_t& slot = side(rng) == 0 ? neg.head : neg.tail;
    std::uint32_t draw = entity(rng);
    // Uniform over all entities except the original.
    slot = draw >= slot ? draw + 1 : draw;
    out.push_back(neg);
  }
  return out;
}

}  // namespace imf
