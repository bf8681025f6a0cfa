#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "imf/error.hpp"
#include "imf/tensor.hpp"

namespace imf {

struct Triple {
  std::uint32_t head = 0, rel = 0, tail = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

// Dense string<->id maps for entities and relations. Ids are assigned in
// first-seen order, contiguous from 0.
class Vocab {
 public:
  std::uint32_t add_entity(const std::string& name);
  std::uint32_t add_relation(const std::string& name);

  bool has_entity(const std::string& name) const { return ent_ids_.count(name) > 0; }
  bool has_relation(const std::string& name) const { return rel_ids_.count(name) > 0; }

  // Throw VocabError when the name is unknown.
  std::uint32_t entity_id(const std::string& name) const;
  std::uint32_t relation_id(const std::string& name) const;

  const std::string& entity_name(std::uint32_t id) const { return ent_names_.at(id); }
  const std::string& relation_name(std::uint32_t id) const { return rel_names_.at(id); }

  std::size_t num_entities() const { return ent_names_.size(); }
  std::size_t num_relations() const { return rel_names_.size(); }

 private:
  std::unordered_map<std::string, std::uint32_t> ent_ids_, rel_ids_;
  std::vector<std::string> ent_names_, rel_names_;
};

struct TripleStore {
  std::vector<Triple> train, valid, test;
};

enum class VocabMode { kBuild, kReuse };

// One triple per line, head<TAB>relation<TAB>tail. Under kBuild unseen names
// extend the vocab; under kReuse they raise VocabError. Malformed lines raise
// ParseError with their 1-based line number. Duplicate triples are dropped.
std::vector<Triple> load_triples(const std::string& path, Vocab& vocab, VocabMode mode);

void save_triples(const std::string& path, const std::vector<Triple>& triples, const Vocab& vocab);

// Directory convention: train.txt builds the vocab, valid.txt and test.txt
// reuse it. Missing valid/test files yield empty splits.
struct Dataset {
  Vocab vocab;
  TripleStore triples;
};
Dataset load_dataset(const std::string& dir);

// Shuffles and slices one triple list into train/valid/test by fraction.
TripleStore split_triples(std::vector<Triple> all, double train_frac, double valid_frac,
                          std::mt19937_64& rng);

enum class Modality { kStructural, kVisual, kTextual, kFused };
const char* modality_name(Modality m);

struct ModalityFeatures {
  Modality modality = Modality::kStructural;
  Tensor matrix;  // num_entities x dim
  std::size_t dim() const { return matrix.rank() == 2 ? matrix.shape()[1] : 0; }
};

// Binary feature container: magic "MMFT", u32 version=1, u32 rows, u32 cols,
// rows*cols little-endian f32, row-major. Values are widened to f64 on load.
// Files without the magic are parsed as CSV, one entity per line.
ModalityFeatures load_features(const std::string& path, std::size_t num_entities, Modality modality);
void save_features(const std::string& path, const Tensor& matrix);

// Entity-order manifest: line i holds the name of entity id i.
void save_manifest(const std::string& path, const Vocab& vocab);
std::vector<std::string> load_manifest(const std::string& path);

// Buckets of completion candidates, both directions: tail buckets keyed by
// (head, relation), head buckets keyed by (tail, relation). Bucket contents
// are sorted and deduplicated.
class PairIndex {
 public:
  void insert(const Triple& t);
  void finalize();  // sort + dedupe every bucket

  // nullptr when the key was never seen
  const std::vector<std::uint32_t>* tails(std::uint32_t head, std::uint32_t rel) const;
  const std::vector<std::uint32_t>* heads(std::uint32_t tail, std::uint32_t rel) const;

  std::size_t num_tail_keys() const { return tail_buckets_.size(); }
  std::size_t num_head_keys() const { return head_buckets_.size(); }

 private:
  static std::uint64_t key(std::uint32_t e, std::uint32_t r) {
    return (static_cast<std::uint64_t>(e) << 32) | r;
  }
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> tail_buckets_, head_buckets_;
};

// Observed completions in the training split (the 1-vs-all target sets).
PairIndex build_targets(const std::vector<Triple>& train);

// Observed completions across train+valid+test (the evaluation filter).
PairIndex build_filter(const TripleStore& store);

// Per input triple, replaces the head or the tail (side chosen uniformly)
// with a uniformly random entity different from the original. Requires at
// least two entities. The result is not filtered against true triples.
std::vector<Triple> corrupt_triples(const std::vector<Triple>& batch, std::size_t num_entities,
                                    std::mt19937_64& rng);

}  // namespace imf
