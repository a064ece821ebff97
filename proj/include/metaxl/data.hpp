#pragma once

// Labeled corpora: a synthetic source/target pair generator with a
// controllable vocabulary shift, CoNLL and TSV loaders/writers, and batching.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metaxl/encoder.hpp"
#include "metaxl/rng.hpp"

namespace metaxl {

// One sentence. For token labeling, `words` are the surface words and
// `labels` one tag index per word. For sequence classification `words` holds
// the whole text as a single entry and `labels` the class.
struct Example {
  std::vector<std::string> words;
  std::vector<int> labels;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  TaskKind task = TaskKind::token_labeling;
  Role role = Role::target;
  std::vector<std::string> label_names;
  std::vector<Example> examples;
  std::size_t bio_repairs = 0;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

// O, B-PER, I-PER, B-LOC, I-LOC, B-ORG, I-ORG.
std::vector<std::string> default_tag_inventory();
// O plus B-/I- pairs for the first `n_types` entity types.
std::vector<std::string> bio_inventory(std::size_t n_types);

// ---------------------------------------------------------------------------
// Encoding and batching.
// ---------------------------------------------------------------------------

// Byte-tokenized example: [CLS] + bytes + [SEP], truncated to max_len. Token
// labels sit on each word's first byte; other positions get ignore_label.
struct Encoded {
  std::vector<int> token_ids;
  std::vector<int> labels;  // per position (token labeling) or one entry
};

Encoded encode(const Example& example, TaskKind task, std::size_t max_len);

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t max_len);

// Endless index stream over a dataset, reshuffled at every epoch boundary.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Synthetic pairs.
// ---------------------------------------------------------------------------

struct SyntheticSizes {
  std::size_t source_n = 5000;
  std::size_t target_train_n = 100;
  std::size_t target_dev_n = 200;
  std::size_t target_test_n = 500;
};

struct SyntheticTaskSpec {
  TaskKind task_kind = TaskKind::token_labeling;
  int vocab_low = 33;  // inclusive usable byte range
  int vocab_high = 126;
  std::size_t n_labels = 5;
  std::size_t seq_len_min = 8;  // words per sentence
  std::size_t seq_len_max = 20;
  double entity_rate = 0.25;
  double sentiment_token_rate = 0.3;
  double shift = 0.5;
  SyntheticSizes sizes;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return static_cast<std::size_t>(vocab_high - vocab_low + 1); }
  void validate() const;
};

// Byte -> byte map for the target language over all 256 values; identity
// outside the remapped subset.
struct VocabMapping {
  int vocab_low = 0;
  int vocab_high = 255;
  std::vector<int> table;  // size 256
  std::size_t remapped = 0;

  // Fraction of usable byte values that keep their surface form.
  double overlap() const;
};

struct SyntheticPair {
  Dataset source;
  Dataset target_train;
  Dataset target_dev;
  Dataset target_test;
  VocabMapping mapping;
};

// Latent sentences are label-bearing byte patterns; the source writes them
// with the identity map and the target through `mapping`.
SyntheticPair generate_pair(const SyntheticTaskSpec& spec);

VocabMapping make_vocab_mapping(const SyntheticTaskSpec& spec);

// Sampler behind generate_pair, exposed so one latent stream can be
// surfaced through different maps.
Dataset generate_examples(const SyntheticTaskSpec& spec, std::size_t n, std::uint64_t stream,
                          const VocabMapping& mapping, Role role);

// Two-class sequence task whose classes use disjoint byte ranges: class 0
// texts draw from 'a'..'m', class 1 from 'n'..'z'. Classes alternate.
Dataset separable_classification(std::size_t n, std::uint64_t seed, std::size_t min_len = 4,
                                 std::size_t max_len = 12);

// ---------------------------------------------------------------------------
// Files.
// ---------------------------------------------------------------------------

// `token<TAB>tag` per line, blank line between sentences. Tags outside
// `inventory` are a ContractError; an I- tag that does not continue a span
// of the same type is repaired to B- and counted.
Dataset load_token_labeled(const std::filesystem::path& path,
                           const std::vector<std::string>& inventory = default_tag_inventory());
Dataset parse_token_labeled(const std::string& text,
                            const std::vector<std::string>& inventory = default_tag_inventory());

// `label<TAB>text` per line; the text keeps any further tabs.
Dataset load_sequence_labeled(const std::filesystem::path& path, std::size_t n_labels = 2);
Dataset parse_sequence_labeled(const std::string& text, std::size_t n_labels = 2);

std::string serialize_token_labeled(const Dataset& data);
std::string serialize_sequence_labeled(const Dataset& data);
std::string serialize(const Dataset& data);

void write_dataset(const Dataset& data, const std::filesystem::path& path);
std::string mapping_json(const VocabMapping& mapping, const SyntheticTaskSpec& spec);

// Writes source, target_train, target_dev and target_test files
// (.conll or .tsv) plus mapping.json into `dir`.
void export_pair(const SyntheticPair& pair, const SyntheticTaskSpec& spec,
                 const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace metaxl
