#include "metaxl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace metaxl {

std::vector<std::string> default_tag_inventory() {
  return {"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"};
}

std::vector<std::string> bio_inventory(std::size_t n_types) {
  static const char* names[] = {"PER", "LOC", "ORG", "MISC", "DATE", "EVT", "PROD", "WORK"};
  std::vector<std::string> tags{"O"};
  for (std::size_t t = 0; t < n_types; ++t) {
    const std::string name = t < std::size(names) ? names[t] : "T" + std::to_string(t);
    tags.push_back("B-" + name);
    tags.push_back("I-" + name);
  }
  return tags;
}

// ---------------------------------------------------------------------------
// Encoding and batching
// ---------------------------------------------------------------------------

Encoded encode(const Example& example, TaskKind task, std::size_t max_len) {
  if (max_len < 2) throw ContractError("encode: max_len must be at least 2");
  Encoded out;
  out.token_ids.push_back(special::cls);
  out.labels.push_back(ignore_label);
  const std::size_t budget = max_len - 2;
  for (std::size_t w = 0; w < example.words.size(); ++w) {
    const std::string& word = example.words[w];
    for (std::size_t i = 0; i < word.size() && out.token_ids.size() - 1 < budget; ++i) {
      out.token_ids.push_back(static_cast<unsigned char>(word[i]));
      const bool first = i == 0 && task == TaskKind::token_labeling;
      out.labels.push_back(first ? example.labels.at(w) : ignore_label);
    }
  }
  out.token_ids.push_back(special::sep);
  out.labels.push_back(ignore_label);
  if (task == TaskKind::sequence_classification) out.labels = {example.labels.at(0)};
  return out;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t max_len) {
  if (indices.empty()) throw ContractError("make_batch: no examples selected");
  std::vector<Encoded> rows;
  rows.reserve(indices.size());
  std::size_t seq = 0;
  for (std::size_t i : indices) {
    rows.push_back(encode(data.examples.at(i), data.task, max_len));
    seq = std::max(seq, rows.back().token_ids.size());
  }
  Batch b;
  b.batch_size = rows.size();
  b.seq_len = seq;
  b.role = data.role;
  b.task = data.task;
  for (const Encoded& r : rows) {
    for (std::size_t j = 0; j < seq; ++j) {
      const bool real = j < r.token_ids.size();
      b.token_ids.push_back(real ? r.token_ids[j] : special::pad);
      b.attention_mask.push_back(real ? 1 : 0);
      if (data.task == TaskKind::token_labeling) b.labels.push_back(real ? r.labels[j] : ignore_label);
    }
    if (data.task == TaskKind::sequence_classification) b.labels.push_back(r.labels[0]);
  }
  return b;
}

BatchCycler::BatchCycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  if (n == 0) throw ContractError("empty dataset");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchCycler::reshuffle() { rng_.shuffle(std::span<std::size_t>(order_)); }

std::vector<std::size_t> BatchCycler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (pos_ == order_.size()) {
      pos_ = 0;
      ++epoch_;
      reshuffle();
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t triggers_per_type = 2;
constexpr std::size_t entities_per_type = 6;
constexpr std::size_t ambiguous_count = 6;
constexpr std::size_t sentiment_per_class = 8;
constexpr std::size_t min_filler = 10;

// Partition of the usable vocabulary into the roles the latent grammar uses.
struct Lexicon {
  std::vector<std::vector<int>> triggers;  // per entity type
  std::vector<std::vector<int>> entities;  // per entity type / per class
  std::vector<int> ambiguous;
  std::vector<int> filler;
};

std::size_t entity_types(const SyntheticTaskSpec& spec) { return (spec.n_labels - 1) / 2; }

std::size_t required_vocab(const SyntheticTaskSpec& spec) {
  if (spec.task_kind == TaskKind::token_labeling) {
    return entity_types(spec) * (triggers_per_type + entities_per_type) + ambiguous_count + min_filler;
  }
  return spec.n_labels * sentiment_per_class + min_filler;
}

Lexicon make_lexicon(const SyntheticTaskSpec& spec) {
  std::vector<int> vocab(spec.vocab_size());
  std::iota(vocab.begin(), vocab.end(), spec.vocab_low);
  Rng rng(stream_seed(spec.seed, 0));
  rng.shuffle(std::span<int>(vocab));
  auto take = [&, pos = std::size_t{0}](std::size_t n) mutable {
    std::vector<int> out(vocab.begin() + static_cast<std::ptrdiff_t>(pos),
                         vocab.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  };
  Lexicon lex;
  std::size_t used = 0;
  if (spec.task_kind == TaskKind::token_labeling) {
    for (std::size_t t = 0; t < entity_types(spec); ++t) {
      lex.triggers.push_back(take(triggers_per_type));
      lex.entities.push_back(take(entities_per_type));
    }
    lex.ambiguous = take(ambiguous_count);
    used = entity_types(spec) * (triggers_per_type + entities_per_type) + ambiguous_count;
  } else {
    for (std::size_t c = 0; c < spec.n_labels; ++c) lex.entities.push_back(take(sentiment_per_class));
    used = spec.n_labels * sentiment_per_class;
  }
  lex.filler.assign(vocab.begin() + static_cast<std::ptrdiff_t>(used), vocab.end());
  return lex;
}

int pick(Rng& rng, const std::vector<int>& from) { return from[rng.below(from.size())]; }

// Latent token-labeling sentence: words as latent byte values plus tags.
// A trigger word announces an entity of its type; the span that follows
// mixes type-specific words with ambiguous words, which are tagged O
// anywhere else.
void latent_token_sentence(const SyntheticTaskSpec& spec, const Lexicon& lex, Rng& rng,
                           std::vector<int>& words, std::vector<int>& tags) {
  const std::size_t len =
      spec.seq_len_min + rng.below(spec.seq_len_max - spec.seq_len_min + 1);
  const std::size_t types = entity_types(spec);
  while (words.size() < len) {
    const std::size_t room = len - words.size();
    if (room >= 2 && rng.bernoulli(spec.entity_rate)) {
      const std::size_t t = rng.below(types);
      words.push_back(pick(rng, lex.triggers[t]));
      tags.push_back(0);
      const std::size_t span = std::min<std::size_t>(1 + rng.below(3), room - 1);
      for (std::size_t k = 0; k < span; ++k) {
        words.push_back(rng.bernoulli(0.3) ? pick(rng, lex.ambiguous) : pick(rng, lex.entities[t]));
        tags.push_back(static_cast<int>(1 + 2 * t + (k == 0 ? 0 : 1)));
      }
    } else {
      words.push_back(rng.bernoulli(0.15) ? pick(rng, lex.ambiguous) : pick(rng, lex.filler));
      tags.push_back(0);
    }
  }
}

// Latent classification text: filler with sentiment words; the label is the
// class contributing the most sentiment words. Ties (or no sentiment words)
// are resolved by appending words of the drawn class.
void latent_sequence_text(const SyntheticTaskSpec& spec, const Lexicon& lex, Rng& rng,
                          std::vector<int>& words, int& label) {
  const std::size_t len =
      spec.seq_len_min + rng.below(spec.seq_len_max - spec.seq_len_min + 1);
  const std::size_t drawn = rng.below(spec.n_labels);
  std::vector<std::size_t> counts(spec.n_labels, 0);
  for (std::size_t i = 0; i < len; ++i) {
    if (rng.bernoulli(spec.sentiment_token_rate)) {
      const std::size_t c = rng.bernoulli(0.7) ? drawn : rng.below(spec.n_labels);
      words.push_back(pick(rng, lex.entities[c]));
      ++counts[c];
    } else {
      words.push_back(pick(rng, lex.filler));
    }
  }
  for (;;) {
    const auto top = std::max_element(counts.begin(), counts.end());
    if (*top > 0 && std::count(counts.begin(), counts.end(), *top) == 1) {
      label = static_cast<int>(top - counts.begin());
      return;
    }
    words.push_back(pick(rng, lex.entities[drawn]));
    ++counts[drawn];
  }
}

}  // namespace

void SyntheticTaskSpec::validate() const {
  if (vocab_low < 0 || vocab_high > 255 || vocab_low > vocab_high) {
    throw ContractError("synthetic spec: vocab range must lie within [0, 255]");
  }
  if (!(shift >= 0.0 && shift <= 1.0)) throw ContractError("synthetic spec: shift must be in [0, 1]");
  if (sizes.source_n == 0 || sizes.target_train_n == 0 || sizes.target_dev_n == 0 ||
      sizes.target_test_n == 0) {
    throw ContractError("synthetic spec: all split sizes must be > 0");
  }
  if (seq_len_min == 0 || seq_len_min > seq_len_max) {
    throw ContractError("synthetic spec: need 0 < seq_len_min <= seq_len_max");
  }
  if (task_kind == TaskKind::token_labeling) {
    if (n_labels < 3 || n_labels % 2 == 0) {
      throw ContractError("synthetic spec: token labeling needs an odd n_labels >= 3 (O plus B/I pairs)");
    }
    if (seq_len_min < 2) throw ContractError("synthetic spec: token labeling needs seq_len_min >= 2");
  } else if (n_labels < 2) {
    throw ContractError("synthetic spec: n_labels must be >= 2");
  }
  if (!(entity_rate >= 0.0 && entity_rate <= 1.0) ||
      !(sentiment_token_rate >= 0.0 && sentiment_token_rate <= 1.0)) {
    throw ContractError("synthetic spec: rates must be probabilities");
  }
  if (vocab_size() < required_vocab(*this)) {
    throw ContractError("synthetic spec: usable vocabulary of " + std::to_string(vocab_size()) +
                        " byte values is too small for " + std::to_string(n_labels) +
                        " labels (need " + std::to_string(required_vocab(*this)) + ")");
  }
}

double VocabMapping::overlap() const {
  const std::size_t v = static_cast<std::size_t>(vocab_high - vocab_low + 1);
  return static_cast<double>(v - remapped) / static_cast<double>(v);
}

VocabMapping make_vocab_mapping(const SyntheticTaskSpec& spec) {
  spec.validate();
  VocabMapping m;
  m.vocab_low = spec.vocab_low;
  m.vocab_high = spec.vocab_high;
  m.table.resize(256);
  std::iota(m.table.begin(), m.table.end(), 0);
  const std::size_t v = spec.vocab_size();
  // Integer ceiling of shift * v; the epsilon absorbs representation error
  // in shifts such as 0.3.
  const auto count = static_cast<std::size_t>(std::ceil(spec.shift * static_cast<double>(v) - 1e-9));
  if (count == 0) return m;
  if (count == 1) {
    throw ContractError("synthetic spec: shift selects a single byte value, which cannot be "
                        "permuted without a fixed point; use shift 0 or at least 2/" +
                        std::to_string(v));
  }
  std::vector<int> subset(v);
  std::iota(subset.begin(), subset.end(), spec.vocab_low);
  Rng rng(stream_seed(spec.seed, 5));
  rng.shuffle(std::span<int>(subset));
  subset.resize(count);
  // Cyclic shift of a random ordering: a permutation of the subset with no
  // fixed points.
  for (std::size_t i = 0; i < count; ++i) {
    m.table[static_cast<std::size_t>(subset[i])] = subset[(i + 1) % count];
  }
  m.remapped = count;
  return m;
}

Dataset generate_examples(const SyntheticTaskSpec& spec, std::size_t n, std::uint64_t stream,
                          const VocabMapping& mapping, Role role) {
  spec.validate();
  const Lexicon lex = make_lexicon(spec);
  Rng rng(stream_seed(spec.seed, stream));
  Dataset d;
  d.task = spec.task_kind;
  d.role = role;
  if (spec.task_kind == TaskKind::token_labeling) {
    d.label_names = bio_inventory(entity_types(spec));
  } else {
    for (std::size_t c = 0; c < spec.n_labels; ++c) d.label_names.push_back(std::to_string(c));
  }
  d.examples.reserve(n);
  auto surface = [&](int latent) {
    return static_cast<char>(static_cast<unsigned char>(mapping.table[static_cast<std::size_t>(latent)]));
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> words;
    Example ex;
    if (spec.task_kind == TaskKind::token_labeling) {
      latent_token_sentence(spec, lex, rng, words, ex.labels);
      for (int w : words) ex.words.emplace_back(1, surface(w));
    } else {
      int label = 0;
      latent_sequence_text(spec, lex, rng, words, label);
      std::string text;
      for (int w : words) text.push_back(surface(w));
      ex.words = {text};
      ex.labels = {label};
    }
    d.examples.push_back(std::move(ex));
  }
  return d;
}

SyntheticPair generate_pair(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticPair p;
  p.mapping = make_vocab_mapping(spec);
  VocabMapping identity = p.mapping;
  std::iota(identity.table.begin(), identity.table.end(), 0);
  identity.remapped = 0;
  p.source = generate_examples(spec, spec.sizes.source_n, 1, identity, Role::source);
  p.target_train = generate_examples(spec, spec.sizes.target_train_n, 2, p.mapping, Role::target);
  p.target_dev = generate_examples(spec, spec.sizes.target_dev_n, 3, p.mapping, Role::target);
  p.target_test = generate_examples(spec, spec.sizes.target_test_n, 4, p.mapping, Role::target);
  return p;
}

Dataset separable_classification(std::size_t n, std::uint64_t seed, std::size_t min_len,
                                 std::size_t max_len) {
  if (n == 0) throw ContractError("separable_classification: n must be > 0");
  if (min_len == 0 || min_len > max_len) {
    throw ContractError("separable_classification: need 0 < min_len <= max_len");
  }
  Rng rng(stream_seed(seed, 7));
  Dataset d;
  d.task = TaskKind::sequence_classification;
  d.role = Role::target;
  d.label_names = {"0", "1"};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const char low = label == 0 ? 'a' : 'n';
    std::string text(min_len + rng.below(max_len - min_len + 1), ' ');
    for (char& c : text) c = static_cast<char>(low + static_cast<int>(rng.below(13)));
    d.examples.push_back({{text}, {label}});
  }
  return d;
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) {
    if (cur.back() == '\r') cur.pop_back();
    lines.push_back(std::move(cur));
  }
  return lines;
}

std::string join_inventory(const std::vector<std::string>& inventory) {
  std::string s;
  for (const auto& t : inventory) s += (s.empty() ? "" : ", ") + t;
  return s;
}

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t") == std::string::npos;
}

}  // namespace

Dataset parse_token_labeled(const std::string& text, const std::vector<std::string>& inventory) {
  Dataset d;
  d.task = TaskKind::token_labeling;
  d.label_names = inventory;
  auto index_of = [&](const std::string& tag) {
    auto it = std::find(inventory.begin(), inventory.end(), tag);
    if (it == inventory.end()) {
      throw ContractError("unknown tag '" + tag + "' (inventory: " + join_inventory(inventory) + ")");
    }
    return static_cast<int>(it - inventory.begin());
  };
  Example cur;
  std::string prev = "O";
  auto flush = [&] {
    if (!cur.words.empty()) d.examples.push_back(std::move(cur));
    cur = Example{};
    prev = "O";
  };
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    const std::size_t line_no = i + 1;
    if (is_blank(line)) {
      flush();
      continue;
    }
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected token<TAB>tag", line_no);
    if (line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError("expected exactly two tab-separated fields", line_no);
    }
    std::string word = line.substr(0, tab);
    std::string tag = line.substr(tab + 1);
    if (word.empty()) throw ParseError("empty token", line_no);
    if (tag.empty()) throw ParseError("empty tag", line_no);
    index_of(tag);
    if (tag.rfind("I-", 0) == 0) {
      const std::string type = tag.substr(2);
      if (prev != "B-" + type && prev != "I-" + type) {
        tag = "B-" + type;
        ++d.bio_repairs;
      }
    }
    cur.words.push_back(std::move(word));
    cur.labels.push_back(index_of(tag));
    prev = tag;
  }
  flush();
  if (d.examples.empty()) throw ContractError("empty dataset");
  return d;
}

Dataset parse_sequence_labeled(const std::string& text, std::size_t n_labels) {
  Dataset d;
  d.task = TaskKind::sequence_classification;
  for (std::size_t c = 0; c < n_labels; ++c) d.label_names.push_back(std::to_string(c));
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected label<TAB>text", i + 1);
    const std::string label = line.substr(0, tab);
    if (label.empty() || label.find_first_not_of("0123456789") != std::string::npos ||
        label.size() > 9) {
      throw ParseError("label '" + label + "' is not a non-negative integer", i + 1);
    }
    const int value = std::stoi(label);
    if (static_cast<std::size_t>(value) >= n_labels) {
      throw ParseError("label " + label + " outside [0, " + std::to_string(n_labels) + ")", i + 1);
    }
    d.examples.push_back(Example{{line.substr(tab + 1)}, {value}});
  }
  if (d.examples.empty()) throw ContractError("empty dataset");
  return d;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Dataset load_token_labeled(const std::filesystem::path& path,
                           const std::vector<std::string>& inventory) {
  try {
    return parse_token_labeled(read_file(path), inventory);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

Dataset load_sequence_labeled(const std::filesystem::path& path, std::size_t n_labels) {
  try {
    return parse_sequence_labeled(read_file(path), n_labels);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.message(), e.line());
  }
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

std::string serialize_token_labeled(const Dataset& data) {
  std::string out;
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    if (i) out += '\n';
    const Example& ex = data.examples[i];
    for (std::size_t w = 0; w < ex.words.size(); ++w) {
      out += ex.words[w];
      out += '\t';
      out += data.label_names.at(static_cast<std::size_t>(ex.labels.at(w)));
      out += '\n';
    }
  }
  return out;
}

std::string serialize_sequence_labeled(const Dataset& data) {
  std::string out;
  for (const Example& ex : data.examples) {
    out += std::to_string(ex.labels.at(0));
    out += '\t';
    out += ex.words.at(0);
    out += '\n';
  }
  return out;
}

std::string serialize(const Dataset& data) {
  return data.task == TaskKind::token_labeling ? serialize_token_labeled(data)
                                               : serialize_sequence_labeled(data);
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_file(path, serialize(data));
}

std::string mapping_json(const VocabMapping& mapping, const SyntheticTaskSpec& spec) {
  nlohmann::ordered_json j;
  j["vocab_low"] = mapping.vocab_low;
  j["vocab_high"] = mapping.vocab_high;
  j["shift"] = spec.shift;
  j["seed"] = spec.seed;
  j["remapped"] = mapping.remapped;
  j["overlap"] = mapping.overlap();
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  for (int b = mapping.vocab_low; b <= mapping.vocab_high; ++b) {
    table.push_back({{"source", b}, {"target", mapping.table[static_cast<std::size_t>(b)]}});
  }
  j["table"] = std::move(table);
  return j.dump(2) + "\n";
}

void export_pair(const SyntheticPair& pair, const SyntheticTaskSpec& spec,
                 const std::filesystem::path& dir) {
  const std::string ext = spec.task_kind == TaskKind::token_labeling ? ".conll" : ".tsv";
  write_dataset(pair.source, dir / ("source" + ext));
  write_dataset(pair.target_train, dir / ("target_train" + ext));
  write_dataset(pair.target_dev, dir / ("target_dev" + ext));
  write_dataset(pair.target_test, dir / ("target_test" + ext));
  write_file(dir / "mapping.json", mapping_json(pair.mapping, spec));
}

}  // namespace metaxl
