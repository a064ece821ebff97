#pragma once

// Experiment configuration: JSON round-trip, a stable content hash, and the
// named presets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metaxl/bilevel.hpp"
#include "metaxl/data.hpp"
#include "metaxl/encoder.hpp"

namespace metaxl {

// Corpus files for a run that does not use the synthetic generator. Token
// labeling reads CoNLL, sequence classification reads TSV.
struct DataFiles {
  std::string source;
  std::string target_train;
  std::string target_dev;
  std::string target_test;
  std::vector<std::string> tag_inventory = default_tag_inventory();
};

struct ExperimentConfig {
  std::string name = "custom";
  EncoderConfig encoder;
  TrainConfig train;
  // Exactly one of the two. For synthetic data, run seed s generates its
  // corpora with spec seed synthetic->seed + s.
  std::optional<SyntheticTaskSpec> synthetic = SyntheticTaskSpec{};
  std::optional<DataFiles> files;
  std::vector<std::uint64_t> seeds{0};
  std::vector<Method> methods{Method::jt, Method::metaxl};
  // Swept only for methods that use the RTN; empty means {train.beta} and
  // {train.placement}.
  std::vector<double> betas;
  std::vector<std::size_t> placements;
  // Examples per language in the representation dumps.
  std::size_t rep_examples = 200;
  // Not part of the hash.
  std::string output_dir;

  void validate() const;
};

std::string to_json(const ExperimentConfig& config);
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

std::string to_json(const EncoderConfig& config);
EncoderConfig parse_encoder_config(const std::string& text);
std::string to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec parse_task_spec(const std::string& text);

// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);
// Hash of the canonical (sorted-key) JSON without output_dir.
std::string config_hash(const ExperimentConfig& config);

std::vector<std::string> preset_names();
ExperimentConfig preset(std::string_view name);

// Data for one run seed.
struct RunData {
  Dataset source;
  Dataset target_train;
  Dataset target_dev;
  Dataset target_test;
  // Representation samples; parallel sentences for synthetic data.
  Dataset rep_source;
  Dataset rep_target;
};
RunData load_run_data(const ExperimentConfig& config, std::uint64_t seed);

}  // namespace metaxl
