#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kdar/graph.hpp"
#include "kdar/ingest.hpp"
#include "kdar/model.hpp"
#include "kdar/train.hpp"

namespace kdar {

struct DataConfig {
  std::filesystem::path dataset;       // processed-dataset directory
  std::filesystem::path interactions;  // raw inputs for `prepare`
  std::filesystem::path kg;
  InteractionFormat format = InteractionFormat::kPairList;
  double threshold = 4.0;
  Index core_k = 5;
  double split_ratio = 0.8;
  bool inverse_triplets = true;
};

// Everything one run needs. Serialized as sectioned key-value text:
//
//   [data]
//   dataset = data/last-fm
//   [model]
//   dim = 64
//   [train]
//   seed = 2024
//
// Unknown sections and keys are rejected.
struct RunConfig {
  DataConfig data;
  Hyperparameters model;
  AblationFlags ablation;
  TrainConfig train;
  std::filesystem::path output = "runs/kdar";

  // Throws ConfigError listing every invalid field.
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

std::vector<Index> parse_index_list(const std::string& text);
std::vector<double> parse_real_list(const std::string& text);

}  // namespace kdar
