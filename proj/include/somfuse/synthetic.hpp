#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "somfuse/schema.hpp"

namespace somfuse::synthetic {

struct SyntheticOptions {
  std::size_t count = 50;
  std::size_t clusters = 3;  ///< at most 3: cluster k draws every target from severity band k
  std::size_t queries = 10;  ///< held out, spread evenly over the list
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  std::vector<DisasterRecord> records;
  std::map<std::string, std::size_t> cluster;  ///< latent cluster per record id
};

/// Deterministic given the options. Query rows keep their targets as ground truth.
SyntheticDataset generate(const SyntheticOptions& options);

/// The degree every target of a cluster-k record falls into.
SeverityDegree cluster_degree(std::size_t cluster);

void write_labels_csv(const SyntheticDataset& data, const std::filesystem::path& path);

}  // namespace somfuse::synthetic
