#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrm/model.hpp"
#include "ctrm/params.hpp"

namespace ctrm {

/// Training snapshot.
///
/// On disk: the 8-byte magic "CTRMCKPT", a little-endian u32 format version, a
/// u64 header length, a JSON header, then every tensor as raw little-endian
/// float64 in header order. The header lists names, groups, shapes and byte
/// offsets together with the step counter, the configuration and an FNV-1a
/// hash of the configuration.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ParameterSet params;
  ParameterSet adam_first_moment;
  ParameterSet adam_second_moment;
  std::uint64_t step = 0;
  ModelConfig model;
  std::vector<std::string> vocabulary;
  /// Trainer bookkeeping: ablation, stage progress, loss traces.
  nlohmann::json state = nlohmann::json::object();

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace ctrm
