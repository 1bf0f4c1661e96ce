#pragma once

#include "ensembits/descriptors.hpp"
#include "ensembits/model.hpp"
#include "ensembits/quantizer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ensembits::training {

inline constexpr const char* kCheckpointVersion = "ensembits-ckpt/1";

struct TrainingMeta {
  std::size_t epoch = 0;  // best epoch
  double val_loss = 0.0;  // validation reconstruction loss at that epoch
  std::uint64_t seed = 0;
  std::vector<double> val_history;  // per-epoch validation loss
  bool operator==(const TrainingMeta&) const = default;
};

/// Everything needed to tokenize new ensembles.
struct Checkpoint {
  std::string version = kCheckpointVersion;
  descriptors::DescriptorConfig descriptor;
  descriptors::Standardizer standardizer;
  nn::ModelParams model;
  quantizer::Codebooks codebooks;
  TrainingMeta meta;

  bool operator==(const Checkpoint&) const = default;
};

/// Text document: `format` line, `meta key value` lines, then `array name rows cols`
/// headers each followed by `rows` lines of hexadecimal floats, closed by `end`.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Shared helpers for the hexadecimal float encoding.
std::string format_hex(double v);
double parse_double(std::string_view token, int line);

}  // namespace ensembits::training
