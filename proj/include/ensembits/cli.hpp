#pragma once

#include "ensembits/descriptors.hpp"
#include "ensembits/train.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ensembits::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// `key = value` lines; `#` starts a comment.
std::map<std::string, std::string> parse_config(const std::string& text);

/// Applies descriptor.*, model.* and train.* keys. Unknown keys throw.
void apply_config(const std::map<std::string, std::string>& kv, descriptors::DescriptorConfig& descriptor,
                  training::TrainConfig& train);

/// Runs one subcommand; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ensembits::cli
