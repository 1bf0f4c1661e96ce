#pragma once

#include "ensembits/checkpoint.hpp"
#include "ensembits/ensemble.hpp"

#include <span>
#include <string>
#include <vector>

namespace ensembits::training {

struct ResidueTokens {
  std::string protein_id;
  std::size_t residue = 0;
  quantizer::TokenRecord record;
  Eigen::VectorXd latent;
};

/// Encodes and quantizes every residue of `e` with a trained checkpoint.
std::vector<ResidueTokens> tokenize_ensemble(const Checkpoint& ckpt, const Ensemble& e, std::size_t chunk = 512);

/// Tab-separated: header, then one row per residue with every level's code and d_z.
std::string tokens_tsv(std::span<const ResidueTokens> rows);
/// Inverse of tokens_tsv; latents are left empty and quantized vectors unset.
std::vector<ResidueTokens> parse_tokens_tsv(const std::string& text);

}  // namespace ensembits::training
