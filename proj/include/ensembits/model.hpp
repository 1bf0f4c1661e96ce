#pragma once

#include "ensembits/tape.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ensembits::nn {

/// Architecture sizes. Defaults are the production tokenizer's.
struct ModelConfig {
  std::size_t input_dim = 192;  // D_f
  std::size_t hidden = 256;
  std::size_t queries = 8;
  std::size_t heads = 4;
  std::size_t blocks = 4;
  std::size_t latent = 128;  // d_z
  std::size_t decoder_hidden = 256;
  std::size_t slots = 10;  // P_max

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

struct Attention {
  Linear q, k, v, o;
};

struct SelfBlock {
  Attention attn;
  Linear ff1, ff2;
};

struct EncoderParams {
  Linear embed1, embed2;  // per-element MLP
  Matrix queries;         // n_q x hidden
  Attention cross;
  std::vector<SelfBlock> blocks;
  Linear project;  // n_q*hidden -> latent
};

struct DecoderParams {
  Linear l1, l2, l3;  // latent -> h -> h -> slots*D_f
};

struct ModelParams {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;

  /// Visits every weight matrix in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  /// Number of tensors belonging to the encoder (they come first in visit order).
  std::size_t encoder_tensor_count() const;
  std::size_t scalar_count() const;

  bool operator==(const ModelParams& o) const;
};

/// Deterministic init: weights ~ N(0, 1/fan_in), zero biases, unit-scale queries.
ModelParams init_params(std::uint64_t seed, const ModelConfig& config);

/// Parameter leaves of one model on one tape; slot i is tensors()[i].
class BoundModel {
 public:
  BoundModel(Tape& tape, const ModelParams& params);

  /// Encodes a batch of descriptor multisets. Rows of `elements` are grouped
  /// by `segments`; returns a (items x latent) node.
  Var encode(Var elements, const Segments& segments);
  /// (items x slots*D_f) node.
  Var decode(Var latent);

  Tape& tape() { return tape_; }

 private:
  struct L {
    Var w, b;
  };
  Var linear(Var x, const L& l);
  Var attention(Var queries, Var keys_values, const Segments& qs, const Segments& kvs, const L* a);

  Tape& tape_;
  const ModelParams& params_;
  std::vector<Var> vars_;
  std::size_t cursor_ = 0;
  // Bound layers, in visit order.
  L embed1_, embed2_, cross_[4], project_, dec_[3];
  Var queries_;
  std::vector<std::array<L, 6>> blocks_;
};

/// Convenience: encode one multiset (P x D_f) to a latent vector.
Eigen::VectorXd encode_set(const ModelParams& params, const Matrix& descriptors);
/// Convenience: decode one latent to (slots x D_f).
Matrix decode_multiset(const ModelParams& params, const Eigen::VectorXd& latent);

}  // namespace ensembits::nn
