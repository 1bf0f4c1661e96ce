#include "ensembits/model.hpp"

#include "ensembits/error.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace ensembits::nn {

void ModelConfig::validate() const {
  if (input_dim == 0 || hidden == 0 || queries == 0 || latent == 0 || decoder_hidden == 0 || slots == 0)
    throw Error("model config: all sizes must be positive");
  if (heads == 0 || hidden % heads != 0) throw Error("model config: hidden width must be divisible by heads");
}

namespace {

template <class Params, class Fn>
void visit(Params& p, Fn&& fn) {
  auto lin = [&](const std::string& name, auto& l) {
    fn(name + ".weight", l.weight);
    fn(name + ".bias", l.bias);
  };
  auto att = [&](const std::string& name, auto& a) {
    lin(name + ".q", a.q);
    lin(name + ".k", a.k);
    lin(name + ".v", a.v);
    lin(name + ".o", a.o);
  };
  auto& e = p.encoder;
  lin("encoder.embed1", e.embed1);
  lin("encoder.embed2", e.embed2);
  fn("encoder.queries", e.queries);
  att("encoder.cross", e.cross);
  for (std::size_t i = 0; i < e.blocks.size(); ++i) {
    const std::string b = "encoder.block" + std::to_string(i);
    att(b + ".attn", e.blocks[i].attn);
    lin(b + ".ff1", e.blocks[i].ff1);
    lin(b + ".ff2", e.blocks[i].ff2);
  }
  lin("encoder.project", e.project);
  lin("decoder.l1", p.decoder.l1);
  lin("decoder.l2", p.decoder.l2);
  lin("decoder.l3", p.decoder.l3);
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(in)));
  Linear l;
  l.weight = Matrix(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = normal(rng);
  l.bias = Matrix::Zero(1, static_cast<Eigen::Index>(out));
  return l;
}

Attention make_attention(std::size_t width, std::mt19937_64& rng) {
  Attention a;
  a.q = make_linear(width, width, rng);
  a.k = make_linear(width, width, rng);
  a.v = make_linear(width, width, rng);
  a.o = make_linear(width, width, rng);
  return a;
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Matrix&)>& fn) { visit(*this, fn); }

void ModelParams::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit(*this, fn);
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  std::vector<const Matrix*> out;
  for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
  return out;
}

std::size_t ModelParams::encoder_tensor_count() const {
  std::size_t n = 0;
  for_each([&](const std::string& name, const Matrix&) { n += name.rfind("encoder.", 0) == 0; });
  return n;
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(config == o.config)) return false;
  const auto a = tensors();
  const auto b = o.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
  return true;
}

ModelParams init_params(std::uint64_t seed, const ModelConfig& c) {
  c.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = c;
  auto& e = p.encoder;
  e.embed1 = make_linear(c.input_dim, c.hidden, rng);
  e.embed2 = make_linear(c.hidden, c.hidden, rng);
  std::normal_distribution<double> unit(0.0, 1.0);
  e.queries = Matrix(static_cast<Eigen::Index>(c.queries), static_cast<Eigen::Index>(c.hidden));
  for (Eigen::Index i = 0; i < e.queries.size(); ++i) e.queries.data()[i] = unit(rng);
  e.cross = make_attention(c.hidden, rng);
  e.blocks.resize(c.blocks);
  for (auto& b : e.blocks) {
    b.attn = make_attention(c.hidden, rng);
    b.ff1 = make_linear(c.hidden, c.hidden, rng);
    b.ff2 = make_linear(c.hidden, c.hidden, rng);
  }
  e.project = make_linear(c.queries * c.hidden, c.latent, rng);
  p.decoder.l1 = make_linear(c.latent, c.decoder_hidden, rng);
  p.decoder.l2 = make_linear(c.decoder_hidden, c.decoder_hidden, rng);
  p.decoder.l3 = make_linear(c.decoder_hidden, c.slots * c.input_dim, rng);
  return p;
}

BoundModel::BoundModel(Tape& tape, const ModelParams& params) : tape_(tape), params_(params) {
  const auto ts = params.tensors();
  vars_.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) vars_.push_back(tape.parameter(*ts[i], static_cast<int>(i)));
  std::size_t at = 0;
  auto next = [&]() { return vars_.at(at++); };
  auto lin = [&]() { return L{next(), next()}; };
  embed1_ = lin();
  embed2_ = lin();
  queries_ = next();
  for (auto& l : cross_) l = lin();
  blocks_.resize(params.encoder.blocks.size());
  for (auto& b : blocks_)
    for (auto& l : b) l = lin();
  project_ = lin();
  for (auto& l : dec_) l = lin();
  cursor_ = at;
}

Var BoundModel::linear(Var x, const L& l) { return tape_.add_bias(tape_.matmul(x, l.w), l.b); }

Var BoundModel::attention(Var queries, Var keys_values, const Segments& qs, const Segments& kvs, const L* a) {
  const Var q = linear(queries, a[0]);
  const Var k = linear(keys_values, a[1]);
  const Var v = linear(keys_values, a[2]);
  const Var mixed = tape_.segment_attention(q, k, v, qs, kvs, params_.config.heads);
  return linear(mixed, a[3]);
}

Var BoundModel::encode(Var elements, const Segments& segments) {
  const auto& c = params_.config;
  if (segments.size() < 2) throw Error("encode: need at least one multiset");
  for (std::size_t b = 0; b + 1 < segments.size(); ++b)
    if (segments[b + 1] <= segments[b]) throw Error("encode: every multiset needs at least one element");
  if (!tape_.value(elements).allFinite()) throw Error("encode: non-finite descriptor input");
  const std::size_t items = segments.size() - 1;

  const Var h = linear(tape_.gelu(linear(elements, embed1_)), embed2_);
  Segments qs(items + 1);
  for (std::size_t b = 0; b <= items; ++b) qs[b] = b * c.queries;

  Var x = tape_.tile_rows(queries_, items);
  x = tape_.add(x, attention(x, h, qs, segments, cross_));
  for (auto& b : blocks_) {
    x = tape_.add(x, attention(x, x, qs, qs, b.data()));
    x = tape_.add(x, linear(tape_.gelu(linear(x, b[4])), b[5]));
  }
  const Var flat = tape_.reshape(x, items, c.queries * c.hidden);
  return linear(flat, project_);
}

Var BoundModel::decode(Var latent) {
  Var y = tape_.gelu(linear(latent, dec_[0]));
  y = tape_.gelu(linear(y, dec_[1]));
  return linear(y, dec_[2]);
}

Eigen::VectorXd encode_set(const ModelParams& params, const Matrix& descriptors) {
  if (descriptors.rows() < 1) throw Error("encode_set: empty multiset");
  Tape tape;
  BoundModel m(tape, params);
  const Segments seg{0, static_cast<std::size_t>(descriptors.rows())};
  const Var z = m.encode(tape.constant(descriptors), seg);
  return tape.value(z).row(0).transpose();
}

Matrix decode_multiset(const ModelParams& params, const Eigen::VectorXd& latent) {
  if (!latent.allFinite()) throw Error("decode_multiset: non-finite latent");
  Tape tape;
  BoundModel m(tape, params);
  const Var y = m.decode(tape.constant(Matrix(latent.transpose())));
  Matrix out = tape.value(y);
  return Eigen::Map<const Matrix>(out.data(), static_cast<Eigen::Index>(params.config.slots),
                                  static_cast<Eigen::Index>(params.config.input_dim));
}

}  // namespace ensembits::nn
