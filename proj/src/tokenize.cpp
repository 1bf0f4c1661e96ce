#include "ensembits/tokenize.hpp"

#include "ensembits/error.hpp"
#include "ensembits/objective.hpp"
#include "ensembits/train.hpp"

#include <cstdio>
#include <sstream>

namespace ensembits::training {

std::vector<ResidueTokens> tokenize_ensemble(const Checkpoint& ckpt, const Ensemble& e, std::size_t chunk) {
  e.validate();
  if (e.frame_count() > ckpt.model.config.slots)
    throw Error("tokenize: protein '" + e.id + "' has " + std::to_string(e.frame_count()) +
                " frames; the checkpoint supports at most " + std::to_string(ckpt.model.config.slots));
  const std::vector<Ensemble> one{e};
  const auto sets = residue_multisets(one, ckpt.descriptor, ckpt.standardizer);
  if (!sets.empty() && std::size_t(sets.front().cols()) != ckpt.model.config.input_dim)
    throw Error("tokenize: descriptor width " + std::to_string(sets.front().cols()) +
                " does not match the checkpoint's " + std::to_string(ckpt.model.config.input_dim));
  std::vector<ResidueTokens> out;
  chunk = std::max<std::size_t>(chunk, 1);
  const std::span<const nn::Matrix> all(sets);
  for (std::size_t lo = 0; lo < sets.size(); lo += chunk) {
    auto r = forward_branch(ckpt.model, ckpt.codebooks, all.subspan(lo, std::min(chunk, sets.size() - lo)), false);
    for (std::size_t i = 0; i < r.latents.size(); ++i)
      out.push_back({e.id, lo + i, std::move(r.quantized[i].record), std::move(r.latents[i])});
  }
  return out;
}

std::string tokens_tsv(std::span<const ResidueTokens> rows) {
  std::ostringstream os;
  const std::size_t levels = rows.empty() ? 0 : rows.front().record.tokens.size();
  os << "protein_id\tresidue_index";
  for (std::size_t l = 0; l < levels; ++l) os << "\tc" << l + 1;
  os << "\td_z\n";
  char buf[40];
  for (const auto& r : rows) {
    os << r.protein_id << '\t' << r.residue;
    for (int c : r.record.tokens) os << '\t' << c;
    std::snprintf(buf, sizeof buf, "%.9g", r.record.latent_distance);
    os << '\t' << buf << '\n';
  }
  return os.str();
}

std::vector<ResidueTokens> parse_tokens_tsv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int ln = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cur;
    std::istringstream ls(l);
    while (std::getline(ls, cur, '\t')) f.push_back(cur);
    return f;
  };
  if (!std::getline(is, line)) throw ParseError("empty token table");
  ++ln;
  const auto header = split(line);
  if (header.size() < 4 || header[0] != "protein_id" || header[1] != "residue_index" || header.back() != "d_z")
    throw ParseError("token table header must be protein_id, residue_index, c1.., d_z", ln);
  const std::size_t levels = header.size() - 3;
  std::vector<ResidueTokens> out;
  while (std::getline(is, line)) {
    ++ln;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(f.size()), ln);
    ResidueTokens r;
    r.protein_id = f[0];
    try {
      std::size_t pos = 0;
      r.residue = std::stoull(f[1], &pos);
      if (pos != f[1].size()) throw std::invalid_argument(f[1]);
      for (std::size_t l = 0; l < levels; ++l) {
        const int c = std::stoi(f[2 + l], &pos);
        if (pos != f[2 + l].size() || c < 0) throw std::invalid_argument(f[2 + l]);
        r.record.tokens.push_back(c);
      }
      r.record.latent_distance = std::stod(f.back(), &pos);
      if (pos != f.back().size()) throw std::invalid_argument(f.back());
    } catch (const std::exception&) {
      throw ParseError("malformed token row", ln);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace ensembits::training
