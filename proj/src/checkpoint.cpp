#include "ensembits/checkpoint.hpp"

#include "ensembits/error.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace ensembits::training {

using nn::Matrix;

std::string format_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(std::string_view token, int line) {
  const std::string s(token);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw ParseError("malformed number '" + s + "'", line);
  return v;
}

namespace {

void write_array(std::ostringstream& os, const std::string& name, const Matrix& m) {
  os << "array " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << format_hex(m(r, c));
    os << '\n';
  }
}

Matrix row_of(const std::vector<double>& v) {
  return Eigen::Map<const Matrix>(v.data(), 1, static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::ostringstream os;
  os << "format " << kCheckpointVersion << '\n';
  const auto& d = ck.descriptor;
  os << "meta descriptor.family " << descriptors::to_string(d.family) << '\n';
  os << "meta descriptor.mode " << descriptors::to_string(d.mode) << '\n';
  os << "meta descriptor.k " << d.k << '\n';
  os << "meta descriptor.psi " << (d.psi_enabled ? 1 : 0) << '\n';
  os << "meta descriptor.min_seq_sep " << d.min_seq_sep << '\n';
  os << "meta descriptor.gyration_window " << d.gyration_window << '\n';
  os << "meta descriptor.frames_max " << d.frames_max << '\n';
  const auto& m = ck.model.config;
  os << "meta model.input_dim " << m.input_dim << '\n';
  os << "meta model.hidden " << m.hidden << '\n';
  os << "meta model.queries " << m.queries << '\n';
  os << "meta model.heads " << m.heads << '\n';
  os << "meta model.blocks " << m.blocks << '\n';
  os << "meta model.latent " << m.latent << '\n';
  os << "meta model.decoder_hidden " << m.decoder_hidden << '\n';
  os << "meta model.slots " << m.slots << '\n';
  // Self-attention stack layout, recorded for readers of the weights.
  os << "meta model.ffn_width " << m.hidden << '\n';
  os << "meta model.residual pre-block-add\n";
  os << "meta model.normalization none\n";
  os << "meta codebook.levels " << ck.codebooks.size() << '\n';
  os << "meta train.epoch " << ck.meta.epoch << '\n';
  os << "meta train.val_loss " << format_hex(ck.meta.val_loss) << '\n';
  os << "meta train.seed " << ck.meta.seed << '\n';

  write_array(os, "standardizer.mean", row_of(ck.standardizer.mean));
  write_array(os, "standardizer.std", row_of(ck.standardizer.stddev));
  ck.model.for_each([&](const std::string& name, const Matrix& t) { write_array(os, name, t); });
  for (std::size_t l = 0; l < ck.codebooks.size(); ++l) {
    const auto& c = ck.codebooks[l];
    const std::string p = "codebook" + std::to_string(l);
    write_array(os, p + ".codewords", c.codewords);
    write_array(os, p + ".ema_count", Matrix(c.ema_count.transpose()));
    write_array(os, p + ".ema_sum", c.ema_sum);
  }
  write_array(os, "train.val_history", row_of(ck.meta.val_history));
  os << "end\n";
  return os.str();
}

namespace {

struct Doc {
  std::map<std::string, std::string> meta;
  std::map<std::string, Matrix> arrays;
};

Doc read_doc(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int ln = 0;
  auto next = [&]() -> bool {
    while (std::getline(is, line)) {
      ++ln;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next()) throw ParseError("empty checkpoint");
  {
    std::istringstream h(line);
    std::string key, version;
    h >> key >> version;
    if (key != "format") throw ParseError("expected 'format' header", ln);
    if (version != kCheckpointVersion)
      throw ParseError("unsupported checkpoint version '" + version + "' (expected " + kCheckpointVersion + ")", ln);
  }
  Doc doc;
  bool ended = false;
  while (next()) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      ended = true;
      break;
    }
    if (kind == "meta") {
      std::string key, value;
      if (!(ls >> key >> value)) throw ParseError("malformed meta line", ln);
      doc.meta[key] = value;
    } else if (kind == "array") {
      std::string name;
      long rows = -1, cols = -1;
      if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0) throw ParseError("malformed array header", ln);
      Matrix m(rows, cols);
      for (long r = 0; r < rows; ++r) {
        if (!next()) throw ParseError("array '" + name + "' truncated", ln);
        std::istringstream rs(line);
        std::string tok;
        long c = 0;
        while (rs >> tok) {
          if (c >= cols) throw ParseError("array '" + name + "' row has too many values", ln);
          m(r, c++) = parse_double(tok, ln);
        }
        if (c != cols) throw ParseError("array '" + name + "' row has " + std::to_string(c) + " values, expected " +
                                        std::to_string(cols), ln);
      }
      if (!doc.arrays.emplace(name, std::move(m)).second) throw ParseError("duplicate array '" + name + "'", ln);
    } else {
      throw ParseError("unexpected record '" + kind + "'", ln);
    }
  }
  if (!ended) throw ParseError("checkpoint missing 'end' marker");
  return doc;
}

const std::string& meta(const Doc& d, const std::string& key) {
  auto it = d.meta.find(key);
  if (it == d.meta.end()) throw ParseError("checkpoint missing meta field '" + key + "'");
  return it->second;
}

std::size_t meta_size(const Doc& d, const std::string& key) {
  const auto& v = meta(d, key);
  try {
    std::size_t pos = 0;
    const auto n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ParseError("meta field '" + key + "' is not a count");
  }
}

Matrix take(Doc& d, const std::string& name, long rows, long cols) {
  auto it = d.arrays.find(name);
  if (it == d.arrays.end()) throw ParseError("checkpoint missing array '" + name + "'");
  if ((rows >= 0 && it->second.rows() != rows) || (cols >= 0 && it->second.cols() != cols))
    throw ParseError("array '" + name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                     std::to_string(it->second.cols()));
  Matrix m = std::move(it->second);
  d.arrays.erase(it);
  return m;
}

std::vector<double> to_vec(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

Checkpoint parse_checkpoint(const std::string& text) {
  Doc doc = read_doc(text);
  Checkpoint ck;
  auto& d = ck.descriptor;
  try {
    d.family = descriptors::family_from_string(meta(doc, "descriptor.family"));
    d.mode = descriptors::mode_from_string(meta(doc, "descriptor.mode"));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(e.what());
  }
  d.k = meta_size(doc, "descriptor.k");
  d.psi_enabled = meta_size(doc, "descriptor.psi") != 0;
  d.min_seq_sep = meta_size(doc, "descriptor.min_seq_sep");
  d.gyration_window = meta_size(doc, "descriptor.gyration_window");
  d.frames_max = meta_size(doc, "descriptor.frames_max");

  auto& mc = ck.model.config;
  mc.input_dim = meta_size(doc, "model.input_dim");
  mc.hidden = meta_size(doc, "model.hidden");
  mc.queries = meta_size(doc, "model.queries");
  mc.heads = meta_size(doc, "model.heads");
  mc.blocks = meta_size(doc, "model.blocks");
  mc.latent = meta_size(doc, "model.latent");
  mc.decoder_hidden = meta_size(doc, "model.decoder_hidden");
  mc.slots = meta_size(doc, "model.slots");
  try {
    mc.validate();
  } catch (const Error& e) {
    throw ParseError(e.what());
  }

  const long dim = static_cast<long>(mc.input_dim);
  ck.standardizer.mean = to_vec(take(doc, "standardizer.mean", 1, dim));
  ck.standardizer.stddev = to_vec(take(doc, "standardizer.std", 1, dim));

  // Shapes come from a freshly sized model so every tensor is checked.
  ck.model = nn::init_params(0, mc);
  ck.model.for_each([&](const std::string& name, Matrix& t) { t = take(doc, name, t.rows(), t.cols()); });

  const std::size_t levels = meta_size(doc, "codebook.levels");
  for (std::size_t l = 0; l < levels; ++l) {
    const std::string p = "codebook" + std::to_string(l);
    quantizer::CodebookLevel c;
    c.codewords = take(doc, p + ".codewords", -1, static_cast<long>(mc.latent));
    const Matrix counts = take(doc, p + ".ema_count", 1, c.codewords.rows());
    c.ema_count = counts.row(0).transpose();
    c.ema_sum = take(doc, p + ".ema_sum", c.codewords.rows(), c.codewords.cols());
    ck.codebooks.push_back(std::move(c));
  }
  ck.meta.epoch = meta_size(doc, "train.epoch");
  ck.meta.val_loss = parse_double(meta(doc, "train.val_loss"), 0);
  ck.meta.seed = meta_size(doc, "train.seed");
  ck.meta.val_history = to_vec(take(doc, "train.val_history", 1, -1));
  if (!doc.arrays.empty()) throw ParseError("unknown array '" + doc.arrays.begin()->first + "'");
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint '" + path.string() + "'");
  os << serialize_checkpoint(ckpt);
  if (!os) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace ensembits::training
