#include "ensembits/corpus.hpp"
#include "ensembits/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace ensembits {

void Ensemble::validate() const {
  if (frames.empty()) throw Error("ensemble '" + id + "': no frames");
  const auto& ref = frames.front();
  if (ref.residue_count() == 0) throw Error("ensemble '" + id + "': no residues");
  for (std::size_t p = 0; p < frames.size(); ++p) {
    if (frames[p].residue_count() != ref.residue_count())
      throw Error("ensemble '" + id + "': frame " + std::to_string(p) + " has " +
                  std::to_string(frames[p].residue_count()) + " residues, expected " +
                  std::to_string(ref.residue_count()));
    if (frames[p].layout() != ref.layout())
      throw Error("ensemble '" + id + "': frame " + std::to_string(p) + " has a different atom layout");
    frames[p].validate();
  }
  if (flexibility && flexibility->size() != ref.residue_count())
    throw Error("ensemble '" + id + "': flexibility length differs from residue count");
}

Ensemble Ensemble::subset(const std::vector<std::size_t>& frame_indices) const {
  Ensemble out{id, group, {}, flexibility};
  for (auto i : frame_indices) {
    if (i >= frames.size()) throw Error("ensemble '" + id + "': frame index " + std::to_string(i) + " out of range");
    out.frames.push_back(frames[i]);
  }
  return out;
}

}  // namespace ensembits

namespace ensembits::corpus {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct LineReader {
  std::istringstream is;
  int line = 0;
  std::string text;

  explicit LineReader(const std::string& s) : is(s) {}

  bool next() {
    while (std::getline(is, text)) {
      ++line;
      if (!text.empty() && text.back() == '\r') text.pop_back();
      const auto first = text.find_first_not_of(" \t");
      if (first != std::string::npos && text[first] != '#') return true;
    }
    return false;
  }
  std::vector<std::string> fields() const {
    std::istringstream ls(text);
    std::vector<std::string> out;
    for (std::string f; ls >> f;) out.push_back(f);
    return out;
  }
  std::vector<std::string> expect(const std::string& key, std::size_t min_values) {
    if (!next()) throw ParseError("unexpected end of document, expected '" + key + "'", line);
    auto f = fields();
    if (f.front() != key) throw ParseError("expected '" + key + "', found '" + f.front() + "'", line);
    if (f.size() < min_values + 1) throw ParseError("field '" + key + "' is missing a value", line);
    return f;
  }
};

double number(const std::string& s, int line) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw ParseError("malformed number '" + s + "'", line);
  return v;
}

std::size_t count(const std::string& s, int line) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ParseError("malformed count '" + s + "'", line);
  return std::stoull(s);
}

}  // namespace

std::string serialize_ensemble(const Ensemble& e) {
  e.validate();
  std::ostringstream os;
  os << "format " << kEnsembleFormat << '\n';
  os << "id " << e.id << '\n';
  os << "group " << (e.group.empty() ? "-" : e.group) << '\n';
  os << "atoms";
  for (auto a : e.layout()) os << ' ' << geometry::atom_name(a);
  os << '\n';
  os << "L " << e.residue_count() << '\n';
  os << "P " << e.frame_count() << '\n';
  if (e.flexibility) {
    os << "flex";
    for (double v : *e.flexibility) os << ' ' << fmt(v);
    os << '\n';
  }
  for (std::size_t p = 0; p < e.frame_count(); ++p) {
    const auto& f = e.frames[p];
    os << "frame " << p << ' ' << f.residue_count() << '\n';
    for (std::size_t r = 0; r < f.residue_count(); ++r) {
      for (std::size_t s = 0; s < f.layout().size(); ++s) {
        const auto& x = f.at(r, s);
        os << (s ? " " : "") << fmt(x.x()) << ' ' << fmt(x.y()) << ' ' << fmt(x.z());
      }
      os << '\n';
    }
  }
  return os.str();
}

Ensemble parse_ensemble(const std::string& text) {
  LineReader rd(text);
  auto f = rd.expect("format", 1);
  if (f[1] != kEnsembleFormat)
    throw ParseError("unsupported ensemble format '" + f[1] + "' (expected " + kEnsembleFormat + ")", rd.line);
  Ensemble e;
  if (f = rd.expect("id", 1); f.size() != 2) throw ParseError("id must be a single token", rd.line);
  e.id = f[1];
  f = rd.expect("group", 1);
  e.group = f[1] == "-" ? "" : f[1];
  f = rd.expect("atoms", 1);
  std::vector<geometry::Atom> layout;
  for (std::size_t i = 1; i < f.size(); ++i) {
    try {
      layout.push_back(geometry::atom_from_name(f[i]));
    } catch (const Error&) {
      throw ParseError("unknown atom label '" + f[i] + "'", rd.line);
    }
    if (std::count(layout.begin(), layout.end(), layout.back()) > 1)
      throw ParseError("duplicate atom label '" + f[i] + "'", rd.line);
  }
  f = rd.expect("L", 1);
  const std::size_t L = count(f[1], rd.line);
  f = rd.expect("P", 1);
  const std::size_t P = count(f[1], rd.line);
  if (L == 0 || P == 0) throw ParseError("L and P must be positive", rd.line);

  if (!rd.next()) throw ParseError("document has no frames", rd.line);
  f = rd.fields();
  if (f.front() == "flex") {
    if (f.size() != L + 1)
      throw ParseError("flex has " + std::to_string(f.size() - 1) + " values, expected " + std::to_string(L), rd.line);
    std::vector<double> flex;
    for (std::size_t i = 1; i < f.size(); ++i) flex.push_back(number(f[i], rd.line));
    e.flexibility = std::move(flex);
    if (!rd.next()) throw ParseError("document has no frames", rd.line);
    f = rd.fields();
  }
  const std::size_t width = layout.size() * 3;
  for (std::size_t p = 0; p < P; ++p) {
    if (p > 0) {
      if (!rd.next()) throw ParseError("expected " + std::to_string(P) + " frames, found " + std::to_string(p), rd.line);
      f = rd.fields();
    }
    if (f.size() != 3 || f[0] != "frame") throw ParseError("expected 'frame <index> <L>'", rd.line);
    if (count(f[1], rd.line) != p) throw ParseError("frame index out of order", rd.line);
    const std::size_t frame_l = count(f[2], rd.line);
    if (frame_l != L)
      throw ParseError("frame " + std::to_string(p) + " has L=" + std::to_string(frame_l) + ", expected " +
                       std::to_string(L), rd.line);
    geometry::FrameCoords frame(layout, L);
    for (std::size_t r = 0; r < L; ++r) {
      if (!rd.next()) throw ParseError("frame " + std::to_string(p) + " truncated", rd.line);
      const auto v = rd.fields();
      if (v.size() != width)
        throw ParseError("frame " + std::to_string(p) + " residue " + std::to_string(r) + ": expected " +
                         std::to_string(width) + " numbers, found " + std::to_string(v.size()), rd.line);
      for (std::size_t s = 0; s < layout.size(); ++s)
        frame.at(r, s) = {number(v[3 * s], rd.line), number(v[3 * s + 1], rd.line), number(v[3 * s + 2], rd.line)};
    }
    e.frames.push_back(std::move(frame));
  }
  if (rd.next()) throw ParseError("unexpected content after last frame", rd.line);
  e.validate();
  return e;
}

void write_ensemble(const Ensemble& e, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << serialize_ensemble(e);
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

namespace {
std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}
}  // namespace

Ensemble read_ensemble(const std::filesystem::path& path) {
  try {
    return parse_ensemble(slurp(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<Ensemble> read_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ens") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Ensemble> out;
  for (const auto& f : files) out.push_back(read_ensemble(f));
  return out;
}

std::string serialize_split(const SplitManifest& m) {
  std::ostringstream os;
  os << "format " << kSplitFormat << '\n';
  auto list = [&](const char* name, const std::vector<std::string>& ids) {
    os << name;
    for (const auto& id : ids) os << ' ' << id;
    os << '\n';
  };
  list("train", m.train);
  list("val", m.val);
  list("test", m.test);
  return os.str();
}

SplitManifest parse_split(const std::string& text) {
  LineReader rd(text);
  auto f = rd.expect("format", 1);
  if (f[1] != kSplitFormat) throw ParseError("unsupported split format '" + f[1] + "'", rd.line);
  SplitManifest m;
  for (auto [key, dst] : {std::pair{"train", &m.train}, std::pair{"val", &m.val}, std::pair{"test", &m.test}}) {
    f = rd.expect(key, 0);
    dst->assign(f.begin() + 1, f.end());
  }
  std::vector<std::string> all = m.train;
  all.insert(all.end(), m.val.begin(), m.val.end());
  all.insert(all.end(), m.test.begin(), m.test.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) throw ParseError("split lists are not disjoint");
  return m;
}

}  // namespace ensembits::corpus
