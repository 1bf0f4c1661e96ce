#include "ensembits/corpus.hpp"
#include "ensembits/error.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

namespace ensembits::corpus {

namespace {

using ResidueKey = std::tuple<char, int, char>;  // chain, number, insertion code

struct ResidueAtoms {
  std::array<std::optional<geometry::Point3>, 3> atoms;  // N, CA, C
};

struct Model {
  int serial = 0;
  int line = 0;
  std::map<ResidueKey, ResidueAtoms> residues;
};

std::string field(const std::string& line, std::size_t begin, std::size_t len) {
  if (begin >= line.size()) return {};
  std::string s = line.substr(begin, len);
  const auto a = s.find_first_not_of(' ');
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(' ') - a + 1);
}

double coord(const std::string& line, std::size_t begin, int ln) {
  const std::string s = field(line, begin, 8);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("malformed coordinate '" + s + "'", ln);
  }
}

std::string describe(const ResidueKey& k) {
  std::string s;
  if (std::get<0>(k) != ' ') s += std::string(1, std::get<0>(k)) + ":";
  s += std::to_string(std::get<1>(k));
  if (std::get<2>(k) != ' ') s += std::get<2>(k);
  return s;
}

}  // namespace

Ensemble parse_pdb_models(const std::string& text, const std::string& id, const std::string& group) {
  std::istringstream is(text);
  std::vector<Model> models;
  std::optional<Model> open;
  bool explicit_models = false;
  std::string line;
  int ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string rec = line.substr(0, 6);
    if (rec.rfind("MODEL", 0) == 0) {
      if (open) throw ParseError("MODEL without preceding ENDMDL", ln);
      explicit_models = true;
      open = Model{};
      open->line = ln;
      const std::string s = field(line, 10, 4);
      open->serial = s.empty() ? int(models.size()) + 1 : std::atoi(s.c_str());
    } else if (rec.rfind("ENDMDL", 0) == 0) {
      if (!open) throw ParseError("ENDMDL without MODEL", ln);
      models.push_back(std::move(*open));
      open.reset();
    } else if (rec == "ATOM  ") {
      if (!open) {
        if (explicit_models) throw ParseError("ATOM record outside MODEL block", ln);
        open = Model{1, ln, {}};
      }
      const std::string name = field(line, 12, 4);
      int slot = -1;
      if (name == "N") slot = 0;
      else if (name == "CA") slot = 1;
      else if (name == "C") slot = 2;
      if (slot < 0) continue;
      const char alt = line.size() > 16 ? line[16] : ' ';
      if (alt != ' ' && alt != 'A') continue;
      if (line.size() < 54) throw ParseError("ATOM record too short", ln);
      const std::string num = field(line, 22, 4);
      int resnum = 0;
      try {
        resnum = std::stoi(num);
      } catch (const std::exception&) {
        throw ParseError("malformed residue number '" + num + "'", ln);
      }
      const ResidueKey key{line[21], resnum, line.size() > 26 ? line[26] : ' '};
      auto& atom = open->residues[key].atoms[static_cast<std::size_t>(slot)];
      if (!atom) atom = geometry::Point3(coord(line, 30, ln), coord(line, 38, ln), coord(line, 46, ln));
    }
  }
  if (open) {
    if (explicit_models) throw ParseError("MODEL " + std::to_string(open->serial) + " is missing ENDMDL");
    models.push_back(std::move(*open));
  }
  if (models.empty()) throw ParseError("no models with ATOM records");

  Ensemble e;
  e.id = id;
  e.group = group;
  const std::vector<geometry::Atom> layout{geometry::Atom::N, geometry::Atom::CA, geometry::Atom::C};
  const auto& ref = models.front().residues;
  for (const auto& m : models) {
    if (m.residues.size() != ref.size())
      throw ParseError("model " + std::to_string(m.serial) + " has " + std::to_string(m.residues.size()) +
                       " residues, expected " + std::to_string(ref.size()), m.line);
    geometry::FrameCoords frame(layout, m.residues.size());
    std::size_t r = 0;
    auto it_ref = ref.begin();
    for (const auto& [key, res] : m.residues) {
      if (key != (it_ref++)->first)
        throw ParseError("model " + std::to_string(m.serial) + " residue " + describe(key) +
                         " does not match the first model", m.line);
      for (std::size_t s = 0; s < 3; ++s) {
        if (!res.atoms[s])
          throw ParseError("model " + std::to_string(m.serial) + " residue " + describe(key) + " is missing atom " +
                           geometry::atom_name(layout[s]), m.line);
        frame.at(r, s) = *res.atoms[s];
      }
      ++r;
    }
    e.frames.push_back(std::move(frame));
  }
  if (e.residue_count() == 0) throw ParseError("models contain no backbone residues");
  e.validate();
  return e;
}

}  // namespace ensembits::corpus
