#include "ensembits/cli.hpp"

#include "ensembits/analysis.hpp"
#include "ensembits/corpus.hpp"
#include "ensembits/error.hpp"
#include "ensembits/tokenize.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ensembits::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write '" + p.string() + "'");
  os << text;
  if (!os) throw Error("failed writing '" + p.string() + "'");
}

/// Writes to `path`, or to `out` when the path is empty or "-".
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") out << text;
  else spit(path, text);
}

template <class T>
T number(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    T r{};
    if constexpr (std::is_same_v<T, double>) r = std::stod(v, &pos);
    else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      r = static_cast<T>(std::stoull(v, &pos));
    }
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': malformed value '" + v + "'");
  }
}

bool boolean(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw UsageError("config key '" + key + "': expected a boolean, found '" + v + "'");
}

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  bool quiet = false;
};

struct Loaded {
  descriptors::DescriptorConfig descriptor;
  training::TrainConfig train;
};

Loaded load_config(const Globals& g) {
  Loaded l;
  if (!g.config.empty()) apply_config(parse_config(slurp(g.config)), l.descriptor, l.train);
  l.train.seed = g.seed;
  return l;
}

const Ensemble& find(const std::vector<Ensemble>& corpus, const std::string& id) {
  for (const auto& e : corpus)
    if (e.id == id) return e;
  throw Error("protein '" + id + "' not found in corpus");
}

std::vector<Ensemble> pick(const std::vector<Ensemble>& corpus, const std::vector<std::string>& ids) {
  std::vector<Ensemble> out;
  for (const auto& id : ids) out.push_back(find(corpus, id));
  return out;
}

/// Residues of a token table grouped by protein, in table order.
struct TokenTable {
  std::vector<training::ResidueTokens> rows;
  std::vector<std::string> proteins;
};

TokenTable read_tokens(const std::string& path) {
  TokenTable t;
  t.rows = training::parse_tokens_tsv(slurp(path));
  for (const auto& r : t.rows)
    if (t.proteins.empty() || t.proteins.back() != r.protein_id) {
      if (std::find(t.proteins.begin(), t.proteins.end(), r.protein_id) != t.proteins.end())
        throw Error("token table rows for '" + r.protein_id + "' are not contiguous");
      t.proteins.push_back(r.protein_id);
    }
  return t;
}

/// Checks that the table covers every residue of each protein in order.
void check_coverage(const TokenTable& t, const std::vector<Ensemble>& proteins) {
  std::size_t k = 0;
  for (const auto& e : proteins)
    for (std::size_t r = 0; r < e.residue_count(); ++r, ++k)
      if (k >= t.rows.size() || t.rows[k].protein_id != e.id || t.rows[k].residue != r)
        throw Error("token table does not list residue " + std::to_string(r) + " of '" + e.id + "' in order");
  if (k != t.rows.size()) throw Error("token table has extra rows");
}

json anova_json(const analysis::AnovaReport& r) {
  json j;
  j["eta2"] = r.eta2;
  j["F"] = r.f;
  j["df_between"] = r.df_between;
  j["df_within"] = r.df_within;
  j["groups"] = r.groups;
  j["samples"] = r.samples;
  j["ss_between"] = r.ss_between;
  j["ss_within"] = r.ss_within;
  j["ss_total"] = r.ss_total;
  j["p_param"] = r.p_param;
  j["p_perm"] = r.p_perm;
  j["null_mean"] = r.null_mean;
  j["null_permutations"] = r.null_eta2.size();
  // Coarse histogram of the null.
  if (!r.null_eta2.empty()) {
    const auto [lo, hi] = std::minmax_element(r.null_eta2.begin(), r.null_eta2.end());
    const int bins = 20;
    std::vector<std::size_t> h(bins, 0);
    const double w = (*hi - *lo) / bins;
    for (double v : r.null_eta2) h[std::min(bins - 1, w > 0 ? int((v - *lo) / w) : 0)]++;
    j["null_histogram"] = {{"min", *lo}, {"max", *hi}, {"counts", h}};
  }
  return j;
}

}  // namespace

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", ln);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError("empty key or value", ln);
    if (!kv.emplace(key, value).second) throw ParseError("duplicate key '" + key + "'", ln);
  }
  return kv;
}

void apply_config(const std::map<std::string, std::string>& kv, descriptors::DescriptorConfig& d,
                  training::TrainConfig& t) {
  for (const auto& [key, v] : kv) {
    auto sz = [&] { return number<std::size_t>(key, v); };
    auto real = [&] { return number<double>(key, v); };
    if (key == "descriptor.family") d.family = descriptors::family_from_string(v);
    else if (key == "descriptor.mode") d.mode = descriptors::mode_from_string(v);
    else if (key == "descriptor.k") d.k = sz();
    else if (key == "descriptor.psi") d.psi_enabled = boolean(key, v);
    else if (key == "descriptor.min_seq_sep") d.min_seq_sep = sz();
    else if (key == "descriptor.gyration_window") d.gyration_window = sz();
    else if (key == "model.hidden") t.model.hidden = sz();
    else if (key == "model.queries") t.model.queries = sz();
    else if (key == "model.heads") t.model.heads = sz();
    else if (key == "model.blocks") t.model.blocks = sz();
    else if (key == "model.latent") t.model.latent = sz();
    else if (key == "model.decoder_hidden") t.model.decoder_hidden = sz();
    else if (key == "train.beta") t.beta = real();
    else if (key == "train.lambda") t.lambda = real();
    else if (key == "train.lr_max") t.lr_max = real();
    else if (key == "train.lr_min") t.lr_min = real();
    else if (key == "train.warmup") t.warmup = sz();
    else if (key == "train.max_epochs") t.max_epochs = sz();
    else if (key == "train.patience") t.patience = sz();
    else if (key == "train.batch_size") t.batch_size = sz();
    else if (key == "train.grad_clip") t.grad_clip = real();
    else if (key == "train.frames_max") t.frames_max = d.frames_max = sz();
    else if (key == "train.ema_decay") t.ema_decay = real();
    else if (key == "train.weight_decay") t.weight_decay = real();
    else if (key == "train.kmeans_iterations") t.kmeans_iterations = sz();
    else if (key == "train.revive_threshold") t.revive_threshold = real();
    else if (key == "train.branch1_sampled") t.branch1_sampled = boolean(key, v);
    else if (key == "train.chunk") t.chunk = sz();
    else if (key == "train.threads") t.threads = sz();
    else if (key == "train.codebooks") {
      t.codebook_sizes.clear();
      std::istringstream ls(v);
      for (std::string part; std::getline(ls, part, ',');) t.codebook_sizes.push_back(number<std::size_t>(key, trim(part)));
    } else {
      throw UsageError("unknown config key '" + key + "'");
    }
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ensembits: discrete tokens for protein conformational ensembles", "ensembits"};
  app.require_subcommand(1);
  Globals g;
  // Option storage shared by the subcommands; only one of them runs.
  corpus::SynthCorpusSpec s;
  corpus::SplitFractions fr;
  analysis::ProbeOptions po;
  std::string dir, in, outp, id, group, split, logp, ckp, tokens, control, wt, mut;
  std::string feature = "rmsf";
  std::size_t stride = 1, k = 10, seed_frame = 0, frames = 0, n = 5, top_k = 5;
  std::size_t min_count = analysis::kDefaultMinCount, perms = 1000;
  bool random_tokens = false;
  int token = 0;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--config", g.config, "key = value configuration document");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");
  std::function<void()> action;
  auto log = [&](const std::string& msg) {
    if (!g.quiet) err << msg << '\n';
  };
  const std::string exits = "Exit codes: 0 success, 1 domain error, 2 usage error.";

  // synth
  {
    auto* c = app.add_subcommand("synth", "Generate a synthetic corpus with known flexibility. " + exits);
    c->fallthrough();
    c->add_option("--out", dir, "Output directory")->required();
    c->add_option("--proteins", s.proteins)->capture_default_str();
    c->add_option("--residues", s.residues)->capture_default_str();
    c->add_option("--frames", s.frames)->capture_default_str();
    c->add_option("--amp-lo", s.amplitude_lo)->capture_default_str();
    c->add_option("--amp-hi", s.amplitude_hi)->capture_default_str();
    c->add_option("--groups", s.groups, "0 picks proteins/3")->capture_default_str();
    c->callback([&] {
      action = [&] {
        s.seed = g.seed;
        const auto corpus = corpus::synth_corpus(s);
        fs::create_directories(dir);
        for (const auto& e : corpus) corpus::write_ensemble(e, fs::path(dir) / (e.id + ".ens"));
        log("wrote " + std::to_string(corpus.size()) + " ensembles to " + dir);
      };
    });
  }
  // import-pdb
  {
    auto* c = app.add_subcommand("import-pdb", "Convert a multi-model PDB file. " + exits);
    c->fallthrough();
    c->add_option("--in", in)->required();
    c->add_option("--out", outp)->required();
    c->add_option("--id", id, "Protein id (default: file stem)");
    c->add_option("--group", group);
    c->callback([&] {
      action = [&] {
        const auto e = corpus::parse_pdb_models(slurp(in), id.empty() ? fs::path(in).stem().string() : id, group);
        corpus::write_ensemble(e, outp);
        log("imported " + std::to_string(e.frame_count()) + " models, " + std::to_string(e.residue_count()) +
            " residues");
      };
    });
  }
  // fps
  {
    auto* c = app.add_subcommand("fps", "Stride-sample then farthest-point-select frames. " + exits);
    c->fallthrough();
    c->add_option("--in", in)->required();
    c->add_option("--out", outp)->required();
    c->add_option("--stride", stride)->capture_default_str();
    c->add_option("--k", k)->capture_default_str();
    c->add_option("--seed-frame", seed_frame)->capture_default_str();
    c->callback([&] {
      action = [&] {
        const auto e = corpus::read_ensemble(in);
        std::vector<std::size_t> all(e.frame_count());
        std::iota(all.begin(), all.end(), 0);
        const auto strided = e.subset(corpus::stride_sample(all, stride));
        const auto chosen = corpus::fps_select(strided, k, seed_frame);
        corpus::write_ensemble(strided.subset(chosen), outp);
        log("kept " + std::to_string(chosen.size()) + " of " + std::to_string(e.frame_count()) + " frames");
      };
    });
  }
  // split
  {
    auto* c = app.add_subcommand("split", "Group-disjoint train/val/test split. " + exits);
    c->fallthrough();
    c->add_option("--corpus", dir)->required();
    c->add_option("--out", outp)->required();
    c->add_option("--train", fr.train)->capture_default_str();
    c->add_option("--val", fr.val)->capture_default_str();
    c->add_option("--test", fr.test)->capture_default_str();
    c->callback([&] {
      action = [&] {
        const auto corpus = corpus::read_corpus(dir);
        const auto m = corpus::make_splits(corpus, fr, g.seed);
        spit(outp, corpus::serialize_split(m));
        log("split " + std::to_string(m.train.size()) + "/" + std::to_string(m.val.size()) + "/" +
            std::to_string(m.test.size()));
      };
    });
  }
  // fit-stats
  {
    auto* c = app.add_subcommand("fit-stats", "Fit descriptor standardization on the training split. " + exits);
    c->fallthrough();
    c->add_option("--corpus", dir)->required();
    c->add_option("--split", split)->required();
    c->add_option("--out", outp, "JSON output (default stdout)");
    c->callback([&] {
      action = [&] {
        const auto cfg = load_config(g);
        const auto corpus = corpus::read_corpus(dir);
        const auto m = corpus::parse_split(slurp(split));
        std::vector<descriptors::DescriptorSet> sets;
        for (const auto& e : pick(corpus, m.train)) sets.push_back(descriptors::compute_descriptors(e, cfg.descriptor));
        const auto st = descriptors::fit_standardizer(sets);
        json j{{"family", descriptors::to_string(cfg.descriptor.family)},
               {"mode", descriptors::to_string(cfg.descriptor.mode)},
               {"k", cfg.descriptor.k},
               {"dim", st.mean.size()},
               {"mean", st.mean},
               {"std", st.stddev}};
        emit(outp, j.dump(2) + "\n", out);
      };
    });
  }
  // train
  {
    auto* c = app.add_subcommand("train", "Train the tokenizer and write the best checkpoint. " + exits);
    c->fallthrough();
    c->add_option("--corpus", dir)->required();
    c->add_option("--split", split)->required();
    c->add_option("--out", outp, "Checkpoint path")->required();
    c->add_option("--log", logp, "Training log path");
    c->callback([&] {
      action = [&] {
        const auto cfg = load_config(g);
        const auto corpus = corpus::read_corpus(dir);
        const auto m = corpus::parse_split(slurp(split));
        std::ofstream logfile;
        if (!logp.empty()) {
          logfile.open(logp);
          if (!logfile) throw Error("cannot write '" + logp + "'");
        }
        const auto ck = training::train(pick(corpus, m.train), pick(corpus, m.val), cfg.descriptor, cfg.train,
                                        [&](const training::EpochRecord& r) {
                                          const auto line = training::format_log_record(r);
                                          log(line);
                                          if (logfile) logfile << line << '\n' << std::flush;
                                        });
        training::save_checkpoint(ck, outp);
        log("best epoch " + std::to_string(ck.meta.epoch) + ", validation loss " + std::to_string(ck.meta.val_loss));
      };
    });
  }
  // tokenize
  {
    auto* c = app.add_subcommand("tokenize", "Emit per-residue tokens. " + exits);
    c->fallthrough();
    c->add_option("--ckpt", ckp)->required();
    auto* oin = c->add_option("--in", in, "One ensemble file");
    auto* odir = c->add_option("--corpus", dir, "Directory of ensembles");
    oin->excludes(odir);
    c->add_option("--frames", frames, "Use the first N frames (0 = all; 1 = single-frame path)")->capture_default_str();
    c->add_option("--out", outp, "TSV output (default stdout)");
    c->callback([&] {
      action = [&] {
        if (in.empty() == dir.empty()) throw UsageError("tokenize: give exactly one of --in or --corpus");
        const auto ck = training::load_checkpoint(ckp);
        const auto ensembles = in.empty() ? corpus::read_corpus(dir) : std::vector<Ensemble>{corpus::read_ensemble(in)};
        std::vector<training::ResidueTokens> rows;
        for (const auto& e : ensembles) {
          Ensemble use = e;
          if (frames > 0) {
            if (frames > e.frame_count())
              throw Error("tokenize: '" + e.id + "' has only " + std::to_string(e.frame_count()) + " frames");
            std::vector<std::size_t> idx(frames);
            std::iota(idx.begin(), idx.end(), 0);
            use = e.subset(idx);
          }
          for (auto& r : training::tokenize_ensemble(ck, use)) rows.push_back(std::move(r));
        }
        emit(outp, training::tokens_tsv(rows), out);
      };
    });
  }
  // rmsf
  {
    auto* c = app.add_subcommand("rmsf", "Per-residue C-alpha RMSF. " + exits);
    c->fallthrough();
    c->add_option("--in", in)->required();
    c->add_option("--out", outp, "TSV output (default stdout)");
    c->callback([&] {
      action = [&] {
        const auto e = corpus::read_ensemble(in);
        std::ostringstream os;
        os << "residue_index\trmsf\n";
        const auto v = analysis::compute_rmsf(e);
        for (std::size_t r = 0; r < v.size(); ++r) os << r << '\t' << v[r] << '\n';
        emit(outp, os.str(), out);
      };
    });
  }
  // anova
  {
    auto* c = app.add_subcommand("anova", "Variance of a dynamics feature explained by tokens or a control. " + exits);
    c->fallthrough();
    c->add_option("--corpus", dir)->required();
    c->add_option("--tokens", tokens, "Token TSV")->required();
    c->add_option("--feature", feature, "rmsf | flex | s1")
        ->check(CLI::IsMember({"rmsf", "flex", "s1"}))
        ->capture_default_str();
    c->add_option("--control", control, "Replace tokens with a control labeling")
        ->check(CLI::IsMember({"group", "position", "length"}));
    c->add_option("--min-count", min_count)->capture_default_str();
    c->add_option("--perms", perms)->capture_default_str();
    c->add_option("--out", outp, "JSON output (default stdout)");
    c->callback([&] {
      action = [&] {
        const auto corpus = corpus::read_corpus(dir);
        const auto t = read_tokens(tokens);
        const auto proteins = pick(corpus, t.proteins);
        check_coverage(t, proteins);
        std::vector<double> values;
        for (const auto& e : proteins) {
          if (feature == "flex") {
            if (!e.flexibility) throw Error("protein '" + e.id + "' has no ground-truth flexibility");
            values.insert(values.end(), e.flexibility->begin(), e.flexibility->end());
          } else if (feature == "rmsf") {
            const auto v = analysis::compute_rmsf(e);
            values.insert(values.end(), v.begin(), v.end());
          } else {
            for (std::size_t r = 0; r < e.residue_count(); ++r) values.push_back(analysis::motion_amplitude(e, r).first);
          }
        }
        std::vector<long> labels;
        if (control.empty()) {
          for (const auto& r : t.rows) labels.push_back(r.record.tokens.front());
        } else {
          auto cl = analysis::control_groupings(proteins);
          labels = control == "group" ? cl.group : control == "position" ? cl.position : cl.length;
        }
        auto report = analysis::anova_eta2(values, labels, min_count);
        std::mt19937_64 rng(g.seed);
        analysis::permutation_null(report, values, labels, perms, rng, min_count);
        json j = anova_json(report);
        j["feature"] = feature;
        j["labels"] = control.empty() ? "token" : control;
        emit(outp, j.dump(2) + "\n", out);
      };
    });
  }
  // probe
  {
    auto* c = app.add_subcommand("probe", "RMSF probe on level-1 codeword features. " + exits);
    c->fallthrough();
    c->add_option("--corpus", dir)->required();
    c->add_option("--split", split)->required();
    c->add_option("--tokens", tokens, "Token TSV covering train and test proteins")->required();
    c->add_option("--ckpt", ckp)->required();
    c->add_option("--seeds", po.seeds)->capture_default_str();
    c->add_option("--epochs", po.epochs)->capture_default_str();
    c->add_flag("--random-tokens", random_tokens, "Baseline: one-hot random tokens");
    c->add_option("--out", outp, "JSON output (default stdout)");
    c->callback([&] {
      action = [&] {
        const auto corpus = corpus::read_corpus(dir);
        const auto m = corpus::parse_split(slurp(split));
        const auto ck = training::load_checkpoint(ckp);
        const auto t = read_tokens(tokens);
        const auto proteins = pick(corpus, t.proteins);
        check_coverage(t, proteins);
        std::vector<double> labels;
        for (const auto& e : proteins) {
          const auto v = analysis::compute_rmsf(e);
          labels.insert(labels.end(), v.begin(), v.end());
        }
        const std::set<std::string> train_ids(m.train.begin(), m.train.end()), test_ids(m.test.begin(), m.test.end());
        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
          if (train_ids.count(t.rows[i].protein_id)) train_rows.push_back(i);
          if (test_ids.count(t.rows[i].protein_id)) test_rows.push_back(i);
        }
        const auto& cb = ck.codebooks.front();
        Eigen::MatrixXd X;
        std::mt19937_64 rng(g.seed);
        if (random_tokens) {
          X = Eigen::MatrixXd::Zero(Eigen::Index(t.rows.size()), Eigen::Index(cb.size()));
          std::uniform_int_distribution<Eigen::Index> tok(0, Eigen::Index(cb.size()) - 1);
          for (Eigen::Index i = 0; i < X.rows(); ++i) X(i, tok(rng)) = 1.0;
        } else {
          X.resize(Eigen::Index(t.rows.size()), cb.codewords.cols());
          for (std::size_t i = 0; i < t.rows.size(); ++i) {
            const int c1 = t.rows[i].record.tokens.front();
            if (c1 < 0 || std::size_t(c1) >= cb.size()) throw Error("token out of codebook range");
            X.row(Eigen::Index(i)) = cb.codewords.row(c1);
          }
        }
        po.seed = g.seed;
        const auto res = analysis::rmsf_probe(X, labels, train_rows, test_rows, po);
        json j{{"spearman_mean", res.mean},
               {"spearman_std", res.stddev},
               {"per_seed", res.per_seed},
               {"train_residues", train_rows.size()},
               {"test_residues", test_rows.size()},
               {"features", random_tokens ? "random-one-hot" : "level1-codeword"}};
        emit(outp, j.dump(2) + "\n", out);
      };
    });
  }
  // score-mutations
  {
    auto* c = app.add_subcommand("score-mutations", "Negated level-1 codeword distance between two token tables. " + exits);
    c->fallthrough();
    c->add_option("--ckpt", ckp)->required();
    c->add_option("--wt", wt, "Wild-type token TSV")->required();
    c->add_option("--mut", mut, "Mutant token TSV")->required();
    c->callback([&] {
      action = [&] {
        const auto ck = training::load_checkpoint(ckp);
        auto codes = [](const std::string& p) {
          std::vector<int> v;
          for (const auto& r : training::parse_tokens_tsv(slurp(p))) v.push_back(r.record.tokens.front());
          return v;
        };
        const double s = analysis::mutation_score(ck.codebooks.front(), codes(wt), codes(mut));
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.9g", s);
        out << buf << '\n';
      };
    });
  }
  // exemplars
  {
    auto* c = app.add_subcommand("exemplars", "Residues closest to a level-1 codeword, with aligned frames. " + exits);
    c->fallthrough();
    c->add_option("--ckpt", ckp)->required();
    c->add_option("--corpus", dir)->required();
    c->add_option("--token", token)->required();
    c->add_option("--n", n)->capture_default_str();
    c->add_option("--top-k", top_k, "Neighbors reported per exemplar")->capture_default_str();
    c->add_option("--out", outp, "Output directory")->required();
    c->callback([&] {
      action = [&] {
        const auto ck = training::load_checkpoint(ckp);
        const auto corpus = corpus::read_corpus(dir);
        std::vector<analysis::ResidueLatent> latents;
        for (std::size_t p = 0; p < corpus.size(); ++p)
          for (auto& r : training::tokenize_ensemble(ck, corpus[p]))
            latents.push_back({p, r.residue, r.record.tokens.front(), std::move(r.latent)});
        auto ex = analysis::token_exemplars(latents, ck.codebooks.front(), token, n);
        fs::create_directories(outp);
        json report = json::array();
        for (std::size_t i = 0; i < ex.size(); ++i) {
          const auto& e = corpus[ex[i].protein];
          analysis::describe_exemplar(ex[i], e, ck.descriptor, top_k);
          Ensemble aligned{e.id + "_r" + std::to_string(ex[i].residue), e.group, {}, e.flexibility};
          for (std::size_t p = 0; p < e.frame_count(); ++p)
            aligned.frames.push_back(e.frames[p].transformed(ex[i].frame_transforms[p]));
          const std::string file = "exemplar" + std::to_string(i + 1) + ".ens";
          corpus::write_ensemble(aligned, fs::path(outp) / file);
          json nb = json::array();
          for (const auto& x : ex[i].neighbors) nb.push_back({{"residue", x.residue}, {"frames", x.frames}});
          report.push_back({{"rank", i + 1},
                            {"protein", e.id},
                            {"residue", ex[i].residue},
                            {"d_z", ex[i].d_z},
                            {"neighbors", nb},
                            {"file", file}});
        }
        spit(fs::path(outp) / "exemplars.json", json{{"token", token}, {"exemplars", report}}.dump(2) + "\n");
      };
    });
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    action();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitOk;
}

}  // namespace ensembits::cli
