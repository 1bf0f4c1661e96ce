#include "ensembits/cli.hpp"
#include "ensembits/corpus.hpp"
#include "ensembits/error.hpp"
#include "ensembits/tokenize.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace ensembits;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path root = fs::temp_directory_path() / "ensembits_cli_test";
  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string operator/(const std::string& name) const { return (root / name).string(); }
};

const char* kConfig = R"(# small model for tests
descriptor.k = 4
model.hidden = 16
model.queries = 2
model.heads = 2
model.blocks = 1
model.latent = 4
model.decoder_hidden = 16
train.codebooks = 16, 4, 4
train.max_epochs = 3
train.frames_max = 4
train.warmup = 2
train.batch_size = 64
)";

}  // namespace

TEST_CASE("config parsing") {
  const auto kv = cli::parse_config(kConfig);
  CHECK(kv.at("train.codebooks") == "16, 4, 4");
  descriptors::DescriptorConfig d;
  training::TrainConfig t;
  cli::apply_config(kv, d, t);
  CHECK(d.k == 4);
  CHECK(d.frames_max == 4);
  CHECK(t.codebook_sizes == std::vector<std::size_t>{16, 4, 4});
  CHECK(t.model.latent == 4);
  CHECK_THROWS_AS(cli::parse_config("no equals sign\n"), ParseError);
  CHECK_THROWS_AS(cli::parse_config("a = 1\na = 2\n"), ParseError);
  CHECK_THROWS_AS(cli::apply_config({{"train.nonsense", "1"}}, d, t), Error);
  CHECK_THROWS_AS(cli::apply_config({{"train.patience", "-3"}}, d, t), Error);
}

TEST_CASE("usage errors exit 2, help exits 0") {
  CHECK(run_cli({}).code == cli::kExitUsage);
  CHECK(run_cli({"synth", "--bogus"}).code == cli::kExitUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kExitUsage);
  CHECK(run_cli({"synth"}).code == cli::kExitUsage);
  const auto help = run_cli({"--help"});
  CHECK(help.code == cli::kExitOk);
  CHECK(help.out.find("tokenize") != std::string::npos);
}

TEST_CASE("domain errors exit 1") {
  Workspace w;
  const auto r = run_cli({"rmsf", "--in", w / "missing.ens"});
  CHECK(r.code == cli::kExitDomain);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("the installed binary reports exit codes") {
  const std::string exe = ENSEMBITS_CLI;
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(status(exe + " --help") == 0);
  CHECK(status(exe + " synth --out /tmp/x --unknown-flag") == 2);
  CHECK(status(exe + " rmsf --in /nonexistent/file.ens") == 1);
}

TEST_CASE("synth is byte-identical across runs") {
  Workspace w;
  for (const char* d : {"a", "b"})
    REQUIRE(run_cli({"synth", "--out", w / d, "--proteins", "6", "--residues", "12", "--frames", "3", "--seed", "7",
                 "--quiet"})
                .code == 0);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(w.root / "a")) {
    ++files;
    CHECK(slurp(entry.path()) == slurp(w.root / "b" / entry.path().filename()));
  }
  CHECK(files == 6);
  REQUIRE(run_cli({"synth", "--out", w / "c", "--proteins", "6", "--residues", "12", "--frames", "3", "--seed", "8",
               "--quiet"})
              .code == 0);
  CHECK(slurp(w.root / "a" / "synth000.ens") != slurp(w.root / "c" / "synth000.ens"));
}

TEST_CASE("full pipeline through the command line") {
  Workspace w;
  {
    std::ofstream cfg(w / "small.cfg");
    cfg << kConfig;
  }
  REQUIRE(run_cli({"synth", "--out", w / "corpus", "--proteins", "9", "--residues", "16", "--frames", "4", "--seed", "3",
               "--quiet"})
              .code == 0);
  REQUIRE(run_cli({"split", "--corpus", w / "corpus", "--out", w / "split.txt", "--seed", "1", "--quiet"}).code == 0);
  const auto m = corpus::parse_split(slurp(w / "split.txt"));
  CHECK(m.train.size() + m.val.size() + m.test.size() == 9);

  const auto stats = run_cli({"fit-stats", "--corpus", w / "corpus", "--split", w / "split.txt", "--config", w / "small.cfg"});
  REQUIRE(stats.code == 0);
  CHECK(nlohmann::json::parse(stats.out).at("dim") == 48);

  const auto tr = run_cli({"train", "--corpus", w / "corpus", "--split", w / "split.txt", "--out", w / "model.ckpt", "--log",
                       w / "train.log", "--config", w / "small.cfg", "--seed", "5"});
  REQUIRE(tr.code == 0);
  CHECK(tr.err.find("best epoch") != std::string::npos);
  std::istringstream log(slurp(w / "train.log"));
  std::size_t lines = 0;
  for (std::string l; std::getline(log, l);) ++lines;
  CHECK(lines == 4);

  // training again with the same seed reproduces the checkpoint
  REQUIRE(run_cli({"train", "--corpus", w / "corpus", "--split", w / "split.txt", "--out", w / "again.ckpt", "--config",
               w / "small.cfg", "--seed", "5", "--quiet"})
              .code == 0);
  CHECK(slurp(w / "model.ckpt") == slurp(w / "again.ckpt"));

  REQUIRE(run_cli({"tokenize", "--ckpt", w / "model.ckpt", "--corpus", w / "corpus", "--out", w / "tokens.tsv"}).code == 0);
  const auto rows = training::parse_tokens_tsv(slurp(w / "tokens.tsv"));
  CHECK(rows.size() == 9 * 16);

  // single-frame serving path
  const std::string one = (w.root / "corpus" / "synth004.ens").string();
  const auto single = run_cli({"tokenize", "--ckpt", w / "model.ckpt", "--in", one, "--frames", "1"});
  REQUIRE(single.code == 0);
  const auto ck = training::load_checkpoint(w / "model.ckpt");
  const auto expect = training::tokenize_ensemble(ck, corpus::read_ensemble(one).subset({0}));
  CHECK(single.out == training::tokens_tsv(expect));
  CHECK(run_cli({"tokenize", "--ckpt", w / "model.ckpt", "--in", one, "--frames", "9"}).code == cli::kExitDomain);
  CHECK(run_cli({"tokenize", "--ckpt", w / "model.ckpt"}).code == cli::kExitUsage);

  const auto rmsf = run_cli({"rmsf", "--in", one});
  REQUIRE(rmsf.code == 0);
  CHECK(std::count(rmsf.out.begin(), rmsf.out.end(), '\n') == 17);

  const auto anova = run_cli({"anova", "--corpus", w / "corpus", "--tokens", w / "tokens.tsv", "--feature", "flex",
                          "--min-count", "1", "--perms", "20"});
  REQUIRE(anova.code == 0);
  const auto aj = nlohmann::json::parse(anova.out);
  CHECK(aj.at("eta2").get<double>() >= 0.0);
  CHECK(aj.at("eta2").get<double>() <= 1.0);
  CHECK(aj.at("null_permutations") == 20);
  const auto ctrl = run_cli({"anova", "--corpus", w / "corpus", "--tokens", w / "tokens.tsv", "--control", "position",
                         "--min-count", "1", "--perms", "10"});
  REQUIRE(ctrl.code == 0);
  CHECK(nlohmann::json::parse(ctrl.out).at("groups") == 5);
  CHECK(run_cli({"anova", "--corpus", w / "corpus", "--tokens", w / "tokens.tsv", "--feature", "bogus"}).code ==
        cli::kExitUsage);

  const auto probe = run_cli({"probe", "--corpus", w / "corpus", "--split", w / "split.txt", "--tokens", w / "tokens.tsv",
                          "--ckpt", w / "model.ckpt", "--seeds", "2", "--epochs", "3"});
  REQUIRE(probe.code == 0);
  CHECK(nlohmann::json::parse(probe.out).at("per_seed").size() == 2);

  const auto score = run_cli({"score-mutations", "--ckpt", w / "model.ckpt", "--wt", w / "tokens.tsv", "--mut",
                          w / "tokens.tsv"});
  REQUIRE(score.code == 0);
  CHECK(std::stod(score.out) == 0.0);

  const int token = rows.front().record.tokens.front();
  const auto ex = run_cli({"exemplars", "--ckpt", w / "model.ckpt", "--corpus", w / "corpus", "--token",
                       std::to_string(token), "--n", "1", "--out", w / "ex"});
  REQUIRE(ex.code == 0);
  const auto ej = nlohmann::json::parse(slurp(w.root / "ex" / "exemplars.json"));
  CHECK(ej.at("exemplars").size() == 1);
  CHECK(fs::exists(w.root / "ex" / "exemplar1.ens"));
}

TEST_CASE("import-pdb and fps") {
  Workspace w;
  std::string pdb;
  for (int model = 1; model <= 6; ++model) {
    pdb += "MODEL     " + std::to_string(model) + "\n";
    for (int r = 1; r <= 5; ++r) {
      const double x = 3.8 * r, y = 0.2 * r * r + 0.3 * model * (r == 3);
      const char* names[3] = {" N  ", " CA ", " C  "};
      const double dx[3] = {-0.5, 0.0, 1.2}, dy[3] = {1.2, 0.0, 0.7};
      for (int a = 0; a < 3; ++a) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "ATOM  %5d %s ALA A%4d    %8.3f%8.3f%8.3f  1.00  0.00\n", a + 1, names[a], r,
                      x + dx[a], y + dy[a], 0.1 * a);
        pdb += buf;
      }
    }
    pdb += "ENDMDL\n";
  }
  {
    std::ofstream f(w / "in.pdb");
    f << pdb;
  }
  REQUIRE(run_cli({"import-pdb", "--in", w / "in.pdb", "--out", w / "in.ens", "--group", "fam", "--quiet"}).code == 0);
  const auto e = corpus::read_ensemble(w / "in.ens");
  CHECK(e.id == "in");
  CHECK(e.frame_count() == 6);
  REQUIRE(run_cli({"fps", "--in", w / "in.ens", "--out", w / "sel.ens", "--stride", "2", "--k", "2", "--quiet"}).code == 0);
  CHECK(corpus::read_ensemble(w / "sel.ens").frame_count() == 2);
  CHECK(run_cli({"fps", "--in", w / "in.ens", "--out", w / "sel.ens", "--k", "9", "--quiet"}).code == cli::kExitDomain);
}
