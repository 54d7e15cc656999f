#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "helpers.hpp"
#include "vsid/catalog.hpp"
#include "vsid/evaluation.hpp"
#include "vsid/trainer.hpp"

using namespace vsid;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(VSID_CLI_PATH) + " " + args + " > " +
                          test::temp_path("cli_stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string p(const std::string& name) { return test::temp_path(name).string(); }

const std::string kSmall = "--vocab 8 --maxlen 3 --batch 32 --hidden 16 --model-dim 16 --ffn-dim 32 --chunks 4";

double last_expected_length(const std::string& log) {
  const auto ls = lines(log);
  std::istringstream row(ls.back());
  double v = 0;
  for (int i = 0; i < 8; ++i) row >> v;
  return v;
}

}  // namespace

TEST_CASE("cli: synth writes a loadable, reproducible catalog") {
  CHECK(run("synth --items 120 --dim 8 --zipf 1.1 --clusters 6 --cold 0.1 --seed 3 --out " + p("a.vsid")) == 0);
  CHECK(run("synth --items 120 --dim 8 --zipf 1.1 --clusters 6 --cold 0.1 --seed 3 --out " + p("b.vsid")) == 0);
  const Catalog c = load_catalog(p("a.vsid"));
  CHECK(c.n_items == 120);
  CHECK(c.dim == 8);
  CHECK(slurp(p("a.vsid")) == slurp(p("b.vsid")));
  CHECK(run("synth --items 120 --dim 8") == 2);
  CHECK(run("synth --items nope --out " + p("x.vsid")) == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("") == 2);
}

TEST_CASE("cli: help lists flags with defaults") {
  CHECK(run("train --help") == 0);
  const std::string out = slurp(p("cli_stdout.txt"));
  CHECK(out.find("--lambda") != std::string::npos);
  CHECK(out.find("[8192]") != std::string::npos);
  CHECK(out.find("--threads") != std::string::npos);
  for (const char* sub : {"synth", "encode", "eval", "gradcheck", "baseline rkmeans", "baseline reinforce"}) {
    CHECK(run(std::string(sub) + " --help") == 0);
    CHECK(slurp(p("cli_stdout.txt")).find("--config") != std::string::npos);
  }
}

TEST_CASE("cli: train, encode and eval pipeline") {
  REQUIRE(run("synth --items 100 --dim 8 --clusters 5 --cold 0.1 --out " + p("pipe.vsid")) == 0);
  {
    std::ofstream cfg(p("desk.cfg"));
    cfg << "# desk settings\nsteps = 12\nvocab = 8\nmaxlen = 3\n  batch = 32  \nhidden = 16\nmodel-dim = 16\n"
           "ffn-dim = 32\nlambda = 1\n";
  }
  CHECK(run("train --config " + p("desk.cfg") + " --catalog " + p("pipe.vsid") + " --out " + p("ck.vsck") +
            " --log " + p("train.log") + " --steps 10") == 0);
  CHECK(std::filesystem::exists(p("ck.vsck")));
  CHECK(lines(p("train.log")).size() == 10);  // flag beats the file

  CHECK(run("encode --model " + p("ck.vsck") + " --catalog " + p("pipe.vsid") + " --out " + p("ids.tsv")) == 0);
  const auto rows = lines(p("ids.tsv"));
  REQUIRE(rows.size() == 100);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::istringstream in(rows[i]);
    std::size_t idx = 0, L = 0;
    in >> idx >> L;
    CHECK(idx == i);
    CHECK(L >= 1);
    CHECK(L <= 3);
    std::vector<std::uint32_t> toks;
    for (std::uint32_t t; in >> t;) toks.push_back(t);
    CHECK(toks.size() == L);
    std::ostringstream back;
    back << idx << '\t' << L << '\t';
    for (std::size_t t = 0; t < toks.size(); ++t) back << (t ? " " : "") << toks[t];
    CHECK(back.str() == rows[i]);
  }

  CHECK(run("eval --model " + p("ck.vsck") + " --catalog " + p("pipe.vsid") + " --out " + p("ev.txt") +
            " --users 20 --budget 64") == 0);
  const auto kv = parse_eval_report(slurp(p("ev.txt")));
  CHECK(kv.at("model") == "dvae");
  CHECK(slurp(p("ev.txt.buckets.tsv")).rfind(kBucketHeader, 0) == 0);

  std::ofstream(p("bad.cfg")) << "bogus = 1\n";
  CHECK(run("train --config " + p("bad.cfg") + " --catalog " + p("pipe.vsid") + " --out " + p("x.vsck")) == 2);
  CHECK(run("train --catalog " + p("missing.vsid") + " --out " + p("x.vsck") + " --steps 1") == 1);
  CHECK(run("train --catalog " + p("pipe.vsid") + " --out " + p("x.vsck") + " --sampling sideways") == 2);
}

TEST_CASE("cli: identical seeds give identical checkpoints; resume continues") {
  REQUIRE(run("synth --items 80 --dim 8 --clusters 4 --out " + p("det.vsid")) == 0);
  const std::string base = "train --catalog " + p("det.vsid") + " " + kSmall + " --steps 8 --seed 5 --log " + p("d.log");
  CHECK(run(base + " --out " + p("d1.vsck")) == 0);
  CHECK(run(base + " --out " + p("d2.vsck") + " --threads 2") == 0);
  CHECK(load_checkpoint(p("d1.vsck")).params == load_checkpoint(p("d2.vsck")).params);
  CHECK(run(base + " --out " + p("d3.vsck")) == 0);
  CHECK(slurp(p("d1.vsck")) == slurp(p("d3.vsck")));
  CHECK(run("train --catalog " + p("det.vsid") + " --resume " + p("d1.vsck") + " --out " + p("d4.vsck") +
            " --log " + p("r.log")) == 0);
  CHECK(lines(p("r.log")).empty());  // already at its configured step count
}

TEST_CASE("cli: maxlen 1 forces length-1 IDs") {
  REQUIRE(run("synth --items 60 --dim 8 --clusters 4 --out " + p("m1.vsid")) == 0);
  CHECK(run("train --catalog " + p("m1.vsid") + " " + kSmall + " --maxlen 1 --steps 5 --log " + p("m1.log") +
            " --out " + p("m1.vsck")) == 0);
  CHECK(run("encode --model " + p("m1.vsck") + " --catalog " + p("m1.vsid") + " --out " + p("m1.tsv")) == 0);
  for (const auto& row : lines(p("m1.tsv"))) CHECK(row.find("\t1\t") != std::string::npos);
}

TEST_CASE("cli: length cost shortens IDs") {
  REQUIRE(run("synth --items 100 --dim 8 --clusters 5 --seed 2 --out " + p("lam.vsid")) == 0);
  const std::string base = "train --catalog " + p("lam.vsid") + " " + kSmall + " --steps 150 --beta-max 0.05";
  REQUIRE(run(base + " --lambda 0 --out " + p("l0.vsck") + " --log " + p("l0.log")) == 0);
  REQUIRE(run(base + " --lambda 8 --out " + p("l8.vsck") + " --log " + p("l8.log")) == 0);
  CHECK(last_expected_length(p("l8.log")) <= last_expected_length(p("l0.log")));
}

TEST_CASE("cli: baselines") {
  REQUIRE(run("synth --items 100 --dim 8 --clusters 5 --out " + p("bl.vsid")) == 0);
  CHECK(run("baseline rkmeans --catalog " + p("bl.vsid") + " --maxlen 4 --vocab 6 --iters 10 --out " + p("km.vskm")) == 0);
  CHECK(run("encode --model " + p("km.vskm") + " --catalog " + p("bl.vsid") + " --out " + p("km.tsv")) == 0);
  const auto rows = lines(p("km.tsv"));
  CHECK(rows.size() == 100);
  for (const auto& row : rows) CHECK(row.find("\t4\t") != std::string::npos);
  CHECK(run("baseline reinforce --catalog " + p("bl.vsid") + " " + kSmall + " --steps 5 --varlen --log " +
            p("rf.log") + " --out " + p("rf.vsck")) == 0);
  CHECK(lines(p("rf.log")).size() == 5);
  CHECK(run("eval --model " + p("rf.vsck") + " --catalog " + p("bl.vsid") + " --out " + p("rf.txt") +
            " --users 5 --budget 64") == 0);
  CHECK(parse_eval_report(slurp(p("rf.txt"))).at("model") == "reinforce-varlen");
  CHECK(run("baseline") == 2);
}

TEST_CASE("cli: gradcheck exit status follows the threshold") {
  CHECK(run("gradcheck --stride 5") == 0);
  CHECK(slurp(p("cli_stdout.txt")).find("max relative error") != std::string::npos);
  CHECK(run("gradcheck --stride 5 --threshold 0") == 1);
}
