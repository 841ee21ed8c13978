#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "gsno/operator.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("gsno_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(GSNO_CLI) + " " + args + " > " + at("stdout.txt") + " 2> " + at("stderr.txt");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

// Six records on coarse grids keep the whole suite fast.
const std::string& tiny_dataset() {
  static const std::string path = [] {
    const std::string p = at("tiny.ds");
    REQUIRE(run("gen-dataset --out " + p +
                " --n-gamma 2 --n-nu 3 --sensors 11 --queries 11 --seed 5 --train-fraction 0.67") == 0);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("dataset generation reports its split") {
  const std::string ds = tiny_dataset();
  REQUIRE(run("gen-dataset --out " + at("again.ds") +
              " --n-gamma 2 --n-nu 3 --sensors 11 --queries 11 --seed 5 --train-fraction 0.67") == 0);
  CHECK(slurp(at("stdout.txt")).find("records 6 dropped 0 train 4 test 2") != std::string::npos);
  CHECK(slurp(ds) == slurp(at("again.ds")));
  const gsno::Dataset d = gsno::load_dataset(ds);
  CHECK(d.size() == 6);
}

TEST_CASE("training writes one metrics row per epoch and is reproducible") {
  const std::string ds = tiny_dataset();
  const std::string common = " --dataset " + ds + " --epochs 50 --batch 2 --seed 9";
  REQUIRE(run("train" + common + " --out " + at("a.model") + " --metrics " + at("a.csv")) == 0);
  REQUIRE(run("train" + common + " --out " + at("b.model") + " --metrics " + at("b.csv")) == 0);
  const auto rows = lines(slurp(at("a.csv")));
  REQUIRE(rows.size() == 51);
  CHECK(rows[0] == "epoch,train_loss,train_rel_l2,test_rel_l2,test_rms");
  CHECK(rows[50].rfind("49,", 0) == 0);
  CHECK(slurp(at("a.csv")) == slurp(at("b.csv")));
  CHECK(slurp(at("a.model")) == slurp(at("b.model")));
  const gsno::OperatorModel m = gsno::load_model(at("a.model"));
  CHECK(m.targets == gsno::Targets::KOnly);
  CHECK(m.sensors() == 11);
}

TEST_CASE("gain-only training produces a two-target model") {
  REQUIRE(run("train --dataset " + tiny_dataset() + " --epochs 2 --variant gain-only --out " + at("g.model")) == 0);
  CHECK(gsno::load_model(at("g.model")).targets == gsno::Targets::GainOnly);
}

TEST_CASE("config files feed options and flags win") {
  {
    std::ofstream cfg(at("train.cfg"));
    cfg << "# tiny run\nepochs = 3\n--batch=2\nmetrics = \"" << at("cfg.csv") << "\"\n";
  }
  REQUIRE(run("train --config " + at("train.cfg") + " --dataset " + tiny_dataset() + " --out " + at("c.model")) == 0);
  CHECK(lines(slurp(at("cfg.csv"))).size() == 4);
  REQUIRE(run("train --config " + at("train.cfg") + " --epochs 1 --dataset " + tiny_dataset() + " --out " +
              at("c.model")) == 0);
  CHECK(lines(slurp(at("cfg.csv"))).size() == 2);
  {
    std::ofstream cfg(at("bad.cfg"));
    cfg << "no-such-option = 1\n";
  }
  CHECK(run("train --config " + at("bad.cfg") + " --dataset " + tiny_dataset() + " --out " + at("c.model")) == 2);
}

TEST_CASE("usage errors exit with status 2") {
  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("train --dataset " + tiny_dataset()) == 2);
  CHECK(run("train --dataset " + tiny_dataset() + " --out " + at("x.model") + " --variant bogus") == 2);
  CHECK(run("simulate --preset no-such-preset") == 2);
}

TEST_CASE("bad model files fail with status 1") {
  {
    std::ofstream f(at("junk.model"), std::ios::binary);
    f << "not a model";
  }
  CHECK(run("kernel --source neural --model " + at("junk.model")) == 1);
  CHECK(slurp(at("stderr.txt")).find("byte") != std::string::npos);
}

TEST_CASE("kernel dumps for the constant family") {
  REQUIRE(run("kernel --family constant --b 1 --n 101 --nu 0 --out " + at("k.csv")) == 0);
  const auto rows = lines(slurp(at("k.csv")));
  REQUIRE(rows.size() == 102);
  CHECK(rows[0] == "nu,x,k");
  double worst = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    double nu, x, k;
    REQUIRE(std::sscanf(rows[i].c_str(), "%lf,%lf,%lf", &nu, &x, &k) == 3);
    worst = std::max(worst, std::abs(k + std::exp(x)));
  }
  CHECK(worst < 1e-4);

  REQUIRE(run("kernel --nu-range -1 1 3 --n 21 --diff exact --out " + at("d.csv")) == 0);
  const auto d = lines(slurp(at("d.csv")));
  REQUIRE(d.size() == 1 + 3 * 21);
  CHECK(d[0] == "nu,x,k,k_ref,diff");
  for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i].substr(d[i].rfind(',') + 1) == "0");

  REQUIRE(run("kernel --bundle --nu 0.5 --n 11") == 0);
  CHECK(lines(slurp(at("stdout.txt")))[0] == "nu,x,k,k_nu,k_x,k_xnu,l");
}

TEST_CASE("simulate writes trajectory, summary and snapshots") {
  REQUIRE(run("simulate --law exact-gs --gamma 3 --u0 0.2 --t-end 2 --snapshots --out " + at("run_")) == 0);
  const std::string stem = at("run_exact-gs_g3_u0.2");
  const auto csv = lines(slurp(stem + ".csv"));
  REQUIRE(csv.size() > 2);
  CHECK(csv[0] == "t,u0,U,Omega,termination");
  const auto j = nlohmann::json::parse(slurp(stem + ".json"));
  CHECK(j["termination"] == "Completed");
  CHECK(j["gamma"] == 3.0);
  CHECK(j["lyapunov"]["decay"] == true);
  CHECK(j["lyapunov"]["agmon"] == true);
  CHECK(fs::file_size(stem + ".snap") > 1000);
}

TEST_CASE("verify without a model skips the neural suites") {
  run("verify --out " + at("verify.json"));
  const auto j = nlohmann::json::parse(slurp(at("verify.json")));
  int skipped = 0;
  for (const auto& s : j["suites"]) {
    if (s["id"].get<std::string>().rfind("operator.", 0) == 0 || s["id"] == "control.neural_gs") {
      CHECK(s["status"] == "SKIPPED");
      ++skipped;
    }
  }
  CHECK(skipped == 3);
  for (const auto& s : j["suites"])
    if (s["id"] == "kernels.closed_form" || s["id"] == "recirc.bounds") CHECK(s["status"] == "PASS");
}
