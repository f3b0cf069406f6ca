#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <doctest.h>

#include "agggp/file_util.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "agggp_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + AGGGP_CLI_PATH + "\" " + args + " > \"" +
                          (workdir() / "stdout.txt").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& name) { return (workdir() / name).string(); }

std::vector<std::string> lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

void write_config() {
  std::ofstream(p("cfg.json")) << R"({"grid": [3, 4], "seed": 2, "noise_std": 0.1, "lattice": 60,
    "resolutions": [{"name": "cov", "dim": 2, "points_per_region": 3},
                    {"name": "space", "spatial": true, "points_per_region": 4}]})";
}

}  // namespace

TEST_CASE("end-to-end command line workflow") {
  write_config();
  REQUIRE(run("synth --config " + p("cfg.json") + " --out " + p("data")) == 0);
  for (const char* f : {"manifest.json", "labels.csv", "cov.csv", "space.csv", "ground_truth.json"}) {
    CHECK(fs::exists(workdir() / "data" / f));
  }
  const std::string manifest = p("data/manifest.json");

  const std::string fit_args = "fit --method mvbagg --data " + manifest + " --iters 40 --lr 0.01 --batch 4 --seed 3 ";
  REQUIRE(run(fit_args + "--out " + p("m1.json")) == 0);
  REQUIRE(run(fit_args + "--out " + p("m2.json") + " --trace " + p("t2.csv")) == 0);
  CHECK(agggp::read_file(p("m1.json")) == agggp::read_file(p("m2.json")));
  CHECK(agggp::read_file(p("m1.json.trace.csv")) == agggp::read_file(p("t2.csv")));
  const auto trace = lines(p("t2.csv"));
  REQUIRE(!trace.empty());
  CHECK(trace[0] == "iteration,elbo");
  CHECK(trace.size() == 1 + 40 / 3);  // one update per epoch of three batches

  REQUIRE(run("predict --model " + p("m1.json") + " --data " + manifest + " --out " + p("pred.csv")) == 0);
  REQUIRE(run("predict --model " + p("m1.json") + " --data " + manifest + " --out " + p("pred2.csv")) == 0);
  CHECK(agggp::read_file(p("pred.csv")) == agggp::read_file(p("pred2.csv")));
  const auto pred = lines(p("pred.csv"));
  REQUIRE(pred.size() == 13);
  CHECK(pred[0] == "region_id,mean,variance,lower95,upper95");
  for (std::size_t i = 1; i < pred.size(); ++i) {
    std::stringstream ss(pred[i]);
    std::string id, f;
    std::getline(ss, id, ',');
    std::vector<double> v;
    while (std::getline(ss, f, ',')) v.push_back(std::stod(f));
    REQUIRE(v.size() == 4);
    CHECK(v[1] > 0.0);
    CHECK(v[2] == doctest::Approx(v[0] - 1.959964 * std::sqrt(v[1])).epsilon(1e-12));
    CHECK(v[3] == doctest::Approx(v[0] + 1.959964 * std::sqrt(v[1])).epsilon(1e-12));
  }

  REQUIRE(run("disagg --model " + p("m1.json") + " --resolution space --grid 4x3 --out " + p("surface.csv")) == 0);
  const auto surface = lines(p("surface.csv"));
  CHECK(surface.size() == 13);
  CHECK(surface[0] == "point,lon,lat,mean,var");

  REQUIRE(run("fit --method vbagg --resolution space --data " + manifest + " --iters 6 --out " + p("vb.json")) == 0);
  REQUIRE(run("baseline --method lre --data " + manifest + " --out " + p("lre.csv")) == 0);
  CHECK(lines(p("lre.csv"))[0] == "region_id,mean");
  REQUIRE(run("baseline --method exact-agg --data " + manifest + " --out " + p("exact.csv")) == 0);
  REQUIRE(run("cv --method lr --data " + manifest + " --folds 3 --out " + p("cv.json")) == 0);
  CHECK(fs::exists(p("cv.json")));
  CHECK(agggp::read_file(p("stdout.txt")).find("RMSE") != std::string::npos);

  CHECK(run("check-grad --data " + manifest + " --tol 1e-3") == 0);
  CHECK(run("check-grad --data " + manifest + " --tol 0") == 2);
}

TEST_CASE("command line errors") {
  write_config();
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("synth --config " + p("cfg.json") + " --out " + p("d2") + " --bogus") == 1);
  CHECK(run("fit --method mvbagg --data " + p("missing.json") + " --out " + p("x.json")) == 1);
  CHECK(run("fit --method nope --data " + p("cfg.json") + " --out " + p("x.json")) == 1);
  CHECK(agggp::read_file(p("stdout.txt")).size() > 0);
}
