#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mqs/cli.hpp"
#include "support/builders.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mqs");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return mqs::run(int(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_doc(const nlohmann::json& doc, const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mqs_cli_test";
  fs::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << doc.dump(2);
  return path;
}

} // namespace

TEST_CASE("simulate writes trajectory, dump and plot data") {
  auto doc = testing::cube_doc(3, 0.5);
  doc["input"]["values"] = {0.0, 1.0};
  const auto scen = write_doc(doc, "sim.json");
  const auto out = scen.parent_path() / "sim_out";
  fs::remove_all(out);
  CHECK(run_cli({"simulate", "--scenario", scen.string(), "--out", out.string()}) == 0);
  for (const char* f : {"trajectory.csv", "state.bin", "energy_vs_time.csv", "bounds_vs_time.csv"})
    CHECK(fs::exists(out / f));
  CHECK(slurp(out / "energy_vs_time.csv").rfind("t,energy,reference\r\n", 0) == 0);
  CHECK(slurp(out / "bounds_vs_time.csv").rfind("t,energy,bound\r\n", 0) == 0);
}

TEST_CASE("audit, constants, decay and dirac-check reports") {
  auto doc = testing::cube_doc(3, 0.5);
  doc["input"]["values"] = {0.0, 1.0};
  const auto scen = write_doc(doc, "aud.json");
  const auto out = scen.parent_path() / "aud_out";
  fs::remove_all(out);
  CHECK(run_cli({"audit", "--scenario", scen.string(), "--out", out.string(), "--jobs", "2"}) == 0);
  const auto rep = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(rep.at("summary").at("failures") == 0);
  CHECK(rep.at("ph").contains("dirac_skew_max_defect"));
  CHECK(rep.at("constants").contains("L_C"));

  CHECK(run_cli({"constants", "--scenario", scen.string(), "--out", out.string()}) == 0);
  CHECK(fs::exists(out / "constants.json"));
  CHECK(run_cli({"dirac-check", "--scenario", scen.string(), "--out", out.string()}) == 0);
  CHECK(fs::exists(out / "dirac_report.json"));
  // The driven scenario is replaced by its free dynamics.
  CHECK(run_cli({"decay", "--scenario", scen.string(), "--out", out.string()}) == 0);
  CHECK(fs::exists(out / "decay_report.json"));
}

TEST_CASE("exit codes") {
  auto doc = testing::cube_doc(3, 0.5);
  const auto good = write_doc(doc, "good.json");
  doc["circuit"]["R"] = {{-1.0}};
  const auto bad = write_doc(doc, "bad.json");
  const auto out = good.parent_path() / "codes_out";
  CHECK(run_cli({"audit", "--scenario", bad.string(), "--out", out.string()}) == 1);
  CHECK(run_cli({"audit", "--scenario", good.string(), "--out", out.string(), "--eps", "2.5"}) == 1);
  CHECK(run_cli({"audit", "--scenario", (good.parent_path() / "missing.json").string()}) == 1);
  CHECK(run_cli({"bogus"}) == 1);
  // An impossible tolerance makes audits fail with exit code 2.
  auto strict = testing::cube_doc(3, 0.5);
  strict["input"]["values"] = {0.0, 1.0};
  const auto sp = write_doc(strict, "strict.json");
  CHECK(run_cli({"audit", "--scenario", sp.string(), "--out", out.string(), "--tol-abs", "-1"}) == 2);
}
