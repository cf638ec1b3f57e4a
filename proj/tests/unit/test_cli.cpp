#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "pilotwave/cli/commands.hpp"

namespace fs = std::filesystem;
using namespace pilotwave;
using namespace pilotwave::cli;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pilotwave-cli-test-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PILOTWAVE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string preset(const std::string& name) { return std::string(PILOTWAVE_PRESET_DIR) + "/" + name + ".ini"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

std::string write_config(const std::string& name, const std::string& text) {
  const auto dir = scratch("configs-" + name);
  fs::create_directories(dir);
  const auto p = dir / (name + ".ini");
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration parsing.

TEST(Config, UnknownKeyIsAnError) {
  EXPECT_THROW(Config::parse(schema::bounds(), "[bounds]\ndensty = 1e30\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::bounds(), "[bonds]\ndensity = 1e30\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::bounds(), "", {"bounds.nope=1"}), ValidationError);
}

TEST(Config, DefaultsAndOverrides) {
  const auto c = Config::parse(schema::bounds(), "[bounds]\ndensity = 2e30\n", {"bounds.margin=50"});
  EXPECT_EQ(c.real("bounds.density"), 2e30);
  EXPECT_EQ(c.real("bounds.margin"), 50.0);
  EXPECT_EQ(c.real("bounds.cutoff"), 1e35);
  EXPECT_FALSE(c.has("bounds.region"));
}

TEST(Config, SiSuffixesOnlyInBounds) {
  const auto c = Config::parse(schema::bounds(), "[bounds]\nlattice_spacing = 1f\nregion = 2.5m\ncutoff = 100P\n");
  EXPECT_DOUBLE_EQ(c.real("bounds.lattice_spacing"), 1e-15);
  EXPECT_DOUBLE_EQ(c.real("bounds.region"), 2.5e-3);
  EXPECT_DOUBLE_EQ(c.real("bounds.cutoff"), 1e17);
  EXPECT_THROW(Config::parse(schema::bounds(), "[bounds]\ndensity = 1q\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::evolve(), "[evolve]\nduration = 2k\n"), ValidationError);
  EXPECT_EQ(Config::parse(schema::evolve(), "[evolve]\nduration = 2.5e1\n").real("evolve.duration"), 25.0);
}

TEST(Config, MalformedValuesAreErrors) {
  EXPECT_THROW(Config::parse(schema::evolve(), "[grid]\npoints = 12.5\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::sterngerlach(), "[sterngerlach]\ncheck_stability = maybe\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::evolve(), "[evolve]\nduration = inf\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::evolve(), "[evolve]\nduration = 1\nduration = 2\n"), ValidationError);
  EXPECT_THROW(Config::parse(schema::evolve(), "", {"duration=1"}), ValidationError);
}

TEST(Config, CanonicalFormIgnoresOrderAndSpelling) {
  const auto a = Config::parse(schema::evolve(), "[state]\nwidth = 1.0\ncenter = 2\n[grid]\npoints = 256\n");
  const auto b = Config::parse(schema::evolve(), "[grid]\npoints=256\n\n[state]\ncenter = 2e0\nwidth = 1\n");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(sha256_hex(a.canonical()), sha256_hex(b.canonical()));
  const auto c = Config::parse(schema::evolve(), "[state]\ncenter = 2.0000000001\n");
  EXPECT_NE(a.canonical(), c.canonical());
  // The canonical text loads back to the same configuration.
  EXPECT_EQ(Config::parse(schema::evolve(), a.canonical()).canonical(), a.canonical());
}

TEST(Output, RealsUseSeventeenSignificantDigits) {
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
  EXPECT_EQ(format_real(1.0), "1");
  EXPECT_EQ(std::stod(format_real(1.0 / 3.0)), 1.0 / 3.0);
  const Json j{{"x", 0.1}, {"n", 3}, {"nan", std::nan("")}, {"list", {0.5, 2.0}}};
  const auto text = to_json_text(j);
  EXPECT_NE(text.find("0.10000000000000001"), std::string::npos);
  EXPECT_NE(text.find("\"nan\": null"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(text)["list"][1].get<double>(), 2.0);
}

TEST(Output, TsvHeaderCarriesUnits) {
  TsvTable t({{"t", "time"}, {"trajectory", ""}, {"label", ""}});
  t.row({0.25, std::int64_t{3}, std::string("up")});
  EXPECT_EQ(t.text(), "t[time]\ttrajectory\tlabel\n0.25\t3\tup\n");
  EXPECT_THROW(t.row({1.0}), std::logic_error);
}

TEST(Output, AtomicWritesLeaveNoTemporaries) {
  const auto dir = scratch("atomic");
  OutputDirectory out(dir);
  out.write("a.txt", "hello\n");
  out.write("a.txt", "again\n");
  EXPECT_EQ(slurp(dir / "a.txt"), "again\n");
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_EQ(e.path().filename().string().find(".tmp"), std::string::npos);
  ASSERT_EQ(out.files().size(), 2u);
  EXPECT_EQ(out.files().back().sha256, sha256_hex("again\n"));
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

// ---------------------------------------------------------------------------
// End-to-end runs through the executable.

class Preset : public ::testing::TestWithParam<std::pair<std::string, int>> {};

TEST_P(Preset, ValidatesAndRunsWithExpectedExitCode) {
  const auto& [name, expected] = GetParam();
  const auto command = name.substr(0, name.find('_'));
  const auto dir = scratch("preset-" + name);
  EXPECT_EQ(run_cli(fmt::format("{} --config {} --out {} --quiet", command, preset(name), dir.string())), expected);
  const auto manifest = load_json(dir / "manifest.json");
  EXPECT_EQ(manifest["command"], command);
  EXPECT_EQ(manifest["exit_code"].get<int>(), expected);
  ASSERT_FALSE(manifest["files"].empty());
  for (const auto& f : manifest["files"]) {
    const auto content = slurp(dir / f["name"].get<std::string>());
    EXPECT_EQ(f["sha256"], sha256_hex(content)) << f["name"];
    EXPECT_EQ(f["bytes"].get<std::size_t>(), content.size());
  }
  const auto report = load_json(dir / (command + ".json"));
  EXPECT_EQ(report["command"], command);
}

INSTANTIATE_TEST_SUITE_P(
    Shipped, Preset,
    ::testing::Values(std::pair{"bounds_planck", 0}, std::pair{"bounds_nuclear", 0}, std::pair{"evolve_free", 0},
                      std::pair{"trajectories_double", 0}, std::pair{"equivariance_free", 0},
                      std::pair{"equivariance_double", 0}, std::pair{"equivariance_coherent", 0},
                      std::pair{"equivariance_control", 3}, std::pair{"equivariance_zero", 0},
                      std::pair{"fieldmodes_coherent", 0}, std::pair{"fieldmodes_squeezed", 0},
                      std::pair{"sterngerlach_xup", 0}, std::pair{"sterngerlach_zup", 0},
                      std::pair{"sterngerlach_general", 0}, std::pair{"sterngerlach_plane", 0},
                      std::pair{"branching", 0}),
    [](const auto& info) { return info.param.first; });

TEST(Cli, EveryShippedPresetIsListed) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(PILOTWAVE_PRESET_DIR)) n += e.path().extension() == ".ini" ? 1 : 0;
  EXPECT_EQ(n, 16u);
}

TEST(Cli, BoundsReportReproducesLatticeNumbers) {
  const auto dir = scratch("bounds");
  ASSERT_EQ(run_cli(fmt::format("bounds --config {} --out {}", preset("bounds_planck"), dir.string())), 0);
  const auto r = load_json(dir / "bounds.json");
  EXPECT_EQ(r["bounds"][0]["id"], "euler-angle");
  EXPECT_NEAR(r["bounds"][0]["threshold"].get<double>() / 1e15, 1.0, 1e-12);
  const auto dir2 = scratch("bounds-nuclear");
  ASSERT_EQ(run_cli(fmt::format("bounds --config {} --out {}", preset("bounds_nuclear"), dir2.string())), 0);
  const auto n = load_json(dir2 / "bounds.json");
  EXPECT_NEAR(n["bounds"][0]["threshold"].get<double>() / 1e-5, 1.0, 1e-12);
  EXPECT_EQ(n["bounds"][0]["satisfied"], true);  // 2 mm region vs 10 um threshold
}

TEST(Cli, SternGerlachXUpSplitsEvenly) {
  const auto dir = scratch("sg");
  ASSERT_EQ(run_cli(fmt::format("sterngerlach --config {} --out {} --quiet", preset("sterngerlach_xup"), dir.string())), 0);
  const auto r = load_json(dir / "sterngerlach.json");
  EXPECT_NEAR(r["up_fraction"].get<double>(), 0.5, 0.02);
  EXPECT_NEAR(r["down_fraction"].get<double>(), 0.5, 0.02);
  EXPECT_EQ(r["ensemble"].get<int>(), 10000);
  const auto outcomes = slurp(dir / "outcomes.tsv");
  EXPECT_EQ(outcomes.substr(0, outcomes.find('\n')), "trajectory\tlabel\tz0[length]\tz[length]");
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("codes");
  // Validation: unknown key, bad value, SI suffix outside [bounds], bad spin name.
  EXPECT_EQ(run_cli(fmt::format("bounds --set bounds.typo=1 --out {}", (dir / "a").string())), 1);
  EXPECT_EQ(run_cli(fmt::format("evolve --set evolve.duration=abc --out {}", (dir / "b").string())), 1);
  EXPECT_EQ(run_cli(fmt::format("evolve --set evolve.duration=1k --out {}", (dir / "c").string())), 1);
  EXPECT_EQ(run_cli(fmt::format("sterngerlach --set sterngerlach.spin=sideways --out {}", (dir / "d").string())), 1);
  EXPECT_EQ(run_cli("nosuchcommand"), 1);
  // Numerical quality: the branches never separate.
  EXPECT_EQ(run_cli(fmt::format("sterngerlach --set coupling.gradient=1 --set sterngerlach.max_time=1 "
                                "--set sterngerlach.count=200 --set sterngerlach.check_stability=false --out {}",
                                (dir / "e").string())),
            2);
  // Numerical quality: norm drift beyond an impossible tolerance.
  EXPECT_EQ(run_cli(fmt::format("evolve --set evolve.norm_tolerance=1e-30 --set evolve.duration=0.5 --out {}",
                                (dir / "f").string())),
            2);
  // Statistical failure: the scaled-velocity control.
  EXPECT_EQ(run_cli(fmt::format("equivariance --config {} --out {}",
                                preset("equivariance_control"), (dir / "g").string())),
            3);
  // Zero-duration equivariance passes.
  EXPECT_EQ(run_cli(fmt::format("equivariance --config {} --out {}", preset("equivariance_zero"), (dir / "h").string())), 0);
}

TEST(Cli, SameSeedGivesByteIdenticalFiles) {
  const auto a = scratch("repro-a");
  const auto b = scratch("repro-b");
  const auto c = scratch("repro-c");
  const auto cfg = preset("trajectories_double");
  ASSERT_EQ(run_cli(fmt::format("trajectories --config {} --seed 17 --threads 1 --out {}", cfg, a.string())), 0);
  ASSERT_EQ(run_cli(fmt::format("trajectories --config {} --seed 17 --threads 3 --out {}", cfg, b.string())), 0);
  ASSERT_EQ(run_cli(fmt::format("trajectories --config {} --seed 18 --out {}", cfg, c.string())), 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    auto x = slurp(a / name), y = slurp(b / name);
    if (name == "manifest.json") {
      auto strip = [](std::string s) {
        auto j = nlohmann::ordered_json::parse(s);
        j.erase("started");
        j.erase("finished");
        return j.dump();
      };
      x = strip(x);
      y = strip(y);
    }
    EXPECT_EQ(x, y) << name;
    ++compared;
  }
  EXPECT_EQ(compared, 4u);  // config, data, report, manifest
  EXPECT_NE(slurp(a / "trajectories.tsv"), slurp(c / "trajectories.tsv"));
  EXPECT_NE(load_json(a / "manifest.json")["config_sha256"], load_json(c / "manifest.json")["config_sha256"]);
}

TEST(Cli, ConfigHashStableUnderKeyReordering) {
  const auto p1 = write_config("order1", "[bounds]\ndensity = 1e30\ncutoff = 1e35\n");
  const auto p2 = write_config("order2", "[bounds]\ncutoff = 1e35\n\ndensity = 1000e27\n");
  const auto a = scratch("hash-a"), b = scratch("hash-b");
  ASSERT_EQ(run_cli(fmt::format("bounds --config {} --out {}", p1, a.string())), 0);
  ASSERT_EQ(run_cli(fmt::format("bounds --config {} --out {}", p2, b.string())), 0);
  EXPECT_EQ(load_json(a / "manifest.json")["config_sha256"], load_json(b / "manifest.json")["config_sha256"]);
  EXPECT_EQ(slurp(a / "bounds.json"), slurp(b / "bounds.json"));
}
