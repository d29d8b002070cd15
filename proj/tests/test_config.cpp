#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "srttt/config.hpp"

using namespace srttt;
namespace fs = std::filesystem;

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

}  // namespace

TEST_CASE("presets: desk defaults and paper scaling") {
  RunConfig desk = RunConfig::from_preset("desk");
  CHECK(desk.model.n_layers == 2);
  CHECK(desk.model.d_model == 64);
  CHECK(desk.model.n_heads == 4);
  CHECK(desk.model.d_head() == 16);
  CHECK(desk.train.total_steps == 2800);
  CHECK(desk.train.stage2_start == 2000);
  CHECK(desk.model.router.chunk_size == 16);
  desk.validate();

  RunConfig paper = RunConfig::from_preset("paper");
  CHECK(paper.model.n_layers == 4);
  CHECK(paper.model.d_model == 256);
  CHECK(paper.train.total_steps == 10000);
  CHECK(paper.train.stage2_start == 7000);
  CHECK(paper.model.router.chunk_size == 64);
  CHECK(paper.train.seq_len == 2048);
  paper.validate();

  CHECK_THROWS_AS(RunConfig::from_preset("desktop"), ConfigError);
}

TEST_CASE("config file: comments, overrides, unknown keys, bad syntax") {
  const std::string path = write_tmp("srttt_cfg_ok.cfg",
                                     "# comment line\n"
                                     "preset = desk\n"
                                     "seed = 9   # trailing comment\n"
                                     "model.d_model = 32\n"
                                     "train.total_steps = 40\n"
                                     "train.stage2_start = 30\n"
                                     "\n");
  RunConfig c = RunConfig::load(path, {"train.lr=0.001"});
  CHECK(c.seed == 9);
  CHECK(c.model.d_model == 32);
  CHECK(c.train.total_steps == 40);
  CHECK(c.train.lr == 0.001);

  const std::string bad_key = write_tmp("srttt_cfg_bad1.cfg", "model.dmodel = 32\n");
  CHECK_THROWS_AS(RunConfig::load(bad_key, {}), ConfigError);

  const std::string bad_syntax = write_tmp("srttt_cfg_bad2.cfg", "model.d_model 32\n");
  CHECK_THROWS_AS(RunConfig::load(bad_syntax, {}), ConfigError);

  const std::string bad_value = write_tmp("srttt_cfg_bad3.cfg", "model.d_model = many\n");
  CHECK_THROWS_AS(RunConfig::load(bad_value, {}), ConfigError);

  CHECK_THROWS_AS(RunConfig::load("/nonexistent/path.cfg", {}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"notkeyvalue"}), ConfigError);
}

TEST_CASE("validation: ranges rejected before any work") {
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"model.n_heads=3"}), ConfigError);  // 64%3
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"model.alpha_max=1.5"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"model.chunk_factor=1.0"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"train.stage2_start=5000"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"train.needle_mix=2"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"eval.depths="}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_overrides("desk", {"model.percentile=0"}), ConfigError);
  // stage-1-only boundary is legal
  RunConfig baseline = RunConfig::from_overrides("desk", {"train.stage2_start=2800"});
  CHECK(baseline.train.stage2_start == baseline.train.total_steps);
}

TEST_CASE("config hash: trajectory fields only") {
  RunConfig a = RunConfig::from_preset("desk");
  RunConfig b = RunConfig::from_preset("desk");
  CHECK(a.config_hash() == b.config_hash());
  b.seed = 2;
  CHECK(a.config_hash() != b.config_hash());
  b = a;
  b.train.lr = 1e-3;
  CHECK(a.config_hash() != b.config_hash());
  b = a;
  b.eval.samples_per_depth = 99;  // eval settings do not shape training
  CHECK(a.config_hash() == b.config_hash());
}

TEST_CASE("to_text round trips through apply_kv") {
  RunConfig a = RunConfig::from_overrides(
      "desk", {"seed=77", "model.inner_lr=0.05", "train.needle_mix=0.25", "eval.depths=0.1,0.9"});
  RunConfig b;
  std::istringstream in(a.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    REQUIRE(eq != std::string::npos);
    auto trim = [](std::string s) {
      const auto b2 = s.find_first_not_of(' ');
      const auto e = s.find_last_not_of(' ');
      return s.substr(b2, e - b2 + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    if (key == "preset") continue;
    b.apply_kv(key, trim(line.substr(eq + 1)));
  }
  CHECK(b.seed == 77);
  CHECK(b.model.inner_lr == 0.05);
  CHECK(b.train.needle_mix == 0.25);
  CHECK(b.eval.depths == std::vector<double>{0.1, 0.9});
  CHECK(a.config_hash() == b.config_hash());
}

TEST_CASE("SRTTT_CONFIG_DIR resolves relative config names") {
  const auto dir = fs::temp_directory_path() / "srttt_cfg_dir";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "shared.cfg");
    out << "seed = 55\n";
  }
  setenv("SRTTT_CONFIG_DIR", dir.c_str(), 1);
  RunConfig c = RunConfig::load("shared.cfg", {});
  CHECK(c.seed == 55);
  unsetenv("SRTTT_CONFIG_DIR");
  CHECK_THROWS_AS(RunConfig::load("shared.cfg", {}), ConfigError);
}
