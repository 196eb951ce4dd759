// End-to-end harness tests: config contract, CLI exit codes, artifact layout,
// and cross-command consistency. CLI-level cases run the real binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdgt/config.hpp"
#include "hdgt/errors.hpp"
#include "hdgt/pipeline.hpp"
#include "hdgt/scene.hpp"
#include "hdgt/tensor.hpp"
#include "hdgt/upsampler.hpp"

using namespace hdgt;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hdgt_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string write_text(const std::string& dir, const std::string& name,
                       const std::string& text) {
  const std::string path = dir + "/" + name;
  std::ofstream out(path);
  out << text;
  return path;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Runs the installed CLI binary; returns its exit code.
int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(HDGT_CLI_PATH) + " " + args + " >/dev/null 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::map<std::string, std::string> dir_bytes(const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    out[fs::relative(entry.path(), dir).string()] = read_file(entry.path());
  }
  return out;
}

}  // namespace

TEST_CASE("default config round-trips through JSON unchanged") {
  const RunConfig def = default_run_config();
  const std::string text = run_config_json(def);
  const RunConfig back = parse_run_config(text);
  CHECK(run_config_json(back) == text);
  CHECK(back.seed == def.seed);
  CHECK(back.stack.channels == def.stack.channels);
  CHECK(back.train.hyper.steps == def.train.hyper.steps);
}

TEST_CASE("unknown keys are rejected at every config level") {
  CHECK_THROWS_AS(parse_run_config(R"({"sseed": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"scene": {"pixels": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"stack": {"idepth": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"modulation": {"alpha2": 0.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"steppes": 10}})"), ConfigError);
  CHECK_THROWS_AS(
      parse_run_config(R"({"modulation": {"alpha": {"kinds": "fixed"}}})"),
      ConfigError);
}

TEST_CASE("invalid config values are rejected with config errors") {
  CHECK_THROWS_AS(parse_run_config(R"({"modulation": {"window_radius": 0}})"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_run_config(R"({"modulation": {"alpha": {"kind": "quantile", "value": 1.5}}})"),
      ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"holdout_frac": 1.0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"batch": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"seed": "zero"})"), ConfigError);
}

TEST_CASE("cli maps error classes to exit codes") {
  const std::string dir = fresh_dir("exit_codes");
  const std::string bad = write_text(dir, "bad.json", R"({"sseed": 3})");

  CHECK(run_cli("run --config " + bad + " --out " + dir + "/o1") == 2);
  CHECK(run_cli("run --config " + dir + "/absent.json --out " + dir + "/o2") == 3);
  CHECK(run_cli("bench --grid \"K=16;Q=2\" --out " + dir + "/o3") == 2);
  CHECK(run_cli("bench --grid \"K=16\" --out " + dir + "/o4") == 2);
  CHECK(run_cli("bench --grid \"K=0;N=2\" --out " + dir + "/o5") == 2);
  CHECK(run_cli("bench --grid \"K=16,x;N=2\" --out " + dir + "/o6") == 2);
  CHECK(run_cli("run --gating sideways --out " + dir + "/o7") == 2);
  CHECK(run_cli("run --upsampler learned --out " + dir + "/o8") == 3);
  CHECK(run_cli("run --scene " + dir + "/no_such_scene --out " + dir + "/o9") == 3);
  CHECK(run_cli("detect --scene " + dir + "/no_such_scene --out " + dir + "/o10") == 3);
  fs::remove_all(dir);
}

TEST_CASE("generate is deterministic per seed and sensitive to it") {
  RunConfig cfg = default_run_config();
  cfg.seed = 5;
  cfg.out_dir = fresh_dir("gen_a");
  cmd_generate(cfg);
  const auto a = dir_bytes(cfg.out_dir);

  RunConfig cfg2 = cfg;
  cfg2.out_dir = fresh_dir("gen_b");
  cmd_generate(cfg2);
  const auto b = dir_bytes(cfg2.out_dir);
  CHECK(a == b);

  RunConfig cfg3 = cfg;
  cfg3.seed = 6;
  cfg3.out_dir = fresh_dir("gen_c");
  cmd_generate(cfg3);
  CHECK(dir_bytes(cfg3.out_dir) != a);

  fs::remove_all(cfg.out_dir);
  fs::remove_all(cfg2.out_dir);
  fs::remove_all(cfg3.out_dir);
}

TEST_CASE("zero singularity fraction produces empty ground-truth masks") {
  RunConfig cfg = default_run_config();
  cfg.scene.singularity_fraction = 0.0;
  cfg.seed = 4;
  cfg.out_dir = fresh_dir("gen_zero");
  const json rep = cmd_generate(cfg);
  CHECK(rep.at("scene").at("singular_tokens").get<std::uint64_t>() == 0);

  const SceneBundle loaded = load_scene(cfg.out_dir);
  for (const auto& mask : loaded.singularity_masks)
    for (char m : mask) CHECK(m == 0);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("scene round-trip: run on a saved scene matches in-memory generation") {
  RunConfig gen = default_run_config();
  gen.seed = 9;
  gen.out_dir = fresh_dir("scene_save");
  cmd_generate(gen);

  RunConfig from_disk = default_run_config();
  from_disk.seed = 9;
  from_disk.scene_dir = gen.out_dir;
  from_disk.out_dir = fresh_dir("run_disk");
  const json a = cmd_run(from_disk);

  RunConfig in_memory = default_run_config();
  in_memory.seed = 9;
  in_memory.out_dir = fresh_dir("run_mem");
  const json b = cmd_run(in_memory);

  CHECK(a.at("detection") == b.at("detection"));
  CHECK(a.at("depth") == b.at("depth"));
  CHECK(a.at("masks") == b.at("masks"));
  fs::remove_all(gen.out_dir);
  fs::remove_all(from_disk.out_dir);
  fs::remove_all(in_memory.out_dir);
}

TEST_CASE("gating off skips detection and pass-2 artifacts") {
  RunConfig cfg = default_run_config();
  cfg.gating = false;
  cfg.seed = 2;
  cfg.out_dir = fresh_dir("gating_off");
  const json rep = cmd_run(cfg);
  CHECK(rep.at("detection").at("status").get<std::string>() == "skipped (gating off)");
  CHECK(!rep.at("flops").contains("pass2_coarse"));
  CHECK(!fs::exists(cfg.out_dir + "/modulation"));
  CHECK(!fs::exists(cfg.out_dir + "/depth_pass1_v00.hdt"));
  CHECK(fs::exists(cfg.out_dir + "/depth_final_v00.hdt"));
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("empty refined mask makes the gated pass equal the ungated run") {
  // Fixed thresholds no saliency or distortion value can clear: the initial
  // mask is empty and refinement adds nothing, so pass 2 runs with a no-op
  // gate and must reproduce the gating-off depths bit for bit.
  RunConfig gated = default_run_config();
  gated.seed = 3;
  gated.modulation.alpha.kind = AlphaMode::Kind::kFixed;
  gated.modulation.alpha.value = 2.0;
  gated.modulation.refine_threshold.kind = AlphaMode::Kind::kFixed;
  gated.modulation.refine_threshold.value = 1e18;
  gated.out_dir = fresh_dir("empty_mask_on");
  const json rep = cmd_run(gated);
  CHECK(rep.at("masks").at("initial_count").get<std::uint64_t>() == 0);
  CHECK(rep.at("masks").at("refined_count").get<std::uint64_t>() == 0);

  RunConfig off = default_run_config();
  off.seed = 3;
  off.gating = false;
  off.out_dir = fresh_dir("empty_mask_off");
  cmd_run(off);

  const std::size_t n = default_run_config().scene.n_views;
  for (std::size_t v = 0; v < n; ++v) {
    char tag[8];
    std::snprintf(tag, sizeof(tag), "%02zu", v);
    const std::string name = "/depth_final_v" + std::string(tag) + ".hdt";
    CHECK(read_file(gated.out_dir + name) == read_file(off.out_dir + name));
  }
  fs::remove_all(gated.out_dir);
  fs::remove_all(off.out_dir);
}

TEST_CASE("detect on a singularity-free scene reports auc as not applicable") {
  RunConfig gen = default_run_config();
  gen.scene.singularity_fraction = 0.0;
  gen.seed = 6;
  gen.out_dir = fresh_dir("detect_scene");
  cmd_generate(gen);

  RunConfig det = default_run_config();
  det.scene.singularity_fraction = 0.0;
  det.scene_dir = gen.out_dir;
  det.out_dir = fresh_dir("detect_out");
  const json rep = cmd_detect(det);
  CHECK(rep.at("detection").at("auc").is_null());
  const std::string status = rep.at("detection").at("status").get<std::string>();
  CHECK(status.find("not-applicable") != std::string::npos);
  CHECK(fs::exists(det.out_dir + "/saliency.hdt"));
  CHECK(fs::exists(det.out_dir + "/initial_mask.hdt"));
  CHECK(fs::exists(det.out_dir + "/refined_mask.hdt"));
  fs::remove_all(gen.out_dir);
  fs::remove_all(det.out_dir);
}

TEST_CASE("train-upsampler with zero steps checkpoints the initialization") {
  RunConfig cfg = default_run_config();
  cfg.train.hyper.steps = 0;
  cfg.out_dir = fresh_dir("train_zero");
  const json rep = cmd_train_upsampler(cfg);
  CHECK(rep.at("training").at("steps").get<std::uint64_t>() == 0);

  const UpsamplerParams loaded =
      load_upsampler_checkpoint(cfg.out_dir + "/upsampler_checkpoint");
  const auto strides = config_guidance_strides(cfg.stack);
  UpsamplerParams init = init_upsampler_params(cfg.stack.channels, cfg.train.hyper.seed,
                                               strides.first, strides.second);
  UpsamplerParams loaded_copy = loaded;
  for (Tensor* a : upsampler_param_list(loaded_copy)) CHECK(a->size() > 0);
  std::vector<Tensor*> lp = upsampler_param_list(loaded_copy);
  std::vector<Tensor*> ip = upsampler_param_list(init);
  REQUIRE(lp.size() == ip.size());
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(lp[i]->data == ip[i]->data);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("reports carry the schema header and end with the timing section") {
  RunConfig cfg = default_run_config();
  cfg.seed = 1;
  cfg.out_dir = fresh_dir("report_shape");
  const json rep = cmd_run(cfg);
  CHECK(rep.at("schema").get<std::string>() == std::string(kReportSchema));
  CHECK(rep.at("tool").get<std::string>() == std::string(kToolVersion));
  CHECK(rep.at("command").get<std::string>() == "run");

  const std::string text = read_file(cfg.out_dir + "/report.txt");
  CHECK(text.rfind("report hdgt-report-v1 | hdgt 1.0 | command: run", 0) == 0);
  std::vector<std::string> sections;
  std::istringstream lines(text);
  std::string ln;
  while (std::getline(lines, ln))
    if (!ln.empty() && ln.front() == '[' && ln.back() == ']')
      sections.push_back(ln.substr(1, ln.size() - 2));
  REQUIRE(!sections.empty());
  CHECK(sections.back() == "timing");
  for (std::size_t i = 2; i + 1 < sections.size(); ++i)
    CHECK(sections[i - 1] < sections[i]);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("cli flags override the config file") {
  const std::string dir = fresh_dir("flag_override");
  const std::string cfg_path = write_text(dir, "cfg.json", R"({"seed": 3})");
  CHECK(run_cli("generate --config " + cfg_path + " --seed 9 --out " + dir + "/scene") == 0);
  const SceneBundle scene = load_scene(dir + "/scene");
  CHECK(scene.seed == 9);
  fs::remove_all(dir);
}

TEST_CASE("bench accepts a single-cell grid via the cli") {
  const std::string dir = fresh_dir("bench_cell");
  CHECK(run_cli("bench --grid \"K=16;N=2\" --out " + dir) == 0);
  const json rep = json::parse(read_file(dir + "/report.json"));
  CHECK(rep.at("scaling").at("rows").size() == 1);
  CHECK(rep.at("dual_vs_flat").at("attention_ratio").get<double>() > 0.0);
  fs::remove_all(dir);
}
