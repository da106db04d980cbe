#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "doctest.h"

using namespace learn;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config round trip") {
  RunConfig d;
  CHECK(parse_config(emit_config(d)) == d);
  CHECK(parse_config(emit_config(d), true) == d);

  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    RunConfig c;
    c.seed = rng.bits();
    c.root = "runs/r" + std::to_string(i);
    c.per_class = 10 + rng.below(1000);
    c.backbone_lr = rng.uniform(1e-5, 1.0);
    c.learn_lr = rng.uniform(1e-6, 1e-2);
    c.weights.lambda_inter = rng.uniform();
    c.weights.margin = rng.uniform(0.1, 10.0);
    c.min_coverage = rng.uniform(0.0, 0.3);
    c.clean_fraction = rng.uniform();
    c.types = {OccluderType::object, OccluderType::white};
    if (i % 2) c.heldout = OccluderType::object;
    if (i % 3 == 0) c.ablation = "other/learn.ckpt";
    CHECK(parse_config(emit_config(c)) == c);
  }
}

TEST_CASE("config diagnostics name the key") {
  auto message = [](const std::string& text, bool all = false) {
    try {
      parse_config(text, all);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("[learn]\nlr = fast\n").find("learn.lr") != std::string::npos);
  CHECK(message("[learn]\nwarmup = 3\n").find("learn.warmup") != std::string::npos);
  CHECK(message("[data]\nper_class = -4\n").find("data.per_class") != std::string::npos);
  CHECK(message("[occlusion]\ntypes = white cloud\n").find("occlusion.types") != std::string::npos);
  CHECK(message("[run]\nseed = 1\n", true).find("missing config key 'run.root'") != std::string::npos);

  auto text = emit_config(RunConfig{});
  text.erase(text.find("patience"), text.find('\n', text.find("patience")) - text.find("patience") + 1);
  CHECK(message(text, true).find("learn.patience") != std::string::npos);
  CHECK(parse_config(text).patience == RunConfig{}.patience);
}

TEST_CASE("precedence: flags over file over defaults") {
  const auto dir = scratch("learn_cfg_test");
  fs::create_directories(dir);
  const auto path = dir / "run.ini";
  std::ofstream(path) << "[learn]\nlr = 0.005\nbatch = 16\n[run]\nseed = 3\n";

  auto c = resolve_config(path.string(), {"learn.batch=8"});
  CHECK(c.learn_lr == 0.005);
  CHECK(c.learn_batch == 8);
  CHECK(c.seed == 3);
  CHECK(c.max_epochs == RunConfig{}.max_epochs);
  CHECK(resolve_config("", {}) == RunConfig{});

  CHECK_THROWS_AS(resolve_config(path.string(), {"learn.batch"}), std::invalid_argument);
  CHECK_THROWS_AS(resolve_config(path.string(), {"learn.batch=0"}), std::invalid_argument);
  CHECK_THROWS(resolve_config((dir / "absent.ini").string(), {}));
  fs::remove_all(dir);
}

TEST_CASE("held-out type leaves the training policy") {
  RunConfig c;
  c.heldout = OccluderType::texture;
  auto t = c.train_config();
  CHECK(t.policy.types.size() == 3);
  CHECK(std::find(t.policy.types.begin(), t.policy.types.end(), OccluderType::texture) ==
        t.policy.types.end());
  CHECK(t.seed == c.seed);
  c.types = {OccluderType::white};
  c.heldout = OccluderType::noise;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("generate-data is idempotent and checksummed") {
  RunConfig c;
  c.root = scratch("learn_gen_test").string();
  c.per_class = 20;
  std::ostringstream log;
  cmd_generate_data(c, log);
  const RunLayout layout(c.root);
  const auto manifest = slurp(layout.data / "manifest.txt");
  const auto suite = slurp(layout.data / "frozen_suite.txt");
  CHECK(parse_config(slurp(layout.data / "config.ini"), true) == c);

  std::istringstream s(suite);
  auto frozen = read_frozen_suite(s);
  CHECK(frozen.cells.size() == 12);
  CHECK(frozen.clean.records.size() == 4 * 20 / 5);

  cmd_generate_data(c, log);
  CHECK(slurp(layout.data / "manifest.txt") == manifest);
  CHECK(slurp(layout.data / "frozen_suite.txt") == suite);

  // Downstream stages refuse a dataset from another config.
  RunConfig other = c;
  other.per_class = 30;
  CHECK_THROWS_WITH_AS(cmd_train_backbone(other, log), doctest::Contains("different config"),
                       std::runtime_error);

  auto corrupt = manifest;
  corrupt[corrupt.find(" train ") + 1] = 'T';
  std::ofstream(layout.data / "manifest.txt", std::ios::binary) << corrupt;
  CHECK_THROWS_WITH(cmd_train_backbone(c, log), doctest::Contains("checksum"));
  fs::remove_all(c.root);
}

TEST_CASE("later stages report missing inputs") {
  RunConfig c;
  c.root = scratch("learn_missing_test").string();
  std::ostringstream log;
  CHECK_THROWS_WITH(cmd_train_backbone(c, log), doctest::Contains("generate-data"));
  c.per_class = 20;
  cmd_generate_data(c, log);
  CHECK_THROWS_WITH(cmd_train_learn(c, log), doctest::Contains("train-backbone"));
  CHECK_THROWS_WITH(cmd_report(c, log), doctest::Contains("evaluate"));
  fs::remove_all(c.root);
}
