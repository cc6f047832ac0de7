// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "detrack/checkpoint.hpp"
#include "detrack/cli.hpp"
#include "detrack/config.hpp"
#include "detrack/trainer.hpp"

using namespace detrack;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "detrack");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = run_cli(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("detrack_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Layer-by-layer parameter count of the desk model, from the architecture.
std::int64_t desk_parameter_oracle() {
  const std::int64_t c = 128, h = 512, bins = 100, patch = 8, depth = 4, layers = 6;
  const std::int64_t template_tokens = (32 / patch) * (32 / patch);
  const std::int64_t search_tokens = (64 / patch) * (64 / patch);
  const std::int64_t ln = 2 * c;
  const std::int64_t dense_cc = c * c + c;
  const std::int64_t attn = 4 * dense_cc;
  const std::int64_t ffn = (c * h + h) + (h * c + c);
  const std::int64_t vocab = bins * c;
  const std::int64_t box_slot = 4 * c;
  const std::int64_t embed =
      3 * patch * patch * c + c + template_tokens * c + search_tokens * c + box_slot;
  const std::int64_t image_block = 2 * ln + attn + ffn;
  const std::int64_t denoise_block = 3 * ln + attn + ffn + 2 * dense_cc;
  const std::int64_t vit = embed + depth * (image_block + denoise_block) + ln;
  const std::int64_t refiner_layer = 4 * ln + 2 * attn + ffn;
  const std::int64_t refiner = 8 * c + 4 * c + layers * refiner_layer + ln;
  const std::int64_t scorer = (c + 4) * 64 + 64 + 64 + 1;
  return vocab + vit + refiner + scorer;
}

}  // namespace

TEST_CASE("config parsing and echo", "[config]") {
  auto c = parse_config(std::nullopt);
  CHECK(c.echo() == Config::defaults().echo());
  auto dir = scratch_dir("config");
  std::ofstream(dir / "empty.cfg") << "";
  CHECK(parse_config(dir / "empty.cfg").echo() == Config::defaults().echo());

  std::ofstream(dir / "a.cfg") << "# comment\nvit.depth=6\n\nmemory.update_mode=direct\n";
  auto d = parse_config(dir / "a.cfg", {"vit.depth=4", "noise.beta_end=0.03"});
  CHECK(d.get_int("vit.depth") == 4);
  CHECK(d.echo().find("vit.depth=4\n") != std::string::npos);
  CHECK(d.get_string("memory.update_mode") == "direct");
  CHECK(d.get_double("noise.beta_end") == 0.03);

  Config back = Config::defaults();
  back.merge_text(d.echo());
  CHECK(back.echo() == d.echo());
  fs::remove_all(dir);
}

TEST_CASE("config errors name the key", "[config]") {
  auto c = Config::defaults();
  CHECK_THROWS_WITH(c.set("vit.depth", "abc"), Catch::Matchers::ContainsSubstring("vit.depth"));
  CHECK_THROWS_WITH(c.set("vit.width", "3"), Catch::Matchers::ContainsSubstring("vit.width"));
  CHECK_THROWS_WITH(c.set("memory.update_mode", "often"),
                    Catch::Matchers::ContainsSubstring("memory.update_mode"));
  CHECK_THROWS_WITH(c.set("run.deterministic", "maybe"),
                    Catch::Matchers::ContainsSubstring("run.deterministic"));
  CHECK_THROWS_WITH(c.merge_text("vit.depth=2\nbogus\n", "f.cfg"),
                    Catch::Matchers::ContainsSubstring("f.cfg:2"));
  for (const auto& spec : Config::registry()) CHECK_FALSE(spec.doc.empty());
}

TEST_CASE("checkpoint round trip", "[checkpoint]") {
  auto config = Config::defaults();
  config.set("vit.depth", "1");
  config.set("refiner.layers", "1");
  auto model = make_model(model_config(config), 3);
  TrainProgress progress;
  progress.stage = 2;
  progress.epochs_done = 4;
  progress.step = 77;
  auto ck = make_checkpoint(model, config, progress);
  auto bytes = serialize_checkpoint(ck);
  auto back = deserialize_checkpoint(bytes);
  CHECK(back.version == kCheckpointVersion);
  CHECK(back.config == config.echo());
  CHECK(back.meta_int("stage", 0) == 2);
  CHECK(back.meta_int("step", 0) == 77);
  auto restored = model_from_checkpoint(back);
  CHECK(parameter_hash(restored->parameters()) == parameter_hash(model->parameters()));
  CHECK(serialize_checkpoint(back) == bytes);

  auto dir = scratch_dir("ckpt");
  save_checkpoint(dir / "m.ck", ck);
  CHECK(parameter_hash(model_from_checkpoint(load_checkpoint(dir / "m.ck"))->parameters()) ==
        parameter_hash(model->parameters()));
  CHECK_THROWS_WITH(load_checkpoint(dir / "missing.ck"),
                    Catch::Matchers::ContainsSubstring("cannot open"));
  fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected", "[checkpoint]") {
  auto config = Config::defaults();
  config.set("vit.depth", "1");
  config.set("refiner.layers", "1");
  auto bytes = serialize_checkpoint(make_checkpoint(make_model(model_config(config), 0), config, {}));
  CHECK_THROWS_WITH(deserialize_checkpoint("NOTACKPT"), Catch::Matchers::ContainsSubstring("corrupt"));
  CHECK_THROWS_WITH(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)),
                    Catch::Matchers::ContainsSubstring("corrupt"));
  auto wrong_version = bytes;
  wrong_version[8] = 0;
  CHECK_THROWS(deserialize_checkpoint(wrong_version));
}

TEST_CASE("restore checks shapes", "[checkpoint]") {
  auto small = Config::defaults();
  small.set("vit.depth", "1");
  small.set("refiner.layers", "1");
  auto wide = small;
  wide.set("vit.dim", "64");
  wide.set("vocab.dim", "64");
  auto a = make_model(model_config(small), 0);
  auto b = make_model(model_config(wide), 0);
  CHECK_THROWS(restore_params(*b, capture_params(*a)));
}

TEST_CASE("info reports cost and parameters", "[cli]") {
  auto paper = cli({"info", "--preset", "detrack256"});
  REQUIRE(paper.code == 0);
  const auto pos = paper.out.find("forward cost");
  REQUIRE(pos != std::string::npos);
  const auto colon = paper.out.find(": ", pos);
  const double gmac = std::stod(paper.out.substr(colon + 2));
  CHECK(std::abs(gmac - 53.0) / 53.0 < 0.15);

  auto desk = cli({"info", "--preset", "desk"});
  REQUIRE(desk.code == 0);
  CHECK(desk.out.find("parameters: " + std::to_string(desk_parameter_oracle()) + "\n") !=
        std::string::npos);
  CHECK(parameter_count(*make_model(model_config(Config::defaults()), 0)) == desk_parameter_oracle());

  auto missing = cli({"info", "--ckpt", "/nonexistent/x.ck"});
  CHECK(missing.code != 0);
  CHECK(missing.err.find("error") != std::string::npos);
  CHECK(std::count(missing.err.begin(), missing.err.end(), '\n') == 1);
}

TEST_CASE("cli rejects bad input with one line", "[cli]") {
  for (auto args : std::vector<std::vector<std::string>>{
           {"info", "--preset", "desk", "--set", "vit.depth=abc"},
           {"bogus"},
           {"eval", "--pred", "/nonexistent", "--gt", "/nonexistent"},
           {"train", "--stage", "2", "--out", "/tmp/x.ck"}}) {
    auto r = cli(args);
    CHECK(r.code != 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  }
}

TEST_CASE("synth then eval then ablate-memory end to end", "[cli]") {
  auto dir = scratch_dir("cli_e2e");
  REQUIRE(cli({"synth", "--out", (dir / "data").string(), "--videos", "2", "--frames", "6",
               "--seed", "3"})
              .code == 0);
  auto seqs = load_sequences(dir / "data");
  REQUIRE(seqs.size() == 2);

  fs::create_directories(dir / "pred");
  for (const auto& s : seqs) write_predictions(dir / "pred" / (s.name + ".txt"), s.boxes);
  auto r = cli({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "data").string(),
                "--report", (dir / "self.csv").string()});
  REQUIRE(r.code == 0);
  std::ifstream in(dir / "self.csv");
  std::string header, line, last;
  std::getline(in, header);
  while (std::getline(in, line)) last = line;
  CHECK(header == "sequence,frames,ao,sr50,sr75,auc,p,p_norm");
  CHECK(last.rfind("mean,10,1.000000,1.000000,1.000000,0.980392,1.000000,1.000000", 0) == 0);

  auto config = Config::defaults();
  config.set("vit.depth", "1");
  config.set("refiner.layers", "1");
  save_checkpoint(dir / "m.ck", make_checkpoint(make_model(model_config(config), 0), config, {}));
  auto sweep = [&](const std::string& out) {
    return cli({"ablate-memory", "--ckpt", (dir / "m.ck").string(), "--seq",
                (dir / "data").string(), "--sweep", "memory.traj_len=1", "--report",
                (dir / out).string()});
  };
  REQUIRE(sweep("a.csv").code == 0);
  REQUIRE(sweep("b.csv").code == 0);
  std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  const auto rows = sa.str();
  CHECK(rows == sb.str());
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 2);
  fs::remove_all(dir);
}
