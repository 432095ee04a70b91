#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>

#include "nicreg/trainer.hpp"
#include "test_util.hpp"

using namespace nicreg;
using nicreg::testing::expect_error;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.lambdas = {0.0067};
  c.alphas = {0.0};
  c.steps = 40;
  c.batch_size = 16;
  c.dataset_size = 200;
  c.eval_every = 10;
  c.codec_lr = 1e-3;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nicreg_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("zero steps records the initialization only") {
  TrainConfig c = tiny_config();
  c.steps = 0;
  RunRecord r = train_one(c, 0.0067, 0.0, 1);
  CHECK(r.ok());
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].step == 0);
  CHECK(std::isnan(r.rows[0].reg_bits));
  CHECK(r.rows[0].quality_db == doctest::Approx(-10.0 * std::log10(r.rows[0].mse)));
}

TEST_CASE("metric rows follow the eval schedule") {
  TrainConfig c = tiny_config();
  c.steps = 45;
  RunRecord r = train_one(c, 0.0067, 0.3, 2);
  REQUIRE(r.ok());
  std::vector<std::uint64_t> steps;
  for (const auto& m : r.rows) steps.push_back(m.step);
  CHECK(steps == std::vector<std::uint64_t>{0, 10, 20, 30, 40, 45});
  for (const auto& m : r.rows) CHECK(std::isfinite(m.reg_bits));
}

TEST_CASE("same config and seed give byte-identical metrics") {
  TrainConfig c = tiny_config();
  c.alphas = {0.0, 1.0};
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  TrainOptions oa, ob;
  oa.output_root = a;
  ob.output_root = b;
  auto ra = train_grid(c, oa);
  auto rb = train_grid(c, ob);
  REQUIRE(ra.size() == 2);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(ra[i].hash == rb[i].hash);
    CHECK(slurp(ra[i].directory / "metrics.csv") == slurp(rb[i].directory / "metrics.csv"));
  }
  // A different seed changes the trajectory.
  RunRecord other = train_one(c, 0.0067, 1.0, 2);
  CHECK(other.hash != ra[1].hash);
  CHECK(other.rows.back().mse != ra[1].rows.back().mse);
}

TEST_CASE("parallel grid matches the serial grid") {
  TrainConfig c = tiny_config();
  c.lambdas = {0.0035, 0.013};
  c.alphas = {0.0, 0.3};
  TrainOptions serial, parallel;
  parallel.jobs = 3;
  auto s = train_grid(c, serial);
  auto p = train_grid(c, parallel);
  REQUIRE(s.size() == p.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s[i].hash == p[i].hash);
    CHECK(metrics_csv(s[i], "x") == metrics_csv(p[i], "x"));
  }
}

TEST_CASE("grid cardinality and cache reuse") {
  TrainConfig c = tiny_config();
  c.steps = 10;
  c.lambdas = {0.0018, 0.0035, 0.0067, 0.0130};
  c.alphas = {0.0, 1.0};
  const fs::path root = fresh_dir("grid");
  TrainOptions o;
  o.output_root = root;
  auto first = train_grid(c, o);
  REQUIRE(first.size() == 8);
  std::set<std::string> hashes;
  for (const auto& r : first) {
    CHECK(r.ok());
    CHECK(!r.cached);
    hashes.insert(r.hash);
    CHECK(r.directory == root / "runs" / r.hash);
  }
  CHECK(hashes.size() == 8);
  CHECK(first[0].lambda == 0.0018);
  CHECK(first[1].alpha == 1.0);

  // Drop one run; the rerun retrains only that one.
  fs::remove_all(first[3].directory);
  std::size_t cached = 0;
  auto second = train_grid(c, o);
  for (std::size_t i = 0; i < second.size(); ++i) {
    cached += second[i].cached ? 1 : 0;
    CHECK(metrics_csv(second[i], "x") == metrics_csv(first[i], "x"));
  }
  CHECK(cached == 7);
  CHECK(!second[3].cached);

  TrainOptions fresh = o;
  fresh.reuse_cache = false;
  CHECK(!train_one(c, 0.0018, 0.0, 1, fresh).cached);
}

TEST_CASE("run records round-trip through disk") {
  TrainConfig c = tiny_config();
  TrainOptions o;
  o.output_root = fresh_dir("roundtrip");
  RunRecord r = train_one(c, 0.0067, 0.1, 4, o);
  RunRecord back = load_run(r.directory);
  CHECK(back.hash == r.hash);
  CHECK(back.seed == 4);
  CHECK(back.alpha == 0.1);
  REQUIRE(back.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(back.rows[i].mse == r.rows[i].mse);
    CHECK(back.rows[i].rate_bpd == r.rows[i].rate_bpd);
    CHECK(back.rows[i].reg_bits == r.rows[i].reg_bits);
  }
  // Seed appears in the CSV and checkpoint headers carry the config hash.
  const std::string csv = slurp(r.directory / "metrics.csv");
  CHECK(csv.find("# seed: 4\n") != std::string::npos);
  CHECK(csv.find("step,lambda,alpha,seed,rate_bpd,mse,quality_db,reg_bits\n") != std::string::npos);
  nlohmann::json header;
  ad::load_checkpoint(r.checkpoint / "codec", &header);
  CHECK(header.at("config_hash") == r.hash);
  CHECK(header.at("step") == c.steps);

  // Tampering with the config is detected.
  nlohmann::json doc = nlohmann::json::parse(slurp(r.directory / "run.json"));
  doc["config"]["steps"] = 999;
  std::ofstream(r.directory / "run.json") << doc.dump();
  expect_error(ErrorKind::kIo, [&] { load_run(r.directory); });
}

TEST_CASE("source model context is wired from the config") {
  TrainConfig c = tiny_config();
  c.steps = 5;
  TrainOptions o;
  o.output_root = fresh_dir("context");
  for (auto mode : {ContextMode::kFactorized, ContextMode::kCausal}) {
    c.source_model.context = mode;
    RunRecord r = train_one(c, 0.0067, 1.0, 1, o);
    nlohmann::json header;
    ad::load_checkpoint(r.checkpoint / "source_model", &header);
    CHECK(header.at("architecture").at("context") == to_string(mode));
    CHECK(header.at("config_hash") == r.hash);
  }
  RunRecord anchor = train_one(c, 0.0067, 0.0, 1, o);
  CHECK(!fs::exists(anchor.checkpoint / "source_model"));
}

TEST_CASE("anchor curve is monotone in lambda") {
  TrainConfig c;
  c.alphas = {0.0};
  c.steps = 3000;
  c.batch_size = 64;
  c.dataset_size = 4000;
  c.eval_every = 3000;
  c.codec_lr = 1e-3;
  auto runs = train_grid(c);
  REQUIRE(runs.size() == 4);
  int inversions = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    REQUIRE(runs[i].ok());
    MESSAGE("lambda ", runs[i].lambda, " mse ", runs[i].final_row().mse, " rate ",
            runs[i].final_row().rate_bpd);
    if (runs[i].final_row().mse >= runs[i - 1].final_row().mse) ++inversions;
  }
  CHECK(inversions <= 1);
}

TEST_CASE("divergence keeps the last good checkpoint") {
  TrainConfig c = tiny_config();
  c.codec_lr = 10.0;
  c.eval_every = 1;
  c.alphas = {1.0};
  TrainOptions o;
  o.output_root = fresh_dir("diverge");
  RunRecord r = train_one(c, 0.013, 1.0, 1, o);
  CHECK(r.status == RunStatus::kDiverged);
  CHECK(!r.message.empty());
  REQUIRE(!r.rows.empty());
  for (const auto& m : r.rows) CHECK(std::isfinite(m.mse));
  nlohmann::json header;
  ad::load_checkpoint(r.checkpoint / "codec", &header);
  CHECK(header.at("step") == r.rows.back().step);
  // Failed runs are retrained rather than served from cache.
  CHECK(!train_one(c, 0.013, 1.0, 1, o).cached);
  CHECK(load_run(r.directory).status == RunStatus::kDiverged);
}

TEST_CASE("grid continues past failing cells") {
  TrainConfig c = tiny_config();
  c.codec_lr = 10.0;
  c.eval_every = 1;
  c.alphas = {0.0, 1.0};
  auto runs = train_grid(c);
  REQUIRE(runs.size() == 2);
  for (const auto& r : runs) CHECK(r.status == RunStatus::kDiverged);
}

TEST_CASE("cancellation aborts the run") {
  TrainConfig c = tiny_config();
  std::atomic<bool> cancel{true};
  TrainOptions o;
  o.cancel = &cancel;
  RunRecord r = train_one(c, 0.0067, 0.0, 1, o);
  CHECK(r.status == RunStatus::kAborted);
  CHECK(r.rows.size() == 1);
}

TEST_CASE("config parsing is strict") {
  const nlohmann::json defaults = default_train_config_json();
  TrainConfig d = train_config_from_json(defaults);
  CHECK(d.lambdas == std::vector<double>{0.0018, 0.0035, 0.0067, 0.0130});
  CHECK(d.alphas == std::vector<double>{0.0, 0.1, 0.3, 1.0, 3.0});
  CHECK(d.steps == 200000);
  CHECK(d.batch_size == 256);
  CHECK(d.codec_lr == 1e-4);
  CHECK(d.source_lr == 1e-3);
  CHECK(d.seeds == std::vector<std::uint64_t>{1});
  CHECK(d.train_size() == 36864);
  CHECK(d.eval_size() == 4096);

  expect_error(ErrorKind::kInvalidArgument,
               [] { resolve_config_json(nlohmann::json{{"stpes", 10}}); });
  expect_error(ErrorKind::kInvalidArgument,
               [] { resolve_config_json(nlohmann::json{{"source", {{"dimm", 4}}}}); });

  nlohmann::json scalar = resolve_config_json(nlohmann::json{{"alpha", 0}, {"seed", 7}});
  TrainConfig s = train_config_from_json(scalar);
  CHECK(s.alphas == std::vector<double>{0.0});
  CHECK(s.seeds == std::vector<std::uint64_t>{7});

  for (const char* bad : {R"({"lambda": [0]})", R"({"lambda": [0.1, 0.1]})", R"({"alpha": [-1]})",
                          R"({"batch_size": 0})", R"({"architecture": {"dim": 4}})",
                          R"({"source_model": {"context": "joint"}})"}) {
    expect_error(ErrorKind::kInvalidArgument,
                 [&] { train_config_from_json(resolve_config_json(nlohmann::json::parse(bad))); });
  }
}

TEST_CASE("dotted overrides") {
  nlohmann::json doc = resolve_config_json(nullptr, {"steps=12", "alpha=[0,1]", "source_model.context=causal",
                                                     "architecture.latent=3"});
  TrainConfig c = train_config_from_json(doc);
  CHECK(c.steps == 12);
  CHECK(c.alphas == std::vector<double>{0.0, 1.0});
  CHECK(c.source_model.context == ContextMode::kCausal);
  CHECK(c.architecture.latent == 3);
  expect_error(ErrorKind::kInvalidArgument, [&] { apply_override(doc, "nope=1"); });
  expect_error(ErrorKind::kInvalidArgument, [&] { apply_override(doc, "steps"); });
  expect_error(ErrorKind::kInvalidArgument, [&] { apply_override(doc, "steps.x=1"); });
}

TEST_CASE("run hashes separate grid cells") {
  TrainConfig c = tiny_config();
  std::set<std::string> seen;
  for (double l : {0.0018, 0.013})
    for (double a : {0.0, 1.0})
      for (std::uint64_t s : {1, 2}) seen.insert(config_hash(run_config_json(c, l, a, s)));
  CHECK(seen.size() == 8);
  CHECK(config_hash(run_config_json(c, 0.0018, 0.0, 1)).size() == 16);
}

TEST_CASE("number formatting round-trips") {
  CHECK(format_number(0.013) == "0.013");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(1.0) == "1");
  for (double v : {0.1 + 0.2, 1e-300, -123.456, 6.02e23}) {
    CHECK(std::strtod(format_number(v).c_str(), nullptr) == v);
  }
}
