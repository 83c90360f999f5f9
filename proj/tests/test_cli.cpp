#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "attriq/commands.hpp"
#include "helpers.hpp"

using namespace attriq;
using namespace attriq::cli;

namespace {

// Minimal end-to-end fixture: tiny sources, tiny encoder, 2 distortions.
struct PipelineFixture {
  testutil::TempDir tmp{"cli"};
  std::string sources_dir, dataset_dir, attrs_path, registry_path, ckpt_path,
      probs_path, scores_path, reg_ckpt_path;

  PipelineFixture() {
    sources_dir = tmp.path("sources");
    std::filesystem::create_directories(sources_dir);
    for (int i = 0; i < 6; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "pic%02d.png", i);
      write_png(testutil::make_texture(16, 16, 3, 300 + i),
                sources_dir + "/" + name);
    }
    dataset_dir = tmp.path("dataset");
    attrs_path = tmp.path("attrs.json");
    {
      std::ofstream out(attrs_path);
      out << R"({"format":"attriq-attributes","version":1,"distortions":[
        {"distortion":"gaussian_blur","attributes":[
          {"text":"a softening of details","provenance":"published"},
          {"text":"a reduction in image clarity","provenance":"published"}]},
        {"distortion":"impulse_noise","attributes":[
          {"text":"salt-and-pepper speckles"},
          {"text":"isolated black and white dots"}]}
      ]})";
    }
    registry_path = tmp.path("registry.json");
    ckpt_path = tmp.path("dist.ckpt");
    probs_path = tmp.path("probs.csv");
    scores_path = tmp.path("scores.csv");
    reg_ckpt_path = tmp.path("reg.ckpt");
  }

  CommonOpts common(std::uint64_t seed = 7) {
    CommonOpts c;
    c.seed = seed;
    c.workers = std::size_t{2};
    return c;
  }

  void run_generate() {
    GenerateOpts o;
    o.common = common();
    o.sources_dir = sources_dir;
    o.out = dataset_dir;
    o.repeats = 3;
    o.distortions = std::vector<std::string>{"gaussian_blur", "impulse_noise"};
    o.synthetic_scores = true;
    REQUIRE(cmd_generate(o) == 0);
  }

  void run_build_registry() {
    BuildRegistryOpts o;
    o.common = common();
    o.attributes = attrs_path;
    o.dim = std::size_t{16};
    o.out = registry_path;
    REQUIRE(cmd_build_registry(o) == 0);
  }

  void run_train_dist() {
    TrainDistOpts o;
    o.common = common();
    o.manifest = dataset_dir + "/manifest.jsonl";
    o.registry = registry_path;
    o.out = ckpt_path;
    o.mode = std::string("full");
    o.epochs = std::size_t{2};
    o.batch_size = std::size_t{6};
    o.lr_max = 1e-3;
    o.image_size = 16;
    o.d_model = std::size_t{16};
    o.layers = std::size_t{1};
    o.heads = std::size_t{2};
    REQUIRE(cmd_train_dist(o) == 0);
  }

  void run_extract() {
    ExtractOpts o;
    o.common = common();
    o.manifest = dataset_dir + "/manifest.jsonl";
    o.registry = registry_path;
    o.checkpoint = ckpt_path;
    o.out = probs_path;
    o.scores_out = scores_path;
    REQUIRE(cmd_extract(o) == 0);
  }

  void run_train_reg() {
    TrainRegOpts o;
    o.common = common();
    o.probs = probs_path;
    o.scores = scores_path;
    o.registry = registry_path;
    o.out = reg_ckpt_path;
    o.epochs = std::size_t{10};
    o.train_frac = 0.7;
    o.val_frac = 0.15;
    REQUIRE(cmd_train_reg(o) == 0);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("full command pipeline runs end to end", "[cli][slow]") {
  PipelineFixture fx;
  fx.run_generate();
  CHECK(std::filesystem::exists(fx.dataset_dir + "/manifest.jsonl"));
  CHECK(std::filesystem::exists(fx.dataset_dir + "/resolved_config.json"));

  fx.run_build_registry();
  CHECK(std::filesystem::exists(fx.registry_path));

  fx.run_train_dist();
  CHECK(std::filesystem::exists(fx.ckpt_path));
  CHECK(std::filesystem::exists(fx.ckpt_path + ".config.json"));

  fx.run_extract();
  CHECK(std::filesystem::exists(fx.probs_path));
  CsvTable probs = load_csv_table(fx.probs_path, kProbMatrixFormat);
  CHECK(probs.row_ids.size() == 18);  // 6 sources x 3
  CHECK(probs.columns.size() == 4);
  CHECK(probs.meta.at("checkpoint_digest") == digest_of_file(fx.ckpt_path));

  // re-running extract on unchanged inputs produces an identical file
  std::string before = slurp(fx.probs_path);
  fx.run_extract();
  CHECK(slurp(fx.probs_path) == before);

  fx.run_train_reg();
  CHECK(std::filesystem::exists(fx.reg_ckpt_path));

  // score eval over the full set
  EvalOpts ev;
  ev.common = fx.common();
  ev.task = std::string("score");
  ev.probs = fx.probs_path;
  ev.regressor = fx.reg_ckpt_path;
  ev.scores = fx.scores_path;
  ev.out = fx.tmp.path("score_report.json");
  REQUIRE(cmd_eval(ev) == 0);
  nlohmann::json report;
  {
    std::ifstream in(fx.tmp.path("score_report.json"));
    in >> report;
  }
  CHECK(report.contains("plcc"));
  CHECK(report.contains("srcc"));

  // dist eval from the trained checkpoint
  EvalOpts ed;
  ed.common = fx.common();
  ed.task = std::string("dist");
  ed.manifest = fx.dataset_dir + "/manifest.jsonl";
  ed.registry = fx.registry_path;
  ed.checkpoint = fx.ckpt_path;
  ed.out = fx.tmp.path("dist_report.json");
  REQUIRE(cmd_eval(ed) == 0);

  // saliency over two manifest records
  SaliencyOpts sal;
  sal.common = fx.common();
  sal.checkpoint = fx.ckpt_path;
  sal.registry = fx.registry_path;
  sal.manifest = fx.dataset_dir + "/manifest.jsonl";
  sal.distortion = std::string("gaussian_blur");
  sal.limit = std::size_t{2};
  sal.out = fx.tmp.path("saliency");
  REQUIRE(cmd_saliency(sal) == 0);
  nlohmann::json sal_report;
  {
    std::ifstream in(fx.tmp.path("saliency/saliency_report.json"));
    in >> sal_report;
  }
  REQUIRE(sal_report["items"].size() == 2);
  for (const auto& item : sal_report["items"]) {
    CHECK(item["height"] == 16);
    CHECK(item["width"] == 16);
    CHECK(std::filesystem::exists(item["heatmap"].get<std::string>()));
    CHECK(std::filesystem::exists(item["overlay"].get<std::string>()));
  }
}

TEST_CASE("eval accepts a predictions file; ground truth scores perfectly",
          "[cli]") {
  PipelineFixture fx;
  fx.run_generate();

  // write the ground-truth matrix as a predictions CSV
  ManifestFile mf = load_manifest(fx.dataset_dir + "/manifest.jsonl");
  std::vector<std::string> dists = {"gaussian_blur", "impulse_noise"};
  Tensor gt = ground_truth_matrix(mf.records, dists);
  CsvTable preds;
  preds.format = kDistPredFormat;
  preds.meta["manifest_digest"] =
      digest_of_file(fx.dataset_dir + "/manifest.jsonl");
  preds.columns = dists;
  for (const auto& rec : mf.records) preds.row_ids.push_back(rec.record_id());
  preds.values = gt;
  std::string pred_path = fx.tmp.path("preds.csv");
  write_csv_table(preds, pred_path);

  EvalOpts ev;
  ev.common = fx.common();
  ev.task = std::string("dist");
  ev.manifest = fx.dataset_dir + "/manifest.jsonl";
  ev.predictions = pred_path;
  ev.out = fx.tmp.path("gt_report.json");
  REQUIRE(cmd_eval(ev) == 0);
  nlohmann::json report;
  {
    std::ifstream in(fx.tmp.path("gt_report.json"));
    in >> report;
  }
  CHECK(report["accuracy"].get<double>() == 1.0);
  CHECK(report["rmse"].get<double>() == 0.0);

  // stale digest binding is refused with both digests in the message
  preds.meta["manifest_digest"] = "0000000000000000";
  write_csv_table(preds, pred_path);
  try {
    cmd_eval(ev);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    CHECK(msg.find("0000000000000000") != std::string::npos);
    CHECK(msg.find(digest_of_file(fx.dataset_dir + "/manifest.jsonl")) !=
          std::string::npos);
  }
}

TEST_CASE("checkpoint/registry digest binding is enforced across commands",
          "[cli][slow]") {
  PipelineFixture fx;
  fx.run_generate();
  fx.run_build_registry();
  fx.run_train_dist();

  // rebuild the registry with a different dim -> different digest
  BuildRegistryOpts o;
  o.common = fx.common();
  o.attributes = fx.attrs_path;
  o.dim = std::size_t{16};
  o.distortions =
      std::vector<std::string>{"impulse_noise", "gaussian_blur"};  // reordered
  o.out = fx.registry_path;
  REQUIRE(cmd_build_registry(o) == 0);

  ExtractOpts ex;
  ex.common = fx.common();
  ex.manifest = fx.dataset_dir + "/manifest.jsonl";
  ex.registry = fx.registry_path;
  ex.checkpoint = fx.ckpt_path;
  ex.out = fx.probs_path;
  CHECK_THROWS_AS(cmd_extract(ex), ConfigError);
}

TEST_CASE("config file values are used and unknown keys rejected", "[cli]") {
  testutil::TempDir tmp("cfg");
  {
    std::ofstream out(tmp.path("cfg.json"));
    out << R"({"seed": 11, "generate": {"repeats": 2}})";
  }
  nlohmann::json cfg = load_config_file(tmp.path("cfg.json"));
  CommonOpts c;
  c.config = cfg;
  CHECK(c.resolved_seed() == 11);
  nlohmann::json sec = section_of(cfg, "generate");
  CHECK(pick<int>(std::nullopt, sec, "repeats", 10) == 2);
  CHECK(pick<int>(std::optional<int>(5), sec, "repeats", 10) == 5);  // flag wins

  {
    std::ofstream out(tmp.path("bad.json"));
    out << R"({"sed": 11})";
  }
  CHECK_THROWS_AS(load_config_file(tmp.path("bad.json")), ConfigError);

  {
    std::ofstream out(tmp.path("bad2.json"));
    out << R"({"generate": {"repeatz": 2}})";
  }
  nlohmann::json cfg2 = load_config_file(tmp.path("bad2.json"));
  CHECK_THROWS_AS(
      check_section_keys(section_of(cfg2, "generate"), {"repeats"},
                         "generate"),
      ConfigError);
}
