#include "ssbver/dataio.hpp"
#include "ssbver/eval.hpp"
#include "ssbver/png_io.hpp"
#include "ssbver/trainer.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

using namespace ssbver;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" SSBVER_CLI "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(testutil::slurp(p)); }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(testutil::slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, fs::path> tree(const fs::path& root) {
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = e.path();
  }
  return files;
}

// Synthetic dataset shared by the tests of this file: 20 identities x 20
// images of 64x64, two query and six gallery images per identity.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir("cli");
    testutil::spit(*dir_ / "spec.json",
                   R"({"n_identities":20,"images_per_identity":20,"image_size":[64,64],"seed":1,)"
                   R"("query_per_identity":2,"gallery_per_identity":6})");
    testutil::spit(*dir_ / "small.json",
                   R"({"epochs":2,"augment":{"global_size":64,"local_size":32},"ssl":{"hidden":256},)"
                   R"("ema":{"momentum":0.99}})");
    ASSERT_EQ(run_cli("make-synthetic --spec " + (*dir_ / "spec.json").string() + " --out " + data().string()), 0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path data() { return *dir_ / "data"; }
  static fs::path manifest() { return data() / "manifest.jsonl"; }
  static fs::path small_config() { return *dir_ / "small.json"; }
  static fs::path scratch(const std::string& name) { return *dir_ / name; }

  static testutil::TempDir* dir_;
};

testutil::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, MakeSyntheticWritesManifestAndConfig) {
  EXPECT_TRUE(fs::exists(manifest()));
  EXPECT_EQ(load_manifest(manifest()).entries.size(), 400u);
  EXPECT_EQ(read_json(data() / "config.json")["n_identities"], 20);
}

TEST_F(Cli, MakeSyntheticRejectsSingleIdentity) {
  testutil::spit(scratch("one.json"), R"({"n_identities":1})");
  EXPECT_EQ(run_cli("make-synthetic --spec " + scratch("one.json").string() + " --out " + scratch("one").string()), 2);
  testutil::spit(scratch("typo.json"), R"({"n_identitys":4})");
  EXPECT_EQ(run_cli("make-synthetic --spec " + scratch("typo.json").string() + " --out " + scratch("typo").string()), 2);
}

TEST_F(Cli, MakeSyntheticRerunGivesIdenticalTree) {
  const fs::path again = scratch("again");
  ASSERT_EQ(run_cli("make-synthetic --spec " + scratch("spec.json").string() + " --out " + again.string()), 0);
  const auto a = tree(data()), b = tree(again);
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, path] : a) {
    ASSERT_TRUE(b.count(name)) << name;
    EXPECT_EQ(testutil::slurp(path), testutil::slurp(b.at(name))) << name;
  }
}

TEST_F(Cli, BaselineTrainingLeavesSslColumnZero) {
  const fs::path out = scratch("baseline");
  ASSERT_EQ(run_cli("train --quiet --baseline --config " + small_config().string() + " --data " + manifest().string() +
                    " --out " + out.string()),
            0);
  const auto rows = read_csv(out / "train_log.csv");
  ASSERT_GT(rows.size(), 1u);
  ASSERT_EQ(rows[0][4], "L_s");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::stod(rows[i][4]), 0.0);
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  EXPECT_EQ(read_json(out / "config.json")["loss"]["lambda_s"], 0.0);
}

TEST_F(Cli, FullTrainingHasNonzeroSslColumn) {
  const fs::path out = scratch("full");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --data " + manifest().string() + " --out " +
                    out.string()),
            0);
  const auto rows = read_csv(out / "train_log.csv");
  ASSERT_GT(rows.size(), 1u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GT(std::stod(rows[i][4]), 0.0);
}

TEST_F(Cli, TrainErrorsMapToExitCodes) {
  EXPECT_EQ(run_cli("train --data " + scratch("missing/manifest.jsonl").string() + " --out " + scratch("x").string()), 4);
  EXPECT_EQ(run_cli("train --set loss.lambda_q=1 --data " + manifest().string() + " --out " + scratch("x").string()), 2);
  EXPECT_EQ(run_cli("train --set batch.K=1 --data " + manifest().string() + " --out " + scratch("x").string()), 2);
  EXPECT_EQ(run_cli("train --bogus-flag"), 2);
}

TEST_F(Cli, SeedFromEnvironmentAndOverridesEchoed) {
  const fs::path out = scratch("seeded");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --set epochs=0 --set loss.lambda_t=0.5 --data " +
                        manifest().string() + " --out " + out.string(),
                    "SSBVER_SEED=77"),
            0);
  const json cfg = read_json(out / "config.json");
  EXPECT_EQ(cfg["seed"], 77);
  EXPECT_EQ(cfg["loss"]["lambda_t"], 0.5);
  EXPECT_EQ(cfg["epochs"], 0);
}

TEST_F(Cli, EvaluateSelfRetrieval) {
  const fs::path init = scratch("init");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --set epochs=0 --data " + manifest().string() +
                    " --out " + init.string()),
            0);
  std::vector<ManifestEntry> entries;
  for (const auto& e : load_manifest(manifest()).entries) {
    if (e.split != Split::query) continue;
    ManifestEntry q = e, g = e;
    q.image_path = g.image_path = (data() / e.image_path).string();
    g.split = Split::gallery;
    entries.push_back(q);
    entries.push_back(g);
  }
  write_manifest(scratch("self.jsonl"), entries);
  const fs::path out = scratch("self_eval");
  ASSERT_EQ(run_cli("evaluate --checkpoint " + (init / "final.ckpt").string() + " --data " +
                    scratch("self.jsonl").string() + " --protocol none --out " + out.string()),
            0);
  const json metrics = read_json(out / "metrics.json");
  EXPECT_EQ(metrics["protocol"], "none");
  EXPECT_EQ(metrics["cmc"]["1"], 1.0);
  for (const char* f : {"config.json", "distances.csv", "distance_summary.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST_F(Cli, EvaluateRandomWeightsNearChance) {
  const fs::path init = scratch("init_chance");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --set epochs=0 --data " + manifest().string() +
                    " --out " + init.string()),
            0);
  const fs::path out = scratch("chance_eval");
  ASSERT_EQ(run_cli("evaluate --checkpoint " + (init / "final.ckpt").string() + " --data " + manifest().string() +
                    " --protocol none --out " + out.string()),
            0);
  const auto m = load_manifest(manifest());
  std::vector<int> qi, qc, gi, gc;
  for (const auto* e : m.split(Split::query)) qi.push_back(e->identity), qc.push_back(e->camera);
  for (const auto* e : m.split(Split::gallery)) gi.push_back(e->identity), gc.push_back(e->camera);
  const double chance = oracle::chance_map(qi, qc, gi, gc, false, 64, 300, 5);
  const double map = read_json(out / "metrics.json")["mAP"].get<double>();
  EXPECT_NEAR(map, chance, 0.05) << "random-weight mAP " << map << " vs random-embedding chance " << chance;
}

TEST_F(Cli, ProtocolsDifferAsTheOraclePredicts) {
  const fs::path init = scratch("init_proto");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --set epochs=0 --data " + manifest().string() +
                    " --out " + init.string()),
            0);
  // Four identities; each query also appears in the gallery under its own camera.
  const auto full = load_manifest(manifest());
  std::vector<ManifestEntry> entries;
  for (const auto& e : full.entries) {
    if (e.identity >= 4) continue;
    ManifestEntry copy = e;
    copy.image_path = (data() / e.image_path).string();
    if (e.split == Split::query) {
      entries.push_back(copy);
      ManifestEntry twin = copy;
      twin.split = Split::gallery;
      entries.push_back(twin);
    } else if (e.split == Split::gallery && (e.camera != 0 || e.identity % 2 == 0)) {
      entries.push_back(copy);
    }
  }
  ASSERT_LE(entries.size(), 40u);
  write_manifest(scratch("crafted.jsonl"), entries);
  const auto crafted = load_manifest(scratch("crafted.jsonl"));
  const auto queries = load_split(crafted, Split::query);
  const auto gallery = load_split(crafted, Split::gallery);

  const auto loaded = load_checkpoint(init / "final.ckpt");
  const auto& teacher = *loaded.state.pair.teacher.encoder;
  const Matrix d = pairwise_distances(extract_embeddings(teacher, loaded.state.head.bn, queries).rows,
                                      extract_embeddings(teacher, loaded.state.head.bn, gallery).rows);
  std::vector<int> gi, gc;
  for (const auto& s : gallery) gi.push_back(s.identity), gc.push_back(s.camera);

  std::map<std::string, double> predicted;
  for (const bool cross : {false, true}) {
    double sum = 0.0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const std::vector<double> row(d.row(static_cast<long>(q)).data(), d.row(static_cast<long>(q)).data() + d.cols());
      sum += oracle::score_query(row, queries[q].identity, queries[q].camera, gi, gc, cross).ap;
    }
    predicted[cross ? "cross_camera" : "none"] = sum / static_cast<double>(queries.size());
  }
  std::map<std::string, double> reported;
  for (const std::string protocol : {"none", "cross_camera"}) {
    const fs::path out = scratch("crafted_" + protocol);
    ASSERT_EQ(run_cli("evaluate --checkpoint " + (init / "final.ckpt").string() + " --data " +
                      scratch("crafted.jsonl").string() + " --protocol " + protocol + " --out " + out.string()),
              0);
    reported[protocol] = read_json(out / "metrics.json")["mAP"].get<double>();
    EXPECT_NEAR(reported[protocol], predicted[protocol], 1e-9) << protocol;
  }
  EXPECT_NE(reported["none"], reported["cross_camera"]);
  EXPECT_EQ(run_cli("evaluate --checkpoint " + (init / "final.ckpt").string() + " --data " +
                    scratch("crafted.jsonl").string() + " --protocol market --out " + scratch("bad").string()),
            2);
}

TEST_F(Cli, EvaluateWithoutValidMatchExitsFour) {
  const fs::path init = scratch("init_nomatch");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --set epochs=0 --data " + manifest().string() +
                    " --out " + init.string()),
            0);
  std::vector<ManifestEntry> entries;
  for (const auto& e : load_manifest(manifest()).entries) {
    if (e.identity > 1 || e.split == Split::train) continue;
    ManifestEntry copy = e;
    copy.image_path = (data() / e.image_path).string();
    if (e.split == Split::gallery) copy.camera = 0;
    if (e.split == Split::query) copy.camera = 0;
    entries.push_back(copy);
  }
  write_manifest(scratch("nomatch.jsonl"), entries);
  EXPECT_EQ(run_cli("evaluate --checkpoint " + (init / "final.ckpt").string() + " --data " +
                    scratch("nomatch.jsonl").string() + " --protocol cross_camera --out " + scratch("nm").string()),
            4);
}

TEST_F(Cli, SaliencyOfIdenticalPair) {
  const fs::path init = scratch("init_sal");
  ASSERT_EQ(run_cli("train --quiet --config " + small_config().string() + " --set epochs=0 --data " + manifest().string() +
                    " --out " + init.string()),
            0);
  const fs::path image = data() / load_manifest(manifest()).entries.front().image_path;
  const fs::path out = scratch("sal");
  ASSERT_EQ(run_cli("saliency --checkpoint " + (init / "final.ckpt").string() + " --query " + image.string() +
                    " --gallery " + image.string() + " --out " + out.string()),
            0);
  EXPECT_NEAR(read_json(out / "saliency.json")["similarity"].get<double>(), 1.0, 1e-6);
  EXPECT_EQ(read_png(out / "query_saliency.png").height, 64);
  EXPECT_TRUE(fs::exists(out / "gallery_saliency.png"));
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_EQ(run_cli("saliency --checkpoint " + (init / "final.ckpt").string() + " --query " +
                    scratch("nope.png").string() + " --gallery " + image.string() + " --out " + out.string()),
            3);
}

TEST_F(Cli, ProfileTinyEncoder) {
  const fs::path out = scratch("prof");
  ASSERT_EQ(run_cli("profile --arch tiny --size 64 --warmup 2 --iters 10 --out " + out.string()), 0);
  const json report = read_json(out / "efficiency.json");
  for (const char* key : {"params_millions", "ms_per_image", "peak_memory_mb", "dims"}) {
    ASSERT_TRUE(report.contains(key)) << key;
    EXPECT_GT(report[key].get<double>(), 0.0) << key;
  }
  EXPECT_TRUE(report["hardware_descriptor"].is_string());
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_EQ(run_cli("profile --arch huge --out " + out.string()), 2);
  EXPECT_EQ(run_cli("profile --arch tiny --iters 5 --out " + out.string()), 2);
  EXPECT_EQ(run_cli("profile --out " + out.string()), 2);
}
