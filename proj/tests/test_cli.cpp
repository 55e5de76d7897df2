#include "dsf/pilot.hpp"

#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DSFUSE_BIN) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyStreams =
    R"({"channels":[8,16,16,16],"heads":[1,1,2,2],"reduction":[8,4,2,1],"depth":1,"mlp_ratio":2,"norm_groups":8})";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with status 2") {
    const auto dir = testing::temp_dir("cli_usage");
    const auto log = dir / "log.txt";
    CHECK(run("", log) == 2);
    CHECK(run("frobnicate", log) == 2);
    CHECK(run("synth --out " + (dir / "data").string() + " --train 4 --test 2 --size 32", log) == 0);
    CHECK(run("pilot --modality rgb --dataset " + (dir / "data").string() + " --out " + (dir / "p").string(), log) == 2);
    CHECK(slurp(log).find("rgb") != std::string::npos);

    // Training pairs without labels.
    fs::remove_all(dir / "data" / "train" / "labels");
    CHECK(run("pilot --modality ir --dataset " + (dir / "data").string() + " --out " + (dir / "p").string(), log) == 2);
    CHECK(slurp(log).find("labels") != std::string::npos);

    write_file(dir / "bad.json", R"({"epochs": 1, "learning_rate": 3})");
    CHECK(run("pilot --modality ir --config " + (dir / "bad.json").string() + " --out " + (dir / "p").string(), log) == 2);

    // Train refuses to start without pilot artifacts.
    write_file(dir / "train.json", R"({"dataset": ")" + (dir / "data").string() + R"("})");
    CHECK(run("train --config " + (dir / "train.json").string() + " --out " + (dir / "t").string(), log) == 2);
    CHECK(slurp(log).find("pilot") != std::string::npos);
  }

  TEST_CASE("select honours tau bounds and infers modality") {
    const auto dir = testing::temp_dir("cli_select");
    const auto log = dir / "log.txt";
    dsf::WeightTrajectory t(dsf::Modality::vi);
    Eigen::VectorXd w(8);
    w << 0.05, 0.3, 0.05, 0.05, 0.25, 0.1, 0.1, 0.1;
    t.record(1, w);
    t.write_csv(dir / "weights_vi.csv");
    const std::string traj = (dir / "weights_vi.csv").string();
    CHECK(run("select --trajectory " + traj + " --tau 1 --out " + (dir / "a.json").string(), log) == 0);
    auto sel = dsf::SignificantFeatureSelection::load(dir / "a.json");
    CHECK(sel.modality == dsf::Modality::vi);
    CHECK(sel.entries.size() == 3);
    CHECK(run("select --trajectory " + traj + " --tau 0 --out " + (dir / "b.json").string(), log) == 0);
    sel = dsf::SignificantFeatureSelection::load(dir / "b.json");
    REQUIRE(sel.entries.size() == 1);
    CHECK(sel.entries[0] == dsf::FeatureIndex{dsf::Modality::vi, dsf::Stream::global, 2});
    CHECK(run("select --trajectory " + traj + " --tau 0.5 --out " + (dir / "c.json").string(), log) == 0);
    CHECK(dsf::SignificantFeatureSelection::load(dir / "c.json").entries.size() == 2);
    CHECK(run("select --trajectory " + traj + " --k-min 4 --k-max 2 --out " + (dir / "d.json").string(), log) == 2);
    fs::copy_file(dir / "weights_vi.csv", dir / "weights.csv");
    CHECK(run("select --trajectory " + (dir / "weights.csv").string() + " --out " + (dir / "e.json").string(), log) == 2);
  }

  TEST_CASE("full pipeline through the command line") {
    const auto dir = testing::temp_dir("cli_pipeline");
    const auto log = dir / "log.txt";
    const std::string data = (dir / "data").string();
    REQUIRE(run("synth --out " + data + " --train 6 --test 2 --size 32 --seed 3", log) == 0);
    write_file(dir / "pilot.json", std::string(R"({"dataset":")") + data +
                                       R"(","epochs":1,"batch_size":3,"lr":0.001,"num_classes":2,"patch_size":32,"stride":32,"streams":)" +
                                       kTinyStreams + "}");
    for (const char* m : {"ir", "vi"}) {
      const std::string out = (dir / (std::string("pilot_") + m)).string();
      REQUIRE(run(std::string("pilot --modality ") + m + " --config " + (dir / "pilot.json").string() + " --out " + out, log) == 0);
      CHECK(fs::exists(fs::path(out) / "config.json"));
      REQUIRE(run("select --trajectory " + out + "/weights_" + m + ".csv --out " + (dir / (std::string("sel_") + m + ".json")).string(), log) == 0);
    }
    // Non-empty output directory needs --force.
    CHECK(run("pilot --modality ir --config " + (dir / "pilot.json").string() + " --out " + (dir / "pilot_ir").string(), log) == 2);

    nlohmann::json tc = {{"dataset", data},
                         {"epochs", 1},
                         {"batch_size", 3},
                         {"lr", 1e-3},
                         {"num_classes", 2},
                         {"patch_size", 32},
                         {"stride", 32},
                         {"sample_images", 1},
                         {"pilot_ir", (dir / "pilot_ir" / "branch_ir.ckpt").string()},
                         {"pilot_vi", (dir / "pilot_vi" / "branch_vi.ckpt").string()},
                         {"selection_ir", (dir / "sel_ir.json").string()},
                         {"selection_vi", (dir / "sel_vi.json").string()},
                         {"streams", nlohmann::json::parse(kTinyStreams)}};
    write_file(dir / "train.json", tc.dump());
    const std::string run_dir = (dir / "run").string();
    REQUIRE(run("train --config " + (dir / "train.json").string() + " --out " + run_dir, log) == 0);
    CHECK(fs::exists(fs::path(run_dir) / "losses.csv"));
    CHECK(run("train --config " + (dir / "train.json").string() + " --out " + run_dir + " --max-steps 1 --force", log) == 0);

    const std::string ckpt = run_dir + "/checkpoints/last.ckpt";
    const std::string fused = (dir / "fused").string();
    REQUIRE(run("fuse --checkpoint " + ckpt + " --input " + data + "/test --out " + fused, log) == 0);
    CHECK(fs::exists(fs::path(fused) / "timing.csv"));

    const std::string eval = (dir / "eval").string();
    REQUIRE(run("eval --fused " + fused + " --source " + data + "/test --out " + eval, log) == 0);
    const std::string metrics = slurp(fs::path(eval) / "metrics.csv");
    CHECK(metrics.rfind("id,mi,ssim,psnr,scd\n", 0) == 0);
    CHECK(metrics.find("\nmean,") != std::string::npos);

    // Mismatched id sets.
    fs::path victim;
    for (const auto& e : fs::directory_iterator(fused)) {
      if (e.path().extension() == ".png") victim = e.path();
    }
    fs::remove(victim);
    CHECK(run("eval --fused " + fused + " --source " + data + "/test --out " + (dir / "eval2").string(), log) == 2);
    CHECK(slurp(log).find(victim.stem().string()) != std::string::npos);

    const std::string ir = data + "/test/ir/" + victim.stem().string() + ".png";
    const std::string vi = data + "/test/vi/" + victim.stem().string() + ".png";
    REQUIRE(run("freq --checkpoint " + ckpt + " --ir " + ir + " --vi " + vi + " --out " + (dir / "freq").string(), log) == 0);
    CHECK(slurp(dir / "freq" / "low_freq.csv").find("Hfd_vt,") != std::string::npos);
    CHECK(run("freq --checkpoint " + ckpt + " --ir " + ir + " --vi " + vi + " --grid diagonal --out " + (dir / "freq2").string(), log) == 2);
  }
}
