#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "uidsc/codec.hpp"
#include "uidsc/coco.hpp"
#include "uidsc/data.hpp"
#include "uidsc/eval.hpp"

using namespace uidsc;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(UIDSC_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

const std::string kToyModel =
    " --set model.stage_channels=[8,8] --set model.downsample_factors=[2,2] --set model.latent_channels=8"
    " --set model.first_kernel=3 --set train.image_size=32 --set train.batch_size=8 --set train.learning_rate=0.001";

// Synthetic corpus and one stage-1 model shared by the cases below.
struct Workspace {
    testing::TempDir dir{"cli"};
    fs::path data() const { return dir / "data"; }
    fs::path stage1() const { return dir / "s1" / "checkpoint.uidsc"; }
    fs::path fixed() const { return dir / "fixed" / "checkpoint.uidsc"; }
    Workspace() {
        REQUIRE(run("prepare-data --synth 30 --size 32 --seed 7 --test-count 5 --out " + data().string()).code == 0);
        const Run s1 = run("train --stage 1 --epochs 1 --seed 3 --manifest " + (data() / "ORI-train.jsonl").string() +
                           " --out " + (dir / "s1").string() + kToyModel);
        REQUIRE_MESSAGE(s1.code == 0, s1.output);
        const Run fx = run("train --stage 1 --epochs 1 --seed 3 --fixed-snr 10 --manifest " +
                           (data() / "ORI-train.jsonl").string() + " --out " + (dir / "fixed").string() + kToyModel);
        REQUIRE_MESSAGE(fx.code == 0, fx.output);
    }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("prepare-data") {
    testing::TempDir dir("prep");
    const Run a = run("prepare-data --synth 12 --size 32 --seed 7 --out " + (dir / "a").string());
    CHECK(a.code == 0);
    CHECK(a.output.find("seed: 7") != std::string::npos);
    run("prepare-data --synth 12 --size 32 --seed 7 --out " + (dir / "b").string());
    for (const char* f : {"annotations.json", "images/synth_00003.png", "SEG-test.jsonl", "MASK-train.jsonl"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

    const Run from_ann = run("prepare-data --annotations " + (dir / "a" / "annotations.json").string() + " --images " +
                             (dir / "a" / "images").string() + " --test-count 2 --out " + (dir / "c").string());
    CHECK(from_ann.code == 0);
    CHECK(data::read_manifest(dir / "c" / "ORI-train.jsonl").size() == 10);

    std::ofstream(dir / "broken.json") << "{\"images\": [ {\"id\": 1, ";
    const Run bad = run("prepare-data --annotations " + (dir / "broken.json").string() + " --images " +
                        (dir / "a" / "images").string() + " --out " + (dir / "d").string());
    CHECK(bad.code == 3);
    CHECK(bad.output.find("error:") != std::string::npos);

    // Annotations pointing at images that do not exist: itemized failure report.
    Json ann = read_json_file(dir / "a" / "annotations.json");
    for (auto& img : ann["images"]) img["file_name"] = "missing_" + img["file_name"].get<std::string>();
    write_json_file(dir / "missing.json", ann);
    const Run gone = run("prepare-data --annotations " + (dir / "missing.json").string() + " --images " +
                         (dir / "a" / "images").string() + " --test-count 0 --out " + (dir / "e").string());
    CHECK(gone.code == 3);
    CHECK(gone.output.find("missing_synth_00000.png") != std::string::npos);
    CHECK(fs::exists(dir / "e" / "skip_report.json"));

    CHECK(run("prepare-data --out " + (dir / "f").string()).code == 2);
    CHECK(run("prepare-data --synth 3 --bogus 1 --out " + (dir / "f").string()).code == 2);
    CHECK(run("").code == 2);
}

TEST_CASE("train") {
    Workspace& w = ws();
    CHECK(fs::exists(w.stage1()));
    CHECK(fs::exists(w.dir / "s1" / "report.jsonl"));

    const Run s2 = run("train --stage 2 --manifest " + (w.data() / "SEG-train.jsonl").string() + " --out " +
                       (w.dir / "s2x").string());
    CHECK(s2.code == 2);
    CHECK(s2.output.find("init") != std::string::npos);

    const Run typo = run("train --epochs 1 --set train.epohcs=3 --manifest " + (w.data() / "ORI-train.jsonl").string());
    CHECK(typo.code == 2);
    std::ofstream(w.dir / "bad.json") << R"({"train": {"epochs": 1, "colour": 3}})";
    CHECK(run("train --config " + (w.dir / "bad.json").string()).code == 2);

    const Run stage2 = run("train --stage 2 --epochs 1 --seed 3 --init-from " + w.stage1().string() + " --manifest " +
                           (w.data() / "SEG-train.jsonl").string() + " --mask-manifest " +
                           (w.data() / "MASK-train.jsonl").string() + " --out " + (w.dir / "s2").string() + kToyModel);
    CHECK_MESSAGE(stage2.code == 0, stage2.output);
    CHECK(codec::load_checkpoint(w.dir / "s2" / "checkpoint.uidsc").codec.config().use_mga);

    // Same seed and flags give the same bytes.
    const Run again = run("train --stage 1 --epochs 1 --seed 3 --manifest " + (w.data() / "ORI-train.jsonl").string() +
                          " --out " + (w.dir / "s1b").string() + kToyModel);
    CHECK(again.code == 0);
    CHECK(slurp(w.dir / "s1b" / "checkpoint.uidsc") == slurp(w.stage1()));
}

TEST_CASE("a fixed-SNR baseline ignores the SNR input") {
    const auto m = codec::load_checkpoint(ws().fixed());
    CHECK_FALSE(m.codec.config().use_cse);
    CHECK(m.info["snr_train_db"] == 10.0);
    const Image img = testing::random_image(32, 32, 3, 1);
    const auto z = codec::encode(m.codec, img, Mask{}, -5.0);
    CHECK(z == codec::encode(m.codec, img, Mask{}, 25.0));
    CHECK(codec::decode(m.codec, z, -5.0, 32, 32) == codec::decode(m.codec, z, 25.0, 32, 32));

    const auto aware = codec::load_checkpoint(ws().stage1());
    CHECK(codec::encode(aware.codec, img, Mask{}, -5.0) != codec::encode(aware.codec, img, Mask{}, 25.0));
}

TEST_CASE("eval") {
    Workspace& w = ws();
    const std::string common = " --test " + (w.data() / "SEG-test.jsonl").string() +
                               " --channel rayleigh --grid 0,10 --realizations 2 --size 32 --seed 4";
    const Run r = run("eval --model A=" + w.stage1().string() + " --model B=" + w.stage1().string() + " --fixed 10=" +
                      w.fixed().string() + common + " --plot --out " + (w.dir / "ev").string());
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const eval::Table t = eval::read_csv(w.dir / "ev" / "sweep.csv");
    // 3 models plus the combination curve, 2 SNRs, 2 regions, 2 metrics.
    CHECK(t.rows.size() == 4 * 2 * 2 * 2);
    for (const char* model : {"A", "B", "DJSCC_FIXED_10", "DJSCC_COMBINATION"})
        CHECK(t.find(model, 10.0, "masked", "psnr"));
    CHECK(t.find("DJSCC_COMBINATION", 0.0, "full", "ssim")->source == "DJSCC_FIXED_10");
    CHECK(fs::exists(w.dir / "ev" / "plot" / "psnr_masked.csv"));

    const Run again = run("eval --model A=" + w.stage1().string() + " --model B=" + w.stage1().string() + " --fixed 10=" +
                          w.fixed().string() + common + " --out " + (w.dir / "ev2").string());
    CHECK(slurp(w.dir / "ev" / "sweep.csv") == slurp(w.dir / "ev2" / "sweep.csv"));

    const Run missing = run("eval --model GHOST=" + (w.dir / "nope.uidsc").string() + common + " --out " +
                            (w.dir / "ev3").string());
    CHECK(missing.code != 0);
    CHECK(missing.output.find("GHOST") != std::string::npos);

    const Run plot = run("plot --table " + (w.dir / "ev" / "sweep.csv").string() + " --out " + (w.dir / "pl").string());
    CHECK(plot.code == 0);
    CHECK(fs::exists(w.dir / "pl" / "psnr_full.svg"));
}

TEST_CASE("transmit") {
    Workspace& w = ws();
    const coco::Dataset d = coco::load(w.data() / "annotations.json");
    const auto* info = d.find_image_by_name("synth_00001.png");
    REQUIRE(info);
    const std::string category = d.find_category(d.annotations_for(info->id).front()->category_id)->name;
    const std::string base = "transmit --model " + w.stage1().string() + " --image " +
                             (w.data() / "images" / "synth_00001.png").string() + " --annotations " +
                             (w.data() / "annotations.json").string() + " --snr 5 --channel rayleigh --seed 9";

    const Run a = run(base + " --instruction transmit:" + category + " --out " + (w.dir / "tx_a").string());
    REQUIRE_MESSAGE(a.code == 0, a.output);
    for (const char* f : {"original.png", "mask.png", "masked.png", "reconstruction.png", "metrics.json"})
        CHECK(fs::exists(w.dir / "tx_a" / f));
    run(base + " --instruction transmit:" + category + " --out " + (w.dir / "tx_b").string());
    CHECK(slurp(w.dir / "tx_a" / "reconstruction.png") == slurp(w.dir / "tx_b" / "reconstruction.png"));
    CHECK(slurp(w.dir / "tx_a" / "metrics.json") == slurp(w.dir / "tx_b" / "metrics.json"));

    const Run free_text = run(base + " --instruction \"the big round one\" --out " + (w.dir / "tx_c").string());
    CHECK(free_text.code == 3);
    const Run remote = run(base + " --instruction \"the big round one\" --provider remote --remote-url http://127.0.0.1:1/m"
                                  " --timeout-ms 300 --no-cache --out " + (w.dir / "tx_d").string());
    CHECK(remote.code == 4);
}
