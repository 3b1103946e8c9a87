#include "doctest_torch.hpp"

#include "p2mark/checkpoint.hpp"
#include "p2mark/io.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

using namespace p2mark;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(P2MARK_CLI) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string field_after(const std::string& text, const std::string& key) {
    const auto at = text.find(key);
    if (at == std::string::npos) return {};
    const auto start = at + key.size();
    return text.substr(start, text.find_first_of(" \n", start) - start);
}

constexpr const char* kTinyConfig = R"({
  "seed": 5,
  "watermark": {"bits": 8, "rank": 4},
  "training": {"batch_size": 2, "segment_length": 512, "pretrain_iterations": 2, "max_iterations": 2, "log_every": 1},
  "mel": {"n_fft": 256, "window": 256, "hop": 64, "n_mels": 20},
  "generator": {"channels": 16, "upsample_factors": [8, 8]},
  "discriminator": {"periods": [2], "scales": 1, "channels": 8},
  "decoder": {"channels": 8, "blocks": 1},
  "data": {"synthetic_clips": 4, "clip_seconds": 0.15}
})";

// One scratch directory with a pretrained base and an adapter, built once through the CLI.
struct Workspace {
    fs::path dir;
    std::string cfg, base, adapter;
    Workspace() {
        dir = fs::temp_directory_path() / ("p2mark_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        cfg = (dir / "tiny.json").string();
        base = (dir / "base").string();
        adapter = (dir / "adapter").string();
        atomic_write_file(cfg, kTinyConfig);
        REQUIRE(run("pretrain --config " + cfg + " --out " + base).code == 0);
        REQUIRE(run("train --config " + cfg + " --base " + base + " --out " + adapter).code == 0);
    }
    ~Workspace() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

Workspace& workspace() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("help lists every command and exits 0") {
        const auto r = run("--help");
        CHECK(r.code == 0);
        for (const char* sub : {"pretrain", "train", "mint", "extract", "attack", "evaluate", "verify-merge"})
            CHECK(r.out.find(sub) != std::string::npos);
        const auto t = run("train --help");
        CHECK(t.code == 0);
        for (const char* flag : {"--base", "--out", "--iterations", "--wgopo", "--config", "--seed", "--force"})
            CHECK(t.out.find(flag) != std::string::npos);
    }

    TEST_CASE("usage errors exit 2") {
        CHECK(run("").code == 2);
        CHECK(run("frobnicate").code == 2);
        CHECK(run("train --base x").code == 2);
        CHECK(run("train --base x --out y --wgopo maybe").code == 2);
        CHECK(run("attack --kind reverb --in a.wav --out b.wav").code == 2);
        auto& w = workspace();
        CHECK(run("mint --adapter " + w.adapter + " --base " + w.base + " --watermark 10x10010 --out " +
                  w.path("bad")).code == 2);
    }

    TEST_CASE("payload length mismatch exits 3") {
        auto& w = workspace();
        const auto r = run("mint --adapter " + w.adapter + " --base " + w.base + " --watermark 1011 --out " + w.path("m3"));
        CHECK(r.code == 3);
        CHECK_FALSE(fs::exists(w.path("m3")));
    }

    TEST_CASE("unreadable inputs exit 4") {
        auto& w = workspace();
        CHECK(run("mint --adapter " + w.path("nothing") + " --base " + w.base + " --watermark 10110010 --out " +
                  w.path("m4")).code == 4);
        CHECK(run("attack --kind crop --in " + w.path("missing.wav") + " --out " + w.path("o.wav")).code == 4);
    }

    TEST_CASE("attack crop halves the file") {
        auto& w = workspace();
        std::vector<float> x(1001, 0.25F);
        write_wav(w.path("in.wav"), x, 16000);
        const auto r = run("attack --kind crop --in " + w.path("in.wav") + " --out " + w.path("crop.wav"));
        CHECK(r.code == 0);
        CHECK(read_wav(w.path("crop.wav")).samples.size() == 501);
        CHECK(run("attack --kind crop --in " + w.path("in.wav") + " --out " + w.path("crop.wav")).code == 2);
        CHECK(run("attack --kind crop --in " + w.path("in.wav") + " --out " + w.path("crop.wav") + " --force").code == 0);
    }

    TEST_CASE("mint is deterministic and verify-merge passes") {
        auto& w = workspace();
        const std::string common = " --adapter " + w.adapter + " --base " + w.base + " --watermark 10110010";
        const auto a = run("mint" + common + " --out " + w.path("i1"));
        const auto b = run("mint" + common + " --out " + w.path("i2"));
        REQUIRE(a.code == 0);
        REQUIRE(b.code == 0);
        const auto ha = field_after(a.out, "sha256 ");
        CHECK(ha.size() == 64);
        CHECK(ha == field_after(b.out, "sha256 "));
        CHECK(read_checkpoint(w.path("i1")).content_hash() == ha);
        const auto v = run("verify-merge" + common + " --probes 4");
        CHECK(v.code == 0);
        CHECK(v.out.find("max merge diff") != std::string::npos);
    }

    TEST_CASE("train with projection off fires nothing") {
        auto& w = workspace();
        const auto r = run("train --config " + w.cfg + " --base " + w.base + " --out " + w.path("off") + " --wgopo off");
        CHECK(r.code == 0);
        CHECK(field_after(r.out, "projections fired ") == "0");
        CHECK(read_checkpoint(w.path("off")).manifest.require("projections_fired") == "0");
    }

    TEST_CASE("evaluate without attacks reports only the clean row and extract reads the audio") {
        auto& w = workspace();
        REQUIRE(run("mint --adapter " + w.adapter + " --base " + w.base + " --watermark 01100111 --out " +
                    w.path("i3")).code == 0);
        const auto r = run("evaluate --instance " + w.path("i3") + " --base " + w.base + " --decoder " + w.adapter +
                           " --items 2 --out " + w.path("report") + " --write-audio " + w.path("gen.wav"));
        REQUIRE(r.code == 0);
        std::string csv;
        for (const auto& e : fs::directory_iterator(w.path("report")))
            if (e.path().string().ends_with(".attacks.csv")) csv = read_file(e.path());
        CHECK(csv.starts_with("attack,params,acc,skipped\nnone,"));
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
        const auto x = run("extract --instance-audio " + w.path("gen.wav") + " --decoder " + w.adapter +
                           " --expected 01100111");
        CHECK(x.code == 0);
        CHECK(field_after(x.out, "bits ").size() == 8);
        CHECK(x.out.find("ACC ") != std::string::npos);
        CHECK(run("extract --instance-audio " + w.path("gen.wav") + " --decoder " + w.adapter + " --expected 0110")
                  .code == 3);
    }
}
