#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcfm/runio.hpp"
#include "lcfm/serialize.hpp"

using namespace lcfm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ctest runs from the build directory, next to the binary.
const std::string kBin = "./lcfm";

struct CliResult {
    int exit_code = -1;
    std::string out, err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path sandbox() {
    static fs::path dir = [] {
        fs::path p = fs::temp_directory_path() / "lcfm_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

CliResult run_cli(const std::string& args) {
    const std::string out_path = (sandbox() / "stdout.txt").string();
    const std::string err_path = (sandbox() / "stderr.txt").string();
    const std::string cmd = kBin + " " + args + " > " + out_path + " 2> " + err_path;
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

std::string p(const std::string& name) { return (sandbox() / name).string(); }

std::vector<std::string> csv_lines(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// Shared tiny triangle dataset; generated once.
void ensure_dataset() {
    static bool done = [] {
        CliResult r = run_cli("data gen-triangle --out " + p("tri") +
                              " --n 4000 --seed 3 --preset 0");
        REQUIRE(r.exit_code == 0);
        return true;
    }();
    (void)done;
}

// Shared short ICFM training run with checkpoints and metrics.
void ensure_icfm_run() {
    ensure_dataset();
    static bool done = [] {
        CliResult r = run_cli("train --data " + p("tri_train.lcfm") + " --test " +
                              p("tri_test.lcfm") + " --run " + p("run_icfm") +
                              " --method icfm --steps 200 --eval-every 100 --eval-n 256" +
                              " --hidden 32 --checkpoint-every 100 --seed 5");
        REQUIRE(r.exit_code == 0);
        return true;
    }();
    (void)done;
}

}  // namespace

TEST_CASE("gen-triangle writes a deterministic split pair") {
    ensure_dataset();
    json meta;
    Matrix train = load_dataset(p("tri_train.lcfm"), &meta);
    CHECK(train.rows() == 2000);
    CHECK(train.cols() == 2);
    CHECK(meta.at("data") == "triangle");
    CHECK(meta.at("split") == "train");
    CHECK(meta.at("config").at("k") == 4);
    CHECK(meta.at("config").at("weights").size() == 4);
    json meta_test;
    Matrix test = load_dataset(p("tri_test.lcfm"), &meta_test);
    CHECK(test.rows() == 2000);
    CHECK(meta_test.at("split") == "test");

    // Same seed, same bytes.
    CliResult again = run_cli("data gen-triangle --out " + p("tri2") +
                              " --n 4000 --seed 3 --preset 0");
    REQUIRE(again.exit_code == 0);
    CHECK(file_fnv1a(p("tri2_train.lcfm")) == file_fnv1a(p("tri_train.lcfm")));
    CHECK(file_fnv1a(p("tri2_test.lcfm")) == file_fnv1a(p("tri_test.lcfm")));
}

TEST_CASE("train populates the run directory with hash-stamped artifacts") {
    ensure_icfm_run();
    CHECK(fs::exists(p("run_icfm/config.json")));
    CHECK(fs::exists(p("run_icfm/metrics.csv")));
    CHECK(fs::exists(p("run_icfm/manifest.json")));
    CHECK(fs::exists(p("run_icfm/checkpoints/final.lcfm")));
    CHECK(fs::exists(p("run_icfm/checkpoints/step_00000100.lcfm")));

    std::uint64_t seed = 0;
    std::string method;
    std::vector<MetricRow> rows = read_metrics_csv(p("run_icfm/metrics.csv"), &seed, &method);
    CHECK(seed == 5);
    CHECK(method == "icfm");
    // loss + w2 at steps 100 and 200.
    CHECK(rows.size() == 4);
    for (const MetricRow& r : rows) CHECK(r.step % 100 == 0);

    json manifest = json::parse(slurp(p("run_icfm/manifest.json")));
    CHECK(manifest.at("command").get<std::string>().find("train") != std::string::npos);
    CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
    for (const json& art : manifest.at("artifacts")) {
        const std::string path = art.at("path").get<std::string>();
        CHECK(fs::exists(path));
        std::uint64_t h = std::stoull(art.at("fnv1a").get<std::string>(), nullptr, 16);
        CHECK(h == file_fnv1a(path));
    }

    json cfg = json::parse(slurp(p("run_icfm/config.json")));
    CHECK(cfg.at("train").at("steps") == 200);
    CHECK(cfg.at("train").at("method") == "icfm");
}

TEST_CASE("a run is reproducible from its recorded config and seed") {
    ensure_icfm_run();
    CliResult r = run_cli("train --data " + p("tri_train.lcfm") + " --test " +
                          p("tri_test.lcfm") + " --run " + p("run_icfm_b") + " --config " +
                          p("run_icfm/config.json") +
                          " --eval-n 256 --checkpoint-every 100");
    REQUIRE(r.exit_code == 0);
    CHECK(slurp(p("run_icfm_b/metrics.csv")) == slurp(p("run_icfm/metrics.csv")));
    CHECK(file_fnv1a(p("run_icfm_b/checkpoints/final.lcfm")) ==
          file_fnv1a(p("run_icfm/checkpoints/final.lcfm")));
}

TEST_CASE("command-line flags override the config file") {
    ensure_icfm_run();
    CliResult r = run_cli("train --data " + p("tri_train.lcfm") + " --run " +
                          p("run_override") + " --config " + p("run_icfm/config.json") +
                          " --steps 73 --seed 9");
    REQUIRE(r.exit_code == 0);
    json cfg = json::parse(slurp(p("run_override/config.json")));
    CHECK(cfg.at("train").at("steps") == 73);
    CHECK(cfg.at("train").at("seed") == 9);
    CHECK(cfg.at("train").at("hidden") == 32);  // inherited from the file
    std::uint64_t seed = 0;
    std::vector<MetricRow> rows = read_metrics_csv(p("run_override/metrics.csv"), &seed);
    CHECK(seed == 9);
}

TEST_CASE("sample writes samples plus a trajectory table") {
    ensure_icfm_run();
    CliResult r = run_cli("sample --checkpoint " + p("run_icfm/checkpoints/final.lcfm") +
                          " --n 300 --seed 9 --out " + p("gen.lcfm") + " --traj " +
                          p("paths.csv") + " --traj-n 7 --snapshots 5");
    REQUIRE(r.exit_code == 0);
    json meta;
    Matrix s = load_dataset(p("gen.lcfm"), &meta);
    CHECK(s.rows() == 300);
    CHECK(s.cols() == 2);
    CHECK(meta.at("kind") == "samples");
    CHECK(meta.at("method") == "icfm");

    std::vector<std::string> lines = csv_lines(p("paths.csv"));
    REQUIRE(!lines.empty());
    CHECK(lines[0] == "traj_id,t,x,y");
    CHECK(lines.size() == 1 + 7 * 5);

    // Deterministic given the seed.
    CliResult again = run_cli("sample --checkpoint " + p("run_icfm/checkpoints/final.lcfm") +
                              " --n 300 --seed 9 --out " + p("gen_b.lcfm"));
    REQUIRE(again.exit_code == 0);
    CHECK(file_fnv1a(p("gen_b.lcfm")) == file_fnv1a(p("gen.lcfm")));
}

TEST_CASE("eval appends rows keyed by a config hash") {
    ensure_icfm_run();
    CliResult s = run_cli("sample --checkpoint " + p("run_icfm/checkpoints/final.lcfm") +
                          " --n 300 --seed 11 --out " + p("eval_gen.lcfm"));
    REQUIRE(s.exit_code == 0);
    fs::remove(p("eval.csv"));
    CliResult r1 = run_cli("eval --metric w2 --a " + p("eval_gen.lcfm") + " --b " +
                           p("tri_test.lcfm") + " --max-n 256 --out " + p("eval.csv"));
    REQUIRE(r1.exit_code == 0);
    CliResult r2 = run_cli("eval --metric coverage --a " + p("eval_gen.lcfm") +
                           " --preset 0 --out " + p("eval.csv"));
    REQUIRE(r2.exit_code == 0);

    std::vector<std::string> lines = csv_lines(p("eval.csv"));
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "metric,value,n_a,n_b,config_hash");
    CHECK(lines[1].rfind("w2,", 0) == 0);
    CHECK(lines[2].rfind("coverage_min_frac,", 0) == 0);
    // w2 row carries both sample counts; its config hash is 16 hex chars.
    std::stringstream ss(lines[1]);
    std::string metric, value, n_a, n_b, hash;
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    std::getline(ss, n_a, ',');
    std::getline(ss, n_b, ',');
    std::getline(ss, hash, ',');
    CHECK(n_a == "256");
    CHECK(n_b == "256");
    CHECK(hash.size() == 16);
    CHECK(std::stod(value) > 0.0);
}

TEST_CASE("report extracts a per-method metric series") {
    ensure_icfm_run();
    CliResult r = run_cli("report --run " + p("run_icfm") + " --metric w2 --out " +
                          p("curve.csv"));
    REQUIRE(r.exit_code == 0);
    std::vector<std::string> lines = csv_lines(p("curve.csv"));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "step,value,seed,method");
    CHECK(lines[1].rfind("100,", 0) == 0);
    CHECK(lines[2].rfind("200,", 0) == 0);
    CHECK(lines[1].find("icfm") != std::string::npos);

    // Runs without the metric produce a warning, not a failure.
    CliResult partial = run_cli("report --run " + p("run_icfm") + " --run " + p("no_such_run") +
                                " --metric w2 --out " + p("curve2.csv"));
    CHECK(partial.exit_code == 0);
    CHECK(partial.err.find("warning") != std::string::npos);
}

TEST_CASE("compose samples from a vae checkpoint") {
    ensure_dataset();
    CliResult t = run_cli("train --data " + p("tri_train.lcfm") + " --run " + p("run_vae") +
                          " --method latent-cfm-vae --steps 200 --vae-pretrain-steps 200" +
                          " --hidden 16 --seed 6");
    REQUIRE(t.exit_code == 0);
    CliResult r = run_cli("compose --checkpoint " + p("run_vae/checkpoints/final.lcfm") +
                          " --a=3,3 --b=3,1 --n 50 --seed 4 --out " + p("comp.lcfm"));
    REQUIRE(r.exit_code == 0);
    json meta;
    Matrix s = load_dataset(p("comp.lcfm"), &meta);
    CHECK(s.rows() == 50);
    CHECK(meta.at("composed") == true);

    // Composing a baseline checkpoint is a usage error.
    ensure_icfm_run();
    CliResult bad = run_cli("compose --checkpoint " + p("run_icfm/checkpoints/final.lcfm") +
                            " --a=3,3 --b=3,1 --n 4 --out " + p("comp_bad.lcfm"));
    CHECK(bad.exit_code == 2);
}

TEST_CASE("sweep-beta writes the tradeoff table") {
    ensure_dataset();
    CliResult r = run_cli("sweep-beta --data " + p("tri_train.lcfm") + " --test " +
                          p("tri_test.lcfm") + " --run " + p("run_sweep") +
                          " --steps 120 --vae-pretrain-steps 120 --hidden 16" +
                          " --betas 0.01,0.1");
    REQUIRE(r.exit_code == 0);
    std::vector<std::string> lines = csv_lines(p("run_sweep/sweep.csv"));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "beta,test_kl,final_loss");
    CHECK(lines[1].rfind("0.01,", 0) == 0);
    CHECK(lines[2].rfind("0.1,", 0) == 0);
}

TEST_CASE("darcy pipeline: generate, train standardized, sample, residual report") {
    CliResult g = run_cli("data gen-darcy --out " + p("darcy") +
                          " --grid 16 --n 24 --seed 2 --kl-terms 8");
    REQUIRE(g.exit_code == 0);
    json meta;
    Matrix train = load_dataset(p("darcy_train.lcfm"), &meta);
    CHECK(train.rows() == 12);
    CHECK(train.cols() == 2 * 16 * 16);
    CHECK(meta.at("data") == "darcy");
    REQUIRE(meta.contains("stats"));
    CHECK(meta.at("stats").at("channel_width") == 256);
    CHECK(meta.at("stats").at("mean").size() == 2);

    CliResult t = run_cli("train --data " + p("darcy_train.lcfm") + " --run " + p("run_darcy") +
                          " --method icfm --steps 30 --hidden 16 --batch 8 --seed 3");
    REQUIRE(t.exit_code == 0);

    CliResult s = run_cli("sample --checkpoint " + p("run_darcy/checkpoints/final.lcfm") +
                          " --n 6 --seed 4 --solver euler --solver-steps 40 --out " +
                          p("darcy_gen.lcfm"));
    REQUIRE(s.exit_code == 0);
    Matrix gen = load_dataset(p("darcy_gen.lcfm"), nullptr);
    CHECK(gen.rows() == 6);
    CHECK(gen.cols() == 512);

    // Residual of generated fields: finite, nonnegative, in original units
    // (config comes from the reference file header).
    CliResult e = run_cli("eval --metric residual --a " + p("darcy_gen.lcfm") + " --b " +
                          p("darcy_test.lcfm") + " --out " + p("darcy_eval.csv"));
    REQUIRE(e.exit_code == 0);
    std::vector<std::string> lines = csv_lines(p("darcy_eval.csv"));
    REQUIRE(lines.size() == 5);
    CHECK(lines[1].rfind("residual_median,", 0) == 0);
    std::stringstream ss(lines[1]);
    std::string metric, value;
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    CHECK(std::stod(value) >= 0.0);

    CliResult h = run_cli("report --samples " + p("darcy_gen.lcfm") + " --grid 16 --out " +
                          p("hist.csv") + " --bins 50");
    REQUIRE(h.exit_code == 0);
    std::vector<std::string> hlines = csv_lines(p("hist.csv"));
    REQUIRE(hlines.size() == 51);
    CHECK(hlines[0] == "bin_lo,bin_hi,count");
}

TEST_CASE("failures exit with machine-readable errors") {
    ensure_dataset();
    CliResult missing = run_cli("train --data " + p("nope.lcfm") + " --run " + p("run_x"));
    CHECK(missing.exit_code == 1);
    json err = json::parse(missing.err);
    CHECK(err.at("error").at("type") == "runtime");

    CliResult bad_method = run_cli("train --data " + p("tri_train.lcfm") + " --run " +
                                   p("run_y") + " --method diffusion");
    CHECK(bad_method.exit_code == 2);
    CHECK(json::parse(bad_method.err).at("error").at("type") == "config");

    CliResult bad_sub = run_cli("transmogrify");
    CHECK(bad_sub.exit_code == 2);
    CHECK(json::parse(bad_sub.err).at("error").at("type") == "config");

    std::ofstream(p("broken.json")) << "{ not json";
    CliResult bad_cfg = run_cli("train --data " + p("tri_train.lcfm") + " --run " + p("run_z") +
                                " --config " + p("broken.json"));
    CHECK(bad_cfg.exit_code == 2);
    CHECK(json::parse(bad_cfg.err).at("error").at("type") == "config");
}
