#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "strainflow/cli/commands.hpp"

using namespace strainflow;
using namespace strainflow::cli;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory per test.
fs::path scratch() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    const fs::path dir = fs::temp_directory_path() /
                         ("strainflow-cli-" + std::to_string(::getpid()) + "-" + info->test_suite_name() + "-" + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Outcome {
    int code;
    std::string log;
    fs::path out;
};

Outcome run(const std::string& command, const fs::path& dir, const std::string& config, const std::string& out_name = "out",
        std::optional<std::uint64_t> seed = std::nullopt) {
    const fs::path cfg = dir / (out_name + ".ini");
    write_file(cfg, config);
    std::ostringstream log;
    RunOptions opts;
    opts.config = cfg;
    opts.out_dir = dir / out_name;
    opts.seed = seed;
    opts.log = &log;
    const int code = run_command(command, opts);
    return {code, log.str(), dir / out_name};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

/// Every output except manifest.json, which carries timestamps.
void expect_same_outputs(const fs::path& a, const fs::path& b) {
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        const std::string name = entry.path().filename().string();
        if (name == "manifest.json") continue;
        ASSERT_TRUE(fs::exists(b / name)) << name;
        EXPECT_EQ(read_file(entry.path()), read_file(b / name)) << name;
        ++compared;
    }
    EXPECT_GT(compared, 0u);
}

const char* kSmallVerify = R"(
[global]
seed = 0
[verify_ot]
gaussian_dims = 2
quartic_dims = 2
quartic_eps = 0.3
n_list = 2, 4, 8, 16, 32, 64
samples = 16
control_steps = 200
)";

const char* kTinyTrain = R"(
[global]
seed = 4
[train]
epochs = 12
batch = 32
hidden = 8
depth = 2
log_every = 4
eval_samples = 32
)";

}  // namespace

TEST(Config, ParsesSectionsAndComments) {
    const Config cfg = Config::parse_string(
        "seed = 7  # root\n"
        "# whole line\n"
        "[train]\n"
        "  alpha = 0.5\n"
        "alphas = 0, 0.1 ,0.3\n"
        "name = a b\n");
    EXPECT_EQ(cfg.section("global").get_int("seed", 0), 7);
    const Section& t = cfg.section("train");
    EXPECT_EQ(t.get_double("alpha", 0.0), 0.5);
    EXPECT_EQ(t.get_doubles("alphas", {}), (std::vector<double>{0.0, 0.1, 0.3}));
    EXPECT_EQ(t.get_string("name", ""), "a b");
    EXPECT_EQ(t.get_count("missing", 9), 9u);
    EXPECT_NO_THROW(cfg.reject_unknown());
}

TEST(Config, RejectsMalformedInput) {
    EXPECT_THROW(Config::parse_string("[a]\nx = 1\nx = 2\n"), ConfigError);
    EXPECT_THROW(Config::parse_string("[a\n"), ConfigError);
    EXPECT_THROW(Config::parse_string("[]\n"), ConfigError);
    EXPECT_THROW(Config::parse_string("novalue\n"), ConfigError);
    EXPECT_THROW(Config::parse_string(" = 3\n"), ConfigError);
    const Config cfg = Config::parse_string("[a]\nn = 1.5\nb = maybe\nc = -1\n");
    EXPECT_THROW(cfg.section("a").get_int("n", 0), ConfigError);
    EXPECT_THROW(cfg.section("a").get_bool("b", false), ConfigError);
    EXPECT_THROW(cfg.section("a").get_count("c", 0), ConfigError);
}

TEST(Config, RejectsUnknownKeysAndSections) {
    const Config cfg = Config::parse_string("[train]\nalpha = 1\nalpah = 2\n[extra]\nk = v\n");
    (void)cfg.section("train").get_double("alpha", 0.0);
    try {
        cfg.reject_unknown();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("alpah"), std::string::npos);
        EXPECT_NE(msg.find("[extra]"), std::string::npos);
    }
}

TEST(Config, LoadResolvesRelativePaths) {
    const fs::path dir = scratch();
    write_file(dir / "c.ini", "[x]\np = sub/file\n");
    const Config cfg = Config::load(dir / "c.ini");
    EXPECT_EQ(cfg.resolve("sub/file"), dir / "sub/file");
    EXPECT_EQ(cfg.resolve("/abs"), fs::path("/abs"));
    EXPECT_THROW(Config::load(dir / "absent.ini"), ConfigError);
}

TEST(Manifest, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Manifest, ListsEveryOutputAndDetectsTampering) {
    const fs::path dir = scratch();
    RunManifest m("test", dir, 5);
    m.emit("a.csv", "x,y\n1,2\n");
    m.emit("b.json", "{}\n");
    m.emit("a.csv", "x,y\n3,4\n");
    const fs::path path = m.write(0);
    const auto j = read_json(path);
    ASSERT_EQ(j["outputs"].size(), 2u);
    EXPECT_EQ(j["outputs"][0]["sha256"], sha256_hex("x,y\n3,4\n"));
    EXPECT_EQ(j["seeds"]["root"], 5);
    EXPECT_EQ(j["exit_code"], 0);
    EXPECT_TRUE(verify_manifest(path).ok);

    write_file(dir / "b.json", "{\"x\":1}\n");
    const ManifestCheck bad = verify_manifest(path);
    EXPECT_FALSE(bad.ok);
    EXPECT_EQ(bad.mismatches, std::vector<std::string>{"b.json"});
}

TEST(Commands, UsageErrors) {
    const fs::path dir = scratch();
    EXPECT_EQ(run("no-such-command", dir, "").code, kExitUsage);
    EXPECT_EQ(run("verify-ot", dir, "[verify_ot]\nsampels = 3\n").code, kExitUsage);
    EXPECT_EQ(run("verify-ot", dir, "[global]\nprecision = float32\n").code, kExitUsage);
    EXPECT_EQ(run("train", dir, "[train]\nbatch = 0\n").code, kExitUsage);
    EXPECT_EQ(run("train", dir, "[train]\nreg_mode = sometimes\n").code, kExitUsage);
    RunOptions opts;
    std::ostringstream log;
    opts.config = dir / "absent.ini";
    opts.log = &log;
    EXPECT_EQ(run_command("train", opts), kExitUsage);
}

TEST(Commands, VerifyOtPassesAndIsReproducible) {
    const fs::path dir = scratch();
    const Outcome a = run("verify-ot", dir, kSmallVerify, "a");
    ASSERT_EQ(a.code, kExitOk) << a.log;
    const auto slopes = read_json(a.out / "slopes.json");
    ASSERT_EQ(slopes["studies"].size(), 4u);
    for (const auto& s : slopes["studies"]) {
        EXPECT_TRUE(s["passed"].get<bool>()) << s.dump();
        if (s["kind"] == "ot") {
            EXPECT_TRUE(s["exact"].get<bool>());
            EXPECT_LT(s["max_mean_error"].get<double>(), 1e-10);
        }
    }
    EXPECT_EQ(read_file(a.out / "convergence_gaussian_d2.csv").substr(0, 24), "N,h,mean_error,max_error");
    EXPECT_TRUE(verify_manifest(a.out / "manifest.json").ok);

    const Outcome b = run("verify-ot", dir, kSmallVerify, "b");
    ASSERT_EQ(b.code, kExitOk);
    expect_same_outputs(a.out, b.out);
}

TEST(Commands, VerifyOtZeroGammaControlIsExact) {
    const fs::path dir = scratch();
    const Outcome r = run("verify-ot", dir, std::string(kSmallVerify) + "gamma = 0\n");
    ASSERT_EQ(r.code, kExitOk) << r.log;
    for (const auto& s : read_json(r.out / "slopes.json")["studies"]) EXPECT_TRUE(s["exact"].get<bool>()) << s["name"];
}

TEST(Commands, VerifyOtFailsWhenSlopeWindowExcludesOne) {
    const fs::path dir = scratch();
    const Outcome r = run("verify-ot", dir, std::string(kSmallVerify) + "slope_min = 1.5\nslope_max = 2.0\n");
    EXPECT_EQ(r.code, kExitPredicateFailed);
    EXPECT_NE(r.log.find("failing study: gaussian_d2_control"), std::string::npos);
}

TEST(Commands, TrainWritesLoadableCheckpointAndIsReproducible) {
    const fs::path dir = scratch();
    const Outcome a = run("train", dir, kTinyTrain, "a");
    ASSERT_EQ(a.code, kExitOk) << a.log;
    const Model m = load_checkpoint(a.out / "model.ckpt");
    EXPECT_EQ(m.params.arch.hidden, 8u);
    const std::string csv = read_file(a.out / "train.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,fm_loss,strain_sq,vort_sq,reg_total");
    EXPECT_TRUE(read_json(a.out / "train_summary.json")["ok"].get<bool>());

    const Outcome b = run("train", dir, kTinyTrain, "b");
    ASSERT_EQ(b.code, kExitOk);
    expect_same_outputs(a.out, b.out);

    const Outcome c = run("train", dir, kTinyTrain, "c", 5);
    ASSERT_EQ(c.code, kExitOk);
    EXPECT_NE(read_file(a.out / "model.ckpt"), read_file(c.out / "model.ckpt"));
}

TEST(Commands, TrainDivergenceKeepsPartialLog) {
    const fs::path dir = scratch();
    const Outcome r = run("train", dir, std::string(kTinyTrain) + "lr = 1e200\n");
    EXPECT_EQ(r.code, kExitRuntime);
    EXPECT_TRUE(fs::exists(r.out / "train.csv"));
    EXPECT_FALSE(fs::exists(r.out / "model.ckpt"));
    const auto summary = read_json(r.out / "train_summary.json");
    EXPECT_FALSE(summary["ok"].get<bool>());
    EXPECT_NE(summary["failure"].get<std::string>().find("non-finite"), std::string::npos);
    EXPECT_TRUE(verify_manifest(r.out / "manifest.json").ok);
}

TEST(Commands, PotentialTrainingHasNoVorticity) {
    const fs::path dir = scratch();
    const Outcome r = run("train", dir, std::string(kTinyTrain) + "model_kind = potential\n");
    ASSERT_EQ(r.code, kExitOk) << r.log;
    EXPECT_LE(read_json(r.out / "train_summary.json")["final"]["vort_sq"].get<double>(), 1e-8);
}

TEST(Commands, SweepRowsAndSchema) {
    const fs::path dir = scratch();
    const Outcome r = run("sweep", dir, std::string(kTinyTrain) + "[sweep]\nalphas = 0, 1\nsamples = 16\nsave_checkpoints = false\n");
    ASSERT_EQ(r.code, kExitOk) << r.log;
    std::istringstream csv(read_file(r.out / "sweep.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "alpha,fm_loss,strain_sq,l2_at_5,l2_at_10,straightness");
    std::size_t rows = 0;
    while (std::getline(csv, line)) ++rows;
    EXPECT_EQ(rows, 2u);
    const auto summary = read_json(r.out / "sweep_summary.json");
    EXPECT_TRUE(summary["trends"].contains("strain_sq_strictly_decreasing"));
    EXPECT_FALSE(fs::exists(r.out / "model_0.ckpt"));
}

TEST(Commands, SweepRecordsFailedRowAndContinues) {
    const fs::path dir = scratch();
    const Outcome r = run("sweep", dir, std::string(kTinyTrain) + "[sweep]\nalphas = 0, -1\nsamples = 16\n");
    EXPECT_EQ(r.code, kExitPredicateFailed);
    const auto rows = read_json(r.out / "sweep_summary.json")["rows"];
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_TRUE(rows[0]["ok"].get<bool>());
    EXPECT_FALSE(rows[1]["ok"].get<bool>());
    EXPECT_TRUE(fs::exists(r.out / "model_0.ckpt"));
}

TEST(Commands, NfeCompareBaselineAgainstItself) {
    const fs::path dir = scratch();
    const Outcome t = run("train", dir, kTinyTrain, "model");
    ASSERT_EQ(t.code, kExitOk);
    const std::string ckpt = (t.out / "model.ckpt").string();
    const Outcome r = run("nfe-compare", dir,
                      "[nfe_compare]\ncheckpoints = " + ckpt + ", " + ckpt +
                          "\nlabels = base, copy\nnfes = 5, 10, 20\nsamples = 32\nprojections = 8\n");
    ASSERT_EQ(r.code, kExitOk) << r.log;
    const std::string base = read_file(r.out / "metrics_base.csv");
    EXPECT_EQ(base, read_file(r.out / "metrics_copy.csv"));
    EXPECT_EQ(base.substr(0, base.find('\n')), "nfe,l2,sw,straightness");
    const auto summary = read_json(r.out / "nfe_summary.json");
    EXPECT_EQ(summary["smallest_nfe_matching_baseline"]["copy"], 20);
}

TEST(Commands, NfeCompareMissingCheckpoint) {
    const fs::path dir = scratch();
    const Outcome r = run("nfe-compare", dir, "[nfe_compare]\ncheckpoints = nowhere.ckpt\n");
    EXPECT_EQ(r.code, kExitRuntime);
    EXPECT_NE(r.log.find("missing checkpoint"), std::string::npos);
}

TEST(Commands, BoundsOnGaussianAndLinearFields) {
    const fs::path dir = scratch();
    const Outcome g = run("bounds", dir, "[bounds]\nfield = gaussian\nsamples = 32\ngrid_n = 32\n", "g");
    ASSERT_EQ(g.code, kExitOk) << g.log;
    for (const auto& rep : read_json(g.out / "bounds.json")["reports"]) {
        EXPECT_TRUE(rep["passed"].get<bool>());
        const double general = rep["bound_general"].get<double>();
        EXPECT_NEAR(rep["bound_regime_B"].get<double>(), general, 1e-9 * general);
    }

    const Outcome l = run("bounds", dir, "[bounds]\nfield = linear\nmatrix = 0.5 0.2; 0.2 -0.3\nsamples = 32\ngrid_n = 32\n", "l");
    ASSERT_EQ(l.code, kExitOk) << l.log;
    EXPECT_TRUE(read_json(l.out / "bounds.json")["passed"].get<bool>());

    EXPECT_EQ(run("bounds", dir, "[bounds]\nfield = linear\nmatrix = 1 2 3; 4 5 6\n", "bad").code, kExitUsage);
    EXPECT_EQ(run("bounds", dir, "[bounds]\nfield = checkpoint\ncheckpoint = gone.ckpt\n", "gone").code, kExitRuntime);
}

TEST(Commands, GradcheckPasses) {
    const fs::path dir = scratch();
    const Outcome r = run("gradcheck", dir, "[gradcheck]\nbatch = 4\nhidden = 8\ncoords = 12\n");
    ASSERT_EQ(r.code, kExitOk) << r.log;
    const auto j = read_json(r.out / "gradcheck.json");
    EXPECT_EQ(j["results"].size(), 6u);
    EXPECT_TRUE(j["passed"].get<bool>());
}

TEST(ParseMatrix, Examples) {
    const Mat m = parse_matrix("1 2; 3 4");
    EXPECT_EQ(m(0, 1), 2.0);
    EXPECT_EQ(m(1, 0), 3.0);
    EXPECT_THROW(parse_matrix("1 2; 3"), ConfigError);
    EXPECT_THROW(parse_matrix(""), ConfigError);
}

class Executable : public ::testing::Test {
protected:
    void SetUp() override {
        const char* path = std::getenv("STRAINFLOW_CLI");
        if (!path || !fs::exists(path)) GTEST_SKIP() << "STRAINFLOW_CLI not set";
        exe_ = path;
    }
    int shell(const std::string& args) const {
        const int status = std::system((exe_ + " " + args + " >/dev/null 2>&1").c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    std::string exe_;
};

TEST_F(Executable, ExitCodes) {
    const fs::path dir = scratch();
    write_file(dir / "v.ini", kSmallVerify);
    EXPECT_EQ(shell("--help"), 0);
    EXPECT_EQ(shell("--version"), 0);
    EXPECT_EQ(shell(""), kExitUsage);
    EXPECT_EQ(shell("verify-ot"), kExitUsage);
    EXPECT_EQ(shell("verify-ot --config " + (dir / "missing.ini").string()), kExitUsage);
    EXPECT_EQ(shell("frobnicate --config " + (dir / "v.ini").string()), kExitUsage);
    EXPECT_EQ(shell("verify-ot --config " + (dir / "v.ini").string() + " --out " + (dir / "a").string()), kExitOk);
    EXPECT_EQ(shell("verify-ot --config " + (dir / "v.ini").string() + " --out " + (dir / "b").string() + " --seed 0"), kExitOk);
    expect_same_outputs(dir / "a", dir / "b");
    EXPECT_EQ(read_json(dir / "a" / "manifest.json")["command"], "verify-ot");
}
