#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cclvq/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun run(const std::string& args) {
    const std::string cmd = std::string(CCLVQ_CLI_PATH) + " " + args + " 2>/dev/null";
    CliRun r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t got = 0;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("cclvq_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }

    fs::path dir;
};

} // namespace

TEST_F(Cli, GenIsDeterministic) {
    for (const char* e : {"multimodal", "two-dirac", "finite"}) {
        const std::string a = path(std::string(e) + "_a.csv");
        const std::string b = path(std::string(e) + "_b.csv");
        EXPECT_EQ(run(std::string("gen --experiment ") + e + " --n-samples 200 --seed 4 --out " + a).code, 0);
        EXPECT_EQ(run(std::string("gen --experiment ") + e + " --n-samples 200 --seed 4 --out " + b).code, 0);
        EXPECT_EQ(slurp(a), slurp(b)) << e;
        EXPECT_EQ(read_rows(a).size(), 200u);
    }
    const std::string c = path("c.csv");
    run("gen --experiment two-dirac --n-samples 200 --seed 5 --out " + c);
    EXPECT_NE(slurp(path("two-dirac_a.csv")), slurp(c));
}

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("gen --experiment nonsense --out " + path("x.csv")).code, 1);
    EXPECT_EQ(run("gen --experiment two-dirac --n-samples 0 --out " + path("x.csv")).code, 2);
    EXPECT_EQ(run("gen --experiment two-dirac --out " + path("missing/dir/x.csv")).code, 3);
    EXPECT_EQ(run("train --experiment two-dirac --epochs 5 --split-at 9:0.1 --quiet").code, 2);
    EXPECT_EQ(run("train --experiment two-dirac --split-at 0:0.1 --quiet").code, 2);
    EXPECT_EQ(run("train --data " + path("absent.csv")).code, 3);
    EXPECT_EQ(run("train").code, 1);
    EXPECT_EQ(run("verify --checks nope").code, 2);
}

TEST_F(Cli, TrainOnGeneratedData) {
    const std::string data = path("d.csv");
    ASSERT_EQ(run("gen --experiment two-dirac --n-samples 400 --out " + data).code, 0);
    const std::string model = path("m.json");
    const std::string metrics = path("m.jsonl");
    const CliRun r = run("train --data " + data + " --experts 2 --expert-kind affine --epochs 3 --model-out " + model +
                      " --metrics-out " + metrics);
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("heldout_delta"), std::string::npos);
    EXPECT_TRUE(fs::exists(model));
    std::ifstream in(metrics);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 3u);
}

TEST_F(Cli, TrainMetricsAreDeterministic) {
    const std::string a = path("a.jsonl");
    const std::string b = path("b.jsonl");
    ASSERT_EQ(run("train --experiment two-dirac --epochs 6 --split-at 3:0.1 --quiet --metrics-out " + a).code, 0);
    ASSERT_EQ(run("train --experiment two-dirac --epochs 6 --split-at 3:0.1 --quiet --metrics-out " + b).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_FALSE(slurp(a).empty());
}

TEST_F(Cli, VerifyReportsTrialsAndTies) {
    CliRun r = run("verify --checks gradient --trials 100");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("PASS gradient trials=100"), std::string::npos) << r.out;

    const std::string failure = path("fail.json");
    r = run("verify --checks gradient --trials 5 --inject-tie --failure-out " + failure);
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.out.find("FAIL gradient"), std::string::npos);
    ASSERT_TRUE(fs::exists(failure));
    EXPECT_EQ(run("verify --replay " + failure).code, 4);
}

TEST_F(Cli, FiguresWriteConsistentCsv) {
    const CliRun r = run("figures --epochs 9 --grid-points 11 --out-dir " + dir.string());
    ASSERT_EQ(r.code, 0) << r.out;

    const auto loss = read_rows(dir / "fig1_loss.csv");
    ASSERT_EQ(loss.size(), 9u);
    // Splits rescaled from 101 and 201 of 300 land on epochs 4 and 7.
    for (std::size_t e = 0; e < 9; ++e) {
        const std::size_t expected = e + 1 < 4 ? 1 : (e + 1 < 7 ? 2 : 3);
        EXPECT_EQ(loss[e][3], std::to_string(expected)) << "epoch " << e + 1;
    }

    EXPECT_EQ(read_rows(dir / "fig2_data.csv").size(), 8000u);
    const auto preds = read_rows(dir / "fig2_preds.csv");
    ASSERT_EQ(preds.size(), 33u);
    EXPECT_EQ(preds[0][1], "0");
    EXPECT_EQ(preds[2][1], "2");

    const auto weights = read_rows(dir / "fig3_weights.csv");
    ASSERT_EQ(weights.size(), 33u);
    cclvq::MultimodalSpec spec;
    for (std::size_t r0 = 0; r0 < weights.size(); r0 += 3) {
        const double x = std::stod(weights[r0][0]);
        const std::vector<double> truth = cclvq::mode_probs(spec, x);
        double pred = 0.0;
        std::multiset<double> got;
        std::multiset<double> want(truth.begin(), truth.end());
        for (std::size_t i = 0; i < 3; ++i) {
            pred += std::stod(weights[r0 + i][2]);
            got.insert(std::stod(weights[r0 + i][3]));
        }
        EXPECT_NEAR(pred, 1.0, 1e-12);
        // weight_true is a permutation of the mode probabilities at x.
        auto g = got.begin();
        for (double w : want) EXPECT_DOUBLE_EQ(*g++, w);
    }
}
