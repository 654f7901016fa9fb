#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::path(SENTINEL_CLI_WORK);

struct Result {
    int code;
    std::string out, err;
};

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Result cli(const std::string &args) {
    const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
    const std::string cmd =
        std::string("cd '") + kWork.string() + "' && '" SENTINEL_CLI "' " + args + " >'" + out.string() + "' 2>'" +
        err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::string> lines(const fs::path &p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

/// models_run column of a telemetry file, one entry per tick.
std::vector<int> models_run(const fs::path &telemetry) {
    std::vector<int> out;
    auto ls = lines(telemetry);
    for (std::size_t i = 1; i < ls.size(); ++i) {
        std::stringstream ss(ls[i]);
        std::string f;
        for (int k = 0; k < 3; ++k) std::getline(ss, f, ',');
        out.push_back(std::stoi(f));
    }
    return out;
}

double top_msed(const fs::path &drain) {
    auto text = slurp(drain);
    auto at = text.find("msed=");
    if (at == std::string::npos) return 0.0;
    return std::stod(text.substr(at + 5));
}

std::string stat(const std::string &out, const std::string &key) {
    std::stringstream ss(out);
    for (std::string l; std::getline(ss, l);)
        if (l.rfind(key + " ", 0) == 0) return l.substr(key.size() + 1);
    return {};
}

class Cli : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        ASSERT_EQ(cli("--seed 5 synth --length 3000 --out nominal.csv").code, 0);
        ASSERT_EQ(cli("--seed 5 synth --length 3000 --out faulted.csv --fault spike:TGT:2000:5:25").code, 0);
        ASSERT_EQ(cli("--seed 5 synth --preset generic --channels 4 --length 200 --out generic.csv").code, 0);
        const Result r = cli("--seed 5 train --dataset synth --length 3000 --outputs TGT,P30 --filters 4 "
                             "--dense-units 8 --dropout 0 --epochs 8 --model-dir models");
        ASSERT_EQ(r.code, 0) << r.err;
    }
};

} // namespace

TEST_F(Cli, MissingDataDirectoryExitsWithPathError) {
    const Result r = cli("train --dataset cmapss --data-dir does/not/exist");
    EXPECT_EQ(r.code, 2);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j.at("error"), "PathError");
    EXPECT_EQ(j.at("exit_code"), 2);
    EXPECT_EQ(j.at("path"), "does/not/exist");
}

TEST_F(Cli, EffectiveConfigurationIsPrinted) {
    const Result r = cli("inspect --models models/TGT.sntl");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("# effective configuration: inspect"), std::string::npos);
    EXPECT_NE(r.out.find("tensor "), std::string::npos);
    const Result s = cli("--seed 11 synth --length 50 --out tiny.csv");
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_NE(s.out.find("seed=11"), std::string::npos);
}

TEST_F(Cli, RunWithoutModelsWritesTelemetryAndEmptyDrain) {
    const Result r = cli("run --stream nominal.csv --report-dir empty_run");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto runs = models_run(kWork / "empty_run" / "telemetry.csv");
    EXPECT_EQ(runs.size(), 3000u);
    for (int m : runs) ASSERT_EQ(m, 0);
    EXPECT_TRUE(slurp(kWork / "empty_run" / "drain.txt").empty());
}

TEST_F(Cli, ControlFileLoadsAndUnloadsAtIndices) {
    std::ofstream(kWork / "control.txt") << "@100 load models/TGT.sntl\n@150 load models/P30.sntl\n"
                                            "@200 unload TGT\n@250 drain\n@300 unload P30\n";
    const Result r = cli("run --stream nominal.csv --control-file control.txt --report-dir churn");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto runs = models_run(kWork / "churn" / "telemetry.csv");
    ASSERT_EQ(runs.size(), 3000u);
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const int expected = i < 100 ? 0 : i < 150 ? 1 : i < 200 ? 2 : i < 300 ? 1 : 0;
        ASSERT_EQ(runs[i], expected) << "tick " << i;
    }
    EXPECT_TRUE(fs::exists(kWork / "churn" / "drain_1.txt"));
}

TEST_F(Cli, StreamWithoutModelSignalsIsRejected) {
    const Result r = cli("run --stream generic.csv --models models --report-dir mismatch");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("MissingSignal"), std::string::npos) << r.err;
}

TEST_F(Cli, EvaluateRejectsOutputWithoutModel) {
    const Result r = cli("evaluate --dataset synth --length 3000 --outputs N1 --models models --report-dir none");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("N1"), std::string::npos);
}

TEST_F(Cli, EmptyTestSplitIsAnError) {
    fs::create_directories(kWork / "csvdata");
    fs::copy_file(kWork / "nominal.csv", kWork / "csvdata" / "train.csv", fs::copy_options::overwrite_existing);
    std::ofstream(kWork / "csvdata" / "test.csv") << lines(kWork / "nominal.csv").front() << "\n";
    const Result r = cli("evaluate --dataset csv --data-dir csvdata --models models --report-dir csv_report");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("EmptySplit"), std::string::npos) << r.err;
}

TEST_F(Cli, FaultRaisesTopStoredMsed) {
    ASSERT_EQ(cli("run --stream nominal.csv --models models --report-dir nominal_run").code, 0);
    ASSERT_EQ(cli("run --stream faulted.csv --models models --report-dir faulted_run").code, 0);
    const double nominal = top_msed(kWork / "nominal_run" / "drain.txt");
    const double faulted = top_msed(kWork / "faulted_run" / "drain.txt");
    EXPECT_GT(faulted, 10.0 * nominal);
    const std::string drain = slurp(kWork / "faulted_run" / "drain.txt");
    const long end = std::stol(drain.substr(drain.find("end_index=") + 10));
    EXPECT_GE(end, 2000);
    EXPECT_LT(end, 2005);
}

TEST_F(Cli, BenchScalesWithModelCount) {
    const Result none = cli("bench --random-models 0 --samples 500 --report-dir bench0");
    ASSERT_EQ(none.code, 0) << none.err;
    EXPECT_EQ(stat(none.out, "models_run"), "0");
    const Result one = cli("bench --random-models 1 --samples 2000 --report-dir bench1");
    const Result eight = cli("bench --random-models 8 --samples 2000 --report-dir bench8");
    ASSERT_EQ(one.code, 0);
    ASSERT_EQ(eight.code, 0);
    EXPECT_EQ(stat(eight.out, "models_run"), "16000");
    EXPECT_GT(std::stod(stat(eight.out, "median_us")), std::stod(stat(one.out, "median_us")));
}

TEST_F(Cli, BadArgumentsFailFast) {
    EXPECT_NE(cli("train --dataset nope").code, 0);
    EXPECT_EQ(cli("synth --out x.csv --fault spike:TGT:oops:1:1").code, 1);
    EXPECT_EQ(cli("inspect --models missing.sntl").code, 2);
}

TEST_F(Cli, NoiselessSyntheticIsLearnedClosely) {
    const Result r = cli("--seed 3 train --dataset synth --noise 0 --outputs T30 --dropout 0 --filters 32 "
                         "--dense-units 64 --learning-rate 3e-4 --min-learning-rate 1e-6 --batch-size 32 "
                         "--epochs 60 --patience 40 --model-dir noiseless");
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = lines(kWork / "noiseless" / "validation_mae.csv");
    ASSERT_EQ(rows.size(), 2u);
    std::stringstream ss(rows[1]);
    std::string f;
    for (int k = 0; k < 3; ++k) std::getline(ss, f, ',');
    EXPECT_LT(std::stod(f), 1e-3);
}
