#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "i2p/cli.hpp"
#include "i2p/config.hpp"
#include "i2p/datapipe.hpp"
#include "i2p/io.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace i2p {
namespace {

namespace fs = std::filesystem;

// Tiny run configuration: 16x64 panoramas, one block per tower, 12 poses.
config::RunConfig tiny_config() {
    auto c = config::desk_profile();
    auto& e = c.model.encoder;
    e.image_height = c.render.image_height = 16;
    e.image_width = c.render.image_width = 64;
    e.blocks = 1;
    e.image_heads = e.cloud_heads = 2;
    e.image_dim = e.cloud_dim = 16;
    e.cloud_tokens = 16;
    e.neighbors = 8;
    e.tokenizer_channels = {8, 16};
    c.model.aggregation.clusters = 4;
    c.model.aggregation.output_dim = 16;
    c.render.cloud_points = 256;
    c.scene.extent_m = 80;
    c.scene.landmarks = 20;
    c.trajectory.count = 12;
    c.trajectory.start = {-10, 0};
    c.trajectory.step_m = 2;
    c.train.epochs = 2;
    c.train.batch_size = 4;
    return c;
}

struct Result {
    int code;
    std::string out, err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

class Pipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = testing::temp_dir("cli_pipeline");
        config::save(dir_ / "tiny.json", tiny_config());
        const auto cfg = (dir_ / "tiny.json").string();
        ASSERT_EQ(run({"gen", "--config", cfg, "--seed", "3", "--out", s(dir_ / "ds")}).code, 0);
        ASSERT_EQ(run({"train", "--data", s(dir_ / "ds"), "--out", s(dir_ / "run")}).code, 0);
        ASSERT_EQ(run({"embed", "--model", s(dir_ / "run"), "--modality", "cloud", "--data", s(dir_ / "ds"), "--out",
                       s(dir_ / "db.json")})
                      .code,
                  0);
        ASSERT_EQ(run({"embed", "--model", s(dir_ / "run"), "--modality", "image", "--data", s(dir_ / "ds"), "--out",
                       s(dir_ / "q.json")})
                      .code,
                  0);
        ASSERT_EQ(run({"query", "--db", s(dir_ / "db.json"), "--queries", s(dir_ / "q.json"), "--out",
                       s(dir_ / "rank.csv")})
                      .code,
                  0);
        ASSERT_EQ(run({"eval", "--rankings", s(dir_ / "rank.csv"), "--poses", s(dir_ / "ds" / "poses.csv"), "--out",
                       s(dir_ / "eval")})
                      .code,
                  0);
    }
    static std::string s(const fs::path& p) { return p.string(); }
    static inline fs::path dir_;
};

TEST_F(Pipeline, GenWritesEveryPairAndIsDeterministic) {
    auto ds = datapipe::read_dataset(dir_ / "ds");
    EXPECT_EQ(ds.pairs.size(), 12u);
    EXPECT_EQ(ds.split.queries.size() + ds.split.database.size(), 12u);
    ASSERT_EQ(run({"gen", "--config", s(dir_ / "tiny.json"), "--seed", "3", "--out", s(dir_ / "ds2")}).code, 0);
    for (const char* f : {"poses.csv", "split.json", "images/5.ppm", "clouds/5.i2pc"})
        EXPECT_EQ(io::read_text(dir_ / "ds" / f), io::read_text(dir_ / "ds2" / f)) << f;
}

TEST_F(Pipeline, TrainWritesRunDirectory) {
    for (const char* f : {"model.json", "model.bin", "state.json", "loss.csv", "train.log", "config.json"})
        EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
    auto rows = io::read_text(dir_ / "run" / "loss.csv");
    EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 3);
}

TEST_F(Pipeline, EmbedIsByteIdenticalAcrossRuns) {
    ASSERT_EQ(run({"embed", "--model", s(dir_ / "run"), "--modality", "cloud", "--data", s(dir_ / "ds"), "--out",
                   s(dir_ / "db_again.json")})
                  .code,
              0);
    EXPECT_EQ(io::read_text(dir_ / "db.f32"), io::read_text(dir_ / "db_again.f32"));
    auto a = nlohmann::json::parse(io::read_text(dir_ / "db.json"));
    auto b = nlohmann::json::parse(io::read_text(dir_ / "db_again.json"));
    a.erase("blob");
    b.erase("blob");
    EXPECT_EQ(a, b);
}

TEST_F(Pipeline, EmbedFilesMatchesDatasetMode) {
    auto ds = datapipe::read_dataset(dir_ / "ds");
    const auto id = std::to_string(ds.split.queries.front());
    ASSERT_EQ(run({"embed", "--model", s(dir_ / "run"), "--modality", "image", "--files",
                   s(dir_ / "ds" / "images" / (id + ".ppm")), "--poses", s(dir_ / "ds" / "poses.csv"), "--out",
                   s(dir_ / "one.json")})
                  .code,
              0);
    auto one = evaluation::RetrievalDatabase::load(dir_ / "one.json");
    auto all = evaluation::RetrievalDatabase::load(dir_ / "q.json");
    EXPECT_EQ(one.entries()[0].feature, all.entries()[0].feature);
}

TEST_F(Pipeline, MetricsMatchRecomputationFromRankings) {
    const auto results = cli::parse_rankings_csv(io::read_text(dir_ / "rank.csv"));
    const auto poses = datapipe::read_poses_csv(dir_ / "ds" / "poses.csv");
    const auto rows = io::read_text(dir_ / "eval" / "metrics.csv");
    std::istringstream in(rows);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "metric,N,value");
    std::vector<std::size_t> seen;
    while (std::getline(in, line)) {
        auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
        const auto name = line.substr(0, c1);
        const double v = std::stod(line.substr(c2 + 1));
        if (name == "recall") {
            const std::size_t n = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
            seen.push_back(n);
            EXPECT_NEAR(v, oracle::recall(results, poses, 20.0, n), 1e-9) << n;
        } else if (name == "max_f1") {
            EXPECT_NEAR(v, oracle::max_f1(results, poses, 20.0), 1e-9);
        }
    }
    // Default N list.
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 5, 10, 15, 20}));
    EXPECT_TRUE(fs::exists(dir_ / "eval" / "pr.csv"));
}

TEST_F(Pipeline, PlotWritesSvgs) {
    ASSERT_EQ(run({"plot", "--metrics", s(dir_ / "eval" / "metrics.csv"), "--pr", s(dir_ / "eval" / "pr.csv"), "--out",
                   s(dir_ / "plots")})
                  .code,
              0);
    EXPECT_EQ(io::read_text(dir_ / "plots" / "topn.svg").rfind("<svg", 0), 0u);
    EXPECT_TRUE(fs::exists(dir_ / "plots" / "pr.svg"));
}

TEST_F(Pipeline, SwappedModalitiesAreDataErrors) {
    auto r = run({"query", "--db", s(dir_ / "q.json"), "--queries", s(dir_ / "db.json"), "--out", s(dir_ / "x.csv")});
    EXPECT_EQ(r.code, cli::kData);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(Pipeline, ResumeContinuesToSameModel) {
    ASSERT_EQ(run({"train", "--data", s(dir_ / "ds"), "--out", s(dir_ / "run2"), "--stop-after", "1"}).code, 0);
    ASSERT_EQ(run({"train", "--data", s(dir_ / "ds"), "--out", s(dir_ / "run2"), "--resume"}).code, 0);
    EXPECT_EQ(io::read_text(dir_ / "run" / "model.bin"), io::read_text(dir_ / "run2" / "model.bin"));
    EXPECT_EQ(io::read_text(dir_ / "run" / "loss.csv"), io::read_text(dir_ / "run2" / "loss.csv"));
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, cli::kUsage);
    EXPECT_EQ(run({"dance"}).code, cli::kUsage);
    auto dir = testing::temp_dir("cli_usage");
    EXPECT_EQ(run({"gen", "--poses", "0", "--out", (dir / "x").string()}).code, cli::kUsage);
    EXPECT_EQ(run({"gen", "--profile", "laptop", "--out", (dir / "x").string()}).code, cli::kUsage);
    EXPECT_EQ(run({"--help"}).code, cli::kOk);
}

TEST(Cli, MissingInputsAreDataErrors) {
    auto dir = testing::temp_dir("cli_missing");
    EXPECT_EQ(run({"train", "--data", (dir / "nope").string(), "--out", (dir / "run").string()}).code, cli::kData);
    EXPECT_EQ(run({"eval", "--rankings", (dir / "r.csv").string(), "--poses", (dir / "p.csv").string(), "--out",
                   dir.string()})
                  .code,
              cli::kData);
}

TEST(Cli, RankingsCsvRoundTrip) {
    std::vector<evaluation::RetrievalResult> r{{4, {9, 2}, {0.5, 0.1 + 0.2}}, {7, {2}, {-1e-300}}};
    const auto text = cli::rankings_csv(r);
    EXPECT_EQ(text.rfind("query_id,rank,candidate_id,similarity\n4,1,9,0.5\n", 0), 0u);
    auto back = cli::parse_rankings_csv(text);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].query_id, r[i].query_id);
        EXPECT_EQ(back[i].candidates, r[i].candidates);
        EXPECT_EQ(back[i].similarities, r[i].similarities);
    }
    EXPECT_THROW(cli::parse_rankings_csv("query_id,rank,candidate_id,similarity\n1,2,3,0.5\n"), DataError);
    EXPECT_THROW(cli::parse_rankings_csv("a,b\n"), DataError);
}

TEST(Cli, ThreadsFromEnvironment) {
    unsetenv("I2P_THREADS");
    EXPECT_EQ(cli::threads_from_env(), 0);
    setenv("I2P_THREADS", "3", 1);
    EXPECT_EQ(cli::threads_from_env(), 3);
    setenv("I2P_THREADS", "three", 1);
    EXPECT_THROW(cli::threads_from_env(), ConfigError);
    unsetenv("I2P_THREADS");
}

}  // namespace
}  // namespace i2p
