#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(XABR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "xabr_cli_test";
  fs::create_directories(dir);
  return dir;
}

fs::path write(const std::string& name, const std::string& text) {
  const auto path = work_dir() / name;
  std::ofstream(path) << text;
  return path;
}

const char* kTinyConfig = R"({
  "donor": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "max_len": 128},
  "receiver": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32, "max_len": 96},
  "train": {"epochs": 1, "batch_size": 8, "lr_bridge": 0.002, "lr_receiver": 0.001}
})";

}  // namespace

TEST(Cli, EndToEndPipeline) {
  const auto dir = work_dir();
  const auto config = write("tiny.json", kTinyConfig);
  const auto data = dir / "data.jsonl", donor = dir / "donor.ckpt", model = dir / "model.ckpt";
  ASSERT_EQ(run("gen-data --n 24 --seed 3 --out " + data.string()), 0);
  ASSERT_TRUE(fs::exists(data));
  ASSERT_EQ(run("pretrain-donor --config " + config.string() + " --data " + data.string() + " --out " +
                donor.string()),
            0);
  ASSERT_EQ(run("train --config " + config.string() + " --data " + data.string() + " --donor-ckpt " +
                donor.string() + " --out " + model.string()),
            0);
  EXPECT_EQ(run("eval --ckpt " + model.string() + " --data " + data.string()), 0);
  EXPECT_EQ(run("generate --ckpt " + model.string() + " --prompt 'sum of 5 and 5' --max-new 4"), 0);
  EXPECT_EQ(run("gradcheck --module loss"), 0);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto data = work_dir() / "cfgdata.jsonl";
  ASSERT_EQ(run("gen-data --n 4 --out " + data.string()), 0);
  const auto bad = write("bad.json", R"({"train": {"learning_rate": 1}})");
  EXPECT_EQ(run("pretrain-donor --config " + bad.string() + " --data " + data.string() + " --out /dev/null"), 2);
  const auto broken = write("broken.json", "{ not json");
  EXPECT_EQ(run("pretrain-donor --config " + broken.string() + " --data " + data.string() + " --out /dev/null"), 2);
  EXPECT_EQ(run("train --config " + bad.string()), 2);  // missing required options
  EXPECT_EQ(run("gradcheck --module nope"), 2);
}

TEST(Cli, DataErrorsExitThree) {
  const auto config = write("tiny3.json", kTinyConfig);
  const auto malformed = write("malformed.jsonl", "{\"prompt\": \"a\", \"response\": \"b\"}\n{oops\n");
  EXPECT_EQ(run("pretrain-donor --config " + config.string() + " --data " + malformed.string() + " --out /dev/null"), 3);
  const auto missing = write("missing.jsonl", "{\"prompt\": \"a\"}\n");
  EXPECT_EQ(run("pretrain-donor --config " + config.string() + " --data " + missing.string() + " --out /dev/null"), 3);
  const auto empty = write("empty.jsonl", "");
  EXPECT_EQ(run("pretrain-donor --config " + config.string() + " --data " + empty.string() + " --out /dev/null"), 3);
}

TEST(Cli, CheckpointErrorsExitFour) {
  const auto data = work_dir() / "ckdata.jsonl";
  ASSERT_EQ(run("gen-data --n 4 --out " + data.string()), 0);
  const auto junk = write("junk.ckpt", "definitely not a checkpoint");
  EXPECT_EQ(run("eval --ckpt " + junk.string() + " --data " + data.string()), 4);
  EXPECT_EQ(run("generate --ckpt " + (work_dir() / "absent.ckpt").string() + " --prompt hi"), 4);
}
