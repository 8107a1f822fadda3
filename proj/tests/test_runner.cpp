#include "fedimb/runner/config.hpp"
#include "fedimb/runner/experiment.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace fedimb;
using namespace fedimb::runner;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fedimb_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string message_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

const char* kSmallConfigs[] = {
    R"({"kind":"imbalance_sweep","dataset":{"n_per_class":20,"dim":4},
        "partition":{"alpha":[0.5,"homogeneous"],"n_clients":20},
        "imbalance":{"k":[2,5],"trials":300,"resample_every":50},"seeds":[1,0]})",
    R"({"kind":"selection_size_sweep","dataset":{"n_per_class":20,"dim":4},
        "partition":{"alpha":0.1,"n_clients":20},"imbalance":{"k":[1,5,20],"trials":200},"seeds":[2]})",
    R"({"kind":"battery_sweep","dataset":{"n_per_class":20,"dim":4},
        "partition":{"alpha":0.1,"n_clients":20},
        "fleet":{"pool_size":[5,10],"window_size":[1,3],"step_size":[0.5],"select_k":3,"rounds":12},
        "seeds":[0]})",
    R"({"kind":"fl_train","dataset":{"n_per_class":10,"num_classes":3,"dim":4,"test_n_per_class":5},
        "partition":{"alpha":[1.0],"n_clients":6},
        "train":{"algorithm":["fedavg","moon"],"rounds":3,"clients_per_round":2,"hidden":4},
        "hyper":{"batch_size":4},"seeds":[0,1],"threads":3})",
};

} // namespace

TEST(Config, DefaultsAreEchoed) {
  const auto cfg = parse_config(R"({"kind":"fl_train"})");
  EXPECT_EQ(cfg.hyper.learning_rate, 0.05);
  EXPECT_EQ(cfg.hyper.local_epochs, 2u);
  const auto j = describe(cfg);
  EXPECT_EQ(j.at("hyper.learning_rate"), 0.05);
  EXPECT_EQ(j.at("hyper.local_epochs"), 2);
  EXPECT_EQ(j.at("dataset.n_per_class"), 100);
}

TEST(Config, NestedAndDottedKeysAgree) {
  const auto a = parse_config(R"({"kind":"battery_sweep","fleet":{"select_k":4}})");
  const auto b = parse_config(R"({"kind":"battery_sweep","fleet.select_k":4})");
  EXPECT_EQ(a.select_k, 4u);
  EXPECT_EQ(describe(a), describe(b));
}

TEST(Config, RangeErrorsNameTheRule) {
  const auto msg = message_of(R"({"kind":"imbalance_sweep","partition":{"alpha":-1}})");
  EXPECT_NE(msg.find("alpha > 0"), std::string::npos) << msg;
  EXPECT_NE(message_of(R"({"kind":"imbalance_sweep","partition":{"n_clients":0}})"), "");
  EXPECT_NE(message_of(R"({"kind":"imbalance_sweep","imbalance":{"k":101}})"), "");
  EXPECT_NE(message_of(R"({"kind":"battery_sweep","fleet":{"pool_size":[5],"select_k":6}})"), "");
}

TEST(Config, UnknownAndMisplacedKeys) {
  const auto msg = message_of(R"({"kind":"fl_train","hyper":{"moemntum":0.9}})");
  EXPECT_NE(msg.find("hyper.moemntum"), std::string::npos) << msg;
  EXPECT_NE(message_of(R"({"kind":"battery_sweep","hyper":{"learning_rate":0.1}})").find("does not apply"),
            std::string::npos);
  EXPECT_NE(message_of(R"({"kind":"selection_size_sweep","imbalance":{"resample_every":5}})"), "");
  EXPECT_NE(message_of(R"({"partition":{"alpha":1}})").find("kind"), std::string::npos);
  EXPECT_NE(message_of("{not json"), "");
  EXPECT_NE(message_of(R"({"kind":"fl_train","train":{"algorithm":"fedsgd"}})"), "");
}

TEST(Csv, HeaderOnlyWhenEmpty) {
  Table t{"x", {"a", "b"}, {}};
  EXPECT_EQ(to_csv(t), "a,b\n");
}

TEST(Csv, FormatsAndQuotes) {
  EXPECT_EQ(format_value(0.25), "0.250000");
  EXPECT_EQ(format_value(Value(7LL)), "7");
  EXPECT_EQ(format_value(std::string("none")), "none");
  EXPECT_EQ(format_value(std::string("a,b")), "\"a,b\"");
  Table t{"x", {"k", "v"}, {{1LL, 0.5}, {2LL, std::string("none")}}};
  EXPECT_EQ(to_csv(t), "k,v\n1,0.500000\n2,none\n");
}

TEST(Csv, EmitIsByteIdentical) {
  const auto dir = fresh_dir("emit");
  fs::create_directories(dir);
  Table t{"x", {"alpha", "mean"}, {{0.1, 0.123456789}, {std::string("homogeneous"), 0.0}}};
  emit_csv(t, dir / "a.csv");
  emit_csv(t, dir / "b.csv");
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
  EXPECT_EQ(read_file(dir / "a.csv"), to_csv(t));
  fs::remove_all(dir);
}

TEST(Csv, SortRowsNumbersBeforeStrings) {
  Table t{"x", {"alpha", "seed"}, {{std::string("homogeneous"), 0LL}, {1.0, 1LL}, {0.1, 2LL}, {0.1, 0LL}}};
  sort_rows(t, {"alpha", "seed"});
  EXPECT_EQ(to_csv(t), "alpha,seed\n0.100000,0\n0.100000,2\n1.00000,1\nhomogeneous,0\n");
}

TEST(Experiment, FlTrainShape) {
  const auto cfg = parse_config(kSmallConfigs[3]);
  const auto res = run_experiment(cfg);
  ASSERT_EQ(res.tables.size(), 2u);
  const auto& rounds = res.tables[0];
  const auto& summary = res.tables[1];
  EXPECT_EQ(rounds.name, "fl_train_rounds");
  EXPECT_EQ(rounds.rows.size(), 2u * 2u * 3u);
  EXPECT_EQ(summary.rows.size(), 2u);
  const auto seeds = summary.rows[0][summary.column("seeds")];
  EXPECT_EQ(std::get<std::string>(seeds), "0 1");
  const double sd = std::get<double>(summary.rows[0][summary.column("final_acc_std")]);
  EXPECT_GE(sd, 0.0);
}

TEST(Experiment, BatterySweepRowCount) {
  auto cfg = parse_config(R"({"kind":"battery_sweep","dataset":{"n_per_class":20,"dim":4},
      "fleet":{"rounds":20},"seeds":[0,1]})");
  const auto res = run_experiment(cfg);
  ASSERT_EQ(res.tables.size(), 1u);
  EXPECT_EQ(res.tables[0].rows.size(), 45u * 2u);
}

TEST(Experiment, ImbalanceRowsSortedAndEchoed) {
  const auto res = run_experiment(parse_config(kSmallConfigs[0]));
  const auto& t = res.tables[0];
  EXPECT_EQ(t.rows.size(), 2u * 2u * 2u);
  const auto csv = to_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "alpha,k,trials,mean_delta,n_clients,resample_every,seed");
  EXPECT_EQ(format_value(t.rows.front()[0]), "0.500000");
  EXPECT_EQ(format_value(t.rows.back()[0]), "homogeneous");
}

// Every experiment kind writes byte-identical files on repeated runs,
// independent of thread count.
TEST(Experiment, ByteIdenticalOutputForEveryKind) {
  int i = 0;
  for (const char* text : kSmallConfigs) {
    auto cfg = parse_config(text);
    const auto a = fresh_dir("det_a" + std::to_string(i)), b = fresh_dir("det_b" + std::to_string(i));
    const auto files = write_outputs(run_experiment(cfg), a);
    cfg.threads = cfg.threads == 1 ? 4 : 1;
    write_outputs(run_experiment(cfg), b);
    ASSERT_FALSE(files.empty());
    for (const auto& f : files) EXPECT_EQ(read_file(f), read_file(b / f.filename())) << f;
    fs::remove_all(a);
    fs::remove_all(b);
    ++i;
  }
}

TEST(Experiment, FailureIsAnnotatedWithSeed) {
  const auto cfg = parse_config(R"({"kind":"fl_train","dataset":{"n_per_class":5,"num_classes":2,"dim":2},
      "partition":{"n_clients":4},"train":{"rounds":2,"clients_per_round":2,"hidden":3},
      "hyper":{"learning_rate":1e200},"seeds":[3]})");
  try {
    run_experiment(cfg);
    FAIL() << "expected RunError";
  } catch (const RunError& e) {
    EXPECT_EQ(e.seed(), 3u);
    EXPECT_EQ(std::string(e.what()).rfind("seed 3: ", 0), 0u) << e.what();
  }
}

TEST(Experiment, WriteOutputsLeavesNoTemporaries) {
  const auto dir = fresh_dir("write");
  const auto files = write_outputs(run_experiment(parse_config(kSmallConfigs[1])), dir);
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    EXPECT_EQ(entry.path().extension(), ".csv");
    ++count;
  }
  EXPECT_EQ(count, files.size());
  fs::remove_all(dir);
}
