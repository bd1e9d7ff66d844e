#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "blockrlc/commands.hpp"
#include "blockrlc/config.hpp"

namespace blockrlc {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("blockrlc_config_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

TEST(ParseConfig, MinimalTwoHop) {
  const auto spec = parse_spec_text(R"({"erasures":[0.1,0.1],"buffer_blocks":[2],"block_size":2})");
  EXPECT_EQ(spec.network, (NetworkConfig{{0.1, 0.1}, {2}, 2}));
  EXPECT_EQ(spec.command, Command::estimate);
  EXPECT_FALSE(spec.sim.has_value());
  EXPECT_FALSE(spec.buffers_in_packets);
}

TEST(ParseConfig, PacketForm) {
  const auto spec = parse_spec_text(R"({"erasures":[0.1,0.1,0.2],"buffer_packets":[10,20],"block_size":5})");
  EXPECT_EQ(spec.network.blocks, (std::vector<int>{2, 4}));
  EXPECT_TRUE(spec.buffers_in_packets);
}

TEST(ParseConfig, Errors) {
  const auto message = [](const std::string& text) {
    try {
      parse_spec_text(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"erasures":[0.1,0.1,0.1],"buffer_blocks":[1,1,1],"block_size":2})")
                .find("expected h-1 buffer entries"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,0.1],"buffer_packets":[7],"block_size":2})").find("m must be a multiple of K"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,0.1],"buffer_blocks":[2)").find("malformed JSON"), std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,1.1],"buffer_blocks":[2],"block_size":2})").find("outside [0,1]"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,0.1],"buffer_blocks":[2],"block_size":2,"bogus":1})").find("unknown key"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,0.1],"buffer_blocks":[2],"buffer_packets":[4],"block_size":2})")
                .find("exactly one"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":"x","buffer_blocks":[2],"block_size":2})").find("malformed config"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,0.1],"buffer_blocks":[2],"block_size":2,
                        "sweep":{"param":"speed","values":[1]}})")
                .find("unknown sweep parameter"),
            std::string::npos);
  EXPECT_NE(message(R"({"command":"sweep","erasures":[0.1,0.1],"buffer_blocks":[2],"block_size":2})")
                .find("needs a \"sweep\" axis"),
            std::string::npos);
  EXPECT_NE(message(R"({"erasures":[0.1,0.1],"buffer_blocks":[2],"block_size":2,"sim":{"epochs":0}})")
                .find("epochs"),
            std::string::npos);
  EXPECT_THROW(parse_config("/nonexistent/blockrlc.json"), IoError);
}

TEST(ParseConfig, RoundTrip) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> small(1, 6);
  for (int k = 0; k < 200; ++k) {
    RunSpec spec;
    spec.command = static_cast<Command>(k % 5);
    spec.network.K = small(rng);
    const int h = 2 + k % 7;
    for (int i = 0; i < h; ++i) spec.network.erasures.push_back(u(rng));
    for (int i = 0; i < h - 1; ++i) spec.network.blocks.push_back(small(rng));
    spec.buffers_in_packets = k % 2 == 0;
    spec.tol = u(rng) * 1e-6 + 1e-15;
    spec.max_iter = small(rng) * 100;
    spec.schedule = k % 3 ? UpdateSchedule::jacobi : UpdateSchedule::gauss_seidel;
    spec.tail_tolerance = u(rng) * 1e-3 + 1e-15;
    if (k % 4 != 0) {
      SimConfig sim;
      sim.epochs = 1 + static_cast<std::int64_t>(u(rng) * 1e7);
      sim.seed = rng();
      sim.replications = small(rng);
      sim.warmup_blocks = small(rng) * 10;
      spec.sim = sim;
    }
    if (spec.command == Command::sweep || k % 3 == 0) {
      SweepAxis axis;
      axis.param = "eps";
      axis.values = {u(rng), u(rng)};
      spec.sweep = axis;
    }
    spec.out_dir = k % 2 ? "out" : "";
    const auto text = emit_spec(spec).dump();
    EXPECT_EQ(parse_spec_text(text), spec) << text;
  }
}

TEST(Sweep, AppliesAxis) {
  auto spec = parse_spec_text(R"({"erasures":[0.1,0.1,0.1],"buffer_packets":[10,10],"block_size":5,
                                  "sweep":{"param":"m","values":[5,50]}})");
  EXPECT_EQ(apply_sweep_value(spec, 50).blocks, (std::vector<int>{10, 10}));
  EXPECT_THROW(apply_sweep_value(spec, 12), ConfigError);

  spec.sweep = SweepAxis{"K", {1, 2}, 0};
  const auto k2 = apply_sweep_value(spec, 2);
  EXPECT_EQ(k2.K, 2);
  EXPECT_EQ(k2.blocks, (std::vector<int>{5, 5}));
  EXPECT_THROW(apply_sweep_value(spec, 3), ConfigError);

  spec.sweep = SweepAxis{"eps", {0.2}, 0};
  EXPECT_EQ(apply_sweep_value(spec, 0.2).erasures, (std::vector<double>{0.2, 0.2, 0.2}));
  spec.sweep = SweepAxis{"eps_link", {0.4}, 2};
  EXPECT_EQ(apply_sweep_value(spec, 0.4).erasures, (std::vector<double>{0.1, 0.4, 0.1}));
  EXPECT_THROW(apply_sweep_value(spec, 1.4), ConfigError);
}

TEST(ExitCodes, ByErrorKind) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
  EXPECT_EQ(exit_code_for(DomainError("x")), kExitConfig);
  EXPECT_EQ(exit_code_for(ConvergenceError("x", 1.0, 3, {}, {})), kExitNonConvergence);
  EXPECT_EQ(exit_code_for(SolverError("x", 1.0)), kExitNonConvergence);
  EXPECT_EQ(exit_code_for(IoError("x")), kExitIo);
}

TEST(Commands, EstimateLossless) {
  const auto spec = parse_spec_text(R"({"erasures":[0,0,0],"buffer_blocks":[1,1],"block_size":1})");
  const auto res = cmd_estimate(spec);
  EXPECT_NEAR(res.report.at("throughput").get<double>(), 1.0, 1e-12);
  EXPECT_EQ(res.report.at("r").size(), 3u);
  EXPECT_EQ(res.report.at("p_b").size(), 3u);
  EXPECT_TRUE(res.report.contains("iterations"));
  EXPECT_TRUE(res.report.contains("residual"));
  EXPECT_EQ(res.report.at("format_version").get<int>(), kFormatVersion);
}

TEST(Commands, DelayTable) {
  const auto spec = parse_spec_text(R"({"erasures":[0.05,0.05,0.05,0.05,0.05],"buffer_blocks":[4,4,4,4],"block_size":4})");
  const auto res = cmd_delay(spec);
  ASSERT_EQ(res.files.size(), 1u);
  EXPECT_EQ(first_line(res.files[0].content), "delay_epochs,probability");
  double total = 0.0;
  std::istringstream in(res.files[0].content);
  std::string line;
  std::getline(in, line);
  long first = -1;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (first < 0) first = std::stol(line.substr(0, comma));
    total += std::stod(line.substr(comma + 1));
  }
  EXPECT_GE(first, 4);
  EXPECT_NEAR(total, 1.0, 1e-8);
  EXPECT_GT(res.report.at("delay").at("mean").get<double>(), 0.0);
  EXPECT_TRUE(res.report.at("delay").contains("std"));
}

TEST(Commands, SimulateDeterministicFiles) {
  const auto spec = parse_spec_text(R"({"erasures":[0.1,0.2,0.1],"buffer_blocks":[2,2],"block_size":2,
                                        "sim":{"epochs":20000,"seed":9,"replications":3,"warmup_blocks":5}})");
  const auto a = cmd_simulate(spec);
  const auto b = cmd_simulate(spec);
  ASSERT_EQ(a.files.size(), 7u);
  for (std::size_t k = 0; k < a.files.size(); ++k) {
    EXPECT_EQ(a.files[k].name, b.files[k].name);
    EXPECT_EQ(a.files[k].content, b.files[k].content);
  }
  EXPECT_EQ(first_line(a.files[1].content), "block_id,start_epoch,end_epoch,delay");
  EXPECT_EQ(a.report.at("rng").get<std::string>(), kRngName);
}

TEST(Commands, SimulateDeadLastLink) {
  const auto spec = parse_spec_text(R"({"erasures":[0.1,1.0],"buffer_blocks":[2],"block_size":2,
                                        "sim":{"epochs":5000,"replications":2}})");
  EXPECT_EQ(cmd_simulate(spec).report.at("throughput").get<double>(), 0.0);
}

TEST(Commands, MergedHistogramHasUnitMass) {
  const auto spec = parse_spec_text(R"({"erasures":[0.1,0.2],"buffer_blocks":[2],"block_size":2,
                                        "sim":{"epochs":10000,"replications":10,"warmup_blocks":20}})");
  const auto res = cmd_simulate(spec);
  double blocks = res.report.at("delay").at("blocks").get<double>(), mass = 0.0;
  for (const auto& bin : res.report.at("delay").at("histogram")) mass += bin[1].get<double>() / blocks;
  EXPECT_NEAR(mass, 1.0, 1e-12);
  EXPECT_EQ(res.report.at("replication_throughput").size(), 10u);
}

TEST(Commands, CompareTwoHopWithinSampling) {
  const auto spec = parse_spec_text(R"({"erasures":[0.2,0.3],"buffer_blocks":[2],"block_size":2,
                                        "sim":{"epochs":100000,"replications":10,"seed":5}})");
  const auto res = cmd_compare(spec);
  const auto& j = res.report;
  EXPECT_LE(j.at("abs_diff").get<double>(), 3.0 * j.at("throughput_sim_standard_error").get<double>());
  for (const char* key : {"throughput_est", "throughput_sim", "delay_mean_est", "delay_mean_sim", "delay_tv_distance"})
    EXPECT_TRUE(j.contains(key)) << key;
  ASSERT_EQ(j.at("occupancy_tv").size(), 1u);
  EXPECT_EQ(first_line(res.files.at(0).content), "delay_epochs,prob_est,prob_sim");
}

TEST(Commands, SweepRowsPerValue) {
  auto spec = parse_spec_text(R"({"command":"sweep","erasures":[0.1,0.1,0.1],"buffer_packets":[5,5],"block_size":5,
                                  "sweep":{"param":"m","values":[5,10,15]}})");
  const auto res = cmd_sweep(spec);
  const auto csv = res.files.at(0).content;
  EXPECT_EQ(first_line(csv), "m,K,eps,throughput_est,throughput_sim,delay_mean_est,delay_mean_sim");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(csv.find('\n') + 1, 6), "5,5,0.");
  EXPECT_EQ(res.report.at("points").size(), 3u);
}

TEST(Commands, WriteOutputs) {
  const auto dir = scratch_dir("write");
  write_outputs(dir / "nested", {{"a.csv", "x\n"}, {"b.json", "{}\n"}});
  EXPECT_EQ(read_file(dir / "nested" / "a.csv"), "x\n");
  EXPECT_EQ(read_file(dir / "nested" / "b.json"), "{}\n");
  EXPECT_FALSE(fs::exists(dir / "nested" / "a.csv.tmp"));
  fs::remove_all(dir);
}

#ifdef BLOCKRLC_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string(BLOCKRLC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli");
  const auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  };
  const auto good = write("good.json", R"({"erasures":[0.1,0.1],"buffer_blocks":[2],"block_size":2})");
  const auto bad = write("bad.json", R"({"erasures":[0.1,0.1,0.1],"buffer_blocks":[2,2,2],"block_size":2})");
  EXPECT_EQ(run_cli("estimate " + good), kExitOk);
  EXPECT_EQ(run_cli("estimate " + bad), kExitConfig);
  EXPECT_EQ(run_cli("estimate " + (dir / "missing.json").string()), kExitIo);
  EXPECT_EQ(run_cli("estimate " + good + " --max-iter 1 --tol 1e-300"), kExitNonConvergence);
  EXPECT_EQ(run_cli("delay " + good + " --out-dir " + (dir / "out").string()), kExitOk);
  EXPECT_TRUE(fs::exists(dir / "out" / "delay_pmf.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));
  EXPECT_EQ(run_cli("simulate " + good + " --epochs 2000 --replications 2 --seed 3 --out-dir " +
                    (dir / "sim").string()),
            kExitOk);
  EXPECT_TRUE(fs::exists(dir / "sim" / "replication_1_delays.csv"));
  fs::remove_all(dir);
}
#endif

#ifdef BLOCKRLC_CONFIG_DIR
TEST(Config, ShippedConfigsParse) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(BLOCKRLC_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    SCOPED_TRACE(entry.path().string());
    const auto spec = parse_config(entry.path().string());
    EXPECT_NO_THROW(spec.network.validate());
    EXPECT_EQ(parse_spec(emit_spec(spec)), spec);
    ++seen;
  }
  EXPECT_GT(seen, 0);
}
#endif

}  // namespace
}  // namespace blockrlc
