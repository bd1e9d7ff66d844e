// blockrlc: estimate, simulate and compare block-based RLC line networks.
//
//   blockrlc estimate net.json
//   blockrlc delay net.json --out-dir out/
//   blockrlc simulate net.json --seed 7 --epochs 1000000 --replications 10
//   blockrlc compare net.json
//   blockrlc sweep sweep.json --out-dir out/
//
// The JSON report goes to stdout. With --out-dir (or "out_dir" in the
// config) the report and the CSV tables are also written there.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "blockrlc/commands.hpp"

namespace {

struct Overrides {
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<double> tail_tol;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  std::optional<int> replications;
  std::optional<std::int64_t> warmup_blocks;
  std::optional<std::string> out_dir;
};

void apply(const Overrides& o, blockrlc::RunSpec& spec) {
  if (o.tol) spec.tol = *o.tol;
  if (o.max_iter) spec.max_iter = *o.max_iter;
  if (o.tail_tol) spec.tail_tolerance = *o.tail_tol;
  if (o.out_dir) spec.out_dir = *o.out_dir;
  if (o.seed || o.epochs || o.replications || o.warmup_blocks) {
    auto sim = spec.sim.value_or(blockrlc::SimConfig{});
    if (o.seed) sim.seed = *o.seed;
    if (o.epochs) sim.epochs = *o.epochs;
    if (o.replications) sim.replications = *o.replications;
    if (o.warmup_blocks) sim.warmup_blocks = *o.warmup_blocks;
    spec.sim = sim;
  }
  // Re-run the config checks on the overridden values.
  spec = blockrlc::parse_spec(blockrlc::emit_spec(spec));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Throughput and block-delay analysis of block-based RLC over finite-buffer line networks"};
  app.require_subcommand(1);

  Overrides o;
  std::string config_path;
  for (auto c : {blockrlc::Command::estimate, blockrlc::Command::delay, blockrlc::Command::simulate,
                 blockrlc::Command::compare, blockrlc::Command::sweep}) {
    auto* sub = app.add_subcommand(blockrlc::to_string(c));
    sub->add_option("config", config_path, "JSON network/run configuration")->required();
    sub->add_option("--tol", o.tol, "fixed-point tolerance");
    sub->add_option("--max-iter", o.max_iter, "fixed-point iteration cap");
    sub->add_option("--tail-tol", o.tail_tol, "mass allowed to be dropped from delay distributions");
    sub->add_option("--seed", o.seed, "simulation seed");
    sub->add_option("--epochs", o.epochs, "simulation horizon per replication");
    sub->add_option("--replications", o.replications, "independent simulation replications");
    sub->add_option("--warmup-blocks", o.warmup_blocks, "blocks excluded from delay statistics");
    sub->add_option("--out-dir", o.out_dir, "directory for reports and tables");
  }
  CLI11_PARSE(app, argc, argv);

  try {
    auto spec = blockrlc::parse_config(config_path);
    for (auto c : {blockrlc::Command::estimate, blockrlc::Command::delay, blockrlc::Command::simulate,
                   blockrlc::Command::compare, blockrlc::Command::sweep}) {
      if (app.got_subcommand(blockrlc::to_string(c))) spec.command = c;
    }
    apply(o, spec);

    auto result = blockrlc::run_command(spec);
    std::cout << result.report.dump(2) << '\n';
    if (!spec.out_dir.empty()) {
      bool has_report = false;
      for (const auto& f : result.files) has_report = has_report || f.name == "report.json";
      if (!has_report) result.files.push_back({"report.json", result.report.dump(2) + "\n"});
      blockrlc::write_outputs(spec.out_dir, result.files);
    } else if (!result.files.empty()) {
      std::cerr << "note: " << result.files.size() << " table(s) not written; pass --out-dir to keep them\n";
    }
    return blockrlc::kExitOk;
  } catch (const blockrlc::ConvergenceError& e) {
    std::cerr << "error: " << e.what() << " (iterations " << e.iterations() << ", residual " << e.residual()
              << ")\n  last r:";
    for (double r : e.r()) std::cerr << ' ' << r;
    std::cerr << "\n  last p_b:";
    for (double p : e.p_b()) std::cerr << ' ' << p;
    std::cerr << '\n';
    return blockrlc::kExitNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return blockrlc::exit_code_for(e);
  }
}
