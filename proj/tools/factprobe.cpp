#include <CLI11.hpp>

#include <iostream>

#include "factprobe/experiment.hpp"

using namespace factprobe;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, families, regimes;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--families", o.families, "comma list of forest,recurrent,contextual");
  cmd->add_option("--regimes", o.regimes, "comma list of claim,evidence,claim+evidence");
  cmd->add_option("--jobs", o.jobs, "grid cells trained concurrently")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Overrides& o) {
  auto c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.families) c.families = parse_families(*o.families);
  if (o.regimes) c.regimes = parse_regimes(*o.regimes);
  if (o.jobs) c.jobs = *o.jobs;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"factprobe: evidence-reliance probes for claim veracity models"};
  app.require_subcommand(1);

  Overrides o;
  auto* prepare = app.add_subcommand("prepare", "filter and split every configured dataset");
  auto* train = app.add_subcommand("train", "grid-search and checkpoint one probe per family and regime");
  auto* evaluate = app.add_subcommand("evaluate", "within- and cross-dataset test metrics");
  auto* ablate = app.add_subcommand("ablate", "evidence-removal curves for evidence probes");
  for (auto* cmd : {prepare, train, evaluate, ablate}) add_common(cmd, o);

  auto* synth = app.add_subcommand("synth", "write a synthetic corpus with controlled evidence leakage");
  LeakageSpec spec;
  std::uint64_t synth_seed = 0;
  std::string synth_out = ".", synth_name = "synthetic";
  synth->add_option("--n", spec.n, "records")->check(CLI::PositiveNumber);
  synth->add_option("--leak", spec.leak, "marker probability in the rank-1 snippet")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--decay", spec.decay, "per-rank marker decay")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--claim-signal", spec.claim_signal, "marker probability in the claim")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--name", synth_name, "file stem");

  auto* convert = app.add_subcommand("convert-multifc", "convert a MultiFC export to JSONL");
  std::string tsv, snippets, prefix, output;
  convert->add_option("--tsv", tsv, "claims TSV")->required()->check(CLI::ExistingFile);
  convert->add_option("--snippets", snippets, "snippet directory")->required()->check(CLI::ExistingDirectory);
  convert->add_option("--prefix", prefix, "claim id prefix to keep, e.g. pomt or snes");
  convert->add_option("--output", output, "JSONL output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*prepare) cmd_prepare(resolve(o), std::cerr);
    else if (*train) cmd_train(resolve(o), std::cerr);
    else if (*evaluate) cmd_evaluate(resolve(o), std::cerr);
    else if (*ablate) cmd_ablate(resolve(o), std::cerr);
    else if (*synth) cmd_synth(spec, synth_seed, synth_out, synth_name, std::cerr);
    else if (*convert) {
      const auto records = convert_multifc(tsv, snippets, prefix);
      if (records.empty()) throw DataError(tsv + ": no claims converted");
      write_corpus(output, records);
      std::cerr << "converted " << records.size() << " claims -> " << output << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
