// memcap: train the micro LM, compress texts into mem vectors and run the
// capacity, scaling, codec and geometry experiments.

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "memcap/error.hpp"
#include "memcap/runner.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Accepts "--a.b=value" and "--a.b value" pairs left over by CLI11.
Overrides parse_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() <= 2) throw memcap::ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    if (auto eq = key.find('='); eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      out.emplace_back(key, extras[++i]);
    } else {
      out.emplace_back(key, "true");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compress token sequences into trainable prefix vectors of a frozen language model"};
  app.allow_extras();
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
  app.add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--workers", workers, "Parallel compression jobs");
  app.add_option("--out", out, "Output directory for runs");
  app.footer("Any config key can be overridden with a dotted flag, e.g. --compression.k=4");

  using Command = memcap::CommandOutcome (*)(const memcap::ExperimentConfig&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"train-lm", "Train and freeze the micro LM; write its archive and loss curve", memcap::cmd_train_lm},
      {"compress", "Compress texts into mem vectors", memcap::cmd_compress},
      {"capacity", "Decoding-capacity search over natural and random texts", memcap::cmd_capacity},
      {"scaling", "Capacity search for each number of mem vectors", memcap::cmd_scaling},
      {"codec-bench", "Compare Huffman, LM arithmetic coding and external compressors", memcap::cmd_codec_bench},
      {"geometry", "Cosine-similarity and interpolation studies of lossless mem vectors", memcap::cmd_geometry},
  };
  Command selected = nullptr;
  CLI::App* selected_app = nullptr;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->allow_extras();
    sub->callback([&selected, &selected_app, sub, fn = fn] {
      selected = fn;
      selected_app = sub;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    std::vector<std::string> extras = app.remaining();
    if (selected_app) {
      for (auto& arg : selected_app->remaining()) extras.push_back(arg);
    }
    Overrides overrides = parse_overrides(extras);
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (workers) overrides.emplace_back("workers", std::to_string(*workers));
    if (out) overrides.emplace_back("out_dir", nlohmann::json(*out).dump());
    const auto config = memcap::load_experiment_config(config_path, overrides);
    const auto outcome = selected(config);
    std::cout << outcome.summary.dump(2) << '\n' << "run directory: " << outcome.run_dir.string() << '\n';
    if (outcome.weights_hash_before != outcome.weights_hash_after) std::cerr << "error: model weights changed\n";
    if (outcome.failed_jobs > 0) std::cerr << outcome.failed_jobs << " job(s) failed\n";
    return outcome.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
