// ziqe: synthetic corpus generation, speech-BERT pre-training, WER
// quality-estimation fine-tuning, prediction and evaluation.

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ziqe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ziqe;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value configuration file");
  cmd->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory (or file for predict/dump-attention)");
}

RunConfig load_config(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig() : RunConfig::from_file(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value: " + kv);
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) config.set("seed", std::to_string(c.seed));
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-inflated WER quality estimation toolkit"};
  app.require_subcommand(1);
  Common common;
  std::string data, checkpoint, predictions, sample, split = "test";

  auto* synth = app.add_subcommand("synth", "generate a synthetic paired corpus");
  add_common(synth, common);

  auto* pretrain = app.add_subcommand("pretrain", "joint masked-LM + ASR pre-training");
  add_common(pretrain, common);
  pretrain->add_option("--data", data, "dataset file")->required();

  auto* fitphi = app.add_subcommand("fitphi", "maximum-likelihood Beta precision of the labels");
  add_common(fitphi, common);
  fitphi->add_option("--data", data, "dataset file")->required();

  auto* finetune = app.add_subcommand("finetune", "fine-tune a QE head on a pre-trained model");
  add_common(finetune, common);
  finetune->add_option("--data", data, "dataset file")->required();
  finetune->add_option("--checkpoint", checkpoint, "pre-training checkpoint")->required();

  auto* predict = app.add_subcommand("predict", "write (id, lambda, mu, expected WER) records");
  add_common(predict, common);
  predict->add_option("--data", data, "dataset file")->required();
  predict->add_option("--checkpoint", checkpoint, "QE checkpoint")->required();
  predict->add_option("--split", split, "train, dev, test or all");

  auto* evaluate = app.add_subcommand("evaluate", "MAE, Pearson, NDCG and F1 of predictions");
  add_common(evaluate, common);
  evaluate->add_option("--data", data, "dataset file")->required();
  evaluate->add_option("--predictions", predictions, "prediction file")->required();
  evaluate->add_option("--split", split, "train, dev, test or all");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck, common);

  auto* dump = app.add_subcommand("dump-attention", "cross-attention maps for one sample");
  add_common(dump, common);
  dump->add_option("--data", data, "dataset file")->required();
  dump->add_option("--checkpoint", checkpoint, "pre-training or QE checkpoint")->required();
  dump->add_option("--sample", sample, "sample id")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = load_config(common);
    const fs::path out = common.out;
    if (synth->parsed()) {
      pipeline::cmd_synth(config, out, std::cout);
    } else if (pretrain->parsed()) {
      pipeline::cmd_pretrain(config, data, out, std::cout);
    } else if (fitphi->parsed()) {
      pipeline::cmd_fitphi(config, data, out, std::cout);
    } else if (finetune->parsed()) {
      pipeline::cmd_finetune(config, data, checkpoint, out, std::cout);
    } else if (predict->parsed()) {
      pipeline::cmd_predict(config, checkpoint, data, out, split, std::cout);
    } else if (evaluate->parsed()) {
      pipeline::cmd_evaluate(config, predictions, data, out, split, std::cout);
    } else if (gradcheck->parsed()) {
      if (!pipeline::cmd_gradcheck(out, std::cout)) {
        std::cerr << "ziqe: gradient check failed\n";
        return 1;
      }
    } else if (dump->parsed()) {
      pipeline::cmd_dump_attention(checkpoint, data, sample, out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "ziqe: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
