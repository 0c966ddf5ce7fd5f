#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "commands.hpp"
#include "ssmoe/pipeline/pipeline.hpp"

using namespace ssmoe;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string data_dir, work_dir, decoder;
  bool no_sampling_moe = false, no_space_moe = false;
};

config::RunConfig resolve(const GlobalOptions& g) {
  config::RunConfig cfg = g.config_path.empty() ? config::RunConfig{} : config::load_config(g.config_path);
  for (const auto& o : g.overrides) config::apply_override(cfg, o);
  // Dedicated flags win over --set.
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (!g.data_dir.empty()) cfg.data_dir = g.data_dir;
  if (!g.work_dir.empty()) cfg.work_dir = g.work_dir;
  if (!g.decoder.empty()) cfg.set("autoencoder.decoder", g.decoder);
  if (g.no_sampling_moe) cfg.disable_sampling_moe = true;
  if (g.no_space_moe) cfg.disable_space_moe = true;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion super-resolution with sampling/space mixture of experts"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("-c,--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "override one key, e.g. --set stage1.steps=100 (repeatable)");
  app.add_option("--seed", g.seed, "run.seed");
  app.add_option("--threads", g.threads, "worker threads for sampling and evaluation")->check(CLI::PositiveNumber);
  app.add_option("--data", g.data_dir, "dataset directory (paths.data)");
  app.add_option("--work", g.work_dir, "checkpoint directory (paths.work)");
  app.add_option("--decoder", g.decoder, "baseline | aff | ffl | unet+ffl | aff+ffl");
  app.add_flag("--disable-sampling-moe", g.no_sampling_moe, "one denoiser for all timesteps");
  app.add_flag("--disable-space-moe", g.no_space_moe, "plain FFN instead of the space experts");

  auto* gen_data = app.add_subcommand("gen-data", "write the synthetic train and held-out splits");
  auto* train_ae = app.add_subcommand("train-ae", "pretrain the VQ autoencoder (plain decoder)");
  auto* stage1 = app.add_subcommand("train-stage1", "train the latent denoiser");
  auto* gen_pairs = app.add_subcommand("gen-pairs", "sample latents for the stage-2 training pairs");
  auto* stage2 = app.add_subcommand("train-stage2", "train the frequency-compensated decoder");

  cli::InferOptions infer_opt;
  auto* infer = app.add_subcommand("infer", "super-resolve PPM images");
  infer->add_option("-i,--input", infer_opt.input, "LR image or directory")->required();
  infer->add_option("-o,--output", infer_opt.output, "output image or directory")->required();
  infer->add_option("--steps", infer_opt.steps, "sampling steps (default sampling.steps)")->check(CLI::PositiveNumber);

  cli::EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "PSNR-Y, SSIM and LSD over matching PPM files");
  eval->add_option("--pred", eval_opt.pred_dir, "directory of predictions")->required();
  eval->add_option("--ref", eval_opt.ref_dir, "directory of references")->required();
  eval->add_option("--format", eval_opt.format, "table | jsonl")->check(CLI::IsMember({"table", "jsonl"}));
  eval->add_option("--records", eval_opt.records, "also write jsonl records to this file");

  cli::FlopsOptions flops_opt;
  auto* flops = app.add_subcommand("flops", "parameter and MAC counts of the configured denoiser");
  flops->add_option("--format", flops_opt.format, "table | jsonl")->check(CLI::IsMember({"table", "jsonl"}));
  flops->add_flag("--per-layer", flops_opt.per_layer, "list every layer of the merged model");
  flops->add_option("--steps", flops_opt.steps, "sampling steps (default sampling.steps)")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(g);
    if (*gen_data) return cli::cmd_gen_data(cfg);
    if (*train_ae) return cli::cmd_train_ae(cfg);
    if (*stage1) return cli::cmd_train_stage1(cfg);
    if (*gen_pairs) return cli::cmd_gen_pairs(cfg);
    if (*stage2) return cli::cmd_train_stage2(cfg);
    if (*infer) return cli::cmd_infer(cfg, infer_opt);
    if (*eval) return cli::cmd_eval(cfg, eval_opt);
    if (*flops) return cli::cmd_flops(cfg, flops_opt);
  } catch (const pipeline::MissingInput& e) {
    std::cerr << "error: missing input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
