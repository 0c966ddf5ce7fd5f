#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "report.hpp"
#include "run_context.hpp"
#include "ssmoe/data/dataset.hpp"
#include "ssmoe/data/image.hpp"
#include "ssmoe/metrics/cost.hpp"
#include "ssmoe/metrics/metrics.hpp"
#include "ssmoe/pipeline/pipeline.hpp"

namespace ssmoe::cli {

namespace fs = std::filesystem;
using pipeline::MissingInput;

namespace {

// Seed streams per command, so changing one stage never shifts another's randomness.
enum Stream : std::uint64_t {
  kTrainData = 1,
  kHeldoutData = 2,
  kAeInit = 0xae0,
  kAeTrain = 0xae1,
  kStage1Init = 0x510,
  kStage1Train = 0x511,
  kPairs = 0x9a1,
  kStage2Init = 0x520,
  kStage2Train = 0x521,
  kInfer = 0x1f0,
};

void save(RunContext& ctx, const data::TensorArchive& a, const std::string& path) {
  ensure_parent(path);
  a.save(path);
  ctx.add_output(path);
}

data::TensorArchive load(RunContext& ctx, const std::string& path, const std::string& what) {
  auto a = pipeline::load_archive(path, what);
  ctx.add_input(path);
  return a;
}

std::string tsv(std::initializer_list<double> cols, int step) {
  std::ostringstream os;
  os.precision(9);
  os << step;
  for (double c : cols) os << '\t' << c;
  return os.str();
}

void write_lines(RunContext& ctx, const std::string& path, const std::vector<std::string>& lines) {
  ensure_parent(path);
  std::ofstream f(path, std::ios::trunc);
  for (const auto& l : lines) f << l << "\n";
  f.close();
  ctx.add_output(path);
}

std::vector<fs::path> ppm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingInput("image directory '" + dir.string() + "' not found");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string numbered(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d.ppm", i);
  return buf;
}

std::unique_ptr<autoencoder::Autoencoder> load_stage2_decoder(RunContext& ctx, const config::RunConfig& cfg) {
  return autoencoder::load_autoencoder(load(ctx, pipeline::stage2_path(cfg), "stage-2 checkpoint (run train-stage2)"));
}

pipeline::Stage1Checkpoint load_merged_stage1(RunContext& ctx, const config::RunConfig& cfg) {
  auto ckpt = pipeline::load_stage1(load(ctx, pipeline::stage1_path(cfg), "stage-1 checkpoint (run train-stage1)"));
  ckpt.model->merge_space_experts();
  return ckpt;
}

}  // namespace

int cmd_gen_data(const config::RunConfig& cfg) {
  RunContext ctx("gen-data", cfg);
  auto train = pipeline::make_split(cfg, cfg.train_size, kTrainData);
  auto held = pipeline::make_split(cfg, cfg.heldout_size, kHeldoutData);
  save(ctx, pipeline::to_archive(train), pipeline::train_data_path(cfg));
  if (held.size() > 0) {
    save(ctx, pipeline::to_archive(held), pipeline::heldout_data_path(cfg));
    const fs::path lr_dir = fs::path(cfg.data_dir) / "heldout" / "lr", hr_dir = fs::path(cfg.data_dir) / "heldout" / "hr";
    fs::create_directories(lr_dir);
    fs::create_directories(hr_dir);
    for (std::int64_t i = 0; i < held.size(); ++i) {
      data::save_ppm((lr_dir / numbered(static_cast<int>(i))).string(), data::unstack_at(held.lr, i));
      data::save_ppm((hr_dir / numbered(static_cast<int>(i))).string(), data::unstack_at(held.hr, i));
    }
  }
  std::vector<Tensor> sample;
  for (std::int64_t i = 0; i < std::min<std::int64_t>(100, train.size()); ++i) sample.push_back(data::unstack_at(train.hr, i));
  std::cout << "gen-data: " << train.size() << " train and " << held.size() << " held-out pairs, HR " << cfg.hr_size
            << " LR " << cfg.lr_size() << "; high-frequency energy fraction "
            << data::high_frequency_energy_fraction(sample) << "\n";
  ctx.write_manifest();
  return 0;
}

int cmd_train_ae(const config::RunConfig& cfg) {
  RunContext ctx("train-ae", cfg);
  auto train = pipeline::split_from_archive(load(ctx, pipeline::train_data_path(cfg), "training dataset (run gen-data)"));
  auto ae = pipeline::build_autoencoder(pipeline::pretrain_ae_config(cfg), mix_seed(cfg.seed, kAeInit));
  autoencoder::AeTrainConfig tc = cfg.ae_train;
  tc.seed = mix_seed(cfg.seed, kAeTrain);
  std::vector<std::string> lines;
  auto log = autoencoder::train_ae(*ae, train.hr, cfg.scale, tc, [&](int step, const autoencoder::LossParts& p) {
    if (tc.log_interval > 0 && step % tc.log_interval == 0)
      std::cerr << "train-ae step " << step << "/" << tc.steps << " loss " << p.total.item() << " l1 " << p.l1 << "\n";
  });
  for (const auto& r : log) lines.push_back(tsv({r.total, r.l1, r.vq, r.freq}, r.step));
  write_lines(ctx, (fs::path(cfg.work_dir) / "ae_loss.tsv").string(), lines);
  data::TensorArchive a;
  autoencoder::save_autoencoder(*ae, a);
  save(ctx, a, pipeline::ae_path(cfg));
  std::cout << "train-ae: wrote " << pipeline::ae_path(cfg) << "\n";
  ctx.write_manifest();
  return 0;
}

int cmd_train_stage1(const config::RunConfig& cfg) {
  RunContext ctx("train-stage1", cfg);
  auto train = pipeline::split_from_archive(load(ctx, pipeline::train_data_path(cfg), "training dataset (run gen-data)"));
  auto ae = autoencoder::load_autoencoder(load(ctx, pipeline::ae_path(cfg), "autoencoder checkpoint (run train-ae)"));

  Tensor z = pipeline::encode_all(*ae, train.hr);
  const double scale = pipeline::latent_scale_of(z);
  denoiser::LatentDataset ds{train.lr, mul_scalar(z, scale)};

  Rng init(mix_seed(cfg.seed, kStage1Init));
  denoiser::DenoiserModel model(cfg.effective_denoiser(), init);
  denoiser::Stage1Config sc = cfg.stage1;
  sc.seed = mix_seed(cfg.seed, kStage1Train);
  nn::Adam opt(model.named_parameters(), nn::AdamConfig{.lr = sc.lr, .clip_norm = sc.clip_norm});

  double window = 0.0;
  auto log = denoiser::train_stage1(model, ds, sc, &opt, [&](int step, double loss) {
    window += loss;
    if (sc.log_interval > 0 && step % sc.log_interval == 0) {
      std::cerr << "train-stage1 step " << step << "/" << sc.steps << " loss " << window / sc.log_interval << "\n";
      window = 0.0;
    }
    if (sc.checkpoint_interval > 0 && step % sc.checkpoint_interval == 0 && step < sc.steps) {
      data::TensorArchive a;
      pipeline::save_stage1(model, &opt, cfg, scale, a);
      save(ctx, a, (fs::path(cfg.work_dir) / ("stage1_step" + std::to_string(step) + ".ssa")).string());
    }
  });
  std::vector<std::string> lines;
  for (const auto& r : log) lines.push_back(tsv({r.loss}, r.step));
  write_lines(ctx, (fs::path(cfg.work_dir) / "stage1_loss.tsv").string(), lines);
  data::TensorArchive a;
  pipeline::save_stage1(model, &opt, cfg, scale, a);
  save(ctx, a, pipeline::stage1_path(cfg));
  if (log.size() >= 2) {
    std::cout << "train-stage1: loss " << log.front().loss << " -> " << log.back().loss << "\n";
  }
  std::cout << "train-stage1: wrote " << pipeline::stage1_path(cfg) << "\n";
  ctx.write_manifest();
  return 0;
}

int cmd_gen_pairs(const config::RunConfig& cfg) {
  RunContext ctx("gen-pairs", cfg);
  auto train = pipeline::split_from_archive(load(ctx, pipeline::train_data_path(cfg), "training dataset (run gen-data)"));
  auto ckpt = load_merged_stage1(ctx, cfg);
  const auto& u = ckpt.model->config().unet;
  if (u.image_size != cfg.latent_size() || train.lr.dim(2) * cfg.scale != cfg.hr_size) {
    throw std::runtime_error("gen-pairs: stage-1 checkpoint does not match the configured data sizes");
  }
  const std::int64_t n = cfg.pair_count > 0 ? std::min<std::int64_t>(cfg.pair_count, train.size()) : train.size();
  auto subset = train.slice(0, n);
  Tensor latents = pipeline::sample_latents_batched(ckpt, subset.lr, {u.out_channels, u.image_size, u.image_size},
                                                    cfg.pair_steps, cfg.pair_batch, mix_seed(cfg.seed, kPairs),
                                                    cfg.threads);
  data::TensorArchive a;
  a.metadata["kind"] = "lr-latent-pairs";
  a.metadata["pair_steps"] = std::to_string(cfg.pair_steps);
  a.add("lr", subset.lr);
  a.add("latent", latents);
  a.add("hr", subset.hr);
  save(ctx, a, pipeline::pairs_path(cfg));

  // Per-channel spread of the generated latents, a sanity band for the sampler.
  const auto v = latents.to_vector();
  const std::int64_t c = latents.dim(1), plane = latents.dim(2) * latents.dim(3);
  std::cout << "gen-pairs: " << n << " pairs; latent std per channel:";
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0, s2 = 0;
    std::int64_t cnt = 0;
    for (std::int64_t b = 0; b < latents.dim(0); ++b)
      for (std::int64_t k = 0; k < plane; ++k) {
        const double x = v[static_cast<std::size_t>((b * c + ch) * plane + k)];
        s += x;
        s2 += x * x;
        ++cnt;
      }
    const double mean = s / static_cast<double>(cnt);
    std::cout << " " << std::sqrt(std::max(0.0, s2 / static_cast<double>(cnt) - mean * mean));
  }
  std::cout << "\n";
  ctx.write_manifest();
  return 0;
}

int cmd_train_stage2(const config::RunConfig& cfg) {
  if (!fs::exists(pipeline::pairs_path(cfg))) {
    std::cerr << "train-stage2: no pairs at " << pipeline::pairs_path(cfg) << ", running gen-pairs first\n";
    if (int rc = cmd_gen_pairs(cfg); rc != 0) return rc;
  }
  RunContext ctx("train-stage2", cfg);
  auto pairs_archive = load(ctx, pipeline::pairs_path(cfg), "LR-latent pairs (run gen-pairs)");
  autoencoder::PairDataset pairs{pairs_archive.get("lr"), pairs_archive.get("latent"), pairs_archive.get("hr")};
  auto pretrained = load(ctx, pipeline::ae_path(cfg), "autoencoder checkpoint (run train-ae)");

  // Decoder of the configured mode; fusion and AFF start at their identity initialization.
  auto ae = pipeline::build_autoencoder(cfg.ae, mix_seed(cfg.seed, kStage2Init));
  if (autoencoder::read_ae_config(pretrained.metadata).channel_mult != cfg.ae.channel_mult) {
    throw std::runtime_error("train-stage2: autoencoder checkpoint does not match the configured architecture");
  }
  autoencoder::load_autoencoder_weights(*ae, pretrained, false);

  autoencoder::Stage2Config sc = cfg.stage2;
  sc.seed = mix_seed(cfg.seed, kStage2Train);
  auto log = autoencoder::train_stage2(*ae, pairs, sc, [&](int step, const autoencoder::LossParts& p) {
    if (sc.log_interval > 0 && step % sc.log_interval == 0)
      std::cerr << "train-stage2 step " << step << "/" << sc.steps << " loss " << p.total.item() << " l1 " << p.l1
                << " freq " << p.freq << "\n";
  });
  std::vector<std::string> lines;
  for (const auto& r : log) lines.push_back(tsv({r.total, r.l1, r.vq, r.freq}, r.step));
  write_lines(ctx, (fs::path(cfg.work_dir) / "stage2_loss.tsv").string(), lines);
  data::TensorArchive a;
  autoencoder::save_autoencoder(*ae, a);
  save(ctx, a, pipeline::stage2_path(cfg));
  std::cout << "train-stage2: decoder " << autoencoder::to_string(cfg.ae.decoder) << ", wrote "
            << pipeline::stage2_path(cfg) << "\n";
  ctx.write_manifest();
  return 0;
}

int cmd_infer(const config::RunConfig& cfg, const InferOptions& opt) {
  RunContext ctx("infer", cfg);
  const int steps = opt.steps > 0 ? opt.steps : cfg.sample_steps;
  const bool dir_mode = fs::is_directory(opt.input);
  std::vector<fs::path> inputs;
  if (dir_mode) {
    inputs = ppm_files(opt.input);
  } else {
    if (!fs::exists(opt.input)) throw MissingInput("input image '" + opt.input + "' not found");
    inputs.push_back(opt.input);
  }
  if (inputs.empty()) throw MissingInput("no .ppm images in '" + opt.input + "'");
  std::vector<Tensor> lrs;
  for (const auto& p : inputs) {
    lrs.push_back(data::load_ppm(p.string()));
    ctx.add_input(p.string());
  }
  for (const auto& t : lrs) {
    if (t.shape() != lrs.front().shape()) throw std::runtime_error("infer: input images differ in size");
  }
  if (lrs.front().dim(1) != cfg.lr_size() || lrs.front().dim(2) != cfg.lr_size()) {
    throw std::runtime_error("infer: model expects " + std::to_string(cfg.lr_size()) + "x" +
                             std::to_string(cfg.lr_size()) + " inputs, got " + shape_str(lrs.front().shape()));
  }
  auto ckpt = load_merged_stage1(ctx, cfg);
  auto ae = load_stage2_decoder(ctx, cfg);
  Tensor sr = pipeline::super_resolve(ckpt, *ae, data::stack(lrs), steps, cfg.pair_batch, mix_seed(cfg.seed, kInfer),
                                      cfg.threads);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::string out =
        dir_mode ? (fs::path(opt.output) / inputs[i].filename()).string() : opt.output;
    ensure_parent(out);
    data::save_ppm(out, data::unstack_at(sr, static_cast<std::int64_t>(i)));
    ctx.add_output(out);
  }
  std::cout << "infer: " << inputs.size() << " image(s), " << steps << " sampling steps\n";
  ctx.write_manifest();
  return 0;
}

int cmd_eval(const config::RunConfig& cfg, const EvalOptions& opt) {
  auto pred = ppm_files(opt.pred_dir), ref = ppm_files(opt.ref_dir);
  if (pred.size() != ref.size()) {
    throw std::runtime_error("eval: " + std::to_string(pred.size()) + " predictions but " + std::to_string(ref.size()) +
                             " references");
  }
  std::vector<metrics::MetricRow> rows(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].filename() != ref[i].filename()) {
      throw std::runtime_error("eval: file names differ: " + pred[i].filename().string() + " vs " +
                               ref[i].filename().string());
    }
  }
  pipeline::parallel_for(static_cast<std::int64_t>(pred.size()), cfg.threads, [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    rows[k] = metrics::evaluate_pair(pred[k].filename().string(), data::load_ppm(pred[k].string()),
                                     data::load_ppm(ref[k].string()));
  });
  const auto report = metrics::summarize(std::move(rows));
  if (opt.format == "jsonl") print_metric_records(std::cout, report);
  else print_metric_table(std::cout, report);
  if (!opt.records.empty()) {
    ensure_parent(opt.records);
    std::ofstream f(opt.records, std::ios::trunc);
    print_metric_records(f, report);
  }
  return 0;
}

int cmd_flops(const config::RunConfig& cfg, const FlopsOptions& opt) {
  const int steps = opt.steps > 0 ? opt.steps : cfg.sample_steps;
  const auto d = cfg.effective_denoiser();
  const std::vector<std::int64_t> shape{1, d.unet.out_channels, d.unet.image_size, d.unet.image_size};
  const auto train = metrics::count_cost(d, shape, metrics::MoeMode::routed, steps);
  const auto infer = metrics::count_cost(d, shape, metrics::MoeMode::merged, steps);
  const auto single = metrics::count_cost(metrics::single_ffn_baseline(d), shape, metrics::MoeMode::merged, steps);
  if (opt.format == "jsonl") {
    print_cost_record(std::cout, "ss-moe-train", train);
    print_cost_record(std::cout, "ss-moe-merged", infer);
    print_cost_record(std::cout, "single-ffn", single);
    return 0;
  }
  std::cout << "latent " << d.unet.out_channels << "x" << d.unet.image_size << "x" << d.unet.image_size
            << ", batch 1; FLOPs are multiply-accumulates\n\n";
  print_cost_table(std::cout, "SS-MoE, training form", train, false);
  std::cout << "\n";
  print_cost_table(std::cout, "SS-MoE, merged for inference", infer, opt.per_layer);
  std::cout << "\n";
  print_cost_table(std::cout, "single-FFN baseline", single, false);
  std::cout << "\nmerged MACs/step == single-FFN MACs/step: " << (infer.flops_per_step == single.flops_per_step ? "yes" : "no")
            << "; parameter ratio " << static_cast<double>(infer.param_count) / static_cast<double>(single.param_count)
            << "\n";
  std::cout << "reference figures for the full-size models (4x SR, 200 steps): LDM 168.95 M params, 0.1608 T per step;"
               " SS-MoE 605.30 M params, 0.1658 T per step\n";
  return 0;
}

}  // namespace ssmoe::cli
