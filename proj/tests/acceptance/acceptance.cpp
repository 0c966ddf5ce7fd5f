// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.
//
//   ssmoe_acceptance --work DIR [--config FILE] [--set k=v ...] [--only NAME] [--reuse]
//
// The desk criteria train the full pipeline through the CLI commands under
// DIR (about half an hour on one core); --reuse keeps existing checkpoints.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "commands.hpp"
#include "ssmoe/data/archive.hpp"
#include "ssmoe/data/dataset.hpp"
#include "ssmoe/data/image.hpp"
#include "ssmoe/metrics/cost.hpp"
#include "ssmoe/metrics/metrics.hpp"
#include "ssmoe/pipeline/pipeline.hpp"
#include "support/dft_oracle.hpp"
#include "support/diffusion_checks.hpp"
#include "support/grad_cases.hpp"
#include "support/model_checks.hpp"

using namespace ssmoe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- diffusion ----

Outcome forward_marginals() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = diffusion::make_schedule(1000, 1.5e-4, 1.95e-2);
  bool ok = true;
  std::ostringstream d;
  for (int t : {10, 100, 500}) {
    // Closed form against the ground truth: the step-by-step Markov chain.
    for (auto c : {testing::one_shot_marginal(s, t, 0.7, 10000, 100 + t),
                   testing::markov_marginal(s, t, 0.7, 10000, 200 + t)}) {
      ok = ok && c.ok();
      d << "t=" << t << " mean " << fmt(c.mean) << "/" << fmt(c.expect_mean) << " std " << fmt(c.std) << "/"
        << fmt(c.expect_std) << "; ";
    }
  }
  const double secs = seconds_since(t0);
  d << "runtime " << fmt(secs, 3) << " s";
  return {ok && secs < 10.0, d.str()};
}

Outcome reverse_chain_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) worst = std::max(worst, testing::oracle_chain_error(20, seed));
  return {worst < 1e-3, "max |y0 - y| over 5 chains, T=20: " + fmt(worst)};
}

// ---- Space MoE ----

Outcome momentum_conservation() {
  Rng rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.randint(0, 7));
    denoiser::SpaceMoeLayer layer(4, 6, n, rng.uniform(0.0, 1.0), rng);
    testing::randomize_experts(layer, rng);
    const auto before = testing::expert_sum(layer);
    layer.momentum_share();
    const auto after = testing::expert_sum(layer);
    double scale = 0.0, err = 0.0;
    for (std::size_t k = 0; k < before.size(); ++k) {
      scale = std::max(scale, std::abs(before[k]));
      err = std::max(err, std::abs(after[k] - before[k]));
    }
    worst = std::max(worst, err / scale);
  }
  Rng rng2(13);
  denoiser::SpaceMoeLayer layer(4, 8, 4, 0.999, rng2);
  testing::randomize_experts(layer, rng2);
  double prev = testing::expert_spread(layer);
  const double first = prev;
  bool decreasing = true;
  for (int it = 0; it < 1000 && decreasing; ++it) {
    layer.momentum_share();
    const double sp = testing::expert_spread(layer);
    decreasing = sp < prev;
    prev = sp;
  }
  return {worst < 1e-6 && decreasing, "sum drift " + fmt(worst) + " (f32, 1000 trials); spread " + fmt(first) +
                                          " -> " + fmt(prev) + " over 1000 steps at gamma 0.999, " +
                                          (decreasing ? "strictly decreasing" : "NOT strictly decreasing")};
}

std::vector<double> flat_params(const nn::Module& m) {
  std::vector<double> out;
  for (auto& [n, p] : m.named_parameters()) {
    auto v = p->to_vector();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

Outcome merge_soundness() {
  bool identity = true;
  double commute = 0.0;
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 7;
    denoiser::SpaceMoeLayer same(6, 12, n, 0.999, rng);
    for (int i = 1; i < n; ++i) same.expert(i).copy_parameters_from(same.expert(0));
    const auto w = flat_params(same.expert(0));
    same.merge();
    identity = identity && flat_params(same.expert(0)) == w;

    denoiser::SpaceMoeLayer a(6, 12, n, rng.uniform(0.5, 1.0), rng);
    testing::randomize_experts(a, rng);
    Rng unused(0);
    denoiser::SpaceMoeLayer b(6, 12, n, a.gamma(), unused);
    b.copy_parameters_from(a);
    a.momentum_share();
    a.merge();
    b.merge();
    const auto fa = flat_params(a), fb = flat_params(b);
    for (std::size_t k = 0; k < fa.size(); ++k) commute = std::max(commute, std::abs(fa[k] - fb[k]));
  }
  return {identity && commute <= 1e-6, std::string("identical experts merge ") + (identity ? "exactly" : "INEXACTLY") +
                                           "; |merge(share(W)) - merge(W)| max " + fmt(commute) + " over 50 layers"};
}

Outcome single_ffn_cost() {
  const config::RunConfig desk;
  bool ok = true;
  std::ostringstream d;
  for (int n : {2, 4, 8}) {
    auto cfg = desk.effective_denoiser();
    cfg.unet.num_space_experts = n;
    cfg.num_sampling_experts = 4;
    const std::vector<std::int64_t> shape{1, cfg.unet.out_channels, cfg.unet.image_size, cfg.unet.image_size};
    const auto merged = metrics::count_cost(cfg, shape, metrics::MoeMode::merged, 200);
    const auto routed = metrics::count_cost(cfg, shape, metrics::MoeMode::routed, 200);
    const auto single = metrics::count_cost(metrics::single_ffn_baseline(cfg), shape, metrics::MoeMode::merged, 200);
    auto ffn_params = [](const metrics::CostReport& r) {
      std::uint64_t s = 0;
      for (const auto& e : r.layers) s += e.kind == "ffn" ? e.params : 0;
      return s;
    };
    const bool flops_equal = merged.flops_per_step == single.flops_per_step;
    const bool expert_params = ffn_params(routed) == static_cast<std::uint64_t>(n) * ffn_params(single);
    ok = ok && flops_equal && expert_params;
    d << "N=" << n << ": merged " << merged.flops_per_step << " vs single " << single.flops_per_step << " MACs"
      << (flops_equal ? " (equal)" : " (DIFFER)") << ", expert params x"
      << fmt(static_cast<double>(ffn_params(routed)) / static_cast<double>(ffn_params(single))) << "; ";
  }
  return {ok, d.str()};
}

// ---- autoencoder ----

Outcome ffl_oracle() {
  Rng rng(22);
  double worst = 0.0;
  bool zero_iff_equal = true;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor a = randn({1, 3, 8, 8}, rng), b = randn({1, 3, 8, 8}, rng);
    const double got = autoencoder::focal_frequency_loss(a, b, {.alpha = 0.0}).item();
    const double want = testing::brute_force_ffl_alpha0(a.to_vector(), b.to_vector(), 8, 8);
    worst = std::max(worst, std::abs(got - want) / want);
    zero_iff_equal = zero_iff_equal && got > 0.0 && autoencoder::focal_frequency_loss(a, a.clone()).item() == 0.0;
  }
  return {worst < 1e-5 && zero_iff_equal, "max relative error vs O(N^4) DFT " + fmt(worst) + " over 100 8x8 trials; " +
                                              (zero_iff_equal ? "zero iff equal" : "zero-iff-equal VIOLATED")};
}

// ---- gradients ----

Outcome gradient_suite() {
  double worst = 0.0;
  std::string worst_name;
  int checked = 0;
  const auto ops = testing::op_cases();
  for (std::size_t i = 0; i < ops.size(); ++i) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(mix_seed(seed, i));
      const auto r = testing::gradcheck(ops[i].fn, ops[i].make_inputs(rng), seed);
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_name = ops[i].name;
      }
      ++checked;
    }
  }
  for (const auto& m : testing::module_cases()) {
    const auto r = m.run();
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = m.name;
    }
    ++checked;
  }
  double unet_worst = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) unet_worst = std::max(unet_worst, testing::unet_param_gradcheck(seed, 32).rel_error);
  return {worst < 1e-3 && unet_worst < 1e-3, std::to_string(checked) + " op/block checks, worst " + fmt(worst) + " (" +
                                                 worst_name + "); tiny UNet 32-parameter subsets " + fmt(unet_worst)};
}

// ---- desk pipeline ----

struct Desk {
  config::RunConfig cfg;
  bool reuse = false;
};

int quietly(const std::function<int()>& fn) {
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  try {
    const int rc = fn();
    std::cout.rdbuf(old);
    return rc;
  } catch (...) {
    std::cout.rdbuf(old);
    throw;
  }
}

void step(const std::string& what, const std::string& artifact, bool reuse, const std::function<int()>& fn) {
  if (reuse && fs::exists(artifact)) {
    std::cerr << "[acceptance] reusing " << artifact << "\n";
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::cerr << "[acceptance] " << what << " ...\n";
  if (quietly(fn) != 0) throw std::runtime_error(what + " failed");
  std::cerr << "[acceptance] " << what << " done in " << fmt(seconds_since(t0), 4) << " s\n";
}

void prepare_desk(const Desk& d) {
  const auto& c = d.cfg;
  step("gen-data", pipeline::heldout_data_path(c), d.reuse, [&] { return cli::cmd_gen_data(c); });
  step("train-ae", pipeline::ae_path(c), d.reuse, [&] { return cli::cmd_train_ae(c); });
  step("train-stage1", pipeline::stage1_path(c), d.reuse, [&] { return cli::cmd_train_stage1(c); });
}

std::vector<std::pair<int, double>> read_loss_log(const fs::path& p) {
  std::vector<std::pair<int, double>> out;
  std::ifstream f(p);
  int s;
  double l;
  while (f >> s >> l) {
    out.emplace_back(s, l);
    f.ignore(1 << 20, '\n');
  }
  return out;
}

Outcome desk_end_to_end(const Desk& d) {
  prepare_desk(d);
  const auto& c = d.cfg;
  const auto log = read_loss_log(fs::path(c.work_dir) / "stage1_loss.tsv");
  if (log.size() < 2) return {false, "stage-1 loss log has fewer than two records"};
  const double first = log.front().second, last = log.back().second;
  const bool loss_ok = last <= 0.5 * first && log.back().first >= 2000;

  const auto held = pipeline::split_from_archive(data::TensorArchive::load(pipeline::heldout_data_path(c)));
  const auto eval = held.slice(0, std::min<std::int64_t>(20, held.size()));
  auto ckpt = pipeline::load_stage1(data::TensorArchive::load(pipeline::stage1_path(c)));
  ckpt.model->merge_space_experts();
  // The plain pretrained decoder, so this criterion does not depend on stage 2.
  auto ae = autoencoder::load_autoencoder(data::TensorArchive::load(pipeline::ae_path(c)));

  std::map<int, double> psnr;
  std::map<int, std::vector<double>> per_image;
  bool finite = true;
  for (int steps : {50, 200}) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor sr = pipeline::super_resolve(ckpt, *ae, eval.lr, steps, c.pair_batch, mix_seed(c.seed, 0xacc), c.threads);
    for (double v : sr.to_vector()) finite = finite && std::isfinite(v);
    double total = 0.0;
    for (std::int64_t i = 0; i < eval.size(); ++i) {
      per_image[steps].push_back(metrics::psnr_y(data::unstack_at(sr, i), data::unstack_at(eval.hr, i)));
      total += per_image[steps].back();
    }
    psnr[steps] = total / static_cast<double>(eval.size());
    std::cerr << "[acceptance] T=" << steps << " sampling of " << eval.size() << " images took "
              << fmt(seconds_since(t0), 3) << " s\n";
  }
  const double gap = std::abs(psnr[50] - psnr[200]);
  // Single ancestral draws are noisy; name the image that moves the mean most.
  std::size_t worst = 0;
  for (std::size_t i = 1; i < per_image[50].size(); ++i) {
    if (std::abs(per_image[50][i] - per_image[200][i]) > std::abs(per_image[50][worst] - per_image[200][worst])) worst = i;
  }
  const bool ok = loss_ok && finite && gap <= 1.0;
  return {ok, "stage-1 loss " + fmt(first) + " -> " + fmt(last) + " over " + std::to_string(log.back().first) +
                  " steps (ratio " + fmt(last / first, 3) + ", need <= 0.5); PSNR-Y on " +
                  std::to_string(eval.size()) + " held-out: T=50 " + fmt(psnr[50]) + " dB, T=200 " +
                  fmt(psnr[200]) + " dB, gap " + fmt(gap, 3) + " dB (need <= 1; largest single-image difference #" +
                  std::to_string(worst) + " " + fmt(per_image[50][worst]) + " vs " + fmt(per_image[200][worst]) +
                  " dB); images " +
                  (finite ? "finite" : "NOT finite")};
}

Outcome fcd_ablation(const Desk& d) {
  prepare_desk(d);
  const auto& base_cfg = d.cfg;
  step("gen-pairs", pipeline::pairs_path(base_cfg), d.reuse, [&] { return cli::cmd_gen_pairs(base_cfg); });

  const auto held = pipeline::split_from_archive(data::TensorArchive::load(pipeline::heldout_data_path(base_cfg)));
  std::map<std::string, double> lsd, psnr;
  for (const char* mode : {"baseline", "aff+ffl"}) {
    config::RunConfig c = base_cfg;
    c.set("autoencoder.decoder", mode);
    c.work_dir = (fs::path(base_cfg.work_dir) / (std::string("stage2-") + (mode[0] == 'b' ? "baseline" : "aff_ffl")))
                     .string();
    fs::create_directories(c.work_dir);
    for (auto path_of : {pipeline::ae_path, pipeline::pairs_path}) {
      if (!fs::exists(path_of(c))) fs::copy_file(path_of(base_cfg), path_of(c));
    }
    step(std::string("train-stage2 (") + mode + ")", pipeline::stage2_path(c), d.reuse,
         [&] { return cli::cmd_train_stage2(c); });
    auto ae = autoencoder::load_autoencoder(data::TensorArchive::load(pipeline::stage2_path(c)));
    Tensor rec = pipeline::reconstruct(*ae, held.hr, held.lr);
    double l = 0.0, p = 0.0;
    for (std::int64_t i = 0; i < held.size(); ++i) {
      const Tensor a = data::unstack_at(rec, i), b = data::unstack_at(held.hr, i);
      l += metrics::log_spectral_distance(a, b);
      p += metrics::psnr_y(a, b);
    }
    lsd[mode] = l / static_cast<double>(held.size());
    psnr[mode] = p / static_cast<double>(held.size());
  }
  const bool enough = held.size() >= 100;
  const bool ok = enough && lsd["aff+ffl"] < lsd["baseline"];
  return {ok, "mean LSD on " + std::to_string(held.size()) + " held-out reconstructions: baseline " +
                  fmt(lsd["baseline"]) + " dB, aff+ffl " + fmt(lsd["aff+ffl"]) + " dB (PSNR-Y " +
                  fmt(psnr["baseline"]) + " vs " + fmt(psnr["aff+ffl"]) + " dB)"};
}

// Full pipeline twice on a reduced run with the desk architecture.
Outcome determinism(const Desk& d) {
  std::vector<std::string> digests[2];
  for (int run = 0; run < 2; ++run) {
    config::RunConfig c = d.cfg;
    for (const char* kv : {"data.train_size=24", "data.heldout_size=4", "ae_train.steps=30", "stage1.steps=30",
                           "stage2.steps=10", "sampling.pair_steps=5", "run.threads=1"}) {
      config::apply_override(c, kv);
    }
    const fs::path root = fs::path(d.cfg.work_dir) / ("determinism-" + std::to_string(run));
    fs::remove_all(root);
    c.data_dir = (root / "data").string();
    c.work_dir = (root / "work").string();
    quietly([&] {
      cli::cmd_gen_data(c);
      cli::cmd_train_ae(c);
      cli::cmd_train_stage1(c);
      cli::cmd_train_stage2(c);
      return cli::cmd_infer(c, {(root / "data" / "heldout" / "lr").string(), (root / "sr").string(), 20});
    });
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".ssa" || (ext == ".ppm" && e.path().parent_path().filename() == "sr"))) {
        files.push_back(fs::relative(e.path(), root));
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      digests[run].push_back(f.string() + " " + data::hex64(data::fnv1a64(data::read_file((root / f).string()))));
    }
  }
  const bool ok = !digests[0].empty() && digests[0] == digests[1];
  return {ok, std::to_string(digests[0].size()) + " checkpoints and SR images compared byte-for-byte across two runs: " +
                  (ok ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance-run", config_path, only;
  std::vector<std::string> overrides;
  bool reuse = false;
  app.add_option("--work", work, "directory for the desk-scale runs");
  app.add_option("-c,--config", config_path, "base config (default: built-in desk defaults)");
  app.add_option("--set", overrides, "override a config key");
  app.add_option("--only", only, "run a single criterion");
  app.add_flag("--reuse", reuse, "keep checkpoints from an earlier run");
  CLI11_PARSE(app, argc, argv);

  Desk desk;
  desk.cfg = config_path.empty() ? config::RunConfig{} : config::load_config(config_path);
  for (const auto& o : overrides) config::apply_override(desk.cfg, o);
  desk.cfg.data_dir = (fs::path(work) / "data").string();
  desk.cfg.work_dir = (fs::path(work) / "work").string();
  desk.cfg.validate();
  desk.reuse = reuse;
  if (!reuse) fs::remove_all(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"forward-marginals", forward_marginals},
      {"reverse-chain-oracle", reverse_chain_oracle},
      {"momentum-conservation", momentum_conservation},
      {"merge-soundness", merge_soundness},
      {"single-ffn-cost", single_ffn_cost},
      {"ffl-oracle", ffl_oracle},
      {"gradient-suite", gradient_suite},
      {"desk-end-to-end", [&] { return desk_end_to_end(desk); }},
      {"fcd-ablation-lsd", [&] { return fcd_ablation(desk); }},
      {"determinism", [&] { return determinism(desk); }},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name != only) continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  }
  if (ran == 0) {
    std::cerr << "no criterion named '" << only << "'\n";
    return 2;
  }
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << " (" << ran << " criteria)\n";
  return failed == 0 ? 0 : 1;
}
