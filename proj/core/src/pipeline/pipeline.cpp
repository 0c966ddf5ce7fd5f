#include "ssmoe/pipeline/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include "ssmoe/data/dataset.hpp"
#include "ssmoe/data/image.hpp"

namespace ssmoe::pipeline {

namespace fs = std::filesystem;

namespace {

std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const std::string& meta(const data::TensorArchive& a, const std::string& key) {
  auto it = a.metadata.find(key);
  if (it == a.metadata.end()) throw data::ArchiveError("checkpoint is missing metadata '" + key + "'");
  return it->second;
}

}  // namespace

SrData SrData::slice(std::int64_t start, std::int64_t count) const {
  return {narrow(lr, 0, start, count), narrow(hr, 0, start, count)};
}

std::string train_data_path(const config::RunConfig& cfg) { return join(cfg.data_dir, "train.ssa"); }
std::string heldout_data_path(const config::RunConfig& cfg) { return join(cfg.data_dir, "heldout.ssa"); }
std::string ae_path(const config::RunConfig& cfg) { return join(cfg.work_dir, "ae.ssa"); }
std::string stage1_path(const config::RunConfig& cfg) { return join(cfg.work_dir, "stage1.ssa"); }
std::string pairs_path(const config::RunConfig& cfg) { return join(cfg.work_dir, "pairs.ssa"); }
std::string stage2_path(const config::RunConfig& cfg) { return join(cfg.work_dir, "stage2.ssa"); }

SrData make_split(const config::RunConfig& cfg, int count, std::uint64_t stream) {
  auto pairs = data::make_synthetic_dataset(count, cfg.hr_size, cfg.scale, mix_seed(cfg.seed, stream));
  if (pairs.empty()) return {};
  std::vector<Tensor> lr, hr;
  for (auto& p : pairs) {
    lr.push_back(p.lr);
    hr.push_back(p.hr);
  }
  return {data::stack(lr), data::stack(hr)};
}

data::TensorArchive to_archive(const SrData& d) {
  data::TensorArchive a;
  a.metadata["kind"] = "sr-dataset";
  a.add("lr", d.lr);
  a.add("hr", d.hr);
  return a;
}

SrData split_from_archive(const data::TensorArchive& a) { return {a.get("lr"), a.get("hr")}; }

data::TensorArchive load_archive(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw MissingInput(what + " not found at '" + path + "'");
  return data::TensorArchive::load(path);
}

void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn) {
  const auto workers = static_cast<std::int64_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::int64_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

autoencoder::AeConfig pretrain_ae_config(const config::RunConfig& cfg) {
  autoencoder::AeConfig c = cfg.ae;
  c.decoder = autoencoder::DecoderMode::baseline;
  return c;
}

std::unique_ptr<autoencoder::Autoencoder> build_autoencoder(const autoencoder::AeConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return std::make_unique<autoencoder::Autoencoder>(cfg, rng);
}

Tensor encode_all(const autoencoder::Autoencoder& ae, const Tensor& hr, std::int64_t batch) {
  NoGradGuard ng;
  std::vector<Tensor> parts;
  for (std::int64_t s = 0; s < hr.dim(0); s += batch) {
    parts.push_back(ae.encode(narrow(hr, 0, s, std::min(batch, hr.dim(0) - s))));
  }
  return concat(parts, 0);
}

double latent_scale_of(const Tensor& latents) {
  const auto v = latents.to_vector();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  if (!(var > 0.0)) throw std::runtime_error("latent scale: latents have zero variance");
  return 1.0 / std::sqrt(var);
}

void save_stage1(const denoiser::DenoiserModel& model, const nn::Adam* opt, const config::RunConfig& cfg,
                 double latent_scale, data::TensorArchive& archive) {
  denoiser::save_denoiser(model, archive);
  archive.metadata["schedule.beta_start"] = fmt_double(cfg.stage1.beta_start);
  archive.metadata["schedule.beta_end"] = fmt_double(cfg.stage1.beta_end);
  archive.metadata["latent_scale"] = fmt_double(latent_scale);
  if (opt != nullptr)
    for (const auto& [name, t] : opt->state_dict()) archive.add("optim." + name, t);
}

Stage1Checkpoint load_stage1(const data::TensorArchive& archive) {
  Stage1Checkpoint c;
  c.model = denoiser::load_denoiser(archive);
  c.schedule = diffusion::make_schedule(c.model->config().T, std::stod(meta(archive, "schedule.beta_start")),
                                        std::stod(meta(archive, "schedule.beta_end")));
  c.latent_scale = std::stod(meta(archive, "latent_scale"));
  return c;
}

Tensor sample_latents_batched(const Stage1Checkpoint& ckpt, const Tensor& lr, const Shape& latent_chw, int steps,
                              std::int64_t batch, std::uint64_t seed, int threads) {
  if (!ckpt.model->merged()) throw std::invalid_argument("sampling needs a merged stage-1 model");
  if (latent_chw.size() != 3) throw std::invalid_argument("sampling: latent shape must be [C, h, w]");
  const std::int64_t n = lr.dim(0), chunks = (n + batch - 1) / batch;
  std::vector<Tensor> out(static_cast<std::size_t>(chunks));
  parallel_for(chunks, threads, [&](std::int64_t k) {
    NoGradGuard ng;
    const std::int64_t start = k * batch, count = std::min(batch, n - start);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
    Tensor z = denoiser::sample_latents(*ckpt.model, ckpt.schedule, narrow(lr, 0, start, count),
                                        {count, latent_chw[0], latent_chw[1], latent_chw[2]}, steps, rng);
    out[static_cast<std::size_t>(k)] = mul_scalar(z, 1.0 / ckpt.latent_scale);
  });
  return concat(out, 0);
}

Tensor super_resolve(const Stage1Checkpoint& ckpt, const autoencoder::Autoencoder& ae, const Tensor& lr, int steps,
                     std::int64_t batch, std::uint64_t seed, int threads) {
  const auto& u = ckpt.model->config().unet;
  Tensor z = sample_latents_batched(ckpt, lr, {u.out_channels, u.image_size, u.image_size}, steps, batch, seed, threads);
  NoGradGuard ng;
  std::vector<Tensor> parts;
  for (std::int64_t s = 0; s < lr.dim(0); s += batch) {
    const std::int64_t count = std::min(batch, lr.dim(0) - s);
    parts.push_back(ae.decode_latent(narrow(z, 0, s, count), narrow(lr, 0, s, count)));
  }
  return concat(parts, 0);
}

Tensor reconstruct(const autoencoder::Autoencoder& ae, const Tensor& hr, const Tensor& lr, std::int64_t batch) {
  NoGradGuard ng;
  std::vector<Tensor> parts;
  for (std::int64_t s = 0; s < hr.dim(0); s += batch) {
    const std::int64_t count = std::min(batch, hr.dim(0) - s);
    parts.push_back(ae.decode_latent(ae.encode(narrow(hr, 0, s, count)), narrow(lr, 0, s, count)));
  }
  return concat(parts, 0);
}

}  // namespace ssmoe::pipeline
