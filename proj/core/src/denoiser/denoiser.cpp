#include "ssmoe/denoiser/denoiser.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "ssmoe/data/image.hpp"

namespace ssmoe::denoiser {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

const std::string& meta_get(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing metadata key '" + key + "'");
  return it->second;
}

Tensor rows_of(const Tensor& batch, const std::vector<std::int64_t>& idx) {
  Shape rest(batch.shape().begin() + 1, batch.shape().end());
  Tensor flat = reshape(batch, {batch.dim(0), numel_of(rest)});
  Shape out = rest;
  out.insert(out.begin(), static_cast<std::int64_t>(idx.size()));
  return reshape(gather_rows(flat, idx), out);
}

}  // namespace

DenoiserModel::DenoiserModel(const DenoiserConfig& cfg, Rng& rng)
    : cfg_(cfg), partition_(diffusion::make_partition(cfg.T, cfg.num_sampling_experts)) {
  for (int i = 0; i < cfg.num_sampling_experts; ++i) {
    experts_.push_back(std::make_unique<UNet>(cfg.unet, rng));
    register_module("stage." + std::to_string(i), *experts_.back());
  }
}

Tensor DenoiserModel::forward(const Tensor& z_t, const Tensor& lr, const std::vector<int>& t, Rng* rng) const {
  if (z_t.ndim() != 4 || lr.ndim() != 4 || lr.dim(0) != z_t.dim(0)) {
    throw TensorError("denoiser: expected batched z_t and lr, got " + shape_str(z_t.shape()) + " and " +
                      shape_str(lr.shape()));
  }
  if (static_cast<std::int64_t>(t.size()) != z_t.dim(0)) throw TensorError("denoiser: need one timestep per sample");
  Tensor x = data::condition_concat(lr, z_t);

  std::map<int, std::vector<std::int64_t>> groups;
  for (std::size_t b = 0; b < t.size(); ++b) groups[stage_of(t[b])].push_back(static_cast<std::int64_t>(b));
  if (groups.size() == 1) {
    std::vector<double> td(t.begin(), t.end());
    return experts_[static_cast<std::size_t>(groups.begin()->first)]->forward(x, td, rng);
  }

  const std::int64_t batch = z_t.dim(0);
  Tensor out;
  Shape out_shape;
  for (const auto& [stage, idx] : groups) {
    std::vector<double> td;
    for (auto b : idx) td.push_back(t[static_cast<std::size_t>(b)]);
    Tensor y = experts_[static_cast<std::size_t>(stage)]->forward(rows_of(x, idx), td, rng);
    out_shape = y.shape();
    Tensor placed = scatter_rows(reshape(y, {y.dim(0), y.numel() / y.dim(0)}), idx, batch);
    out = out.defined() ? add(out, placed) : placed;
  }
  out_shape[0] = batch;
  return reshape(out, out_shape);
}

std::vector<SpaceMoeLayer*> DenoiserModel::moe_layers() const {
  std::vector<SpaceMoeLayer*> out;
  for (const auto& e : experts_) {
    auto l = e->moe_layers();
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

void DenoiserModel::momentum_share_all() {
  for (auto* l : moe_layers()) l->momentum_share();
}

void DenoiserModel::merge_space_experts() {
  for (auto* l : moe_layers()) l->merge();
}

bool DenoiserModel::merged() const {
  auto layers = moe_layers();
  return !layers.empty() && layers.front()->merged();
}

std::vector<TrainRecord> train_stage1(DenoiserModel& model, const LatentDataset& data, const Stage1Config& cfg,
                                      nn::Adam* optimizer, const StepHook& hook) {
  if (data.size() == 0) throw TrainingError("stage1: empty dataset");
  if (model.merged()) throw TrainingError("stage1: cannot train a merged model");
  const auto schedule = diffusion::make_schedule(model.config().T, cfg.beta_start, cfg.beta_end);
  std::unique_ptr<nn::Adam> own;
  if (!optimizer) {
    own = std::make_unique<nn::Adam>(model.named_parameters(), nn::AdamConfig{.lr = cfg.lr, .clip_norm = cfg.clip_norm});
    optimizer = own.get();
  }
  Rng rng(mix_seed(cfg.seed, 0x57a9e1));
  std::vector<TrainRecord> log;
  double window = 0.0;
  int in_window = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.batch_size));
    for (auto& i : idx) i = rng.randint(0, data.size());
    std::vector<int> ts(idx.size());
    for (auto& t : ts) t = static_cast<int>(rng.randint(1, model.config().T + 1));
    Tensor y = rows_of(data.latent, idx);
    Tensor lr = rows_of(data.lr, idx);
    Tensor eps = randn(y.shape(), rng, y.dtype());
    Tensor z_t = diffusion::forward_noise_batch(y, ts, eps, schedule);

    Tensor loss = diffusion::eps_loss(eps, model.forward(z_t, lr, ts, &rng));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw TrainingError("stage1: non-finite loss " + std::to_string(value) + " at step " + std::to_string(step) +
                          " (last grad norm " + std::to_string(optimizer->last_grad_norm()) + ")");
    }
    optimizer->zero_grad();
    loss.backward();
    optimizer->step();
    if (cfg.momentum_sharing) model.momentum_share_all();

    window += value;
    ++in_window;
    if (hook) hook(step, value);
    if (cfg.log_interval > 0 && step % cfg.log_interval == 0) {
      log.push_back({step, window / in_window});
      window = 0.0;
      in_window = 0;
    }
  }
  return log;
}

Tensor sample_latents(const DenoiserModel& model, const diffusion::NoiseSchedule& schedule, const Tensor& lr,
                      const Shape& latent_shape, int steps, Rng& rng) {
  const auto plan = diffusion::make_sampling_plan(schedule, steps);
  Tensor y = randn(latent_shape, rng, lr.dtype());
  auto eps_fn = [&](const Tensor& cur, int t) {
    return model.forward(cur, lr, std::vector<int>(static_cast<std::size_t>(cur.dim(0)), t), &rng);
  };
  return diffusion::sample_chain(plan, y, eps_fn, rng);
}

void write_denoiser_config(const DenoiserConfig& cfg, bool merged, std::map<std::string, std::string>& meta) {
  const auto& u = cfg.unet;
  meta["denoiser.in_channels"] = std::to_string(u.in_channels);
  meta["denoiser.out_channels"] = std::to_string(u.out_channels);
  meta["denoiser.channels"] = std::to_string(u.base_channels);
  meta["denoiser.channel_multiplier"] = join_ints(u.channel_mult);
  meta["denoiser.attention_resolutions"] = join_ints(u.attention_resolutions);
  meta["denoiser.head_channels"] = std::to_string(u.head_channels);
  meta["denoiser.num_res_blocks"] = std::to_string(u.num_res_blocks);
  meta["denoiser.num_space_experts"] = std::to_string(u.num_space_experts);
  std::ostringstream gamma;
  gamma.precision(17);
  gamma << u.gamma;
  meta["denoiser.gamma"] = gamma.str();
  meta["denoiser.ffn_mult"] = std::to_string(u.ffn_mult);
  meta["denoiser.norm_groups"] = std::to_string(u.norm_groups);
  meta["denoiser.latent_size"] = std::to_string(u.image_size);
  meta["denoiser.num_sampling_experts"] = std::to_string(cfg.num_sampling_experts);
  meta["denoiser.T"] = std::to_string(cfg.T);
  meta["denoiser.merged"] = merged ? "1" : "0";
}

DenoiserConfig read_denoiser_config(const std::map<std::string, std::string>& meta, bool* merged) {
  DenoiserConfig c;
  auto& u = c.unet;
  u.in_channels = std::stoll(meta_get(meta, "denoiser.in_channels"));
  u.out_channels = std::stoll(meta_get(meta, "denoiser.out_channels"));
  u.base_channels = std::stoll(meta_get(meta, "denoiser.channels"));
  u.channel_mult = split_ints(meta_get(meta, "denoiser.channel_multiplier"));
  u.attention_resolutions = split_ints(meta_get(meta, "denoiser.attention_resolutions"));
  u.head_channels = std::stoll(meta_get(meta, "denoiser.head_channels"));
  u.num_res_blocks = std::stoi(meta_get(meta, "denoiser.num_res_blocks"));
  u.num_space_experts = std::stoi(meta_get(meta, "denoiser.num_space_experts"));
  u.gamma = std::stod(meta_get(meta, "denoiser.gamma"));
  u.ffn_mult = std::stoi(meta_get(meta, "denoiser.ffn_mult"));
  u.norm_groups = std::stoi(meta_get(meta, "denoiser.norm_groups"));
  u.image_size = std::stoll(meta_get(meta, "denoiser.latent_size"));
  c.num_sampling_experts = std::stoi(meta_get(meta, "denoiser.num_sampling_experts"));
  c.T = std::stoi(meta_get(meta, "denoiser.T"));
  if (merged) *merged = meta_get(meta, "denoiser.merged") == "1";
  return c;
}

void save_denoiser(const DenoiserModel& model, data::TensorArchive& archive) {
  write_denoiser_config(model.config(), model.merged(), archive.metadata);
  for (const auto& [name, t] : model.state_dict("denoiser")) archive.add(name, t);
}

std::unique_ptr<DenoiserModel> load_denoiser(const data::TensorArchive& archive) {
  bool merged = false;
  const auto cfg = read_denoiser_config(archive.metadata, &merged);
  Rng rng(0);
  auto model = std::make_unique<DenoiserModel>(cfg, rng);
  if (merged) model->merge_space_experts();
  nn::StateDict state;
  for (const auto& [name, t] : archive.entries()) state[name] = t;
  model->load_state_dict(state, "denoiser");
  return model;
}

}  // namespace ssmoe::denoiser
