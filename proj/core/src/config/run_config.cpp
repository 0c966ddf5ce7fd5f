#include "ssmoe/config/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ssmoe::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, std::string v) {
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<int>(key, trim(item)));
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Fields inside nested structs go through an accessor.
template <class Get>
Field integer_at(std::string key, Get get) {
  using T = std::remove_reference_t<decltype(get(std::declval<RunConfig&>()))>;
  return {key, [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_integer<T>(k, v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field real_at(std::string key, Get get) {
  return {key, [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_double(k, v); },
          [get](const RunConfig& c) { return fmt_double(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field flag_at(std::string key, Get get) {
  return {key, [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_bool(k, v); },
          [get](const RunConfig& c) { return std::string(get(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <class Get>
Field list_at(std::string key, Get get) {
  return {key, [get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_int_list(k, v); },
          [get](const RunConfig& c) { return fmt_int_list(get(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field text_at(std::string key, Get get) {
  return {key, [get](RunConfig& c, const std::string&, const std::string& v) { get(c) = v; },
          [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(integer_at("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(integer_at("run.threads", [](RunConfig& c) -> int& { return c.threads; }));

    f.push_back(text_at("paths.data", [](RunConfig& c) -> std::string& { return c.data_dir; }));
    f.push_back(text_at("paths.work", [](RunConfig& c) -> std::string& { return c.work_dir; }));

    f.push_back(integer_at("data.train_size", [](RunConfig& c) -> int& { return c.train_size; }));
    f.push_back(integer_at("data.heldout_size", [](RunConfig& c) -> int& { return c.heldout_size; }));
    f.push_back(integer_at("data.hr_size", [](RunConfig& c) -> std::int64_t& { return c.hr_size; }));
    f.push_back(integer_at("data.scale", [](RunConfig& c) -> int& { return c.scale; }));

    f.push_back(integer_at("autoencoder.channels", [](RunConfig& c) -> std::int64_t& { return c.ae.channels; }));
    f.push_back(list_at("autoencoder.channel_multiplier", [](RunConfig& c) -> std::vector<int>& { return c.ae.channel_mult; }));
    f.push_back(integer_at("autoencoder.num_res_blocks", [](RunConfig& c) -> int& { return c.ae.num_res_blocks; }));
    f.push_back(integer_at("autoencoder.z_channels", [](RunConfig& c) -> std::int64_t& { return c.ae.z_channels; }));
    f.push_back(integer_at("autoencoder.embed_dim", [](RunConfig& c) -> std::int64_t& { return c.ae.embed_dim; }));
    f.push_back(integer_at("autoencoder.n_embed", [](RunConfig& c) -> std::int64_t& { return c.ae.n_embed; }));
    f.push_back(real_at("autoencoder.dropout", [](RunConfig& c) -> double& { return c.ae.dropout; }));
    f.push_back(integer_at("autoencoder.norm_groups", [](RunConfig& c) -> int& { return c.ae.norm_groups; }));
    f.push_back(integer_at("autoencoder.num_fusion_layers", [](RunConfig& c) -> int& { return c.ae.num_fusion_layers; }));
    f.push_back(integer_at("autoencoder.num_aff_blocks", [](RunConfig& c) -> int& { return c.ae.num_aff_blocks; }));
    f.push_back({"autoencoder.decoder",
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   try {
                     c.ae.decoder = autoencoder::parse_decoder_mode(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(k + ": " + e.what());
                   }
                 },
                 [](const RunConfig& c) { return autoencoder::to_string(c.ae.decoder); }});
    f.push_back(real_at("autoencoder.ffl_lambda", [](RunConfig& c) -> double& { return c.ae.ffl.lambda; }));
    f.push_back(real_at("autoencoder.ffl_alpha", [](RunConfig& c) -> double& { return c.ae.ffl.alpha; }));

    f.push_back(integer_at("ae_train.steps", [](RunConfig& c) -> int& { return c.ae_train.steps; }));
    f.push_back(integer_at("ae_train.batch_size", [](RunConfig& c) -> int& { return c.ae_train.batch_size; }));
    f.push_back(real_at("ae_train.lr", [](RunConfig& c) -> double& { return c.ae_train.lr; }));
    f.push_back(real_at("ae_train.commitment_beta", [](RunConfig& c) -> double& { return c.ae_train.commitment_beta; }));
    f.push_back(real_at("ae_train.clip_norm", [](RunConfig& c) -> double& { return c.ae_train.clip_norm; }));
    f.push_back(integer_at("ae_train.log_interval", [](RunConfig& c) -> int& { return c.ae_train.log_interval; }));
    f.push_back(integer_at("ae_train.dead_code_restart", [](RunConfig& c) -> int& { return c.ae_train.dead_code_restart; }));

    f.push_back(integer_at("denoiser.channels", [](RunConfig& c) -> std::int64_t& { return c.denoiser.unet.base_channels; }));
    f.push_back(list_at("denoiser.channel_multiplier", [](RunConfig& c) -> std::vector<int>& { return c.denoiser.unet.channel_mult; }));
    f.push_back(list_at("denoiser.attention_resolutions",
                        [](RunConfig& c) -> std::vector<int>& { return c.denoiser.unet.attention_resolutions; }));
    f.push_back(integer_at("denoiser.head_channels", [](RunConfig& c) -> std::int64_t& { return c.denoiser.unet.head_channels; }));
    f.push_back(integer_at("denoiser.num_res_blocks", [](RunConfig& c) -> int& { return c.denoiser.unet.num_res_blocks; }));
    f.push_back(integer_at("denoiser.num_space_experts", [](RunConfig& c) -> int& { return c.denoiser.unet.num_space_experts; }));
    f.push_back(real_at("denoiser.gamma", [](RunConfig& c) -> double& { return c.denoiser.unet.gamma; }));
    f.push_back(integer_at("denoiser.ffn_mult", [](RunConfig& c) -> int& { return c.denoiser.unet.ffn_mult; }));
    f.push_back(integer_at("denoiser.norm_groups", [](RunConfig& c) -> int& { return c.denoiser.unet.norm_groups; }));
    f.push_back(integer_at("denoiser.num_sampling_experts", [](RunConfig& c) -> int& { return c.denoiser.num_sampling_experts; }));
    f.push_back(integer_at("denoiser.T", [](RunConfig& c) -> int& { return c.denoiser.T; }));
    f.push_back(flag_at("denoiser.disable_sampling_moe", [](RunConfig& c) -> bool& { return c.disable_sampling_moe; }));
    f.push_back(flag_at("denoiser.disable_space_moe", [](RunConfig& c) -> bool& { return c.disable_space_moe; }));

    f.push_back(integer_at("stage1.steps", [](RunConfig& c) -> int& { return c.stage1.steps; }));
    f.push_back(integer_at("stage1.batch_size", [](RunConfig& c) -> int& { return c.stage1.batch_size; }));
    f.push_back(real_at("stage1.lr", [](RunConfig& c) -> double& { return c.stage1.lr; }));
    f.push_back(real_at("stage1.beta_start", [](RunConfig& c) -> double& { return c.stage1.beta_start; }));
    f.push_back(real_at("stage1.beta_end", [](RunConfig& c) -> double& { return c.stage1.beta_end; }));
    f.push_back(real_at("stage1.clip_norm", [](RunConfig& c) -> double& { return c.stage1.clip_norm; }));
    f.push_back(integer_at("stage1.log_interval", [](RunConfig& c) -> int& { return c.stage1.log_interval; }));
    f.push_back(integer_at("stage1.checkpoint_interval", [](RunConfig& c) -> int& { return c.stage1.checkpoint_interval; }));
    f.push_back(flag_at("stage1.momentum_sharing", [](RunConfig& c) -> bool& { return c.stage1.momentum_sharing; }));

    f.push_back(integer_at("stage2.steps", [](RunConfig& c) -> int& { return c.stage2.steps; }));
    f.push_back(integer_at("stage2.batch_size", [](RunConfig& c) -> int& { return c.stage2.batch_size; }));
    f.push_back(real_at("stage2.lr", [](RunConfig& c) -> double& { return c.stage2.lr; }));
    f.push_back(real_at("stage2.commitment_beta", [](RunConfig& c) -> double& { return c.stage2.commitment_beta; }));
    f.push_back(real_at("stage2.clip_norm", [](RunConfig& c) -> double& { return c.stage2.clip_norm; }));
    f.push_back(integer_at("stage2.log_interval", [](RunConfig& c) -> int& { return c.stage2.log_interval; }));

    f.push_back(integer_at("sampling.steps", [](RunConfig& c) -> int& { return c.sample_steps; }));
    f.push_back(integer_at("sampling.pair_steps", [](RunConfig& c) -> int& { return c.pair_steps; }));
    f.push_back(integer_at("sampling.pair_count", [](RunConfig& c) -> int& { return c.pair_count; }));
    f.push_back(integer_at("sampling.pair_batch", [](RunConfig& c) -> int& { return c.pair_batch; }));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  static const std::map<std::string, const Field*> index = [] {
    std::map<std::string, const Field*> m;
    for (const auto& f : fields()) m[f.key] = &f;
    return m;
  }();
  auto it = index.find(key);
  if (it == index.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it->second;
}

}  // namespace

RunConfig::RunConfig() {
  // Desk-scale defaults; the full-scale values live in configs/reference.cfg.
  ae.channel_mult = {1, 1, 2};
  denoiser.unet.base_channels = 32;
  denoiser.unet.channel_mult = {1, 2};
  denoiser.unet.attention_resolutions = {8};
  denoiser.unet.head_channels = 16;
}

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << "\n";
      os << "[" << s << "]\n";
      section = s;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(*this) << "\n";
  }
  return os.str();
}

denoiser::DenoiserConfig RunConfig::effective_denoiser() const {
  denoiser::DenoiserConfig d = denoiser;
  d.unet.in_channels = ae.z_channels + ae.in_channels;
  d.unet.out_channels = ae.z_channels;
  d.unet.image_size = latent_size();
  if (disable_sampling_moe) d.num_sampling_experts = 1;
  if (disable_space_moe) d.unet.num_space_experts = 1;
  return d;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (threads < 1) fail("run.threads must be at least 1");
  if (train_size < 1 || heldout_size < 0) fail("data.train_size must be positive and data.heldout_size non-negative");
  if (scale < 1 || hr_size < 1 || hr_size % scale != 0) fail("data.hr_size must be a positive multiple of data.scale");
  if (sample_steps < 1 || pair_steps < 1 || pair_batch < 1 || pair_count < 0) fail("sampling.* counts out of range");
  auto check_loop = [&](const std::string& sec, int steps, int batch, int log_interval, double lr) {
    if (steps < 0 || batch < 1 || log_interval < 0 || !(lr > 0.0)) {
      fail(sec + ": steps and log_interval must be non-negative, batch_size positive and lr > 0");
    }
  };
  check_loop("ae_train", ae_train.steps, ae_train.batch_size, ae_train.log_interval, ae_train.lr);
  check_loop("stage1", stage1.steps, stage1.batch_size, stage1.log_interval, stage1.lr);
  check_loop("stage2", stage2.steps, stage2.batch_size, stage2.log_interval, stage2.lr);
  if (stage1.checkpoint_interval < 0) fail("stage1.checkpoint_interval must be non-negative");
  try {
    ae.validate();
    if (hr_size % ae.downsample_factor() != 0) fail("data.hr_size must be divisible by the autoencoder factor");
    // The frequency blocks and the LSD metric use a radix-2 FFT.
    if ((hr_size & (hr_size - 1)) != 0) fail("data.hr_size must be a power of two");
    const auto d = effective_denoiser();
    d.unet.validate();
    diffusion::make_partition(d.T, d.num_sampling_experts);
    diffusion::make_schedule(d.T, stage1.beta_start, stage1.beta_end);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (sample_steps > denoiser.T || pair_steps > denoiser.T) fail("sampling steps cannot exceed denoiser.T");
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'name = value'");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace ssmoe::config
