#pragma once

#include <string>

#include "ssmoe/config/run_config.hpp"

namespace ssmoe::cli {

// Each command returns the process exit code. Missing inputs surface as
// pipeline::MissingInput and are mapped to exit code 2 by main.

int cmd_gen_data(const config::RunConfig& cfg);
int cmd_train_ae(const config::RunConfig& cfg);
int cmd_train_stage1(const config::RunConfig& cfg);
int cmd_gen_pairs(const config::RunConfig& cfg);
int cmd_train_stage2(const config::RunConfig& cfg);

struct InferOptions {
  std::string input;   // PPM file or directory of PPMs
  std::string output;  // file or directory, mirroring input
  int steps = 0;       // 0: sampling.steps
};
int cmd_infer(const config::RunConfig& cfg, const InferOptions& opt);

struct EvalOptions {
  std::string pred_dir;
  std::string ref_dir;
  std::string format = "table";  // table | jsonl
  std::string records;           // optional jsonl output file
};
int cmd_eval(const config::RunConfig& cfg, const EvalOptions& opt);

struct FlopsOptions {
  std::string format = "table";
  bool per_layer = false;
  int steps = 0;  // 0: sampling.steps
};
int cmd_flops(const config::RunConfig& cfg, const FlopsOptions& opt);

}  // namespace ssmoe::cli
