#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ripple::cli {

using Config = nlohmann::ordered_json;

// Loads a JSON config file (or starts from {}), applies --set key=value
// overrides (dotted paths, values parsed as JSON when possible) and an
// optional --seed override on the top-level "seed".
Config resolve_config(const std::string& config_path, const std::vector<std::string>& sets,
                      const std::string& seed_override);

// Number of parallel workers: RIPPLE_LAB_THREADS when set, else the hardware
// concurrency.
int worker_threads();

// Subcommands. Each validates its config (unknown keys rejected), runs, and
// writes its artifacts plus the resolved config under out_dir.
void cmd_gen_data(const Config& config, const std::string& out_dir);
void cmd_train(const Config& config, const std::string& out_dir);
void cmd_edit(const Config& config, const std::string& out_dir);
void cmd_gradsim(const Config& config, const std::string& out_dir);
void cmd_eval(const Config& config, const std::string& out_dir);
void cmd_ntk_scan(const Config& config, const std::string& out_dir);

}  // namespace ripple::cli
