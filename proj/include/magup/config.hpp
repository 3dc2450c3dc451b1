#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "magup/model.hpp"

namespace magup {

// Everything a training run needs. JSON layout: sections "model", "encoder",
// "magup", "decoder", "bdc", "train"; every key optional, unknown keys rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

nlohmann::json to_json(const RunConfig& cfg);
// Fields absent from `j` keep the values already in `base`.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});

// "section.key=value"; value parsed as JSON, falling back to a bare string.
void apply_override(RunConfig& cfg, const std::string& assignment);
// Comma-separated subset of msd, 1dmamba, 2dmamba, bdc to switch off.
void apply_ablation(RunConfig& cfg, const std::string& list);

// Ablation study rows: plain adapter, +MSD, +1D-Mamba, +2D-Mamba, +BDC.
RunConfig ablation_row(const RunConfig& base, int row);

}  // namespace magup
