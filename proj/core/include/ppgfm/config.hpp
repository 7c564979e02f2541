#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ppgfm/augment.hpp"
#include "ppgfm/model.hpp"
#include "ppgfm/preprocess.hpp"
#include "ppgfm/ssl.hpp"

namespace ppgfm {

struct EvalConfig {
  std::array<double, 3> split_ratios = {0.6, 0.2, 0.2};
  int bootstrap_n = 500;
  int cv_folds = 5;
  bool pool_subjects = false;
};

/// Every knob of the pipeline in one document. All fields are defaulted;
/// JSON files may override any subset but unknown keys are rejected.
struct RunConfig {
  PreprocessConfig preprocess;
  AugmentConfig augment_participant = AugmentConfig::participant_defaults();
  AugmentConfig augment_morphology = AugmentConfig::morphology_defaults();
  TrainConfig train = TrainConfig::defaults(ContrastiveMode::morphology);
  ModelConfig model;
  EvalConfig eval;

  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text);

/// Canonical JSON dump (sorted keys, defaults materialized).
std::string dump_run_config(const RunConfig& config);

/// FNV-1a 64-bit digest of the canonical dump, as 16 hex characters. Stable
/// across runs for identical configs; embedded in reports for provenance.
std::string config_hash(const RunConfig& config);

}  // namespace ppgfm
