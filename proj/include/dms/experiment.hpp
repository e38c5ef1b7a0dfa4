#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dms/attack.hpp"
#include "dms/attribution.hpp"
#include "dms/model.hpp"
#include <json.hpp>

namespace dms {

/// How an adversarial image is stored. Original keeps the float values in a
/// DMSF file; every other method writes 8-bit PPM/PGM.
enum class StoreMethod { Original, Upper, Truncate, Round, DmsAi, Dms };

std::string to_string(StoreMethod method);
std::optional<StoreMethod> parse_store_method(std::string_view name);
const std::vector<StoreMethod>& all_store_methods();

struct DatasetSpec {
  enum class Kind { Synthetic, Directory };
  Kind kind = Kind::Synthetic;
  InputSpec input{16, 16, 3, 4};
  std::size_t train_count = 500;
  std::size_t test_count = 200;
  std::uint64_t seed = 0;
  std::filesystem::path train_dir;
  std::filesystem::path test_dir;
};

struct ModelSpec {
  std::optional<std::filesystem::path> path;  // loaded when present on disk
  std::string architecture = "cnn-small";
  std::uint64_t init_seed = 0;
  TrainOptions training{15, 0.05f, 0};
};

enum class SweepAxis { Alpha, Epsilon, Steps };
std::string to_string(SweepAxis axis);
std::optional<SweepAxis> parse_sweep_axis(std::string_view name);

struct SweepSpec {
  SweepAxis axis = SweepAxis::Epsilon;
  std::vector<double> values;
};

struct ExperimentConfig {
  ModelSpec model;
  DatasetSpec dataset;
  std::vector<AttackConfig> attacks{AttackConfig{}};
  DmsConfig dms;
  /// Keep the attribution pass inside the relaxed epsilon budget.
  bool dms_respect_budget = true;
  std::vector<StoreMethod> methods = all_store_methods();
  std::size_t sample_count = 200;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;
  std::optional<SweepSpec> sweep;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Parses the JSON config document. Unknown keys are rejected. Unset
/// sub-seeds default to the top-level "seed".
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const ExperimentConfig& config);

struct MethodStats {
  StoreMethod method = StoreMethod::Original;
  std::size_t successes = 0;
  std::size_t total = 0;
  double asr = 0.0;
  double precision_loss = 0.0;  // mean over samples of mean |P' - P|
  std::size_t epsilon_violations = 0;
  double max_linf = 0.0;  // normalized units
  std::size_t attribution_applied = 0;  // Dms only
};

struct AttackResult {
  AttackConfig attack;
  std::vector<MethodStats> methods;

  const MethodStats& stats(StoreMethod method) const;
};

struct EvalReport {
  std::vector<AttackResult> attacks;
  std::size_t evaluated = 0;               // correctly classified samples used
  std::size_t skipped_misclassified = 0;   // clean errors seen before reaching the quota
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  nlohmann::ordered_json config;
  double wall_seconds = 0.0;  // not part of the deterministic serialization
};

/// Model and evaluation pool resolved from a config.
struct Workbench {
  ModelParams model;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Loads or trains the model (saving a freshly trained model to the model
/// path, or to output_dir/model.dmsw) and materializes the datasets.
Workbench prepare(const ExperimentConfig& config);

/// attack -> store (file write) -> reload -> predict, for every selected
/// sample, attack and storage method.
EvalReport run_experiment(const ExperimentConfig& config);
EvalReport run_experiment(const ExperimentConfig& config, const Workbench& bench);

/// One report per value; the value replaces the axis field of every attack.
std::vector<EvalReport> sweep(const ExperimentConfig& config, SweepAxis axis,
                              std::span<const double> values);
std::vector<EvalReport> sweep(const ExperimentConfig& config, const Workbench& bench,
                              SweepAxis axis, std::span<const double> values);

/// The first `count` samples of `pool` that `model` classifies correctly.
std::vector<LabeledSample> select_correct(const ModelParams& model,
                                          std::span<const LabeledSample> pool,
                                          std::size_t count, std::size_t* skipped = nullptr);

}  // namespace dms
