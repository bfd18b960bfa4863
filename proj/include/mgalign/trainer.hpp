#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "mgalign/alignment.hpp"
#include "mgalign/dataset.hpp"
#include "mgalign/lexicon.hpp"
#include "mgalign/model.hpp"

namespace mgalign::trainer {

// Flat `key = value` configuration; `#` starts a comment. Keys:
//   lr, batch_size, epochs, max_steps, time_budget_minutes, seed, alpha, beta,
//   image_size, stage_widths (three comma-separated ints), dim, heads,
//   text_layers, fusion_layers, max_len, initial_temperature,
//   lexicon, train_chars, data_dir, samples_per_char, render_seed, workers,
//   checkpoint, log
struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int epochs = 20;
  long max_steps = 0;                // 0: no limit
  double time_budget_minutes = 0.0;  // process CPU time; 0: no limit
  std::uint64_t seed = 0;
  alignment::LossWeights weights;
  ModelConfig model;

  std::string lexicon_path;
  std::string train_chars_path;  // empty: every lexicon character
  std::string data_dir;          // manifest directory; empty: procedural rendering
  int samples_per_char = 8;
  std::uint64_t render_seed = 0;
  int workers = 1;

  std::string checkpoint_path;
  std::string log_path;

  void validate() const;
};

TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

// Adam with the usual moment coefficients and a constant step size.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  void zero_grad();

  double lr;
  double beta1, beta2, eps;
  long steps = 0;
  std::vector<Tensor> params;
  std::vector<std::vector<double>> m, v;
};

struct StepStats {
  long step = 0;  // index of the step just taken, from 0
  int epoch = 0;
  std::array<double, 4> per_level{};
  double total = 0.0;
};

struct Progress {
  int epoch = 0;
  int batch_in_epoch = 0;
  long step = 0;
};

std::string csv_header();
std::string csv_row(const StepStats& s);

// Samples described by the config's data fields.
std::vector<dataset::Sample> load_training_samples(const TrainConfig& config, const lexicon::Lexicon& lexicon);

class Trainer {
 public:
  // Fresh parameters drawn from config.seed.
  Trainer(const TrainConfig& config, const lexicon::Lexicon& lexicon, std::vector<dataset::Sample> samples);

  StepStats step();
  // Steps until the epoch count, step limit, or CPU budget runs out, or
  // until `stop` returns true. Rows go to `log` when given.
  std::vector<StepStats> run(std::ostream* log = nullptr, const std::function<bool(const StepStats&)>& stop = {});

  void save(const std::filesystem::path& path) const;
  // Restores parameters, optimizer moments, progress, and RNG state.
  void resume(const std::filesystem::path& path);

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const Progress& progress() const { return progress_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  std::vector<std::string> radical_glyphs_;
  std::vector<dataset::Sample> samples_;
  nn::Rng rng_;
  std::unique_ptr<Model> model_;
  Adam optimizer_;
  dataset::BatchStream stream_;
  Progress progress_;
};

// ---- checkpoints ------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  int version = kCheckpointVersion;
  ModelConfig model;
  std::string train_config;  // format_train_config text
  std::vector<std::string> radical_glyphs;
  Progress progress;
  std::string rng_state;
  double adam_lr = 0.0;
  long adam_steps = 0;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> buffers;
  std::vector<NamedArray> adam_m;
  std::vector<NamedArray> adam_v;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
// VersionMismatch for other format versions, CorruptFile for truncation,
// a bad header, or a checksum mismatch.
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Copies model tensors out / in by name; missing or misshapen entries are
// CorruptFile.
void export_model(const Model& model, CheckpointData& data);
void import_model(Model& model, const CheckpointData& data);

// Rebuilds an inference model (eval mode) and checks that the lexicon's
// radical inventory matches the checkpoint (VocabMismatch otherwise).
std::unique_ptr<Model> load_model(const std::filesystem::path& path, const lexicon::Lexicon& lexicon);

}  // namespace mgalign::trainer
