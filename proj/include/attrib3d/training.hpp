#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "attrib3d/model.hpp"
#include "attrib3d/synthetic_benchmark.hpp"
#include "json.hpp"

namespace attrib3d {

// ---- protocols ------------------------------------------------------------------

enum class PromptMode { full, sparse, empty, empty_star };

std::string to_string(PromptMode m);
PromptMode prompt_mode_from_string(const std::string& s);

struct ProtocolConfig {
  std::string name = "standard";
  double data_fraction = 1.0;
  PromptMode prompt_mode = PromptMode::full;
  int sparse_words = 4;
  double image_noise_sigma = 0.0;  // in 8-bit units; noise std is sigma / 255
  double mask_ratio = 0.0;
  bool include_real = false;
  std::uint64_t seed = 0;  // noise and mask randomness

  /// standard | few_shot | missing_prompt | noisy_prompt | masked_prompt | real_synthetic
  static ProtocolConfig preset(const std::string& name);
  /// Throws InputError.
  void check() const;
  nlohmann::json to_json() const;
  static ProtocolConfig from_json(const nlohmann::json& j);
};

/// Keeps the first k whitespace-separated tokens.
std::string sparse_prompt(const std::string& text, int k);
/// Adds N(0, (sigma/255)^2) per channel value, clamps to [0, 1].
Image noisy_image(const Image& img, double sigma, std::uint64_t seed);
/// Zeros one seeded axis-aligned square covering round(sqrt(ratio) * side)^2 pixels.
Image masked_image(const Image& img, double ratio, std::uint64_t seed);

// ---- metrics --------------------------------------------------------------------

struct ClassMetrics {
  std::string name;
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

struct Metrics {
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // rows: true class, cols: predicted

  /// Rows divided by their support; rows without support stay zero.
  std::vector<std::vector<double>> row_normalized() const;
  nlohmann::json to_json() const;
  /// Confusion matrix as CSV with a header row of class names.
  std::string confusion_csv(bool normalized) const;
};

/// Macro averages run over classes with support. A class with support but no
/// predictions has precision 0.
Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                        const std::vector<std::string>& classes);

/// Metrics restricted to the listed classes (rows and columns), e.g. the
/// synthetic classes of a mixed run.
Metrics restrict_metrics(const Metrics& m, const std::vector<int>& classes);

// ---- data -----------------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train, test;
};

/// Per-class seeded shuffle; round(n * test_fraction) of each class go to test,
/// clamped so that classes with >= 2 samples keep at least one on each side.
/// Throws SplitError naming a class with no training sample.
Split stratified_split(const std::vector<int>& labels, int num_classes, double test_fraction, std::uint64_t seed,
                       const std::vector<std::string>& class_names = {});

/// Per class: floor(reference_count * fraction) items, minimum 1, drawn with a
/// seeded shuffle from `pool`. reference_count defaults to the pool's class size.
std::vector<std::size_t> few_shot_subset(const std::vector<std::size_t>& pool, const std::vector<int>& labels,
                                         int num_classes, double fraction, std::uint64_t seed,
                                         const std::vector<std::size_t>& reference_counts = {});

/// Adds real assets (label r) to a synthetic dataset, switching it to the mixed
/// label space; asset order is shuffled with `seed`. Throws LabelSpaceError if
/// the dataset already is mixed or a record is not labeled r.
Dataset mix_real(const Dataset& synthetic, const std::vector<AssetRecord>& real, std::uint64_t seed);

struct SampleOptions {
  std::string metadata = "text";  // none | text | image
  bool augment = false;
  bool flip = false;
  double jitter = 0.0;
  std::uint64_t augment_seed = 0;
};

/// Model input for one record with the protocol's prompt transform applied.
/// The record itself is not modified.
ModelSample make_sample(const AssetRecord& record, const ProtocolConfig& protocol, const SampleOptions& options,
                        std::size_t index);

// ---- training ----------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  int min_steps = 0;  // raise epochs until at least this many optimizer steps
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double test_fraction = 0.2;
  double flip_probability = 0.5;
  double jitter = 0.1;
  std::uint64_t seed = 1;
  int jobs = 1;  // evaluation threads
  bool eval_each_epoch = true;

  void check() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double lr = 0;
  double test_accuracy = -1;  // -1 when not evaluated
  double test_macro_f1 = -1;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::unique_ptr<AttributionModel<float>> model;
  LabelSpace labels;
  Split split;  // split.train is the subset actually trained on
  std::vector<EpochLog> log;
  Metrics test_metrics;
  int steps = 0;
};

TrainResult train(const ModelConfig& model_config, const Dataset& dataset, const ProtocolConfig& protocol,
                  const TrainConfig& config);

/// Mean cross-entropy of `model` on the first `batches` batches of epoch 0's
/// order for this config (no parameter update).
double initial_loss(AttributionModel<float>& model, const Dataset& dataset, const std::vector<std::size_t>& train,
                    const ProtocolConfig& protocol, const TrainConfig& config, int batches);

struct Prediction {
  std::size_t index = 0;
  int truth = -1;
  int predicted = -1;
  std::vector<double> probabilities;
  bool metadata_used = false;
};

/// Eval-mode forward on `indices` with the protocol transform, in parallel over
/// `jobs` threads. Throws LabelSpaceError if the dataset's label space differs
/// from the model's, StateError for empty_star on a model that consumes metadata.
std::vector<Prediction> predict(AttributionModel<float>& model, const LabelSpace& model_labels, const Dataset& dataset,
                                const std::vector<std::size_t>& indices, const ProtocolConfig& protocol, int jobs = 1,
                                int batch_size = 32);

/// Eval-mode prediction for a record outside any dataset (truth stays -1).
Prediction predict_record(AttributionModel<float>& model, const AssetRecord& record, const ProtocolConfig& protocol);

Metrics evaluate(AttributionModel<float>& model, const LabelSpace& model_labels, const Dataset& dataset,
                 const std::vector<std::size_t>& indices, const ProtocolConfig& protocol, int jobs = 1);

/// Softmax over logits in double.
std::vector<double> softmax_probs(const float* logits, std::size_t n);

// ---- checkpoints -----------------------------------------------------------------------

struct Checkpoint {
  std::unique_ptr<AttributionModel<float>> model;
  LabelSpace labels;
  nlohmann::json info;  // training config, protocol, split sizes
};

void save_checkpoint(const std::string& dir, const AttributionModel<float>& model, const LabelSpace& labels,
                     const nlohmann::json& info);
Checkpoint load_checkpoint(const std::string& dir);

/// Whether a checkpoint's model can ever attend to metadata.
bool consumes_metadata(const ModelConfig& config);

}  // namespace attrib3d
