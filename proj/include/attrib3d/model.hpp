#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "attrib3d/archive.hpp"
#include "attrib3d/frequency_fingerprint.hpp"
#include "attrib3d/geometry_fingerprint.hpp"
#include "attrib3d/image.hpp"
#include "attrib3d/tensor.hpp"
#include "json.hpp"

namespace attrib3d {

// ---- label space ------------------------------------------------------------

enum class LabelKind { synthetic, mixed };

/// Synthetic: {g1..gK, u}. Mixed: {g1..gK, u, r}. Ids are dense from 0.
struct LabelSpace {
  LabelKind kind = LabelKind::synthetic;
  std::vector<std::string> classes;

  static LabelSpace synthetic(int generators);
  static LabelSpace mixed(int generators);

  int size() const { return static_cast<int>(classes.size()); }
  int generators() const;
  int unknown_id() const { return generators(); }
  /// -1 for synthetic spaces.
  int real_id() const { return kind == LabelKind::mixed ? generators() + 1 : -1; }
  int id_of(const std::string& name) const;
  /// Throws LabelSpaceError if the class list breaks the invariants.
  void check() const;

  nlohmann::json to_json() const;
  static LabelSpace from_json(const nlohmann::json& j);
  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;
};

// ---- config -------------------------------------------------------------------

struct ModelConfig {
  std::string architecture = "hierarchical";  // or "grid"
  int d = 128;
  int heads = 4;
  int intra_layers = 2;
  int cross_layers = 2;
  int patch = 8;
  int resolution = 64;
  int views = 4;
  int mlp_ratio = 4;
  int text_buckets = 4096;
  std::string metadata = "text";  // none | text | image
  double p_meta = 0.3;
  double dropout = 0.1;
  std::vector<std::string> modalities = {"rgb", "normal", "geom", "freq"};
  int num_classes = 0;

  bool has(const std::string& modality) const;
  int patch_dims() const { return patch * patch * 3; }
  int patches() const { return (resolution / patch) * (resolution / patch); }
  /// Throws InputError on inconsistent settings.
  void check() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// ---- inputs -------------------------------------------------------------------

enum class MetaKind { none, text, image };

struct Metadata {
  MetaKind kind = MetaKind::none;
  std::string text;
  Image image;
};

/// Everything the model observes for one asset.
struct ModelSample {
  std::vector<Image> rgb;     // V views, resolution x resolution
  std::vector<Image> normal;  // V views
  std::array<double, kGeometryDims> geom{};
  std::vector<FftVector> freq;  // V views
  Metadata meta;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t seed = 0;  // dropout and metadata-drop randomness
};

/// Lowercased alphanumeric unigrams hashed (FNV-1a) into `buckets`.
std::vector<std::uint32_t> hash_tokens(const std::string& text, int buckets);

/// Per-dimension mean/std from training data; std 0 maps to 1.
struct Standardizer {
  std::vector<double> geom_mean, geom_std, freq_mean, freq_std;

  static Standardizer identity();
  static Standardizer fit(const std::vector<const ModelSample*>& samples);
  std::vector<double> geom(const ModelSample& s) const;
  std::vector<double> freq(const ModelSample& s, std::size_t view) const;
};

// ---- models ---------------------------------------------------------------------

template <typename T>
using TensorT = nn::Tensor<T>;

template <typename T>
struct BlockParams {
  TensorT<T> ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
};

/// Base for the hierarchical model and the flat grid baseline: parameter
/// registry, standardisation buffers, transformer blocks and the linear head.
template <typename T>
class AttributionModel {
 public:
  virtual ~AttributionModel() = default;

  /// Logits [B, num_classes].
  virtual TensorT<T> forward(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts) = 0;

  const ModelConfig& config() const { return config_; }
  const std::vector<std::pair<std::string, TensorT<T>>>& named_parameters() const { return params_; }
  std::vector<TensorT<T>> parameters() const;
  TensorT<T>& param(const std::string& name);
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t parameter_count() const;

  Standardizer& standardizer() { return stats_; }
  const Standardizer& standardizer() const { return stats_; }

  /// Parameters plus standardisation buffers, config in the metadata.
  nn::Archive to_archive() const;
  /// Copies matching tensors in; throws ShapeError / StateError on mismatch.
  void load_archive(const nn::Archive& archive);

  /// Single affine map from the pooled representation to logits.
  TensorT<T> classify(const TensorT<T>& pooled);

 protected:
  AttributionModel(ModelConfig config, std::uint64_t seed);
  TensorT<T>& add_param(const std::string& name, const nn::Shape& shape, double init_std);
  TensorT<T>& add_const(const std::string& name, const nn::Shape& shape, T value);
  BlockParams<T> add_block(const std::string& prefix);
  /// Pre-norm transformer block over x [N, S, d]; `valid` (N*S or empty)
  /// masks attention keys.
  TensorT<T> block(const BlockParams<T>& p, const TensorT<T>& x, const std::vector<std::uint8_t>& valid,
                   const ForwardOptions& opts, std::uint64_t site);
  TensorT<T> dropout(const TensorT<T>& x, const ForwardOptions& opts, std::uint64_t site) const;
  /// Row k of a [n, d] table as a 1-D [d] tensor.
  TensorT<T> row(const TensorT<T>& table, std::size_t k) const;
  /// Patch-mean projection of images -> [N, d], without extra embeddings.
  TensorT<T> project_images(const std::vector<const Image*>& images, const std::string& prefix);
  /// Text metadata -> [N, d] for the given texts.
  TensorT<T> encode_text(const std::vector<const std::string*>& texts);
  /// One metadata token per sample [B, d] (zero rows where absent) and the
  /// per-sample presence flags; undefined tensor if no sample has one.
  TensorT<T> metadata_tokens(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts,
                             std::vector<std::uint8_t>& present);
  /// Whether metadata is consulted at all for this sample in this pass.
  bool use_metadata(const ModelSample& s, std::size_t index, const ForwardOptions& opts) const;

  ModelConfig config_;
  Standardizer stats_;
  std::vector<std::pair<std::string, TensorT<T>>> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t init_seed_;
  std::uint64_t init_counter_ = 0;
};

/// Modality ids for the shared modality embedding table.
enum Modality : std::size_t { kRgb = 0, kNormal, kGeom, kFreq, kMetaText, kMetaImage, kModalityCount };

template <typename T>
class HierarchicalModel final : public AttributionModel<T> {
 public:
  HierarchicalModel(ModelConfig config, std::uint64_t seed);

  TensorT<T> forward(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts) override;

  /// Image tokens [N, d]: patch projection + pooled positional embedding +
  /// modality embedding + view embedding (view < 0: none).
  TensorT<T> encode_image(const std::vector<const Image*>& images, Modality modality, const std::vector<int>& views);
  /// Standardised descriptor rows [N, 102] / [N, 256] -> MLP tokens [N, d] +
  /// modality (+ view) embeddings.
  TensorT<T> encode_geom(const TensorT<T>& rows, const std::vector<int>& views);
  TensorT<T> encode_freq(const TensorT<T>& rows, const std::vector<int>& views);
  /// One token per sample [B, d] plus validity (1 = metadata token present).
  TensorT<T> encode_metadata(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts,
                             std::vector<std::uint8_t>& present);
  /// Per-view token sequences [G, S, d] -> view embeddings [G, d] (view-cls output).
  TensorT<T> intra_view_fuse(const TensorT<T>& tokens, const ForwardOptions& opts);
  /// View embeddings [B, V, d] (+ optional metadata [B, d] with per-sample
  /// validity) -> global representation [B, d].
  TensorT<T> cross_view_fuse(const TensorT<T>& views, const TensorT<T>* meta, const std::vector<std::uint8_t>& present,
                             const ForwardOptions& opts);

 private:
  std::vector<BlockParams<T>> intra_, cross_;
};

/// Flat grid transformer baseline: rgb and normal tokens of every view plus the
/// metadata token in one sequence with slot position embeddings; no view
/// structure. Depth is intra_layers + cross_layers.
template <typename T>
class GridModel final : public AttributionModel<T> {
 public:
  GridModel(ModelConfig config, std::uint64_t seed);
  TensorT<T> forward(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts) override;

 private:
  std::vector<BlockParams<T>> blocks_;
};

template <typename T>
std::unique_ptr<AttributionModel<T>> make_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace attrib3d
