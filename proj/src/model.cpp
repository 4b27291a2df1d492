#include "attrib3d/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "attrib3d/errors.hpp"
#include "attrib3d/rng.hpp"

namespace attrib3d {

using nn::Shape;

// ---- label space --------------------------------------------------------------

LabelSpace LabelSpace::synthetic(int generators) {
  if (generators < 1) throw LabelSpaceError("label space needs at least one generator class");
  LabelSpace ls;
  ls.kind = LabelKind::synthetic;
  for (int i = 1; i <= generators; ++i) ls.classes.push_back("g" + std::to_string(i));
  ls.classes.push_back("u");
  return ls;
}

LabelSpace LabelSpace::mixed(int generators) {
  LabelSpace ls = synthetic(generators);
  ls.kind = LabelKind::mixed;
  ls.classes.push_back("r");
  return ls;
}

int LabelSpace::generators() const {
  return static_cast<int>(std::count_if(classes.begin(), classes.end(), [](const std::string& c) {
    return c != "u" && c != "r";
  }));
}

int LabelSpace::id_of(const std::string& name) const {
  const auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw LabelSpaceError("class '" + name + "' is not in the label space");
  return static_cast<int>(it - classes.begin());
}

void LabelSpace::check() const {
  const std::set<std::string> uniq(classes.begin(), classes.end());
  if (uniq.size() != classes.size()) throw LabelSpaceError("duplicate class names");
  const int g = generators();
  if (g < 1) throw LabelSpaceError("no generator classes");
  if (std::count(classes.begin(), classes.end(), "u") != 1 || classes[static_cast<std::size_t>(g)] != "u") {
    throw LabelSpaceError("unknown class u must follow the generator classes exactly once");
  }
  const bool has_r = std::count(classes.begin(), classes.end(), "r") == 1;
  if (has_r != (kind == LabelKind::mixed)) throw LabelSpaceError("real class r present iff the space is mixed");
  if (has_r && classes.back() != "r") throw LabelSpaceError("real class r must be last");
}

nlohmann::json LabelSpace::to_json() const {
  return {{"kind", kind == LabelKind::mixed ? "mixed" : "synthetic"}, {"classes", classes}};
}

LabelSpace LabelSpace::from_json(const nlohmann::json& j) {
  LabelSpace ls;
  const std::string kind = j.at("kind");
  if (kind != "mixed" && kind != "synthetic") throw LabelSpaceError("unknown label space kind " + kind);
  ls.kind = kind == "mixed" ? LabelKind::mixed : LabelKind::synthetic;
  ls.classes = j.at("classes").get<std::vector<std::string>>();
  ls.check();
  return ls;
}

// ---- config -------------------------------------------------------------------

bool ModelConfig::has(const std::string& modality) const {
  return std::find(modalities.begin(), modalities.end(), modality) != modalities.end();
}

void ModelConfig::check() const {
  if (architecture != "hierarchical" && architecture != "grid") throw InputError("unknown architecture " + architecture);
  if (d <= 0 || heads <= 0 || d % heads != 0) throw InputError("embed dim must be a positive multiple of heads");
  if (patch <= 0 || resolution <= 0 || resolution % patch != 0) throw InputError("patch size must divide resolution");
  if (views < 1) throw InputError("at least one view is required");
  if (intra_layers < 0 || cross_layers < 0 || mlp_ratio < 1 || text_buckets < 1) throw InputError("bad layer sizes");
  if (!(p_meta >= 0 && p_meta <= 1)) throw InputError("p_meta must be in [0, 1]");
  if (!(dropout >= 0 && dropout < 1)) throw InputError("dropout must be in [0, 1)");
  if (num_classes < 1) throw InputError("num_classes must be positive");
  for (const auto& m : modalities) {
    if (m != "rgb" && m != "normal" && m != "geom" && m != "freq") throw InputError("unknown modality " + m);
  }
  if (metadata != "none" && metadata != "text" && metadata != "image") throw InputError("unknown metadata mode " + metadata);
  if (modalities.empty()) throw InputError("at least one modality is required");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"architecture", architecture}, {"d", d},
          {"heads", heads},               {"intra_layers", intra_layers},
          {"cross_layers", cross_layers}, {"patch", patch},
          {"resolution", resolution},     {"views", views},
          {"mlp_ratio", mlp_ratio},       {"text_buckets", text_buckets},
          {"metadata", metadata},         {"p_meta", p_meta},             {"dropout", dropout},
          {"modalities", modalities},     {"num_classes", num_classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.architecture = j.value("architecture", c.architecture);
  c.d = j.value("d", c.d);
  c.heads = j.value("heads", c.heads);
  c.intra_layers = j.value("intra_layers", c.intra_layers);
  c.cross_layers = j.value("cross_layers", c.cross_layers);
  c.patch = j.value("patch", c.patch);
  c.resolution = j.value("resolution", c.resolution);
  c.views = j.value("views", c.views);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.text_buckets = j.value("text_buckets", c.text_buckets);
  c.metadata = j.value("metadata", c.metadata);
  c.p_meta = j.value("p_meta", c.p_meta);
  c.dropout = j.value("dropout", c.dropout);
  c.modalities = j.value("modalities", c.modalities);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

// ---- inputs -------------------------------------------------------------------

std::vector<std::uint32_t> hash_tokens(const std::string& text, int buckets) {
  std::vector<std::uint32_t> out;
  std::uint32_t h = 2166136261u;
  bool in_token = false;
  auto flush = [&] {
    if (in_token) out.push_back(h % static_cast<std::uint32_t>(buckets));
    h = 2166136261u;
    in_token = false;
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      h ^= static_cast<std::uint32_t>(std::tolower(c));
      h *= 16777619u;
      in_token = true;
    } else {
      flush();
    }
  }
  flush();
  return out;
}

Standardizer Standardizer::identity() {
  Standardizer s;
  s.geom_mean.assign(kGeometryDims, 0.0);
  s.geom_std.assign(kGeometryDims, 1.0);
  s.freq_mean.assign(kFftDims, 0.0);
  s.freq_std.assign(kFftDims, 1.0);
  return s;
}

Standardizer Standardizer::fit(const std::vector<const ModelSample*>& samples) {
  Standardizer s = identity();
  if (samples.empty()) return s;
  std::vector<double> gs(kGeometryDims, 0.0), gq(kGeometryDims, 0.0), fs(kFftDims, 0.0), fq(kFftDims, 0.0);
  double nf = 0;
  for (const ModelSample* m : samples) {
    for (std::size_t i = 0; i < kGeometryDims; ++i) gs[i] += m->geom[i];
    for (const auto& view : m->freq) {
      for (std::size_t i = 0; i < kFftDims; ++i) fs[i] += view[i];
      nf += 1;
    }
  }
  const double ng = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < kGeometryDims; ++i) s.geom_mean[i] = gs[i] / ng;
  for (std::size_t i = 0; i < kFftDims; ++i) s.freq_mean[i] = nf > 0 ? fs[i] / nf : 0.0;
  for (const ModelSample* m : samples) {
    for (std::size_t i = 0; i < kGeometryDims; ++i) gq[i] += (m->geom[i] - s.geom_mean[i]) * (m->geom[i] - s.geom_mean[i]);
    for (const auto& view : m->freq) {
      for (std::size_t i = 0; i < kFftDims; ++i) fq[i] += (view[i] - s.freq_mean[i]) * (view[i] - s.freq_mean[i]);
    }
  }
  auto to_std = [](std::vector<double>& sd, const std::vector<double>& sq, const std::vector<double>& mean, double n) {
    for (std::size_t i = 0; i < sd.size(); ++i) {
      const double v = n > 0 ? std::sqrt(sq[i] / n) : 0.0;
      sd[i] = v > 1e-12 * std::max(1.0, std::abs(mean[i])) ? v : 1.0;
    }
  };
  to_std(s.geom_std, gq, s.geom_mean, ng);
  to_std(s.freq_std, fq, s.freq_mean, nf);
  return s;
}

std::vector<double> Standardizer::geom(const ModelSample& s) const {
  std::vector<double> out(kGeometryDims);
  for (std::size_t i = 0; i < kGeometryDims; ++i) out[i] = (s.geom[i] - geom_mean[i]) / geom_std[i];
  return out;
}

std::vector<double> Standardizer::freq(const ModelSample& s, std::size_t view) const {
  std::vector<double> out(kFftDims);
  for (std::size_t i = 0; i < kFftDims; ++i) out[i] = (s.freq[view][i] - freq_mean[i]) / freq_std[i];
  return out;
}

// ---- base model -----------------------------------------------------------------

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::uint64_t kMetaDropStream = 0x6d657461ull;

}  // namespace

template <typename T>
AttributionModel<T>::AttributionModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), stats_(Standardizer::identity()), init_seed_(seed) {
  config_.check();
  const std::size_t d = static_cast<std::size_t>(config_.d);
  const std::size_t P = static_cast<std::size_t>(config_.patch_dims());
  const std::size_t Np = static_cast<std::size_t>(config_.patches());
  if (config_.has("rgb") || config_.p_meta < 1.0) {
    add_param("rgb.proj.w", {P, d}, 0.02);
    add_const("rgb.proj.b", {d}, T(0));
    add_param("rgb.pos", {Np, d}, 0.02);
  }
  if (config_.has("normal")) {
    add_param("normal.proj.w", {P, d}, 0.02);
    add_const("normal.proj.b", {d}, T(0));
    add_param("normal.pos", {Np, d}, 0.02);
  }
  add_param("modality.emb", {kModalityCount, d}, 0.02);
  if (config_.p_meta < 1.0) {
    add_param("text.emb", {static_cast<std::size_t>(config_.text_buckets), d}, 0.02);
    add_param("text.w", {d, d}, 0.02);
    add_const("text.b", {d}, T(0));
  }
  add_const("final.ln.g", {d}, T(1));
  add_const("final.ln.b", {d}, T(0));
  add_param("head.w", {d, static_cast<std::size_t>(config_.num_classes)}, 0.02);
  add_const("head.b", {static_cast<std::size_t>(config_.num_classes)}, T(0));
}

template <typename T>
TensorT<T>& AttributionModel<T>::add_param(const std::string& name, const Shape& shape, double init_std) {
  Rng rng(derive_seed(init_seed_, name_hash(name)));
  std::vector<T> v(nn::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * init_std);
  index_[name] = params_.size();
  params_.emplace_back(name, TensorT<T>::from(shape, std::move(v), true));
  return params_.back().second;
}

template <typename T>
TensorT<T>& AttributionModel<T>::add_const(const std::string& name, const Shape& shape, T value) {
  index_[name] = params_.size();
  params_.emplace_back(name, TensorT<T>::full(shape, value, true));
  return params_.back().second;
}

template <typename T>
std::vector<TensorT<T>> AttributionModel<T>::parameters() const {
  std::vector<TensorT<T>> out;
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
TensorT<T>& AttributionModel<T>::param(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw StateError("model has no parameter " + name);
  return params_[it->second].second;
}

template <typename T>
std::size_t AttributionModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

template <typename T>
nn::Archive AttributionModel<T>::to_archive() const {
  nn::Archive a;
  for (const auto& [name, t] : params_) a.add(name, t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
  auto buf = [&](const std::string& name, const std::vector<double>& v) {
    a.add(name, {v.size()}, std::vector<float>(v.begin(), v.end()));
  };
  buf("stats.geom_mean", stats_.geom_mean);
  buf("stats.geom_std", stats_.geom_std);
  buf("stats.freq_mean", stats_.freq_mean);
  buf("stats.freq_std", stats_.freq_std);
  a.meta["stats"] = {{"geom_mean", stats_.geom_mean},
                     {"geom_std", stats_.geom_std},
                     {"freq_mean", stats_.freq_mean},
                     {"freq_std", stats_.freq_std}};
  a.meta["model_config"] = config_.to_json();
  return a;
}

template <typename T>
void AttributionModel<T>::load_archive(const nn::Archive& archive) {
  for (auto& [name, t] : params_) {
    const auto& arr = archive.require(name, t.shape());
    std::copy(arr.values.begin(), arr.values.end(), t.data().begin());
  }
  if (archive.meta.contains("stats")) {
    const auto& s = archive.meta.at("stats");
    stats_.geom_mean = s.at("geom_mean").get<std::vector<double>>();
    stats_.geom_std = s.at("geom_std").get<std::vector<double>>();
    stats_.freq_mean = s.at("freq_mean").get<std::vector<double>>();
    stats_.freq_std = s.at("freq_std").get<std::vector<double>>();
    if (stats_.geom_mean.size() != kGeometryDims || stats_.freq_mean.size() != kFftDims) {
      throw ShapeError("checkpoint standardisation stats have the wrong length");
    }
  }
}

template <typename T>
TensorT<T> AttributionModel<T>::classify(const TensorT<T>& pooled) {
  return nn::linear(pooled, param("head.w"), param("head.b"));
}

template <typename T>
BlockParams<T> AttributionModel<T>::add_block(const std::string& prefix) {
  const std::size_t d = static_cast<std::size_t>(config_.d);
  const std::size_t h = d * static_cast<std::size_t>(config_.mlp_ratio);
  BlockParams<T> b;
  b.ln1_g = add_const(prefix + ".ln1.g", {d}, T(1));
  b.ln1_b = add_const(prefix + ".ln1.b", {d}, T(0));
  b.w_qkv = add_param(prefix + ".attn.qkv.w", {d, 3 * d}, 0.02);
  b.b_qkv = add_const(prefix + ".attn.qkv.b", {3 * d}, T(0));
  b.w_o = add_param(prefix + ".attn.out.w", {d, d}, 0.02);
  b.b_o = add_const(prefix + ".attn.out.b", {d}, T(0));
  b.ln2_g = add_const(prefix + ".ln2.g", {d}, T(1));
  b.ln2_b = add_const(prefix + ".ln2.b", {d}, T(0));
  b.w_1 = add_param(prefix + ".mlp.fc1.w", {d, h}, 0.02);
  b.b_1 = add_const(prefix + ".mlp.fc1.b", {h}, T(0));
  b.w_2 = add_param(prefix + ".mlp.fc2.w", {h, d}, 0.02);
  b.b_2 = add_const(prefix + ".mlp.fc2.b", {d}, T(0));
  return b;
}

template <typename T>
TensorT<T> AttributionModel<T>::dropout(const TensorT<T>& x, const ForwardOptions& opts, std::uint64_t site) const {
  return nn::dropout(x, config_.dropout, derive_seed(opts.seed, site), opts.training);
}

template <typename T>
TensorT<T> AttributionModel<T>::block(const BlockParams<T>& p, const TensorT<T>& x,
                                      const std::vector<std::uint8_t>& valid, const ForwardOptions& opts,
                                      std::uint64_t site) {
  const std::size_t N = x.dim(0), S = x.dim(1), d = x.dim(2);
  const std::size_t H = static_cast<std::size_t>(config_.heads), dh = d / H;
  const auto h = nn::layer_norm(x, p.ln1_g, p.ln1_b);
  const auto qkv = nn::linear(h, p.w_qkv, p.b_qkv);
  auto heads = [&](std::size_t k) {
    return nn::transpose(nn::reshape(nn::slice(qkv, 2, k * d, d), {N, S, H, dh}), 1, 2);
  };
  const auto q = heads(0), k = heads(1), v = heads(2);
  auto scores = nn::scale(nn::matmul(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  if (!valid.empty()) scores = nn::mask_keys(scores, valid);
  const auto attn = dropout(nn::softmax(scores), opts, derive_seed(site, 1));
  const auto ctx = nn::reshape(nn::transpose(nn::matmul(attn, v), 1, 2), {N, S, d});
  auto y = nn::add(x, dropout(nn::linear(ctx, p.w_o, p.b_o), opts, derive_seed(site, 2)));
  const auto h2 = nn::layer_norm(y, p.ln2_g, p.ln2_b);
  const auto m = nn::linear(nn::gelu(nn::linear(h2, p.w_1, p.b_1)), p.w_2, p.b_2);
  return nn::add(y, dropout(m, opts, derive_seed(site, 3)));
}

template <typename T>
TensorT<T> AttributionModel<T>::row(const TensorT<T>& table, std::size_t k) const {
  return nn::reshape(nn::slice(table, 0, k, 1), {table.dim(1)});
}

template <typename T>
TensorT<T> AttributionModel<T>::project_images(const std::vector<const Image*>& images, const std::string& prefix) {
  const int res = config_.resolution, ps = config_.patch, grid = res / ps;
  const std::size_t P = static_cast<std::size_t>(config_.patch_dims());
  std::vector<T> means(images.size() * P, T(0));
  const double inv = 1.0 / (grid * grid);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.width != res || img.height != res || img.channels != 3) {
      throw ShapeError("encode_image: expected " + std::to_string(res) + "x" + std::to_string(res) + "x3, got " +
                       std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                       std::to_string(img.channels));
    }
    std::vector<double> acc(P, 0.0);
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        const std::size_t base = static_cast<std::size_t>(((y % ps) * ps + (x % ps)) * 3);
        for (int c = 0; c < 3; ++c) acc[base + static_cast<std::size_t>(c)] += img.at(y, x, c);
      }
    }
    for (std::size_t i = 0; i < P; ++i) means[n * P + i] = static_cast<T>(acc[i] * inv);
  }
  const auto X = TensorT<T>::from({images.size(), P}, std::move(means));
  const auto tok = nn::linear(X, param(prefix + ".proj.w"), param(prefix + ".proj.b"));
  return nn::add(tok, nn::mean_pool(param(prefix + ".pos"), 0));
}

template <typename T>
TensorT<T> AttributionModel<T>::encode_text(const std::vector<const std::string*>& texts) {
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets{0};
  for (const std::string* t : texts) {
    const auto h = hash_tokens(*t, config_.text_buckets);
    ids.insert(ids.end(), h.begin(), h.end());
    offsets.push_back(ids.size());
  }
  const auto bag = nn::embedding_bag(param("text.emb"), ids, offsets);
  return nn::linear(nn::gelu(bag), param("text.w"), param("text.b"));
}

template <typename T>
bool AttributionModel<T>::use_metadata(const ModelSample& s, std::size_t index, const ForwardOptions& opts) const {
  if (s.meta.kind == MetaKind::none || config_.p_meta >= 1.0) return false;
  if (!opts.training || config_.p_meta <= 0.0) return true;
  Rng rng(derive_seed(opts.seed, kMetaDropStream, index));
  return !rng.bernoulli(config_.p_meta);
}

template <typename T>
TensorT<T> AttributionModel<T>::metadata_tokens(const std::vector<const ModelSample*>& batch,
                                                const ForwardOptions& opts, std::vector<std::uint8_t>& present) {
  const std::size_t B = batch.size(), d = static_cast<std::size_t>(config_.d);
  present.assign(B, 0);
  std::vector<const std::string*> texts;
  std::vector<const Image*> images;
  std::vector<int> kind(B, 0);  // 0 none, 1 text, 2 image
  for (std::size_t i = 0; i < B; ++i) {
    if (!use_metadata(*batch[i], i, opts)) continue;
    present[i] = 1;
    if (batch[i]->meta.kind == MetaKind::text) {
      kind[i] = 1;
      texts.push_back(&batch[i]->meta.text);
    } else {
      kind[i] = 2;
      images.push_back(&batch[i]->meta.image);
    }
  }
  if (texts.empty() && images.empty()) return {};
  const auto& mod = param("modality.emb");
  TensorT<T> text_tok, image_tok;
  if (!texts.empty()) text_tok = nn::add(encode_text(texts), row(mod, kMetaText));
  if (!images.empty()) image_tok = nn::add(project_images(images, "rgb"), row(mod, kMetaImage));
  const auto zero = TensorT<T>::zeros({1, d});
  std::vector<TensorT<T>> rows;
  std::size_t ti = 0, ii = 0;
  for (std::size_t i = 0; i < B; ++i) {
    if (kind[i] == 1) {
      rows.push_back(nn::slice(text_tok, 0, ti++, 1));
    } else if (kind[i] == 2) {
      rows.push_back(nn::slice(image_tok, 0, ii++, 1));
    } else {
      rows.push_back(zero);
    }
  }
  return nn::concat(rows, 0);
}

namespace {

void check_sample(const ModelSample& s, const ModelConfig& c) {
  const std::size_t V = static_cast<std::size_t>(c.views);
  if (c.has("rgb") && s.rgb.size() != V) throw ShapeError("sample has " + std::to_string(s.rgb.size()) + " rgb views");
  if (c.has("normal") && s.normal.size() != V) {
    throw ShapeError("sample has " + std::to_string(s.normal.size()) + " normal views");
  }
  if (c.architecture == "hierarchical" && c.has("freq") && s.freq.size() != V) {
    throw ShapeError("sample has " + std::to_string(s.freq.size()) + " fft views");
  }
}

template <typename T>
TensorT<T> to_tensor(const std::vector<double>& v, const Shape& shape) {
  return TensorT<T>::from(shape, std::vector<T>(v.begin(), v.end()));
}

}  // namespace

// ---- hierarchical -----------------------------------------------------------------

template <typename T>
HierarchicalModel<T>::HierarchicalModel(ModelConfig config, std::uint64_t seed)
    : AttributionModel<T>(std::move(config), seed) {
  const auto& c = this->config_;
  const std::size_t d = static_cast<std::size_t>(c.d), V = static_cast<std::size_t>(c.views);
  this->add_param("view.emb", {V, d}, 0.02);
  this->add_param("view.cls", {d}, 0.02);
  this->add_param("global.cls", {d}, 0.02);
  this->add_param("cross.pos", {V, d}, 0.02);
  if (c.has("geom")) {
    this->add_param("geom.fc1.w", {kGeometryDims, d}, 0.02);
    this->add_const("geom.fc1.b", {d}, T(0));
    this->add_param("geom.fc2.w", {d, d}, 0.02);
    this->add_const("geom.fc2.b", {d}, T(0));
  }
  if (c.has("freq")) {
    this->add_param("freq.fc1.w", {kFftDims, d}, 0.02);
    this->add_const("freq.fc1.b", {d}, T(0));
    this->add_param("freq.fc2.w", {d, d}, 0.02);
    this->add_const("freq.fc2.b", {d}, T(0));
  }
  this->add_const("intra.ln.g", {d}, T(1));
  this->add_const("intra.ln.b", {d}, T(0));
  for (int l = 0; l < c.intra_layers; ++l) intra_.push_back(this->add_block("intra." + std::to_string(l)));
  for (int l = 0; l < c.cross_layers; ++l) cross_.push_back(this->add_block("cross." + std::to_string(l)));
}

template <typename T>
TensorT<T> HierarchicalModel<T>::encode_image(const std::vector<const Image*>& images, Modality modality,
                                              const std::vector<int>& views) {
  const std::string prefix = modality == kNormal ? "normal" : "rgb";
  auto tok = nn::add(this->project_images(images, prefix), this->row(this->param("modality.emb"), modality));
  if (!views.empty() && views.front() >= 0) {
    std::vector<std::uint32_t> ids(views.begin(), views.end());
    tok = nn::add(tok, nn::embedding_lookup(this->param("view.emb"), ids));
  }
  return tok;
}

template <typename T>
TensorT<T> HierarchicalModel<T>::encode_geom(const TensorT<T>& rows, const std::vector<int>& views) {
  if (rows.rank() != 2 || rows.dim(1) != kGeometryDims) {
    throw ShapeError("encode_geom: expected [N, 102], got " + nn::shape_str(rows.shape()));
  }
  auto h = nn::gelu(nn::linear(rows, this->param("geom.fc1.w"), this->param("geom.fc1.b")));
  auto tok = nn::add(nn::linear(h, this->param("geom.fc2.w"), this->param("geom.fc2.b")),
                     this->row(this->param("modality.emb"), kGeom));
  if (!views.empty() && views.front() >= 0) {
    tok = nn::add(tok, nn::embedding_lookup(this->param("view.emb"), std::vector<std::uint32_t>(views.begin(), views.end())));
  }
  return tok;
}

template <typename T>
TensorT<T> HierarchicalModel<T>::encode_freq(const TensorT<T>& rows, const std::vector<int>& views) {
  if (rows.rank() != 2 || rows.dim(1) != kFftDims) {
    throw ShapeError("encode_freq: expected [N, 256], got " + nn::shape_str(rows.shape()));
  }
  auto h = nn::gelu(nn::linear(rows, this->param("freq.fc1.w"), this->param("freq.fc1.b")));
  auto tok = nn::add(nn::linear(h, this->param("freq.fc2.w"), this->param("freq.fc2.b")),
                     this->row(this->param("modality.emb"), kFreq));
  if (!views.empty() && views.front() >= 0) {
    tok = nn::add(tok, nn::embedding_lookup(this->param("view.emb"), std::vector<std::uint32_t>(views.begin(), views.end())));
  }
  return tok;
}

template <typename T>
TensorT<T> HierarchicalModel<T>::encode_metadata(const std::vector<const ModelSample*>& batch,
                                                 const ForwardOptions& opts, std::vector<std::uint8_t>& present) {
  return this->metadata_tokens(batch, opts, present);
}

template <typename T>
TensorT<T> HierarchicalModel<T>::intra_view_fuse(const TensorT<T>& tokens, const ForwardOptions& opts) {
  TensorT<T> x = tokens;
  for (std::size_t l = 0; l < intra_.size(); ++l) x = this->block(intra_[l], x, {}, opts, 100 + l);
  return nn::reshape(nn::slice(x, 1, 0, 1), {x.dim(0), x.dim(2)});
}

template <typename T>
TensorT<T> HierarchicalModel<T>::cross_view_fuse(const TensorT<T>& views, const TensorT<T>* meta,
                                                 const std::vector<std::uint8_t>& present, const ForwardOptions& opts) {
  const std::size_t B = views.dim(0), V = views.dim(1), d = views.dim(2);
  auto e = nn::layer_norm(views, this->param("intra.ln.g"), this->param("intra.ln.b"));
  const auto& pos = this->param("cross.pos");
  e = nn::add(e, nn::tile(nn::slice(pos, 0, 0, V), B));
  std::vector<TensorT<T>> parts{nn::reshape(nn::tile(this->param("global.cls"), B), {B, 1, d}), e};
  std::vector<std::uint8_t> valid;
  if (meta != nullptr && meta->defined()) {
    parts.push_back(nn::reshape(*meta, {B, 1, d}));
    const std::size_t S = V + 2;
    valid.assign(B * S, 1);
    for (std::size_t b = 0; b < B; ++b) valid[b * S + S - 1] = present[b];
  }
  auto x = nn::concat(parts, 1);
  for (std::size_t l = 0; l < cross_.size(); ++l) x = this->block(cross_[l], x, valid, opts, 200 + l);
  const auto cls = nn::reshape(nn::slice(x, 1, 0, 1), {B, d});
  return nn::layer_norm(cls, this->param("final.ln.g"), this->param("final.ln.b"));
}

template <typename T>
TensorT<T> HierarchicalModel<T>::forward(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts) {
  const auto& c = this->config_;
  const std::size_t B = batch.size(), V = static_cast<std::size_t>(c.views), G = B * V;
  const std::size_t d = static_cast<std::size_t>(c.d);
  if (B == 0) throw ShapeError("forward: empty batch");
  for (const auto* s : batch) check_sample(*s, c);
  std::vector<int> vids(G);
  for (std::size_t g = 0; g < G; ++g) vids[g] = static_cast<int>(g % V);
  const std::vector<std::uint32_t> vids_u(vids.begin(), vids.end());

  std::vector<TensorT<T>> tokens;
  tokens.push_back(nn::add(nn::tile(this->param("view.cls"), G), nn::embedding_lookup(this->param("view.emb"), vids_u)));
  for (Modality m : {kRgb, kNormal}) {
    if (!c.has(m == kRgb ? "rgb" : "normal")) continue;
    std::vector<const Image*> imgs;
    for (const auto* s : batch) {
      for (std::size_t v = 0; v < V; ++v) imgs.push_back(m == kRgb ? &s->rgb[v] : &s->normal[v]);
    }
    tokens.push_back(encode_image(imgs, m, vids));
  }
  if (c.has("geom")) {
    std::vector<double> rows;
    rows.reserve(G * kGeometryDims);
    for (const auto* s : batch) {
      const auto g = this->stats_.geom(*s);
      for (std::size_t v = 0; v < V; ++v) rows.insert(rows.end(), g.begin(), g.end());
    }
    tokens.push_back(encode_geom(to_tensor<T>(rows, {G, kGeometryDims}), vids));
  }
  if (c.has("freq")) {
    std::vector<double> rows;
    rows.reserve(G * kFftDims);
    for (const auto* s : batch) {
      for (std::size_t v = 0; v < V; ++v) {
        const auto f = this->stats_.freq(*s, v);
        rows.insert(rows.end(), f.begin(), f.end());
      }
    }
    tokens.push_back(encode_freq(to_tensor<T>(rows, {G, kFftDims}), vids));
  }
  for (auto& t : tokens) t = nn::reshape(t, {G, 1, d});
  const auto seq = nn::concat(tokens, 1);
  const auto views = nn::reshape(intra_view_fuse(seq, opts), {B, V, d});
  std::vector<std::uint8_t> present;
  const auto meta = encode_metadata(batch, opts, present);
  return this->classify(cross_view_fuse(views, &meta, present, opts));
}

// ---- grid baseline --------------------------------------------------------------

template <typename T>
GridModel<T>::GridModel(ModelConfig config, std::uint64_t seed) : AttributionModel<T>(std::move(config), seed) {
  const auto& c = this->config_;
  const std::size_t d = static_cast<std::size_t>(c.d), V = static_cast<std::size_t>(c.views);
  const std::size_t per_view = (c.has("rgb") ? 1 : 0) + (c.has("normal") ? 1 : 0);
  if (per_view == 0) throw InputError("grid baseline needs rgb or normal renderings");
  this->add_param("grid.cls", {d}, 0.02);
  this->add_param("grid.slot_pos", {2 + per_view * V, d}, 0.02);
  for (int l = 0; l < c.intra_layers + c.cross_layers; ++l) blocks_.push_back(this->add_block("grid." + std::to_string(l)));
}

template <typename T>
TensorT<T> GridModel<T>::forward(const std::vector<const ModelSample*>& batch, const ForwardOptions& opts) {
  const auto& c = this->config_;
  const std::size_t B = batch.size(), V = static_cast<std::size_t>(c.views), d = static_cast<std::size_t>(c.d);
  if (B == 0) throw ShapeError("forward: empty batch");
  for (const auto* s : batch) check_sample(*s, c);
  const auto& mod = this->param("modality.emb");
  std::vector<TensorT<T>> per_view;
  for (Modality m : {kRgb, kNormal}) {
    const std::string name = m == kRgb ? "rgb" : "normal";
    if (!c.has(name)) continue;
    std::vector<const Image*> imgs;
    for (const auto* s : batch) {
      for (std::size_t v = 0; v < V; ++v) imgs.push_back(m == kRgb ? &s->rgb[v] : &s->normal[v]);
    }
    per_view.push_back(nn::reshape(nn::add(this->project_images(imgs, name), this->row(mod, m)), {B, V, 1, d}));
  }
  const std::size_t k = per_view.size();
  const auto grid = nn::reshape(per_view.size() == 1 ? per_view[0] : nn::concat(per_view, 2), {B, V * k, d});
  std::vector<TensorT<T>> parts{nn::reshape(nn::tile(this->param("grid.cls"), B), {B, 1, d}), grid};
  std::vector<std::uint8_t> present;
  const auto meta = this->metadata_tokens(batch, opts, present);
  std::vector<std::uint8_t> valid;
  if (meta.defined()) {
    parts.push_back(nn::reshape(meta, {B, 1, d}));
    const std::size_t S = V * k + 2;
    valid.assign(B * S, 1);
    for (std::size_t b = 0; b < B; ++b) valid[b * S + S - 1] = present[b];
  }
  auto x = nn::concat(parts, 1);
  const std::size_t S = x.dim(1);
  x = nn::add(x, nn::tile(nn::slice(this->param("grid.slot_pos"), 0, 0, S), B));
  for (std::size_t l = 0; l < blocks_.size(); ++l) x = this->block(blocks_[l], x, valid, opts, 300 + l);
  const auto cls = nn::reshape(nn::slice(x, 1, 0, 1), {B, d});
  return this->classify(nn::layer_norm(cls, this->param("final.ln.g"), this->param("final.ln.b")));
}

template <typename T>
std::unique_ptr<AttributionModel<T>> make_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.architecture == "grid") return std::make_unique<GridModel<T>>(config, seed);
  return std::make_unique<HierarchicalModel<T>>(config, seed);
}

template class AttributionModel<float>;
template class AttributionModel<double>;
template class HierarchicalModel<float>;
template class HierarchicalModel<double>;
template class GridModel<float>;
template class GridModel<double>;
template std::unique_ptr<AttributionModel<float>> make_model<float>(const ModelConfig&, std::uint64_t);
template std::unique_ptr<AttributionModel<double>> make_model<double>(const ModelConfig&, std::uint64_t);

}  // namespace attrib3d
