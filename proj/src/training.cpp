#include "attrib3d/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "attrib3d/errors.hpp"
#include "attrib3d/optim.hpp"
#include "attrib3d/parallel.hpp"
#include "attrib3d/rng.hpp"

namespace attrib3d {

namespace {

constexpr std::uint64_t kSplitStream = 0x53504c54ull;
constexpr std::uint64_t kFewShotStream = 0x46455753ull;
constexpr std::uint64_t kModelStream = 0x4d4f444cull;
constexpr std::uint64_t kEpochStream = 0x45504f43ull;
constexpr std::uint64_t kAugmentStream = 0x41554753ull;
constexpr std::uint64_t kDropoutStream = 0x44524f50ull;
constexpr std::uint64_t kMixStream = 0x4d495852ull;

template <typename V>
void shuffle(V& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

}  // namespace

// ---- protocols ------------------------------------------------------------------

std::string to_string(PromptMode m) {
  switch (m) {
    case PromptMode::full: return "full";
    case PromptMode::sparse: return "sparse";
    case PromptMode::empty: return "empty";
    case PromptMode::empty_star: return "empty_star";
  }
  return "full";
}

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "full") return PromptMode::full;
  if (s == "sparse") return PromptMode::sparse;
  if (s == "empty") return PromptMode::empty;
  if (s == "empty_star") return PromptMode::empty_star;
  throw InputError("unknown prompt mode " + s);
}

ProtocolConfig ProtocolConfig::preset(const std::string& name) {
  ProtocolConfig p;
  p.name = name;
  if (name == "standard") return p;
  if (name == "few_shot") {
    p.data_fraction = 0.01;
  } else if (name == "missing_prompt") {
    p.prompt_mode = PromptMode::empty;
  } else if (name == "noisy_prompt") {
    p.image_noise_sigma = 96;
  } else if (name == "masked_prompt") {
    p.mask_ratio = 0.9;
  } else if (name == "real_synthetic") {
    p.include_real = true;
  } else {
    throw InputError("unknown protocol " + name);
  }
  return p;
}

void ProtocolConfig::check() const {
  if (!(data_fraction > 0 && data_fraction <= 1)) throw InputError("data_fraction must be in (0, 1]");
  if (sparse_words < 0) throw InputError("sparse_words must be >= 0");
  if (!(image_noise_sigma >= 0) || !std::isfinite(image_noise_sigma)) throw InputError("sigma must be >= 0");
  if (!(mask_ratio >= 0 && mask_ratio <= 1)) throw InputError("mask ratio must be in [0, 1]");
}

nlohmann::json ProtocolConfig::to_json() const {
  return {{"name", name},
          {"data_fraction", data_fraction},
          {"prompt_mode", to_string(prompt_mode)},
          {"sparse_words", sparse_words},
          {"image_noise_sigma", image_noise_sigma},
          {"mask_ratio", mask_ratio},
          {"include_real", include_real},
          {"seed", seed}};
}

ProtocolConfig ProtocolConfig::from_json(const nlohmann::json& j) {
  ProtocolConfig p = preset(j.value("name", std::string("standard")));
  p.data_fraction = j.value("data_fraction", p.data_fraction);
  p.prompt_mode = prompt_mode_from_string(j.value("prompt_mode", to_string(p.prompt_mode)));
  p.sparse_words = j.value("sparse_words", p.sparse_words);
  p.image_noise_sigma = j.value("image_noise_sigma", p.image_noise_sigma);
  p.mask_ratio = j.value("mask_ratio", p.mask_ratio);
  p.include_real = j.value("include_real", p.include_real);
  p.seed = j.value("seed", p.seed);
  p.check();
  return p;
}

std::string sparse_prompt(const std::string& text, int k) {
  std::istringstream in(text);
  std::string word, out;
  for (int i = 0; i < k && in >> word; ++i) {
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

Image noisy_image(const Image& img, double sigma, std::uint64_t seed) {
  Image out = img;
  if (sigma <= 0) return out;
  Rng rng(seed);
  const double s = sigma / 255.0;
  for (float& v : out.data) v = static_cast<float>(std::clamp(v + rng.normal() * s, 0.0, 1.0));
  return out;
}

Image masked_image(const Image& img, double ratio, std::uint64_t seed) {
  Image out = img;
  if (ratio <= 0 || img.width == 0) return out;
  const int side_max = std::min(img.width, img.height);
  const int side = std::min(side_max, static_cast<int>(std::lround(std::sqrt(ratio) * side_max)));
  if (side == 0) return out;
  Rng rng(seed);
  const int x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(img.width - side + 1)));
  const int y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(img.height - side + 1)));
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) {
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = 0.0f;
    }
  }
  return out;
}

// ---- metrics --------------------------------------------------------------------

namespace {

void finish_macro(Metrics& m, const std::vector<int>& classes) {
  double p = 0, r = 0, f = 0, n = 0;
  std::size_t correct = 0, total = 0;
  for (int c : classes) {
    const auto& pc = m.per_class[static_cast<std::size_t>(c)];
    if (pc.support == 0) continue;
    p += pc.precision;
    r += pc.recall;
    f += pc.f1;
    n += 1;
    correct += m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    total += pc.support;
  }
  m.macro_precision = n > 0 ? p / n : 0;
  m.macro_recall = n > 0 ? r / n : 0;
  m.macro_f1 = n > 0 ? f / n : 0;
  m.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0;
}

}  // namespace

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                        const std::vector<std::string>& classes) {
  if (truth.size() != predicted.size()) throw ShapeError("truth and prediction counts differ");
  const std::size_t C = classes.size();
  Metrics m;
  m.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= C || predicted[i] < 0 ||
        static_cast<std::size_t>(predicted[i]) >= C) {
      throw LabelError("label out of range at sample " + std::to_string(i));
    }
    ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  for (std::size_t c = 0; c < C; ++c) {
    ClassMetrics pc;
    pc.name = classes[c];
    std::size_t col = 0;
    for (std::size_t r = 0; r < C; ++r) col += m.confusion[r][c];
    pc.support = std::accumulate(m.confusion[c].begin(), m.confusion[c].end(), std::size_t{0});
    const double tp = static_cast<double>(m.confusion[c][c]);
    pc.precision = col > 0 ? tp / static_cast<double>(col) : 0.0;
    pc.recall = pc.support > 0 ? tp / static_cast<double>(pc.support) : 0.0;
    pc.f1 = pc.precision + pc.recall > 0 ? 2 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
    m.per_class.push_back(pc);
  }
  std::vector<int> all(C);
  std::iota(all.begin(), all.end(), 0);
  finish_macro(m, all);
  return m;
}

Metrics restrict_metrics(const Metrics& full, const std::vector<int>& classes) {
  Metrics m = full;
  finish_macro(m, classes);
  Metrics out;
  out.accuracy = m.accuracy;
  out.macro_precision = m.macro_precision;
  out.macro_recall = m.macro_recall;
  out.macro_f1 = m.macro_f1;
  for (int r : classes) {
    out.per_class.push_back(full.per_class[static_cast<std::size_t>(r)]);
    std::vector<std::size_t> row;
    for (int c : classes) row.push_back(full.confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
    out.confusion.push_back(row);
  }
  return out;
}

std::vector<std::vector<double>> Metrics::row_normalized() const {
  std::vector<std::vector<double>> out;
  for (const auto& row : confusion) {
    const double n = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
    std::vector<double> r(row.size(), 0.0);
    if (n > 0) {
      for (std::size_t c = 0; c < row.size(); ++c) r[c] = static_cast<double>(row[c]) / n;
    }
    out.push_back(r);
  }
  return out;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : per_class) {
    classes.push_back(
        {{"class", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  return {{"accuracy", accuracy},
          {"precision", macro_precision},
          {"recall", macro_recall},
          {"f1", macro_f1},
          {"per_class", classes},
          {"confusion", confusion},
          {"confusion_normalized", row_normalized()}};
}

std::string Metrics::confusion_csv(bool normalized) const {
  std::ostringstream out;
  out.precision(17);
  out << "true\\pred";
  for (const auto& c : per_class) out << ',' << c.name;
  out << '\n';
  const auto norm = row_normalized();
  for (std::size_t r = 0; r < confusion.size(); ++r) {
    out << per_class[r].name;
    for (std::size_t c = 0; c < confusion[r].size(); ++c) {
      out << ',';
      if (normalized) {
        out << norm[r][c];
      } else {
        out << confusion[r][c];
      }
    }
    out << '\n';
  }
  return out.str();
}

// ---- data -----------------------------------------------------------------------

Split stratified_split(const std::vector<int>& labels, int num_classes, double test_fraction, std::uint64_t seed,
                       const std::vector<std::string>& class_names) {
  if (!(test_fraction >= 0 && test_fraction < 1)) throw InputError("test fraction must be in [0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw LabelError("label out of range at " + std::to_string(i));
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Split s;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    const std::size_t n = members.size();
    if (n == 0) {
      const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
      throw SplitError("class " + name + " has no training samples");
    }
    Rng rng(derive_seed(seed, kSplitStream, c));
    shuffle(members, rng);
    std::size_t n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
    if (n >= 2 && test_fraction > 0) n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    if (n < 2) n_test = 0;
    s.test.insert(s.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<std::size_t> few_shot_subset(const std::vector<std::size_t>& pool, const std::vector<int>& labels,
                                         int num_classes, double fraction, std::uint64_t seed,
                                         const std::vector<std::size_t>& reference_counts) {
  if (!(fraction > 0 && fraction <= 1)) throw InputError("few-shot fraction must be in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i : pool) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    const std::size_t ref = c < reference_counts.size() ? reference_counts[c] : members.size();
    std::size_t k = static_cast<std::size_t>(std::floor(static_cast<double>(ref) * fraction + 1e-9));
    k = std::clamp<std::size_t>(k, 1, members.size());
    Rng rng(derive_seed(seed, kFewShotStream, c));
    shuffle(members, rng);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset mix_real(const Dataset& synthetic, const std::vector<AssetRecord>& real, std::uint64_t seed) {
  if (synthetic.labels.kind != LabelKind::synthetic) throw LabelSpaceError("dataset already has a real class");
  Dataset out = synthetic;
  out.labels = LabelSpace::mixed(synthetic.labels.generators());
  out.config.include_real = true;
  for (const auto& r : real) {
    if (r.label != "r") throw LabelSpaceError("real asset " + r.id + " is labeled " + r.label);
    out.assets.push_back(r);
  }
  bool have_real_profile = false;
  for (const auto& p : out.profiles) have_real_profile |= p.id == "real";
  if (!real.empty() && !have_real_profile) out.profiles.push_back(real_profile());
  Rng rng(derive_seed(seed, kMixStream));
  shuffle(out.assets, rng);
  return out;
}

ModelSample make_sample(const AssetRecord& record, const ProtocolConfig& protocol, const SampleOptions& options,
                        std::size_t index) {
  ModelSample s;
  Rng aug(options.augment_seed);
  for (std::size_t v = 0; v < record.rgb.size(); ++v) {
    Image img = dequantize(record.rgb[v]);
    if (options.augment) img = augment(img, options.flip, options.jitter, aug.next());
    s.rgb.push_back(std::move(img));
    s.normal.push_back(dequantize(record.normal[v]));
  }
  s.geom = record.geometry.flatten();
  s.freq = record.frequency.per_view;
  const bool no_prompt = protocol.prompt_mode == PromptMode::empty || protocol.prompt_mode == PromptMode::empty_star;
  if (no_prompt || options.metadata == "none") return s;
  if (options.metadata == "text") {
    s.meta.kind = MetaKind::text;
    s.meta.text = protocol.prompt_mode == PromptMode::sparse ? sparse_prompt(record.prompt, protocol.sparse_words)
                                                             : record.prompt;
  } else if (options.metadata == "image") {
    if (record.prompt_image.width == 0) return s;
    s.meta.kind = MetaKind::image;
    Image img = dequantize(record.prompt_image);
    img = noisy_image(img, protocol.image_noise_sigma, derive_seed(protocol.seed, index, 1));
    img = masked_image(img, protocol.mask_ratio, derive_seed(protocol.seed, index, 2));
    s.meta.image = std::move(img);
  } else {
    throw InputError("unknown metadata mode " + options.metadata);
  }
  return s;
}

// ---- training ----------------------------------------------------------------------

void TrainConfig::check() const {
  if (epochs < 1) throw InputError("epochs must be positive");
  if (batch_size < 1) throw InputError("batch_size must be positive");
  if (min_steps < 0) throw InputError("min_steps must be >= 0");
  if (!(lr > 0)) throw InputError("lr must be positive");
  if (!(weight_decay >= 0)) throw InputError("weight_decay must be >= 0");
  if (!(test_fraction > 0 && test_fraction < 1)) throw InputError("test_fraction must be in (0, 1)");
  if (!(flip_probability >= 0 && flip_probability <= 1)) throw InputError("flip_probability must be in [0, 1]");
  if (!(jitter >= 0 && jitter < 1)) throw InputError("jitter must be in [0, 1)");
  if (jobs < 1) throw InputError("jobs must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},           {"batch_size", batch_size},         {"min_steps", min_steps},
          {"lr", lr},                   {"weight_decay", weight_decay},     {"test_fraction", test_fraction},
          {"flip_probability", flip_probability}, {"jitter", jitter},       {"seed", seed},
          {"eval_each_epoch", eval_each_epoch}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.min_steps = j.value("min_steps", c.min_steps);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.flip_probability = j.value("flip_probability", c.flip_probability);
  c.jitter = j.value("jitter", c.jitter);
  c.seed = j.value("seed", c.seed);
  c.eval_each_epoch = j.value("eval_each_epoch", c.eval_each_epoch);
  c.check();
  return c;
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"train_loss", train_loss}, {"train_accuracy", train_accuracy}, {"lr", lr}};
  if (test_accuracy >= 0) {
    j["test_accuracy"] = test_accuracy;
    j["test_macro_f1"] = test_macro_f1;
  }
  return j;
}

namespace {

// Label space the protocol runs in, and the dataset indices that take part.
struct ProtocolView {
  LabelSpace labels;
  std::vector<std::size_t> indices;
  std::vector<int> label_of;  // per dataset index, -1 when excluded
};

ProtocolView protocol_view(const Dataset& ds, const ProtocolConfig& protocol) {
  ProtocolView v;
  if (protocol.include_real && ds.labels.kind != LabelKind::mixed) {
    throw LabelSpaceError("protocol includes real assets but the dataset has no real class");
  }
  v.labels = ds.labels.kind == LabelKind::mixed && !protocol.include_real
                 ? LabelSpace::synthetic(ds.labels.generators())
                 : ds.labels;
  v.label_of.assign(ds.assets.size(), -1);
  for (std::size_t i = 0; i < ds.assets.size(); ++i) {
    const auto& name = ds.assets[i].label;
    if (std::find(v.labels.classes.begin(), v.labels.classes.end(), name) == v.labels.classes.end()) {
      if (name == "r") continue;
      throw LabelSpaceError("asset " + ds.assets[i].id + " has label " + name + " outside the label space");
    }
    v.label_of[i] = v.labels.id_of(name);
    v.indices.push_back(i);
  }
  return v;
}

struct Batch {
  std::vector<ModelSample> samples;
  std::vector<std::uint32_t> labels;
};

std::vector<const ModelSample*> ptrs(const std::vector<ModelSample>& v) {
  std::vector<const ModelSample*> out;
  out.reserve(v.size());
  for (const auto& s : v) out.push_back(&s);
  return out;
}

ProtocolConfig train_protocol(const ProtocolConfig& p) {
  ProtocolConfig t;
  t.name = p.name;
  t.include_real = p.include_real;
  t.prompt_mode = p.prompt_mode == PromptMode::empty_star ? PromptMode::empty_star : PromptMode::full;
  return t;
}

Batch build_train_batch(const Dataset& ds, const std::vector<std::size_t>& items, const std::vector<int>& label_of,
                        const ProtocolConfig& protocol, const TrainConfig& cfg, const std::string& metadata,
                        std::int64_t step) {
  Batch b;
  for (std::size_t j = 0; j < items.size(); ++j) {
    const std::size_t i = items[j];
    Rng rng(derive_seed(derive_seed(cfg.seed, kAugmentStream), static_cast<std::uint64_t>(step), j));
    SampleOptions o;
    o.metadata = metadata;
    o.augment = true;
    o.flip = rng.bernoulli(cfg.flip_probability);
    o.jitter = cfg.jitter;
    o.augment_seed = rng.next();
    b.samples.push_back(make_sample(ds.assets[i], protocol, o, i));
    b.labels.push_back(static_cast<std::uint32_t>(label_of[i]));
  }
  return b;
}

std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train, const TrainConfig& cfg, int epoch) {
  std::vector<std::size_t> order = train;
  Rng rng(derive_seed(cfg.seed, kEpochStream, static_cast<std::uint64_t>(epoch)));
  shuffle(order, rng);
  return order;
}

}  // namespace

bool consumes_metadata(const ModelConfig& config) { return config.metadata != "none" && config.p_meta < 1.0; }

std::vector<double> softmax_probs(const float* logits, std::size_t n) {
  std::vector<double> p(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, static_cast<double>(logits[k]));
  double z = 0;
  for (std::size_t k = 0; k < n; ++k) z += (p[k] = std::exp(static_cast<double>(logits[k]) - mx));
  for (auto& x : p) x /= z;
  return p;
}

std::vector<Prediction> predict(AttributionModel<float>& model, const LabelSpace& model_labels, const Dataset& dataset,
                                const std::vector<std::size_t>& indices, const ProtocolConfig& protocol, int jobs,
                                int batch_size) {
  protocol.check();
  const ProtocolView view = protocol_view(dataset, protocol);
  if (!(view.labels == model_labels)) {
    throw LabelSpaceError("checkpoint label space does not match the dataset under protocol " + protocol.name);
  }
  const ModelConfig& mc = model.config();
  if (protocol.prompt_mode == PromptMode::empty_star && consumes_metadata(mc)) {
    throw StateError("empty_star evaluation needs a checkpoint trained without metadata");
  }
  for (std::size_t i : indices) {
    if (i >= dataset.assets.size()) throw InputError("asset index out of range");
  }
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  const std::size_t nb = (indices.size() + bs - 1) / bs;
  const std::size_t C = static_cast<std::size_t>(model_labels.size());
  std::vector<Prediction> out(indices.size());
  parallel_for(nb, jobs, [&](std::size_t b) {
    nn::NoGradGuard guard;
    const std::size_t lo = b * bs, hi = std::min(indices.size(), lo + bs);
    std::vector<ModelSample> samples;
    SampleOptions o;
    o.metadata = mc.metadata;
    for (std::size_t k = lo; k < hi; ++k) samples.push_back(make_sample(dataset.assets[indices[k]], protocol, o, indices[k]));
    const auto logits = model.forward(ptrs(samples), {});
    for (std::size_t k = lo; k < hi; ++k) {
      Prediction& p = out[k];
      p.index = indices[k];
      p.truth = view.label_of[indices[k]];
      p.probabilities = softmax_probs(logits.data().data() + (k - lo) * C, C);
      p.predicted = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                     p.probabilities.begin());
      p.metadata_used = samples[k - lo].meta.kind != MetaKind::none && consumes_metadata(mc);
    }
  });
  return out;
}

Prediction predict_record(AttributionModel<float>& model, const AssetRecord& record, const ProtocolConfig& protocol) {
  protocol.check();
  const ModelConfig& mc = model.config();
  if (protocol.prompt_mode == PromptMode::empty_star && consumes_metadata(mc)) {
    throw StateError("empty_star evaluation needs a checkpoint trained without metadata");
  }
  nn::NoGradGuard guard;
  SampleOptions o;
  o.metadata = mc.metadata;
  const ModelSample s = make_sample(record, protocol, o, 0);
  const auto logits = model.forward({&s}, {});
  Prediction p;
  p.probabilities = softmax_probs(logits.data().data(), static_cast<std::size_t>(mc.num_classes));
  p.predicted = static_cast<int>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                 p.probabilities.begin());
  p.metadata_used = s.meta.kind != MetaKind::none && consumes_metadata(mc);
  return p;
}

Metrics evaluate(AttributionModel<float>& model, const LabelSpace& model_labels, const Dataset& dataset,
                 const std::vector<std::size_t>& indices, const ProtocolConfig& protocol, int jobs) {
  const auto preds = predict(model, model_labels, dataset, indices, protocol, jobs);
  std::vector<int> truth, predicted;
  for (const auto& p : preds) {
    if (p.truth < 0) throw LabelSpaceError("asset outside the label space in evaluation set");
    truth.push_back(p.truth);
    predicted.push_back(p.predicted);
  }
  return compute_metrics(truth, predicted, model_labels.classes);
}

double initial_loss(AttributionModel<float>& model, const Dataset& dataset, const std::vector<std::size_t>& train,
                    const ProtocolConfig& protocol, const TrainConfig& config, int batches) {
  const ProtocolView view = protocol_view(dataset, protocol);
  const auto order = epoch_order(train, config, 0);
  const ProtocolConfig tp = train_protocol(protocol);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  nn::NoGradGuard guard;
  double total = 0;
  std::size_t n = 0;
  for (int b = 0; b < batches && static_cast<std::size_t>(b) * bs < order.size(); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * bs, hi = std::min(order.size(), lo + bs);
    const std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                        order.begin() + static_cast<std::ptrdiff_t>(hi));
    const Batch batch = build_train_batch(dataset, items, view.label_of, tp, config, model.config().metadata, b);
    const auto loss = nn::cross_entropy(model.forward(ptrs(batch.samples), {}), batch.labels);
    total += static_cast<double>(loss.item()) * static_cast<double>(items.size());
    n += items.size();
  }
  return n > 0 ? total / static_cast<double>(n) : 0.0;
}

TrainResult train(const ModelConfig& model_config, const Dataset& dataset, const ProtocolConfig& protocol,
                  const TrainConfig& config) {
  config.check();
  protocol.check();
  const ProtocolView view = protocol_view(dataset, protocol);
  TrainResult result;
  result.labels = view.labels;

  std::vector<int> local_labels;
  for (std::size_t i : view.indices) local_labels.push_back(view.label_of[i]);
  const int C = view.labels.size();
  const Split local = stratified_split(local_labels, C, config.test_fraction, config.seed, view.labels.classes);
  for (std::size_t i : local.train) result.split.train.push_back(view.indices[i]);
  for (std::size_t i : local.test) result.split.test.push_back(view.indices[i]);
  if (protocol.data_fraction < 1.0) {
    std::vector<std::size_t> totals(static_cast<std::size_t>(C), 0);
    for (int l : local_labels) ++totals[static_cast<std::size_t>(l)];
    result.split.train = few_shot_subset(result.split.train, view.label_of, C, protocol.data_fraction, config.seed,
                                         totals);
  }

  ModelConfig mc = model_config;
  if (mc.resolution != dataset.config.resolution || mc.views != dataset.config.views().views()) {
    throw InputError("model expects " + std::to_string(mc.views) + " views at " + std::to_string(mc.resolution) +
                     " px, dataset has " + std::to_string(dataset.config.views().views()) + " at " +
                     std::to_string(dataset.config.resolution));
  }
  mc.num_classes = C;
  if (protocol.prompt_mode == PromptMode::empty_star) mc.metadata = "none";
  result.model = make_model<float>(mc, derive_seed(config.seed, kModelStream));
  auto& model = *result.model;

  {
    std::vector<ModelSample> stats_samples;
    for (std::size_t i : result.split.train) {
      ModelSample s;
      s.geom = dataset.assets[i].geometry.flatten();
      s.freq = dataset.assets[i].frequency.per_view;
      stats_samples.push_back(std::move(s));
    }
    model.standardizer() = Standardizer::fit(ptrs(stats_samples));
  }

  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t n_train = result.split.train.size();
  const int steps_per_epoch = static_cast<int>((n_train + bs - 1) / bs);
  int epochs = config.epochs;
  if (config.min_steps > 0) epochs = std::max(epochs, (config.min_steps + steps_per_epoch - 1) / steps_per_epoch);
  nn::AdamWConfig oc;
  oc.lr = config.lr;
  oc.weight_decay = config.weight_decay;
  oc.total_steps = static_cast<std::int64_t>(epochs) * steps_per_epoch;
  nn::AdamW<float> opt(model.parameters(), oc);
  const ProtocolConfig tp = train_protocol(protocol);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = epoch_order(result.split.train, config, epoch);
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = opt.current_lr();
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      const std::vector<std::size_t> items(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                          order.begin() + static_cast<std::ptrdiff_t>(hi));
      const Batch batch = build_train_batch(dataset, items, view.label_of, tp, config, mc.metadata, step);
      ForwardOptions fo{true, derive_seed(config.seed, kDropoutStream, static_cast<std::uint64_t>(step))};
      const auto logits = model.forward(ptrs(batch.samples), fo);
      const auto loss = nn::check_finite(nn::cross_entropy(logits, batch.labels), "training loss");
      opt.zero_grad();
      nn::backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(items.size());
      for (std::size_t k = 0; k < items.size(); ++k) {
        const float* row = logits.data().data() + k * static_cast<std::size_t>(C);
        if (static_cast<std::uint32_t>(std::max_element(row, row + C) - row) == batch.labels[k]) ++correct;
      }
      ++step;
    }
    log.train_loss = loss_sum / static_cast<double>(n_train);
    log.train_accuracy = static_cast<double>(correct) / static_cast<double>(n_train);
    const bool last = epoch + 1 == epochs;
    if ((config.eval_each_epoch || last) && !result.split.test.empty()) {
      const Metrics m = evaluate(model, view.labels, dataset, result.split.test, protocol, config.jobs);
      log.test_accuracy = m.accuracy;
      log.test_macro_f1 = m.macro_f1;
      if (last) result.test_metrics = m;
    }
    result.log.push_back(log);
  }
  result.steps = static_cast<int>(step);
  return result;
}

// ---- checkpoints -----------------------------------------------------------------------

void save_checkpoint(const std::string& dir, const AttributionModel<float>& model, const LabelSpace& labels,
                     const nlohmann::json& info) {
  nn::Archive a = model.to_archive();
  a.meta["label_space"] = labels.to_json();
  a.meta["info"] = info;
  nn::save_archive(dir, a);
}

Checkpoint load_checkpoint(const std::string& dir) {
  const nn::Archive a = nn::load_archive(dir);
  if (!a.meta.contains("model_config") || !a.meta.contains("label_space")) {
    throw InputError(dir + ": archive is not a model checkpoint");
  }
  Checkpoint c;
  c.labels = LabelSpace::from_json(a.meta.at("label_space"));
  const ModelConfig mc = ModelConfig::from_json(a.meta.at("model_config"));
  if (mc.num_classes != c.labels.size()) throw LabelSpaceError("checkpoint head size differs from its label space");
  c.model = make_model<float>(mc, 0);
  c.model->load_archive(a);
  c.info = a.meta.value("info", nlohmann::json::object());
  return c;
}

}  // namespace attrib3d
