#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "attrib3d/errors.hpp"
#include "attrib3d/rng.hpp"
#include "attrib3d/training.hpp"
#include "doctest.h"

using namespace attrib3d;

namespace {

const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    BenchmarkConfig c;
    c.families = 2;
    c.per_family = 12;
    c.unknown = 1;
    c.include_real = true;
    c.resolution = 32;
    c.seed = 5;
    return generate_benchmark(c, 2);
  }();
  return ds;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.d = 16;
  m.heads = 2;
  m.intra_layers = 1;
  m.cross_layers = 1;
  m.resolution = 32;
  m.text_buckets = 64;
  m.mlp_ratio = 2;
  return m;
}

TrainConfig quick_train(int epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.lr = 3e-3;
  t.seed = 11;
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---- metrics ----------------------------------------------------------------------

TEST_CASE("perfect predictions give perfect metrics") {
  const std::vector<int> y = {0, 1, 2, 2, 1, 0};
  const auto m = compute_metrics(y, y, {"a", "b", "c"});
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_precision == 1.0);
  CHECK(m.macro_recall == 1.0);
  CHECK(m.macro_f1 == 1.0);
}

TEST_CASE("three-class confusion by hand") {
  // [[2,0,0],[0,1,1],[0,0,2]]
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  const std::vector<int> pred = {0, 0, 1, 2, 2, 2};
  const auto m = compute_metrics(truth, pred, {"a", "b", "c"});
  CHECK(m.confusion == std::vector<std::vector<std::size_t>>{{2, 0, 0}, {0, 1, 1}, {0, 0, 2}});
  CHECK(m.accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(m.macro_recall == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(m.macro_precision == doctest::Approx((1 + 1 + 2.0 / 3) / 3).epsilon(1e-15));
  CHECK(m.per_class[2].f1 == doctest::Approx(0.8).epsilon(1e-15));
  const auto rn = m.row_normalized();
  CHECK(rn[1][1] == 0.5);
  const auto csv = m.confusion_csv(false);
  CHECK(csv.find("true\\pred,a,b,c") == 0);
  CHECK(csv.find("b,0,1,1") != std::string::npos);
  CHECK_THROWS_AS(compute_metrics({0}, {3}, {"a", "b"}), LabelError);
}

TEST_CASE("macro-F1 matches a brute-force computation on random confusions") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int C = 2 + static_cast<int>(rng.index(6));
    const std::size_t n = 1 + rng.index(60);
    std::vector<int> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(C)));
      p[i] = rng.bernoulli(0.5) ? t[i] : static_cast<int>(rng.index(static_cast<std::uint64_t>(C)));
    }
    std::vector<std::string> names;
    for (int c = 0; c < C; ++c) names.push_back("c" + std::to_string(c));
    const auto m = compute_metrics(t, p, names);

    double f1_sum = 0, recall_sum = 0;
    int with_support = 0;
    std::size_t correct = 0;
    for (int c = 0; c < C; ++c) {
      int tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += t[i] == c && p[i] == c;
        fp += t[i] != c && p[i] == c;
        fn += t[i] == c && p[i] != c;
      }
      if (tp + fn == 0) continue;
      ++with_support;
      const double f1 = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
      f1_sum += f1;
      recall_sum += static_cast<double>(tp) / (tp + fn);
    }
    for (std::size_t i = 0; i < n; ++i) correct += t[i] == p[i];
    CHECK(m.macro_f1 == doctest::Approx(f1_sum / with_support).epsilon(1e-12));
    CHECK(m.macro_recall == doctest::Approx(recall_sum / with_support).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(static_cast<double>(correct) / n).epsilon(1e-15));
    for (const auto& row : m.row_normalized()) {
      const double s = std::accumulate(row.begin(), row.end(), 0.0);
      CHECK((s == 0.0 || std::abs(s - 1.0) < 1e-9));
    }
    for (double v : {m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1}) CHECK((v >= 0 && v <= 1));
  }
}

TEST_CASE("restricting metrics to a subset of classes") {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  const std::vector<int> pred = {0, 2, 1, 1, 2, 2};
  const auto full = compute_metrics(truth, pred, {"g1", "g2", "r"});
  const auto syn = restrict_metrics(full, {0, 1});
  CHECK(syn.accuracy == 0.75);
  CHECK(syn.macro_recall == 0.75);
  CHECK(syn.macro_f1 == doctest::Approx((2.0 / 3 + 1.0) / 2).epsilon(1e-15));
  CHECK(syn.per_class.size() == 2);
}

// ---- data handling ---------------------------------------------------------------------

TEST_CASE("stratified split keeps every class on both sides") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int C = 2 + static_cast<int>(rng.index(6));
    std::vector<int> labels;
    for (int c = 0; c < C; ++c) {
      const std::size_t n = 2 + rng.index(30);
      for (std::size_t k = 0; k < n; ++k) labels.push_back(c);
    }
    std::vector<int> perm_labels = labels;
    for (std::size_t i = perm_labels.size(); i > 1; --i) std::swap(perm_labels[i - 1], perm_labels[rng.index(i)]);
    const auto s = stratified_split(perm_labels, C, 0.2, trial);
    std::set<int> tr, te;
    for (auto i : s.train) tr.insert(perm_labels[i]);
    for (auto i : s.test) te.insert(perm_labels[i]);
    CHECK(static_cast<int>(tr.size()) == C);
    CHECK(static_cast<int>(te.size()) == C);
    CHECK(s.train.size() + s.test.size() == perm_labels.size());
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    const auto again = stratified_split(perm_labels, C, 0.2, trial);
    CHECK(again.train == s.train);
  }
  const std::vector<int> y(10, 0);
  CHECK(stratified_split(std::vector<int>(200, 0), 1, 0.2, 1).test.size() == 40);
  try {
    stratified_split(y, 3, 0.2, 1, {"g1", "g2", "u"});
    FAIL("expected SplitError");
  } catch (const SplitError& e) {
    CHECK(std::string(e.what()).find("g2") != std::string::npos);
  }
}

TEST_CASE("few-shot subsets") {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 200; ++k) labels.push_back(c);
  }
  std::vector<std::size_t> pool(labels.size());
  std::iota(pool.begin(), pool.end(), 0);
  CHECK(few_shot_subset(pool, labels, 3, 1.0, 4) == pool);
  const auto s = few_shot_subset(pool, labels, 3, 0.01, 4);
  CHECK(s.size() == 6);
  std::vector<int> per(3, 0);
  for (auto i : s) ++per[static_cast<std::size_t>(labels[i])];
  CHECK(per == std::vector<int>{2, 2, 2});
  CHECK(few_shot_subset(pool, labels, 3, 0.001, 4).size() == 3);
  CHECK(few_shot_subset(pool, labels, 3, 0.01, 4) == s);
  std::vector<std::size_t> complement;
  std::set_difference(pool.begin(), pool.end(), s.begin(), s.end(), std::back_inserter(complement));
  std::vector<std::size_t> uni;
  std::set_union(s.begin(), s.end(), complement.begin(), complement.end(), std::back_inserter(uni));
  CHECK(uni == pool);
  // Reference counts decouple the quota from the pool size.
  std::vector<std::size_t> half(pool.begin(), pool.begin() + 160);
  const auto r = few_shot_subset(half, labels, 3, 0.01, 4, {200, 200, 200});
  CHECK(r.size() == 2);
}

TEST_CASE("prompt transforms") {
  CHECK(sparse_prompt("a tall boxy red vase made of clay", 4) == "a tall boxy red");
  CHECK(sparse_prompt("two  words", 4) == "two words");
  CHECK(sparse_prompt("anything", 0).empty());

  Image img(32, 32, 3, 0.5f);
  CHECK(noisy_image(img, 0, 1) == img);
  const auto noisy = noisy_image(img, 32, 1);
  double s = 0, ss = 0;
  for (float v : noisy.data) {
    CHECK((v >= 0 && v <= 1));
    s += v - 0.5;
    ss += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(noisy.data.size());
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::sqrt(ss / n) == doctest::Approx(32.0 / 255).epsilon(0.05));
  CHECK(noisy_image(img, 32, 1) == noisy);

  for (double r : {0.1, 0.5, 0.9, 1.0}) {
    const auto m = masked_image(img, r, 3);
    const auto zeros = std::count(m.data.begin(), m.data.end(), 0.0f);
    const int side = static_cast<int>(std::lround(std::sqrt(r) * 32));
    CHECK(zeros == side * side * 3);
  }
  CHECK(masked_image(img, 0, 3) == img);
}

TEST_CASE("protocol presets and json") {
  CHECK(ProtocolConfig::preset("few_shot").data_fraction == 0.01);
  CHECK(ProtocolConfig::preset("missing_prompt").prompt_mode == PromptMode::empty);
  CHECK(ProtocolConfig::preset("noisy_prompt").image_noise_sigma == 96);
  CHECK(ProtocolConfig::preset("masked_prompt").mask_ratio == 0.9);
  CHECK(ProtocolConfig::preset("real_synthetic").include_real);
  CHECK_THROWS_AS(ProtocolConfig::preset("bogus"), InputError);
  auto p = ProtocolConfig::preset("noisy_prompt");
  p.prompt_mode = PromptMode::sparse;
  CHECK(ProtocolConfig::from_json(p.to_json()).to_json() == p.to_json());
  p.mask_ratio = 2;
  CHECK_THROWS_AS(p.check(), InputError);
}

TEST_CASE("samples apply protocol transforms without touching records") {
  const auto& ds = tiny_dataset();
  const AssetRecord before = ds.assets[3];
  SampleOptions text;
  auto sparse = ProtocolConfig::preset("standard");
  sparse.prompt_mode = PromptMode::sparse;
  sparse.sparse_words = 2;
  const auto s1 = make_sample(ds.assets[3], sparse, text, 3);
  CHECK(s1.meta.kind == MetaKind::text);
  CHECK(s1.meta.text == sparse_prompt(before.prompt, 2));
  const auto s2 = make_sample(ds.assets[3], ProtocolConfig::preset("missing_prompt"), text, 3);
  CHECK(s2.meta.kind == MetaKind::none);
  SampleOptions image;
  image.metadata = "image";
  const auto s3 = make_sample(ds.assets[3], ProtocolConfig::preset("noisy_prompt"), image, 3);
  CHECK(s3.meta.kind == MetaKind::image);
  CHECK_FALSE(s3.meta.image == dequantize(before.prompt_image));
  SampleOptions aug = text;
  aug.augment = true;
  aug.flip = true;
  aug.jitter = 0.1;
  aug.augment_seed = 9;
  const auto s4 = make_sample(ds.assets[3], ProtocolConfig::preset("masked_prompt"), aug, 3);
  CHECK_FALSE(s4.rgb[0] == dequantize(before.rgb[0]));
  CHECK(s4.normal[0] == dequantize(before.normal[0]));
  CHECK(ds.assets[3].prompt == before.prompt);
  CHECK(ds.assets[3].rgb == before.rgb);
  CHECK(ds.assets[3].prompt_image == before.prompt_image);
}

TEST_CASE("mixing in real assets") {
  BenchmarkConfig c;
  c.families = 2;
  c.per_family = 2;
  c.unknown = 1;
  c.resolution = 32;
  const auto syn = generate_benchmark(c);
  const auto none = mix_real(syn, {}, 1);
  CHECK(none.labels.size() == 2 + 2);
  CHECK(none.assets.size() == syn.assets.size());
  const auto real = generate_family_asset(real_profile(), "r", "real_0000", 99, c.views());
  const auto mixed = mix_real(syn, {real}, 1);
  CHECK(mixed.assets.size() == syn.assets.size() + 1);
  CHECK_THROWS_AS(mix_real(mixed, {real}, 1), LabelSpaceError);
  auto wrong = real;
  wrong.label = "g1";
  CHECK_THROWS_AS(mix_real(syn, {wrong}, 1), LabelSpaceError);
}

// ---- training and evaluation -----------------------------------------------------------------

TEST_CASE("a few epochs lower the training loss") {
  const auto& ds = tiny_dataset();
  const auto proto = ProtocolConfig::preset("standard");
  auto cfg = quick_train(5);
  cfg.eval_each_epoch = false;
  const auto r = train(tiny_model(), ds, proto, cfg);
  auto cfg0 = cfg;
  cfg0.epochs = 1;
  cfg0.lr = 1e-30;
  const auto r0 = train(tiny_model(), ds, proto, cfg0);
  CHECK(r0.split.train == r.split.train);
  const double before = initial_loss(*r0.model, ds, r.split.train, proto, cfg, 100);
  const double after = initial_loss(*r.model, ds, r.split.train, proto, cfg, 100);
  INFO(before << " -> " << after);
  CHECK(after < before);
}

TEST_CASE("a small model overfits its training split") {
  const auto& ds = tiny_dataset();
  auto proto = ProtocolConfig::preset("standard");
  auto cfg = quick_train(200);
  cfg.batch_size = 32;
  cfg.test_fraction = 0.25;
  cfg.eval_each_epoch = false;
  cfg.flip_probability = 0;
  cfg.jitter = 0;
  cfg.lr = 1e-3;
  auto mc = tiny_model();
  mc.d = 64;
  mc.heads = 4;
  mc.dropout = 0;
  const auto r = train(mc, ds, proto, cfg);
  REQUIRE(r.split.train.size() == 27);
  const auto m = evaluate(*r.model, r.labels, ds, r.split.train, proto);
  CHECK(m.accuracy == 1.0);
  CHECK(r.log.back().train_accuracy == 1.0);
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  const auto& ds = tiny_dataset();
  const auto proto = ProtocolConfig::preset("real_synthetic");
  const auto cfg = quick_train(2);
  const auto a = train(tiny_model(), ds, proto, cfg);
  const auto b = train(tiny_model(), ds, proto, cfg);
  REQUIRE(a.log.size() == 2);
  for (std::size_t e = 0; e < a.log.size(); ++e) CHECK(a.log[e].to_json().dump() == b.log[e].to_json().dump());
  CHECK(a.test_metrics.to_json().dump() == b.test_metrics.to_json().dump());
  CHECK(a.labels == LabelSpace::mixed(2));

  const auto root = std::filesystem::temp_directory_path() / "attrib3d_ckpt_test";
  std::filesystem::remove_all(root);
  save_checkpoint((root / "a").string(), *a.model, a.labels, {{"seed", 11}});
  save_checkpoint((root / "b").string(), *b.model, b.labels, {{"seed", 11}});
  CHECK(slurp(root / "a" / "weights.bin") == slurp(root / "b" / "weights.bin"));
  CHECK(slurp(root / "a" / "manifest.json") == slurp(root / "b" / "manifest.json"));

  auto loaded = load_checkpoint((root / "a").string());
  CHECK(loaded.labels == a.labels);
  CHECK(loaded.info.at("seed") == 11);
  const auto pa = predict(*a.model, a.labels, ds, a.split.test, proto);
  const auto pl = predict(*loaded.model, loaded.labels, ds, a.split.test, proto);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].probabilities == pl[i].probabilities);
  CHECK_THROWS_AS(load_checkpoint((root / "missing").string()), InputError);
  std::filesystem::remove_all(root);
}

TEST_CASE("evaluation protocols") {
  const auto& ds = tiny_dataset();
  auto mc = tiny_model();
  mc.metadata = "image";
  const auto r = train(mc, ds, ProtocolConfig::preset("standard"), quick_train(2));

  const auto standard = predict(*r.model, r.labels, ds, r.split.test, ProtocolConfig::preset("standard"));
  auto sigma0 = ProtocolConfig::preset("noisy_prompt");
  sigma0.image_noise_sigma = 0;
  const auto noisy0 = predict(*r.model, r.labels, ds, r.split.test, sigma0);
  for (std::size_t i = 0; i < standard.size(); ++i) CHECK(standard[i].probabilities == noisy0[i].probabilities);

  const auto threaded = predict(*r.model, r.labels, ds, r.split.test, ProtocolConfig::preset("standard"), 3, 4);
  const auto serial = predict(*r.model, r.labels, ds, r.split.test, ProtocolConfig::preset("standard"), 1, 4);
  for (std::size_t i = 0; i < serial.size(); ++i) CHECK(serial[i].probabilities == threaded[i].probabilities);

  const auto missing = predict(*r.model, r.labels, ds, r.split.test, ProtocolConfig::preset("missing_prompt"));
  for (const auto& p : missing) {
    CHECK_FALSE(p.metadata_used);
    for (double v : p.probabilities) CHECK(std::isfinite(v));
    CHECK(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(standard[0].metadata_used);

  CHECK_THROWS_AS(predict(*r.model, LabelSpace::synthetic(5), ds, r.split.test, ProtocolConfig::preset("standard")),
                  LabelSpaceError);
  CHECK_THROWS_AS(predict(*r.model, r.labels, ds, r.split.test, ProtocolConfig::preset("real_synthetic")),
                  LabelSpaceError);
  auto star = ProtocolConfig::preset("standard");
  star.prompt_mode = PromptMode::empty_star;
  CHECK_THROWS_AS(predict(*r.model, r.labels, ds, r.split.test, star), StateError);

  const auto blind = train(tiny_model(), ds, star, quick_train(1));
  CHECK(blind.model->config().metadata == "none");
  CHECK_NOTHROW(predict(*blind.model, blind.labels, ds, blind.split.test, star));
}

TEST_CASE("few-shot protocol trains on the per-class quota") {
  const auto& ds = tiny_dataset();
  auto proto = ProtocolConfig::preset("few_shot");
  proto.data_fraction = 0.1;
  auto cfg = quick_train(1);
  cfg.min_steps = 5;
  const auto r = train(tiny_model(), ds, proto, cfg);
  // 12 per generator class, 12 for u: floor(1.2) = 1 each.
  CHECK(r.split.train.size() == 3);
  CHECK(r.steps == 5);
}

TEST_CASE("model and dataset geometry must agree") {
  auto mc = tiny_model();
  mc.resolution = 64;
  CHECK_THROWS_AS(train(mc, tiny_dataset(), ProtocolConfig::preset("standard"), quick_train(1)), InputError);
}

TEST_CASE("every parameter receives gradient on a benchmark batch") {
  const auto& ds = tiny_dataset();
  for (const std::string meta : {"text", "image"}) {
    auto mc = tiny_model();
    mc.metadata = meta;
    mc.num_classes = ds.labels.size();
    auto model = make_model<float>(mc, 3);
    std::vector<ModelSample> samples;
    std::vector<std::uint32_t> labels;
    SampleOptions o;
    o.metadata = meta;
    for (std::size_t i = 0; i < ds.assets.size(); i += 3) {
      samples.push_back(make_sample(ds.assets[i], ProtocolConfig::preset("real_synthetic"), o, i));
      labels.push_back(static_cast<std::uint32_t>(ds.label_id(i)));
    }
    std::vector<const ModelSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    nn::backward(nn::cross_entropy(model->forward(ptrs, {}), labels));
    for (const auto& [name, t] : model->named_parameters()) {
      if (meta == "image" && name.rfind("text.", 0) == 0) continue;
      CAPTURE(name);
      CHECK(std::any_of(t.grad().begin(), t.grad().end(), [](float g) { return g != 0.0f; }));
    }
  }
}
