#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include "CLI11.hpp"
#include "attrib3d/errors.hpp"
#include "attrib3d/frequency_fingerprint.hpp"
#include "attrib3d/renderer.hpp"

namespace attrib3d::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json merged(json base, const json& patch) {
  base.merge_patch(patch);
  return base;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw InputError(path.string() + ": cannot write");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

ViewConfig view_config(int views, int resolution, double elevation) {
  if (views < 1) throw InputError("--views must be positive");
  ViewConfig v;
  v.resolution = resolution;
  v.elevation_deg = elevation;
  v.azimuths_deg.clear();
  for (int i = 0; i < views; ++i) v.azimuths_deg.push_back(360.0 * i / views);
  v.check();
  return v;
}

AssetRecord observe_mesh(const std::string& path, std::uint64_t seed, const ViewConfig& views) {
  AssetRecord r;
  r.id = fs::path(path).stem().string();
  r.seed = seed;
  try {
    r.mesh = normalize_for_render(read_ply(path));
  } catch (const Error& e) {
    throw InputError(path + ": " + e.what());
  }
  compute_observations(r, views);
  return r;
}

std::string data_dir_or_env(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("ATTRIB3D_DATA")) return env;
  return {};
}

// Flag values that override the config file when present.
struct Overrides {
  std::optional<std::string> data, out, checkpoint, protocol, prompt_mode, arch, metadata, split, prompt, prompt_image;
  std::optional<int> families, per_family, unknown, resolution, views, epochs, batch, min_steps, d, heads, sparse_words;
  std::optional<double> fraction, sigma, mask_ratio, lr, test_fraction, p_meta, elevation;
  std::optional<std::uint64_t> seed, protocol_seed;
  std::optional<int> jobs;
  bool real = false;
  bool no_epoch_eval = false;
  std::string config;
};

void apply(RunConfig& rc, const Overrides& o) {
  if (!o.config.empty()) rc.merge(read_json(o.config));
  if (o.data) rc.data_dir = *o.data;
  if (o.out) rc.out = *o.out;
  if (o.checkpoint) rc.checkpoint = *o.checkpoint;
  if (o.jobs) rc.jobs = *o.jobs;
  if (o.families) rc.benchmark.families = *o.families;
  if (o.per_family) rc.benchmark.per_family = *o.per_family;
  if (o.unknown) rc.benchmark.unknown = *o.unknown;
  if (o.real) rc.benchmark.include_real = true;
  if (o.resolution) rc.benchmark.resolution = *o.resolution;
  if (o.views) rc.view_count = *o.views;
  if (o.elevation) rc.elevation = *o.elevation;
  if (o.protocol && *o.protocol != rc.protocol.name) {
    const std::uint64_t keep = rc.protocol.seed;
    rc.protocol = ProtocolConfig::preset(*o.protocol);
    rc.protocol.seed = keep;
  }
  if (o.fraction) rc.protocol.data_fraction = *o.fraction;
  if (o.prompt_mode) rc.protocol.prompt_mode = prompt_mode_from_string(*o.prompt_mode);
  if (o.sparse_words) rc.protocol.sparse_words = *o.sparse_words;
  if (o.sigma) rc.protocol.image_noise_sigma = *o.sigma;
  if (o.mask_ratio) rc.protocol.mask_ratio = *o.mask_ratio;
  if (o.protocol_seed) rc.protocol.seed = *o.protocol_seed;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.batch) rc.train.batch_size = *o.batch;
  if (o.min_steps) rc.train.min_steps = *o.min_steps;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.test_fraction) rc.train.test_fraction = *o.test_fraction;
  if (o.no_epoch_eval) rc.train.eval_each_epoch = false;
  if (o.arch) rc.model.architecture = *o.arch;
  if (o.metadata) rc.model.metadata = *o.metadata;
  if (o.d) rc.model.d = *o.d;
  if (o.heads) rc.model.heads = *o.heads;
  if (o.p_meta) rc.model.p_meta = *o.p_meta;
  if (o.split) rc.split = *o.split;
  if (o.prompt) rc.prompt = *o.prompt;
  if (o.prompt_image) rc.prompt_image = *o.prompt_image;
  if (o.seed) {
    if (rc.command == "gen-data") rc.benchmark.seed = *o.seed;
    else if (rc.command == "train") rc.train.seed = *o.seed;
    else if (rc.command == "evaluate") rc.protocol.seed = *o.seed;
    else rc.asset_seed = *o.seed;
  }
  if (rc.jobs < 1) throw InputError("--jobs must be positive");
  rc.protocol.check();
  rc.train.check();
  rc.benchmark.check();
}

// ---- subcommands --------------------------------------------------------------

void cmd_gen_data(const RunConfig& rc, std::ostream& out) {
  const Dataset ds = generate_benchmark(rc.benchmark, rc.jobs);
  save_dataset(ds, rc.out, rc.jobs);
  write_json(fs::path(rc.out) / "run_config.json", rc.to_json());
  out << "wrote " << ds.assets.size() << " assets to " << rc.out << "\n";
}

void cmd_render(const RunConfig& rc, std::ostream& out) {
  const ViewConfig views = view_config(rc.view_count, rc.benchmark.resolution, rc.elevation);
  Mesh mesh;
  try {
    mesh = normalize_for_render(read_ply(rc.input));
  } catch (const Error& e) {
    throw InputError(rc.input + ": " + e.what());
  }
  const RenderSet set = render_views(mesh, views);
  fs::create_directories(rc.out);
  for (int v = 0; v < views.views(); ++v) {
    const fs::path base = fs::path(rc.out) / ("view" + std::to_string(v));
    write_ppm(quantize(set.rgb[static_cast<std::size_t>(v)]), base.string() + ".rgb.ppm");
    write_ppm(quantize(set.normal[static_cast<std::size_t>(v)]), base.string() + ".normal.ppm");
  }
  write_json(fs::path(rc.out) / "run_config.json", rc.to_json());
  out << "wrote " << views.views() << " views to " << rc.out << "\n";
}

void cmd_fingerprint(const RunConfig& rc, std::ostream& out) {
  const ViewConfig views = view_config(rc.view_count, rc.benchmark.resolution, rc.elevation);
  const AssetRecord r = observe_mesh(rc.input, rc.asset_seed, views);
  json j = features_json(r);
  j["seed"] = rc.asset_seed;
  j["views"] = views.views();
  j["resolution"] = views.resolution;
  write_json(rc.out, j);
  out << "wrote " << rc.out << "\n";
}

Dataset load_data(const RunConfig& rc) {
  if (rc.data_dir.empty()) throw InputError("no dataset: pass --data or set ATTRIB3D_DATA");
  return load_dataset(rc.data_dir, rc.jobs);
}

void write_metrics(const fs::path& dir, const Metrics& m) {
  write_json(dir / "metrics.json", m.to_json());
  write_text(dir / "confusion.csv", m.confusion_csv(false));
  write_text(dir / "confusion_normalized.csv", m.confusion_csv(true));
}

std::vector<std::string> ids_of(const Dataset& ds, const std::vector<std::size_t>& indices) {
  std::vector<std::string> ids;
  for (std::size_t i : indices) ids.push_back(ds.assets[i].id);
  return ids;
}

void cmd_train(RunConfig rc, std::ostream& out) {
  const Dataset ds = load_data(rc);
  rc.model.resolution = ds.config.resolution;
  rc.model.views = ds.config.views().views();
  TrainConfig tc = rc.train;
  tc.jobs = rc.jobs;
  const TrainResult r = train(rc.model, ds, rc.protocol, tc);

  const fs::path dir = rc.out;
  fs::create_directories(dir);
  std::string log;
  for (const auto& e : r.log) {
    log += e.to_json().dump() + "\n";
    out << "epoch " << e.epoch << " loss " << e.train_loss << " train_acc " << e.train_accuracy;
    if (e.test_accuracy >= 0) out << " test_acc " << e.test_accuracy;
    out << "\n";
  }
  write_text(dir / "train_log.jsonl", log);
  write_metrics(dir, r.test_metrics);
  const json info = {{"train", rc.train.to_json()},
                     {"protocol", rc.protocol.to_json()},
                     {"benchmark", ds.config.to_json()},
                     {"steps", r.steps},
                     {"train_ids", ids_of(ds, r.split.train)},
                     {"test_ids", ids_of(ds, r.split.test)}};
  save_checkpoint((dir / "checkpoint").string(), *r.model, r.labels, info);
  write_json(dir / "run_config.json", rc.to_json());
  out << "test accuracy " << r.test_metrics.accuracy << " macro-F1 " << r.test_metrics.macro_f1 << "\n";
}

void cmd_evaluate(RunConfig rc, std::ostream& out) {
  if (rc.checkpoint.empty()) throw InputError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(rc.checkpoint);
  const Dataset ds = load_data(rc);
  rc.protocol.include_real = ck.labels.kind == LabelKind::mixed;

  std::vector<std::size_t> indices;
  if (rc.split == "all") {
    for (std::size_t i = 0; i < ds.assets.size(); ++i) {
      if (ck.labels.id_of(ds.assets[i].label) >= 0) indices.push_back(i);
    }
  } else if (rc.split == "test") {
    if (!ck.info.contains("test_ids")) throw InputError(rc.checkpoint + ": checkpoint has no test split");
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < ds.assets.size(); ++i) by_id[ds.assets[i].id] = i;
    for (const auto& id : ck.info.at("test_ids")) {
      const auto it = by_id.find(id.get<std::string>());
      if (it == by_id.end()) throw InputError(rc.data_dir + ": test asset " + id.get<std::string>() + " missing");
      indices.push_back(it->second);
    }
  } else {
    throw InputError("--split must be test or all");
  }
  const auto preds = predict(*ck.model, ck.labels, ds, indices, rc.protocol, rc.jobs);
  std::vector<int> truth, predicted;
  std::string lines;
  for (const auto& p : preds) {
    truth.push_back(p.truth);
    predicted.push_back(p.predicted);
    lines += json{{"asset_id", ds.assets[p.index].id},
                  {"truth", ck.labels.classes[static_cast<std::size_t>(p.truth)]},
                  {"predicted", ck.labels.classes[static_cast<std::size_t>(p.predicted)]},
                  {"metadata_used", p.metadata_used}}
                 .dump() +
             "\n";
  }
  const Metrics m = compute_metrics(truth, predicted, ck.labels.classes);
  const fs::path dir = rc.out;
  write_metrics(dir, m);
  if (ck.labels.kind == LabelKind::mixed) {
    std::vector<int> syn;
    for (int c = 0; c < ck.labels.size(); ++c) {
      if (c != ck.labels.real_id()) syn.push_back(c);
    }
    write_json(dir / "metrics_synthetic.json", restrict_metrics(m, syn).to_json());
  }
  write_text(dir / "predictions.jsonl", lines);
  write_json(dir / "run_config.json", rc.to_json());
  out << "accuracy " << m.accuracy << " precision " << m.macro_precision << " recall " << m.macro_recall
      << " macro-F1 " << m.macro_f1 << "\n";
}

void cmd_attribute(RunConfig rc, std::ostream& out) {
  if (rc.checkpoint.empty()) throw InputError("--checkpoint is required");
  Checkpoint ck = load_checkpoint(rc.checkpoint);
  const ModelConfig& mc = ck.model->config();
  const ViewConfig views = view_config(mc.views, mc.resolution, rc.elevation);
  AssetRecord r = observe_mesh(rc.input, rc.asset_seed, views);
  r.prompt = rc.prompt;
  if (!rc.prompt_image.empty()) {
    try {
      r.prompt_image = read_ppm(rc.prompt_image);
    } catch (const Error& e) {
      throw InputError(rc.prompt_image + ": " + e.what());
    }
  }
  // An absent prompt is the missing-metadata case, not an empty string.
  ProtocolConfig proto = rc.protocol;
  const bool has_meta = mc.metadata == "text" ? !rc.prompt.empty() : !rc.prompt_image.empty();
  if (!has_meta && proto.prompt_mode != PromptMode::empty_star) proto.prompt_mode = PromptMode::empty;
  const Prediction p = predict_record(*ck.model, r, proto);

  std::vector<std::size_t> order(p.probabilities.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.probabilities[a] > p.probabilities[b]; });
  json ranked = json::array();
  for (std::size_t c : order) ranked.push_back({{"class", ck.labels.classes[c]}, {"score", p.probabilities[c]}});
  const json result = {{"asset_id", r.id}, {"ranked", ranked}, {"metadata_used", p.metadata_used}};
  write_json(rc.out, result);
  out << "wrote " << rc.out << " (top class " << ck.labels.classes[order[0]] << ")\n";
}

}  // namespace

// ---- RunConfig --------------------------------------------------------------------

json RunConfig::to_json() const {
  return {{"command", command},
          {"benchmark", benchmark.to_json()},
          {"model", model.to_json()},
          {"protocol", protocol.to_json()},
          {"train", train.to_json()},
          {"paths", {{"data", data_dir}, {"out", out}, {"checkpoint", checkpoint}, {"input", input}}},
          {"asset_seed", asset_seed},
          {"split", split},
          {"prompt", prompt},
          {"prompt_image", prompt_image},
          {"views", view_count},
          {"elevation", elevation},
          {"jobs", jobs}};
}

void RunConfig::merge(const json& j) {
  if (!j.is_object()) throw InputError("run config must be a JSON object");
  try {
    if (j.contains("benchmark")) benchmark = BenchmarkConfig::from_json(merged(benchmark.to_json(), j["benchmark"]));
    if (j.contains("model")) model = ModelConfig::from_json(merged(model.to_json(), j["model"]));
    if (j.contains("train")) train = TrainConfig::from_json(merged(train.to_json(), j["train"]));
    if (j.contains("protocol")) {
      const json& p = j["protocol"];
      const std::string name = p.value("name", protocol.name);
      const json base = name == protocol.name ? protocol.to_json() : ProtocolConfig::preset(name).to_json();
      protocol = ProtocolConfig::from_json(merged(base, p));
    }
    if (j.contains("paths")) {
      const json& p = j["paths"];
      data_dir = p.value("data", data_dir);
      out = p.value("out", out);
      checkpoint = p.value("checkpoint", checkpoint);
      input = p.value("input", input);
    }
    asset_seed = j.value("asset_seed", asset_seed);
    split = j.value("split", split);
    prompt = j.value("prompt", prompt);
    prompt_image = j.value("prompt_image", prompt_image);
    view_count = j.value("views", view_count);
    elevation = j.value("elevation", elevation);
    jobs = j.value("jobs", jobs);
  } catch (const json::exception& e) {
    throw InputError(std::string("run config: ") + e.what());
  }
}

// ---- entry point ------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source attribution for 3D assets"};
  app.name("attrib3d");
  app.require_subcommand(1);
  Overrides o;
  RunConfig rc;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "RunConfig JSON; flags override its values");
    sub->add_option("--jobs", o.jobs, "worker threads");
  };
  auto views_opts = [&](CLI::App* sub) {
    sub->add_option("--views", o.views, "number of azimuths, evenly spaced");
    sub->add_option("--res", o.resolution, "render resolution in pixels");
    sub->add_option("--elevation", o.elevation, "camera elevation in degrees");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark dataset");
  common(gen);
  gen->add_option("--families", o.families, "generator families");
  gen->add_option("--per-family", o.per_family, "assets per family");
  gen->add_option("--unknown", o.unknown, "held-out families labeled u");
  gen->add_flag("--real", o.real, "add real-scan stand-ins labeled r");
  gen->add_option("--seed", o.seed, "master seed");
  gen->add_option("--res", o.resolution, "render resolution in pixels");
  gen->add_option("--out", o.out, "output directory (default $ATTRIB3D_DATA)");

  auto* render = app.add_subcommand("render", "render a PLY mesh from several views");
  common(render);
  views_opts(render);
  render->add_option("mesh", rc.input, "input PLY")->required();
  render->add_option("--out", o.out, "output directory");

  auto* fp = app.add_subcommand("fingerprint", "geometry and FFT descriptors of a PLY mesh");
  common(fp);
  views_opts(fp);
  fp->add_option("mesh", rc.input, "input PLY")->required();
  fp->add_option("--seed", o.seed, "descriptor sampling seed");
  fp->add_option("--out", o.out, "output JSON (default <mesh>.fingerprint.json)");

  auto* tr = app.add_subcommand("train", "train an attribution model");
  common(tr);
  tr->add_option("--data", o.data, "dataset directory (default $ATTRIB3D_DATA)");
  tr->add_option("--out", o.out, "run directory");
  tr->add_option("--protocol", o.protocol, "standard | few_shot | missing_prompt | noisy_prompt | masked_prompt | real_synthetic");
  tr->add_option("--fraction", o.fraction, "training data fraction per class");
  tr->add_option("--prompt-mode", o.prompt_mode, "full | sparse | empty | empty_star");
  tr->add_option("--seed", o.seed, "split, initialization and shuffling seed");
  tr->add_option("--epochs", o.epochs);
  tr->add_option("--batch", o.batch);
  tr->add_option("--min-steps", o.min_steps);
  tr->add_option("--lr", o.lr);
  tr->add_option("--test-fraction", o.test_fraction);
  tr->add_flag("--no-epoch-eval", o.no_epoch_eval, "skip the per-epoch test evaluation");
  tr->add_option("--arch", o.arch, "hierarchical | grid");
  tr->add_option("--metadata", o.metadata, "none | text | image");
  tr->add_option("--p-meta", o.p_meta, "metadata drop probability");
  tr->add_option("--d", o.d, "model width");
  tr->add_option("--heads", o.heads);

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint under a protocol");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  ev->add_option("--data", o.data, "dataset directory (default $ATTRIB3D_DATA)");
  ev->add_option("--out", o.out, "output directory");
  ev->add_option("--protocol", o.protocol);
  ev->add_option("--prompt-mode", o.prompt_mode);
  ev->add_option("--sparse-words", o.sparse_words);
  ev->add_option("--sigma", o.sigma, "prompt image noise std in 8-bit units");
  ev->add_option("--mask-ratio", o.mask_ratio, "masked fraction of the prompt image");
  ev->add_option("--seed", o.seed, "noise and mask seed");
  ev->add_option("--split", o.split, "test | all");

  auto* at = app.add_subcommand("attribute", "rank source classes for one PLY mesh");
  common(at);
  at->add_option("mesh", rc.input, "input PLY")->required();
  at->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
  at->add_option("--prompt", o.prompt, "text prompt");
  at->add_option("--prompt-image", o.prompt_image, "prompt image (PPM)");
  at->add_option("--protocol", o.protocol);
  at->add_option("--seed", o.seed, "descriptor sampling seed");
  at->add_option("--out", o.out, "output JSON (default <mesh>.attribution.json)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    rc.command = sub->get_name();
    const std::string input = rc.input;
    apply(rc, o);
    if (!input.empty()) rc.input = input;
    if (rc.command == "train" || rc.command == "evaluate") rc.data_dir = data_dir_or_env(rc.data_dir);
    if (rc.command == "gen-data" && rc.out.empty()) rc.out = data_dir_or_env("");
    if (rc.command == "gen-data" && rc.out.empty()) {
      err << "gen-data: --out is required when ATTRIB3D_DATA is unset\n";
      return kExitUsage;
    }
    const bool needs_out = rc.command == "render" || rc.command == "train" || rc.command == "evaluate";
    if (needs_out && rc.out.empty()) {
      err << rc.command << ": --out is required\n";
      return kExitUsage;
    }
    if ((rc.command == "evaluate" || rc.command == "attribute") && rc.checkpoint.empty()) {
      err << rc.command << ": --checkpoint is required\n";
      return kExitUsage;
    }
    if (rc.command == "fingerprint" && rc.out.empty()) rc.out = rc.input + ".fingerprint.json";
    if (rc.command == "attribute" && rc.out.empty()) rc.out = rc.input + ".attribution.json";

    if (rc.command == "gen-data") cmd_gen_data(rc, out);
    else if (rc.command == "render") cmd_render(rc, out);
    else if (rc.command == "fingerprint") cmd_fingerprint(rc, out);
    else if (rc.command == "train") cmd_train(rc, out);
    else if (rc.command == "evaluate") cmd_evaluate(rc, out);
    else if (rc.command == "attribute") cmd_attribute(rc, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace attrib3d::cli
