#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>

#include "magup/checkpoint.hpp"
#include "magup/config.hpp"
#include "magup/data.hpp"
#include "magup/errors.hpp"
#include "magup/io.hpp"
#include "magup/metrics.hpp"
#include "magup/parallel.hpp"
#include "magup/rng.hpp"

namespace magup::cli {

using nlohmann::json;

namespace {

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Component parse_component(const std::string& s) {
  for (Component c : {Component::backbone, Component::adapter, Component::head, Component::prompt, Component::decoder,
                      Component::bdc}) {
    if (s == component_name(c)) return c;
  }
  throw ConfigError("unknown component '" + s + "'");
}

struct GenArgs {
  std::string out;
  std::size_t test_count = 8;
  SynthConfig synth;
};

void cmd_gen(const GenArgs& a, std::ostream& out) {
  write_synth_dataset(a.out, a.synth, a.test_count);
  out << "wrote " << a.synth.count << " train and " << a.test_count << " test samples of " << a.synth.size << "x"
      << a.synth.size << " to " << a.out << "\n";
}

struct TrainArgs {
  int stage = 1;
  std::string config;
  std::string data;
  std::string split = "train";
  std::string out;
  std::string init;
  std::string ablate;
  std::vector<std::string> sets;
  std::size_t log_every = 10;
  std::string loss_csv;
};

json architecture(const RunConfig& c) {
  json j = to_json(c);
  j.erase("train");
  j["model"].erase("seed");
  j["model"].erase("use_bdc");
  j["encoder"].erase("freeze_backbone");
  return j;
}

void cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.stage != 1 && a.stage != 2) throw ConfigError("--stage must be 1 or 2");
  RunConfig cfg;
  std::optional<SegModel> init;
  json history = json::array();
  if (!a.init.empty()) {
    CheckpointInfo info;
    init = load_checkpoint(a.init, &info);
    cfg = info.config;
    history = info.meta.value("history", json::array());
  }
  const RunConfig stored = cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config, cfg);
  apply_ablation(cfg, a.ablate);
  for (const auto& s : a.sets) apply_override(cfg, s);

  SegModel model = init ? *init : SegModel::make(cfg.model);
  if (init) {
    if (architecture(cfg) != architecture(stored)) {
      throw ConfigError("configuration changes the architecture stored in " + a.init);
    }
    model.cfg.encoder.freeze_backbone = cfg.model.encoder.freeze_backbone;
    if (!cfg.model.use_bdc) {
      model.bdc.reset();
    } else if (!model.bdc) {
      Rng r = Rng(cfg.model.seed).fork(5);
      model.bdc = Bdc::make(cfg.model.bdc, r);
    }
    model.cfg.use_bdc = model.bdc.has_value();
  }

  const auto records = list_samples(a.data, parse_split(a.split));
  if (records.empty()) throw IoError("no samples under " + a.data);
  const auto samples = load_samples(records);
  const Stage stage = a.stage == 1 ? Stage::one : Stage::two;
  out << "stage " << a.stage << ": " << samples.size() << " samples, " << model.trainable_count(stage)
      << " trainable parameters\n";
  const TrainStats stats = train_stage(model, stage, samples, cfg.train, [&](std::size_t step, double loss) {
    if (a.log_every > 0 && (step % a.log_every == 0 || step == 1)) out << "step " << step << " loss " << loss << "\n";
  });
  if (!a.loss_csv.empty()) {
    std::ofstream csv(a.loss_csv);
    if (!csv) throw IoError("cannot open " + a.loss_csv);
    csv << "step,loss\n";
    for (std::size_t i = 0; i < stats.losses.size(); ++i) csv << i + 1 << "," << exact(stats.losses[i]) << "\n";
  }
  const double final_loss = stats.losses.empty() ? 0.0 : stats.losses.back();
  history.push_back({{"stage", a.stage}, {"steps", stats.steps}, {"final_loss", final_loss}});
  json meta = {{"stage", a.stage}, {"steps", stats.steps}, {"final_loss", final_loss}, {"losses", stats.losses},
               {"history", history}};
  save_checkpoint(a.out, model, cfg, meta);
  out << "final_loss " << exact(final_loss) << " steps " << stats.steps << "\n";
  out << "saved " << a.out << "\n";
}

void print_rows(const std::vector<std::pair<std::string, MetricReport>>& rows, const std::string& csv_path,
                std::ostream& out) {
  write_report_table(out, rows);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot open " + csv_path);
    write_report_csv(csv, rows);
  }
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::string csv;
  std::string save_dir;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const SegModel model = load_checkpoint(a.ckpt);
  const auto records = list_samples(a.data, parse_split(a.split));
  if (records.empty()) throw IoError("no samples under " + a.data);
  std::vector<MetricReport> reports(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const auto [image, mask] = load_pair(records[i]);
    const Tensor pred = infer(model, image);
    reports[i] = evaluate_pair(pred, mask);
    if (!a.save_dir.empty()) write_mask_png(fs::path(a.save_dir) / records[i].image.filename(), pred, false);
  });
  print_rows({{fs::path(a.data).filename().string() + "/" + a.split, average(reports)}}, a.csv, out);
}

struct InferArgs {
  std::string ckpt;
  std::string image;
  std::string out;
  bool soft = false;
};

void cmd_infer(const InferArgs& a, std::ostream& out) {
  const SegModel model = load_checkpoint(a.ckpt);
  const Image8 img = read_png(a.image, 3);
  const Tensor pred = infer(model, image_tensor(img.pixels, img.height, img.width));
  write_mask_png(a.out, pred, !a.soft);
  out << "wrote " << a.out << "\n";
}

struct MetricsArgs {
  std::string pred_dir;
  std::string gt_dir;
  std::string csv;
  std::string name;
};

void cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  std::vector<fs::path> gts;
  if (!fs::is_directory(a.gt_dir)) throw IoError("not a directory: " + a.gt_dir);
  for (const auto& e : fs::directory_iterator(a.gt_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") gts.push_back(e.path());
  }
  std::sort(gts.begin(), gts.end());
  if (gts.empty()) throw IoError("no PNG masks in " + a.gt_dir);
  std::vector<MetricReport> reports(gts.size());
  parallel_for(gts.size(), [&](std::size_t i) {
    const fs::path pred_path = fs::path(a.pred_dir) / gts[i].filename();
    if (!fs::exists(pred_path)) throw IoError("missing prediction " + pred_path.string());
    const Image8 gt = read_png(gts[i], 1);
    const Tensor P = read_prob_png(pred_path);
    if (P.dim(0) != gt.height || P.dim(1) != gt.width) {
      throw IoError("prediction " + pred_path.string() + " does not match the mask size");
    }
    reports[i] = evaluate_pair(P, mask_tensor(gt.pixels, gt.height, gt.width));
  });
  print_rows({{a.name.empty() ? fs::path(a.pred_dir).filename().string() : a.name, average(reports)}}, a.csv, out);
}

void cmd_inspect(const std::string& path, std::ostream& out) {
  const CheckpointInfo info = read_checkpoint_info(path);
  out << "config " << to_json(info.config).dump(2) << "\n";
  json meta = info.meta;
  meta.erase("losses");
  out << "meta " << meta.dump() << "\n";
  std::map<std::string, std::size_t> per;
  std::size_t total = 0;
  for (const auto& e : info.manifest) {
    out << std::left << std::setw(48) << e.name << " " << std::setw(16) << shape_str(e.shape) << " "
        << component_name(component_of(e.name)) << "\n";
    per[component_name(component_of(e.name))] += e.count;
    total += e.count;
  }
  for (const auto& [c, n] : per) out << "component " << c << " " << n << "\n";
  out << "tensors " << info.manifest.size() << " parameters " << total << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MaGuP polyp segmentation: data generation, training, evaluation and inference", "magup"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Write a synthetic polyp-like dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.synth.count, "Training samples")->capture_default_str();
  g->add_option("--test-count", gen.test_count, "Test samples")->capture_default_str();
  g->add_option("--size", gen.synth.size, "Image side length")->capture_default_str();
  g->add_option("--seed", gen.synth.seed, "Generator seed")->capture_default_str();
  g->add_option("--blobs-min", gen.synth.blobs_min)->capture_default_str();
  g->add_option("--blobs-max", gen.synth.blobs_max)->capture_default_str();
  g->add_option("--area-min", gen.synth.area_min, "Foreground fraction lower bound")->capture_default_str();
  g->add_option("--area-max", gen.synth.area_max, "Foreground fraction upper bound")->capture_default_str();
  g->add_option("--contrast-min", gen.synth.contrast_min)->capture_default_str();
  g->add_option("--contrast-max", gen.synth.contrast_max)->capture_default_str();
  g->add_option("--blur-min", gen.synth.blur_min, "Boundary blur sigma, pixels")->capture_default_str();
  g->add_option("--blur-max", gen.synth.blur_max)->capture_default_str();
  g->add_option("--noise", gen.synth.noise, "Gaussian pixel noise std")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run one training stage and write a checkpoint");
  t->add_option("--stage", train.stage, "1 (encoder + adapter) or 2 (prompt + decoder)")->required();
  t->add_option("--data", train.data, "Dataset root")->required();
  t->add_option("--out", train.out, "Checkpoint to write")->required();
  t->add_option("--config", train.config, "JSON config layered over the defaults (or over --init)");
  t->add_option("--init", train.init, "Start from this checkpoint");
  t->add_option("--split", train.split, "train or test")->capture_default_str();
  t->add_option("--ablate", train.ablate, "Comma list of msd,1dmamba,2dmamba,bdc to switch off");
  t->add_option("--set", train.sets, "section.key=value override (repeatable)");
  t->add_option("--log-every", train.log_every, "Loss log interval in steps (0: quiet)")->capture_default_str();
  t->add_option("--loss-csv", train.loss_csv, "Write the per-step loss curve here");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--ckpt", eval.ckpt)->required();
  e->add_option("--data", eval.data, "Dataset root")->required();
  e->add_option("--split", eval.split, "train or test")->capture_default_str();
  e->add_option("--csv", eval.csv, "Also write the row as CSV");
  e->add_option("--save-dir", eval.save_dir, "Write soft predictions here");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Segment one image");
  i->add_option("--ckpt", inf.ckpt)->required();
  i->add_option("--image", inf.image, "Input PNG")->required();
  i->add_option("--out", inf.out, "Output mask PNG")->required();
  i->add_flag("--soft", inf.soft, "Write probabilities instead of a binary mask");

  MetricsArgs met;
  auto* m = app.add_subcommand("metrics", "Score a directory of predictions against ground-truth masks");
  m->add_option("--pred-dir", met.pred_dir)->required();
  m->add_option("--gt-dir", met.gt_dir)->required();
  m->add_option("--csv", met.csv, "Also write the row as CSV");
  m->add_option("--name", met.name, "Row label");

  std::string inspect_path;
  auto* n = app.add_subcommand("inspect", "Print a checkpoint's config and tensor manifest");
  n->add_option("--ckpt", inspect_path)->required();

  std::string strip_in, strip_out, strip_what = "bdc";
  auto* s = app.add_subcommand("strip", "Copy a checkpoint without one component");
  s->add_option("--ckpt", strip_in)->required();
  s->add_option("--out", strip_out)->required();
  s->add_option("--component", strip_what, "backbone, adapter, head, prompt, decoder or bdc")->capture_default_str();

  std::vector<std::string> rest(args.rbegin(), args.rend());
  if (!rest.empty()) rest.pop_back();
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }

  try {
    if (*g) cmd_gen(gen, out);
    if (*t) cmd_train(train, out);
    if (*e) cmd_eval(eval, out);
    if (*i) cmd_infer(inf, out);
    if (*m) cmd_metrics(met, out);
    if (*n) cmd_inspect(inspect_path, out);
    if (*s) {
      strip_component(strip_in, strip_out, parse_component(strip_what));
      out << "wrote " << strip_out << "\n";
    }
  } catch (const std::exception& ex) {
    err << "magup: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace magup::cli
