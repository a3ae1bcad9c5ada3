#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtkd/gradcheck.hpp"
#include "dtkd/metrics.hpp"
#include "dtkd/parallel.hpp"
#include "experiment_config.hpp"
#include "manifest.hpp"
#include "plots.hpp"
#include "tasks.hpp"

namespace dtkd::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Flags that write straight into a config key.
const std::vector<std::pair<std::string, std::string>> kConfigFlags = {
    {"--seed", "seeds"},
    {"--out", "out"},
    {"--run-name", "run_name"},
    {"--alpha", "alpha"},
    {"--temperature", "temperature"},
    {"--train-fraction", "train_fraction"},
    {"--label-noise-fraction", "label_noise_fraction"},
    {"--image-noise-train-fraction", "image_noise_train_fraction"},
    {"--corruption", "corruption"},
    {"--center-min", "center_min"},
    {"--center-max", "center_max"},
    {"--grid", "grid"},
};

const std::vector<std::string> kSweepKeys = {"train_fraction", "label_noise_fraction", "image_noise_train_fraction"};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // config key -> raw flag value
  std::size_t jobs = 1;
};

void add_common(CLI::App* sub, CommonOptions& opts) {
  sub->add_option("--config", opts.config_path, "key = value experiment config");
  sub->add_option("--set", opts.sets, "config override key=value, repeatable");
  sub->add_option("--jobs", opts.jobs, "parallel jobs, capped by DTKD_THREADS")->check(CLI::PositiveNumber);
  for (const auto& [flag, key] : kConfigFlags) sub->add_option(flag, opts.flags[key], "sets config key " + key);
}

struct Context {
  ExperimentConfig cfg;
  std::string config_path;
  std::string command;
  std::size_t jobs = 1;
  std::ostream& out;

  std::string run_dir(const std::string& name) const { return cfg.out + "/" + name; }
  std::string run_dir() const { return run_dir(cfg.run_name); }
};

ExperimentConfig resolve_config(const CommonOptions& opts, bool sweep) {
  ExperimentConfig cfg = opts.config_path.empty() ? ExperimentConfig{} : load_config(opts.config_path, false);
  for (const auto& assignment : opts.sets) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidConfig, "--set expects key=value, got '" + assignment + "'");
    cfg.set(assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  for (const auto& [key, value] : opts.flags) {
    if (value.empty()) continue;
    if (sweep && std::find(kSweepKeys.begin(), kSweepKeys.end(), key) != kSweepKeys.end()) continue;
    cfg.set(key, value);
  }
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << text;
}

// Error::what() starts with "<kind>: ".
std::string_view error_message(const Error& e) {
  std::string_view what = e.what();
  what.remove_prefix(std::min(what.size(), to_string(e.kind()).size() + 2));
  return what;
}

RunManifest base_manifest(const Context& ctx) {
  RunManifest m;
  m.command = ctx.command;
  m.config_text = serialize_config(ctx.cfg);
  if (!ctx.config_path.empty()) m.inputs[ctx.config_path] = git_blob_hash_file(ctx.config_path);
  for (const auto* path : {&ctx.cfg.train_data, &ctx.cfg.train_labels, &ctx.cfg.val_data, &ctx.cfg.val_labels})
    if (!path->empty()) m.inputs[*path] = git_blob_hash_file(*path);
  return m;
}

void add_input(RunManifest& m, const std::string& path) {
  m.inputs[path] = git_blob_hash_file(path);
}

std::size_t effective_jobs(std::size_t requested) { return std::max<std::size_t>(1, std::min(requested, default_threads())); }

/// Runs jobs in parallel and prints their log lines in job order.
void run_jobs(const Context& ctx, std::size_t n, const std::function<std::string(std::size_t)>& job) {
  std::vector<std::string> logs(n);
  parallel_for(n, ctx.jobs, [&](std::size_t i) { logs[i] = job(i); });
  for (const auto& line : logs) ctx.out << line;
}

double best_accuracy(const TrainingHistory& h) {
  const auto acc = h.val_accuracies();
  return acc.empty() ? 0.0 : *std::max_element(acc.begin(), acc.end());
}

std::string run_summary(const std::string& label, const TrainResult& r) {
  std::ostringstream s;
  s << label << ": val_acc " << format_double(best_accuracy(r.history)) << " at epoch " << r.history.best_epoch
    << " of " << r.history.epochs.size() << "\n";
  return s.str();
}

const std::vector<std::string> kRunFiles = {"history.csv", "best.dtkd", "metrics.json", "confusion.csv"};

std::vector<std::string> prefixed(const std::string& prefix, const std::vector<std::string>& files) {
  std::vector<std::string> out;
  for (const auto& f : files) out.push_back(prefix + f);
  return out;
}

Model load_teacher(const std::string& path) { return freeze_all(load_checkpoint(path)); }

// --- pretrain -----------------------------------------------------------------

int cmd_pretrain(Context& ctx, const std::string& arch) {
  const std::vector<std::string> archs =
      arch == "both" ? std::vector<std::string>{"teacher", "student"} : std::vector<std::string>{arch};
  const PreparedTask task = prepare_task(load_raw_task(ctx.cfg, Group::source), ctx.cfg, std::nullopt);
  const auto& seeds = ctx.cfg.seeds;
  run_jobs(ctx, archs.size() * seeds.size(), [&](std::size_t i) {
    const std::string& a = archs[i / seeds.size()];
    const std::uint64_t seed = seeds[i % seeds.size()];
    const TrainResult r = pretrain(a, task, ctx.cfg, seed);
    write_run_outputs(ctx.run_dir(ctx.cfg.run_name + "_" + a) + "/" + std::to_string(seed), r, task.val,
                      ctx.cfg.training.threads);
    return run_summary(a + " seed " + std::to_string(seed), r);
  });
  for (const auto& a : archs) {
    RunManifest m = base_manifest(ctx);
    for (std::uint64_t seed : seeds) m.outputs[std::to_string(seed)] = prefixed(std::to_string(seed) + "/", kRunFiles);
    m.write(ctx.run_dir(ctx.cfg.run_name + "_" + a) + "/manifest.json");
  }
  return 0;
}

// --- finetune -----------------------------------------------------------------

int cmd_finetune(Context& ctx, const std::string& backbone, const std::string& teacher) {
  const RawTask raw = load_raw_task(ctx.cfg, Group::target);
  const auto& seeds = ctx.cfg.seeds;
  RunManifest m = base_manifest(ctx);
  for (std::uint64_t seed : seeds) {
    add_input(m, expand_seed(backbone, seed));
    if (!teacher.empty()) add_input(m, expand_seed(teacher, seed));
  }
  run_jobs(ctx, seeds.size(), [&](std::size_t i) {
    const std::uint64_t seed = seeds[i];
    const PreparedTask task = prepare_task(raw, ctx.cfg, seed);
    const Model base = load_checkpoint(expand_seed(backbone, seed));
    std::optional<Model> t;
    if (!teacher.empty()) t = load_teacher(expand_seed(teacher, seed));
    const TrainResult r = finetune(base, t ? &*t : nullptr, task, ctx.cfg, seed);
    write_run_outputs(ctx.run_dir() + "/" + std::to_string(seed), r, task.val, ctx.cfg.training.threads);
    return run_summary((t ? "tl+kd seed " : "tl seed ") + std::to_string(seed), r);
  });
  for (std::uint64_t seed : seeds) m.outputs[std::to_string(seed)] = prefixed(std::to_string(seed) + "/", kRunFiles);
  m.write(ctx.run_dir() + "/manifest.json");
  return 0;
}

// --- evaluate -----------------------------------------------------------------

json metrics_summary(const MetricsReport& r) {
  return {{"accuracy", r.accuracy},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1}};
}

json mean_std(const std::vector<MetricsReport>& reports) {
  json mean = json::object(), stddev = json::object();
  for (const char* key : {"accuracy", "macro_precision", "macro_recall", "macro_f1"}) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(metrics_summary(r)[key].get<double>());
    mean[key] = dtkd::mean(v);
    stddev[key] = sample_std(v);
  }
  return {{"mean", mean}, {"std", stddev}};
}

int cmd_evaluate(Context& ctx, const std::string& tl_dir, const std::string& kd_dir) {
  const PreparedTask task = prepare_task(load_raw_task(ctx.cfg, Group::target), ctx.cfg, std::nullopt);
  const auto& val = task.val;
  const std::size_t k = val.num_classes();
  RunManifest m = base_manifest(ctx);
  std::vector<double> tp_tl(k, 0.0), tp_kd(k, 0.0), n_per_class(k, 0.0);
  for (std::size_t label : val.labels) n_per_class[label] += 1.0;
  std::vector<MetricsReport> reports_tl, reports_kd;
  json per_seed = json::object();
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const std::string s = std::to_string(seed);
    const std::string dir = ctx.run_dir() + "/" + s;
    ConfusionMatrix cms[2];
    const std::pair<const char*, const std::string*> variants[] = {{"tl", &tl_dir}, {"kd", &kd_dir}};
    for (std::size_t v = 0; v < 2; ++v) {
      const std::string ckpt = *variants[v].second + "/" + s + "/best.dtkd";
      add_input(m, ckpt);
      const Model model = load_checkpoint(ckpt);
      const auto preds = predict(model, val, 256, ctx.cfg.training.threads);
      cms[v] = confusion_matrix(preds, val.labels, k);
      const MetricsReport report = metrics_from_cm(cms[v]);
      (v == 0 ? reports_tl : reports_kd).push_back(report);
      per_seed[s][variants[v].first] = metrics_summary(report);
      write_text(dir + "/" + variants[v].first + "_metrics.json", metrics_json(report, val.class_names));
      write_text(dir + "/" + variants[v].first + "_confusion.csv", confusion_csv(cms[v], val.class_names));
      for (std::size_t c = 0; c < k; ++c) (v == 0 ? tp_tl : tp_kd)[c] += static_cast<double>(cms[v].at(c, c));
    }
    write_text(dir + "/tp_change.csv", tp_change_csv(tp_change_table(cms[0], cms[1], val.class_names)));
    m.outputs[s] = prefixed(s + "/", {"tl_metrics.json", "tl_confusion.csv", "kd_metrics.json", "kd_confusion.csv",
                                      "tp_change.csv"});
    ctx.out << "seed " << s << ": tl " << format_double(reports_tl.back().accuracy) << ", tl+kd "
            << format_double(reports_kd.back().accuracy) << "\n";
  }
  const double seeds = static_cast<double>(ctx.cfg.seeds.size());
  for (std::size_t c = 0; c < k; ++c) {
    tp_tl[c] /= seeds;
    tp_kd[c] /= seeds;
  }
  write_text(ctx.run_dir() + "/tp_change.csv",
             tp_change_csv(tp_change_table(tp_tl, tp_kd, n_per_class, val.class_names)));
  json summary = {{"seeds", ctx.cfg.seeds},
                  {"per_seed", per_seed},
                  {"tl", mean_std(reports_tl)},
                  {"kd", mean_std(reports_kd)}};
  summary["accuracy_improvement"] =
      summary["kd"]["mean"]["accuracy"].get<double>() - summary["tl"]["mean"]["accuracy"].get<double>();
  write_text(ctx.run_dir() + "/summary.json", summary.dump(2) + "\n");
  m.outputs["summary"] = {"summary.json", "tp_change.csv"};
  m.write(ctx.run_dir() + "/manifest.json");
  ctx.out << "mean accuracy: tl " << format_double(summary["tl"]["mean"]["accuracy"].get<double>()) << ", tl+kd "
          << format_double(summary["kd"]["mean"]["accuracy"].get<double>()) << "\n";
  return 0;
}

// --- attribution --------------------------------------------------------------

std::vector<Tensor> background_images(const ImageDataset& train, const ExperimentConfig& cfg) {
  SplitMix64 rng = make_stream(cfg.data_seed, 0, StreamOp::subset);
  const auto order = permutation(train.size(), rng);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < std::min(cfg.background_size, order.size()); ++i) out.push_back(train.images[order[i]]);
  return out;
}

SuperpixelPartition partition_for(const ExperimentConfig& cfg) {
  return grid_partition(cfg.image_size, cfg.image_size, cfg.grid_rows, cfg.grid_cols);
}

AttributionReport attribute_sample(const Model& model, const Tensor& image, const std::vector<Tensor>& background,
                                   const ExperimentConfig& cfg) {
  return attribute(model, image, partition_for(cfg), background,
                   {cfg.game_output, true, std::max<std::size_t>(1, cfg.training.threads)});
}

int cmd_attribute(Context& ctx, const std::string& model_path, std::size_t index) {
  const PreparedTask task = prepare_task(load_raw_task(ctx.cfg, Group::target), ctx.cfg, std::nullopt);
  require(index < task.val.size(), ErrorKind::IndexOutOfRange,
          "--index " + std::to_string(index) + " exceeds the validation set of " + std::to_string(task.val.size()));
  const auto background = background_images(task.train, ctx.cfg);
  const SuperpixelPartition partition = partition_for(ctx.cfg);
  RunManifest m = base_manifest(ctx);
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const std::string s = std::to_string(seed);
    const std::string path = expand_seed(model_path, seed);
    add_input(m, path);
    const AttributionReport report = attribute_sample(load_checkpoint(path), task.val.images[index], background, ctx.cfg);
    const ClassAttribution& win = report.for_class(report.winning_class);
    const std::string dir = ctx.run_dir() + "/" + s;
    write_text(dir + "/attribution.json", attribution_json(report, task.val.class_names));
    write_text(dir + "/shap_grid.csv", grid_csv(pixel_map(win.shapley, partition)));
    m.outputs[s] = {s + "/attribution.json", s + "/shap_grid.csv"};
    ctx.out << "seed " << s << ": sample " << index << " predicted " << task.val.class_names[report.winning_class]
            << ", output " << format_double(win.full_value) << " = base " << format_double(win.base_value)
            << " + contributions\n";
  }
  m.write(ctx.run_dir() + "/manifest.json");
  return 0;
}

std::vector<std::size_t> default_samples(const ImageDataset& val, std::size_t count) {
  // Round-robin over classes so small counts still cover every class.
  std::vector<std::vector<std::size_t>> by_class(val.num_classes());
  for (std::size_t i = 0; i < val.size(); ++i) by_class[val.labels[i]].push_back(i);
  std::vector<std::size_t> out;
  for (std::size_t round = 0; out.size() < count; ++round) {
    bool any = false;
    for (const auto& members : by_class)
      if (round < members.size() && out.size() < count) {
        out.push_back(members[round]);
        any = true;
      }
    if (!any) break;
  }
  return out;
}

json wilcoxon_entry(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    const WilcoxonResult r = wilcoxon_signed_rank_exact(x, y);
    return {{"statistic", r.statistic}, {"w_plus", r.w_plus}, {"w_minus", r.w_minus},
            {"p_value", r.p_value},     {"n_used", r.n_used}};
  } catch (const Error& e) {
    return {{"error", std::string(to_string(e.kind()))}, {"message", error_message(e)}};
  }
}

int cmd_quantify(Context& ctx, const std::string& tl_path, const std::string& kd_path, std::size_t samples,
                 const std::string& mask_path) {
  const RawTask raw = load_raw_task(ctx.cfg, Group::target);
  require(!mask_path.empty() || !raw.val_outlines.empty(), ErrorKind::MissingAnnotation,
          "file datasets need --mask with COCO polygons for the validation images");
  const PreparedTask task = prepare_task(raw, ctx.cfg, std::nullopt);
  const auto indices = default_samples(task.val, samples ? samples : task.val.num_classes());
  const auto background = background_images(task.train, ctx.cfg);
  const SuperpixelPartition partition = partition_for(ctx.cfg);
  const std::size_t side = ctx.cfg.image_size;

  std::vector<SegmentationMask> masks;
  for (std::size_t idx : indices) {
    SegmentationMask mask = mask_path.empty() ? rasterize({raw.val_outlines[idx]}, side, side)
                                              : load_coco_mask(mask_path, static_cast<std::int64_t>(idx), side, side);
    mask.require_both_regions();
    masks.push_back(std::move(mask));
  }

  RunManifest m = base_manifest(ctx);
  if (!mask_path.empty()) add_input(m, mask_path);
  for (std::uint64_t seed : ctx.cfg.seeds) {
    const std::string s = std::to_string(seed);
    const std::string tl_ckpt = expand_seed(tl_path, seed), kd_ckpt = expand_seed(kd_path, seed);
    add_input(m, tl_ckpt);
    add_input(m, kd_ckpt);
    const Model models[2] = {load_checkpoint(tl_ckpt), load_checkpoint(kd_ckpt)};
    std::vector<FgBgRow> rows[2];
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const std::size_t idx = indices[j];
      const std::size_t label = task.val.labels[idx];
      for (std::size_t v = 0; v < 2; ++v) {
        const AttributionReport report = attribute_sample(models[v], task.val.images[idx], background, ctx.cfg);
        const Tensor map = pixel_map(report.for_class(label).shapley, partition);
        rows[v].push_back(quantify_fg_bg(map, masks[j], task.val.class_names[label] + "_" + std::to_string(idx)));
      }
    }
    auto column = [&](std::size_t v, auto pick) {
      std::vector<double> out;
      for (const auto& r : rows[v]) out.push_back(pick(r));
      return out;
    };
    json tests = json::object();
    const std::pair<const char*, std::function<double(const FgBgRow&)>> columns[] = {
        {"foreground_diff", [](const FgBgRow& r) { return r.foreground.diff(); }},
        {"background_diff", [](const FgBgRow& r) { return r.background.diff(); }},
        {"foreground_pos", [](const FgBgRow& r) { return r.foreground.pos; }},
        {"foreground_neg", [](const FgBgRow& r) { return r.foreground.neg; }},
        {"background_pos", [](const FgBgRow& r) { return r.background.pos; }},
        {"background_neg", [](const FgBgRow& r) { return r.background.neg; }},
    };
    for (const auto& [name, pick] : columns) tests[name] = wilcoxon_entry(column(0, pick), column(1, pick));
    const std::string dir = ctx.run_dir() + "/" + s;
    write_text(dir + "/fgbg.csv", fgbg_csv(rows[0], rows[1]));
    write_text(dir + "/wilcoxon.json", json{{"pairs", indices.size()}, {"tests", tests}}.dump(2) + "\n");
    m.outputs[s] = {s + "/fgbg.csv", s + "/wilcoxon.json"};
    ctx.out << "seed " << s << ": " << indices.size() << " samples quantified\n";
  }
  m.write(ctx.run_dir() + "/manifest.json");
  return 0;
}

// --- corrupt-preview ----------------------------------------------------------

int cmd_corrupt_preview(Context& ctx, std::size_t samples) {
  const RawTask raw = load_raw_task(ctx.cfg, Group::target);
  const std::uint64_t seed = ctx.cfg.seeds.front();
  const CorruptionSpec spec = ctx.cfg.corruption_spec(seed);
  RunManifest m = base_manifest(ctx);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < std::min(samples, raw.val.size()); ++i) {
    const Tensor& img = raw.val.images[i];
    SplitMix64 center_rng = make_stream(seed, i, StreamOp::center_black);
    SplitMix64 quarter_rng = make_stream(seed, i, StreamOp::quarter_black);
    const std::pair<std::string, Tensor> variants[] = {
        {"original", img},
        {"center_black", center_black(img, spec.min_side, spec.max_side, center_rng)},
        {"quarter_black", quarter_black(img, quarter_rng)},
    };
    for (const auto& [name, tensor] : variants) {
      const std::string file = "sample" + std::to_string(i) + "_" + name + ".ppm";
      fs::create_directories(ctx.run_dir());
      write_ppm(ctx.run_dir() + "/" + file, tensor);
      files.push_back(file);
    }
  }
  m.outputs["preview"] = files;
  m.write(ctx.run_dir() + "/manifest.json");
  ctx.out << files.size() << " images written to " << ctx.run_dir() << "\n";
  return 0;
}

// --- gradcheck ----------------------------------------------------------------

int cmd_gradcheck(Context& ctx, std::size_t configs) {
  const GradcheckReport report = run_gradcheck_suite(configs, ctx.cfg.seeds.front());
  const std::string text = gradcheck_json(report);
  write_text(ctx.run_dir() + "/gradcheck.json", text);
  RunManifest m = base_manifest(ctx);
  m.outputs["report"] = {"gradcheck.json"};
  m.write(ctx.run_dir() + "/manifest.json");
  ctx.out << text;
  return report.passed() ? 0 : 1;
}

// --- sweep --------------------------------------------------------------------

std::vector<double> parse_fraction_list(const ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  if (raw.empty()) return {std::stod(cfg.get(key))};
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  ExperimentConfig probe = cfg;
  while (std::getline(ss, item, ',')) {
    probe.set(key, item);
    out.push_back(std::stod(probe.get(key)));
  }
  require(!out.empty(), ErrorKind::InvalidConfig, "empty list for " + key);
  return out;
}

struct SweepJob {
  std::size_t point;
  std::uint64_t seed;
  bool kd;
};

int cmd_sweep(Context& ctx, const CommonOptions& opts, const std::string& backbone, const std::string& teacher) {
  std::vector<std::vector<double>> axes;
  for (const auto& key : kSweepKeys) axes.push_back(parse_fraction_list(ctx.cfg, key, opts.flags.at(key)));
  std::vector<ExperimentConfig> points;
  std::vector<std::string> point_names;
  for (double tf : axes[0])
    for (double ln : axes[1])
      for (double in : axes[2]) {
        ExperimentConfig c = ctx.cfg;
        c.train_fraction = tf;
        c.label_noise_fraction = ln;
        c.image_noise_train_fraction = in;
        c.validate();
        points.push_back(c);
        point_names.push_back("tf" + format_double(tf) + "_ln" + format_double(ln) + "_in" + format_double(in));
      }
  const bool with_kd = !teacher.empty();
  std::vector<SweepJob> jobs;
  for (std::size_t p = 0; p < points.size(); ++p)
    for (std::uint64_t seed : ctx.cfg.seeds)
      for (bool kd : {false, true})
        if (!kd || with_kd) jobs.push_back({p, seed, kd});

  RunManifest m = base_manifest(ctx);
  for (std::uint64_t seed : ctx.cfg.seeds) {
    add_input(m, expand_seed(backbone, seed));
    if (with_kd) add_input(m, expand_seed(teacher, seed));
  }
  const RawTask raw = load_raw_task(ctx.cfg, Group::target);
  std::vector<TrainResult> results(jobs.size());
  run_jobs(ctx, jobs.size(), [&](std::size_t i) {
    const SweepJob& job = jobs[i];
    const ExperimentConfig& c = points[job.point];
    const PreparedTask task = prepare_task(raw, c, job.seed);
    const Model base = load_checkpoint(expand_seed(backbone, job.seed));
    std::optional<Model> t;
    if (job.kd) t = load_teacher(expand_seed(teacher, job.seed));
    results[i] = finetune(base, t ? &*t : nullptr, task, c, job.seed);
    const std::string rel = point_names[job.point] + "/" + (job.kd ? "kd" : "tl") + "/" + std::to_string(job.seed);
    write_run_outputs(ctx.run_dir() + "/" + rel, results[i], task.val, c.training.threads);
    return run_summary(rel, results[i]);
  });

  std::string detail = "train_fraction,label_noise_fraction,image_noise_train_fraction,seed,variant,val_acc,best_epoch,epochs_run\n";
  std::map<std::pair<std::size_t, bool>, std::vector<double>> finals;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const SweepJob& job = jobs[i];
    const ExperimentConfig& c = points[job.point];
    const double acc = best_accuracy(results[i].history);
    finals[{job.point, job.kd}].push_back(acc);
    detail += format_double(c.train_fraction) + "," + format_double(c.label_noise_fraction) + "," +
              format_double(c.image_noise_train_fraction) + "," + std::to_string(job.seed) + "," +
              (job.kd ? "kd" : "tl") + "," + format_double(acc) + "," + std::to_string(results[i].history.best_epoch) +
              "," + std::to_string(results[i].history.epochs.size()) + "\n";
    const std::string rel = point_names[job.point] + "/" + (job.kd ? "kd" : "tl") + "/" + std::to_string(job.seed);
    m.outputs[rel] = prefixed(rel + "/", kRunFiles);
  }
  std::string summary = "train_fraction,label_noise_fraction,image_noise_train_fraction,tl_mean,tl_std";
  if (with_kd) summary += ",kd_mean,kd_std,improvement";
  summary += "\n";
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto& tl = finals[{p, false}];
    summary += format_double(points[p].train_fraction) + "," + format_double(points[p].label_noise_fraction) + "," +
               format_double(points[p].image_noise_train_fraction) + "," + format_double(mean(tl)) + "," +
               format_double(sample_std(tl));
    if (with_kd) {
      const auto& kd = finals[{p, true}];
      summary += "," + format_double(mean(kd)) + "," + format_double(sample_std(kd)) + "," +
                 format_double(mean(kd) - mean(tl));
    }
    summary += "\n";
  }
  write_text(ctx.run_dir() + "/sweep.csv", detail);
  write_text(ctx.run_dir() + "/sweep_summary.csv", summary);
  std::vector<std::string> files = {"sweep.csv", "sweep_summary.csv"};
  const auto plots = sweep_plots(parse_numeric_csv(summary));
  const char* plot_names[] = {"sweep_accuracy.svg", "sweep_improvement.svg"};
  for (std::size_t i = 0; i < plots.size(); ++i) {
    write_svg(ctx.run_dir() + "/" + plot_names[i], line_plot_svg(plots[i]));
    files.push_back(plot_names[i]);
  }
  m.outputs["summary"] = files;
  m.write(ctx.run_dir() + "/manifest.json");
  ctx.out << summary;
  return 0;
}

// --- plot ---------------------------------------------------------------------

std::string with_suffix(const std::string& path, const std::string& suffix) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + p.extension().string())).string();
}

int cmd_plot(std::ostream& out, const std::vector<std::string>& histories, const std::vector<std::string>& labels,
             const std::string& sweep, const std::string& svg) {
  require(histories.empty() != sweep.empty(), ErrorKind::InvalidConfig, "give either --history or --sweep");
  if (!sweep.empty()) {
    const auto plots = sweep_plots(read_numeric_csv(sweep));
    std::vector<std::string> rendered;
    for (const auto& p : plots) rendered.push_back(line_plot_svg(p));
    write_svg(svg, rendered[0]);
    out << svg << "\n";
    if (rendered.size() > 1) {
      write_svg(with_suffix(svg, "_improvement"), rendered[1]);
      out << with_suffix(svg, "_improvement") << "\n";
    }
    return 0;
  }
  require(labels.empty() || labels.size() == histories.size(), ErrorKind::InvalidConfig,
          "--label must be given once per --history");
  PlotSpec spec{"Validation accuracy per epoch", "epoch", "validation accuracy", {}};
  for (std::size_t i = 0; i < histories.size(); ++i)
    spec.series.push_back(history_series(histories[i], labels.empty() ? fs::path(histories[i]).parent_path().string()
                                                                      : labels[i]));
  write_svg(svg, line_plot_svg(spec));
  out << svg << "\n";
  return 0;
}

void print_error(std::ostream& err, std::string_view kind, std::string_view message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}


}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transfer learning with knowledge distillation and Shapley attribution", "dtkd"};
  app.require_subcommand(1);
  CommonOptions opts;

  std::string arch = "both", backbone, teacher, model, tl, kd, mask, sweep_csv, svg;
  std::size_t index = 0, samples = 0, configs = 100, previews = 4;
  std::vector<std::string> histories, labels;

  auto* pretrain_cmd = app.add_subcommand("pretrain", "train backbones on the source label group");
  pretrain_cmd->add_option("--arch", arch, "student, teacher or both")
      ->check(CLI::IsMember({"student", "teacher", "both"}));
  auto* finetune_cmd = app.add_subcommand("finetune", "fine-tune a backbone on the target label group");
  finetune_cmd->add_option("--backbone", backbone, "checkpoint, {seed} expands per seed")->required();
  finetune_cmd->add_option("--teacher", teacher, "frozen teacher checkpoint enabling distillation");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "compare TL and TL+KD run directories");
  evaluate_cmd->add_option("--tl", tl, "TL run directory")->required();
  evaluate_cmd->add_option("--kd", kd, "TL+KD run directory")->required();
  auto* attribute_cmd = app.add_subcommand("attribute", "exact Shapley attribution of one validation image");
  attribute_cmd->add_option("--model", model, "checkpoint, {seed} expands per seed")->required();
  attribute_cmd->add_option("--index", index, "validation sample index");
  auto* quantify_cmd = app.add_subcommand("quantify", "foreground/background attribution sums and tests");
  quantify_cmd->add_option("--tl", tl, "TL checkpoint, {seed} expands per seed")->required();
  quantify_cmd->add_option("--kd", kd, "TL+KD checkpoint, {seed} expands per seed")->required();
  quantify_cmd->add_option("--samples", samples, "validation samples, default one per class");
  quantify_cmd->add_option("--mask", mask, "COCO polygon JSON keyed by validation index");
  auto* preview_cmd = app.add_subcommand("corrupt-preview", "write PPMs of the image corruptions");
  preview_cmd->add_option("--samples", previews, "validation images to render");
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck_cmd->add_option("--configs", configs, "random configurations per case")->check(CLI::PositiveNumber);
  auto* sweep_cmd = app.add_subcommand("sweep", "fine-tune over grids of training-set complexities");
  sweep_cmd->add_option("--backbone", backbone, "checkpoint, {seed} expands per seed")->required();
  sweep_cmd->add_option("--teacher", teacher, "teacher checkpoint adding TL+KD runs");
  auto* plot_cmd = app.add_subcommand("plot", "SVG line plots from history or sweep CSVs");
  plot_cmd->add_option("--history", histories, "history.csv, repeatable");
  plot_cmd->add_option("--label", labels, "legend label per history");
  plot_cmd->add_option("--sweep", sweep_csv, "sweep_summary.csv");
  plot_cmd->add_option("--svg", svg, "output SVG path")->required();

  for (auto* sub : {pretrain_cmd, finetune_cmd, evaluate_cmd, attribute_cmd, quantify_cmd, preview_cmd, gradcheck_cmd,
                    sweep_cmd})
    add_common(sub, opts);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    print_error(err, "InvalidArguments", e.what());
    return 2;
  }

  try {
    if (plot_cmd->parsed()) return cmd_plot(out, histories, labels, sweep_csv, svg);
    Context ctx{resolve_config(opts, sweep_cmd->parsed()), opts.config_path, "dtkd", effective_jobs(opts.jobs), out};
    // Worker count does not change results, so it stays out of the manifest.
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--jobs") {
        ++i;
        continue;
      }
      if (args[i].rfind("--jobs=", 0) == 0) continue;
      ctx.command += " " + args[i];
    }
    if (pretrain_cmd->parsed()) return cmd_pretrain(ctx, arch);
    if (finetune_cmd->parsed()) return cmd_finetune(ctx, backbone, teacher);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ctx, tl, kd);
    if (attribute_cmd->parsed()) return cmd_attribute(ctx, model, index);
    if (quantify_cmd->parsed()) return cmd_quantify(ctx, tl, kd, samples, mask);
    if (preview_cmd->parsed()) return cmd_corrupt_preview(ctx, previews);
    if (gradcheck_cmd->parsed()) return cmd_gradcheck(ctx, configs);
    if (sweep_cmd->parsed()) return cmd_sweep(ctx, opts, backbone, teacher);
  } catch (const Error& e) {
    print_error(err, to_string(e.kind()), error_message(e));
    return 1;
  } catch (const fs::filesystem_error& e) {
    print_error(err, to_string(ErrorKind::IoError), e.what());
    return 1;
  }
  return 1;
}

}  // namespace dtkd::cli
