#include "bdd/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "bdd/errors.hpp"

namespace bdd {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const fs::path& out) {
  fs::create_directories(out);
  return out;
}

std::string fixed(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

std::vector<std::size_t> widths_of(const ModelParams& params) {
  std::vector<std::size_t> w;
  for (const auto& layer : params.layers) {
    if (w.empty()) w.push_back(layer.weight.extent(0));
    w.push_back(layer.weight.extent(1));
  }
  return w;
}

std::string widths_string(const std::vector<std::size_t>& w) {
  std::string s = "[";
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s + "]";
}

ClassificationDataset histogram_view(const ClassificationDataset& ds) { return ds; }

ClassificationDataset histogram_view(const SegmentationGridDataset& ds) {
  return {cell_features(ds), ds.labels, ds.class_count, ds.seed, ds.split};
}

double evaluate(const ModelParams& params, const ClassificationDataset& ds) {
  return evaluate_top1(params, ds);
}

double evaluate(const ModelParams& params, const SegmentationGridDataset& ds) {
  return evaluate_miou(params, ds);
}

template <class F>
int with_data(const DataConfig& cfg, F&& body) {
  if (cfg.task == Task::classification) {
    const auto s = make_classification_data(cfg);
    return body(s.train, s.val);
  }
  const auto s = make_segmentation_data(cfg);
  return body(s.train, s.val);
}

// Loads out/teacher.ckpt when it exists, otherwise trains and saves it.
template <class Data>
ModelParams obtain_teacher(const ExperimentConfig& cfg, const Data& train, const Data& val,
                           const fs::path& out, std::ostream& log, bool timing = true,
                           std::optional<double>* wall_time = nullptr) {
  const fs::path ckpt = out / "teacher.ckpt";
  if (fs::exists(ckpt)) {
    ModelParams params = load_checkpoint(ckpt);
    if (widths_of(params) != cfg.teacher.teacher.layer_widths) {
      throw ConfigError(ckpt.string() + ": widths " + widths_string(widths_of(params)) +
                        " do not match teacher.widths " +
                        widths_string(cfg.teacher.teacher.layer_widths));
    }
    params.set_requires_grad(false);
    log << "teacher: loaded " << ckpt.string() << "\n";
    return params;
  }
  TrainedModel t = train_teacher(cfg.teacher, train, val);
  save_checkpoint(t.params, ckpt);
  write_json(out / "teacher_metrics.json", t.report.to_json(timing));
  if (wall_time) *wall_time = t.report.wall_time_s;
  log << "teacher: trained " << widths_string(cfg.teacher.teacher.layer_widths) << ", val "
      << t.report.metric << " " << fixed(t.report.final_val_metric) << "\n";
  return t.params;
}

SweepTable sweep_table(const ExperimentConfig& cfg, const ModelParams& teacher,
                       const ClassificationDataset& train, const ClassificationDataset& val,
                       const std::vector<SweepVariant>& variants, std::size_t threads) {
  return run_seed_sweep(cfg.student, teacher, train, val, cfg.seeds, variants, threads);
}

SweepTable sweep_table(const ExperimentConfig& cfg, const ModelParams& teacher,
                       const SegmentationGridDataset& train, const SegmentationGridDataset& val,
                       const std::vector<SweepVariant>& variants, std::size_t threads) {
  return run_seed_sweep(cfg.student, teacher, train, val, cfg.seeds, variants, threads);
}

void print_summary(std::ostream& log, const std::string& title, const SweepTable& table) {
  log << title << "\n";
  for (const auto& s : table.summaries()) {
    log << "  " << std::left << std::setw(14) << s.name << " " << fixed(s.mean) << " +- "
        << fixed(s.stddev) << "  (n=" << s.runs << ")\n";
  }
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto dash = item.find('-', 1);
    try {
      std::size_t used = 0;
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(item, &used));
        if (used != item.size() || item.front() == '-') throw std::invalid_argument(item);
      } else {
        const std::string lo_s = item.substr(0, dash), hi_s = item.substr(dash + 1);
        const auto lo = std::stoull(lo_s, &used);
        if (used != lo_s.size()) throw std::invalid_argument(item);
        const auto hi = std::stoull(hi_s, &used);
        if (used != hi_s.size() || hi < lo || hi_s.front() == '-') throw std::invalid_argument(item);
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      }
    } catch (const std::exception&) {
      throw ConfigError("--seeds: cannot parse '" + item + "' (expected e.g. 0,1,2 or 0-9)");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds: empty list");
  return seeds;
}

ExperimentConfig resolve_config(const CommandOptions& opts) {
  ExperimentConfig cfg =
      opts.config ? load_experiment_config(*opts.config) : parse_experiment_config("", "<defaults>");
  if (opts.seeds) {
    cfg.seeds = *opts.seeds;
    cfg.student.seed = cfg.seeds.front();
    cfg.student.student.seed = cfg.seeds.front();
  }
  if (opts.mode) {
    cfg.student.mode = parse_loss_mode(*opts.mode);
    if (cfg.student.mode == LossMode::bdd_seg && cfg.data.task != Task::segmentation) {
      throw ConfigError("--mode bdd_seg requires a segmentation config");
    }
  }
  return cfg;
}

int cmd_gradcheck(const GradcheckOptions& opts, const fs::path& out, std::ostream& log) {
  if (opts.trials < 1) throw ConfigError("--trials must be >= 1");
  prepare_out(out);
  const GradcheckReport report = run_gradcheck_suite(opts);
  write_json(out / "gradcheck.json", report.to_json());
  for (const auto& e : report.entries) {
    log << std::left << std::setw(22) << e.loss << " max_rel_err " << std::scientific
        << std::setprecision(3) << e.max_relative_error << std::defaultfloat
        << (e.passed ? "  ok" : "  FAIL") << "\n";
    if (!e.passed) log << "  offending input: " << e.worst_input.dump() << "\n";
  }
  return report.passed() ? 0 : 1;
}

int cmd_properties(const PropertyOptions& opts, const fs::path& out, std::ostream& log) {
  prepare_out(out);
  const PropertyReport report = run_property_suite(opts);
  write_json(out / "properties.json", report.to_json());
  for (const auto& r : report.results) {
    log << std::left << std::setw(32) << r.name << " " << std::setprecision(6) << r.measured << " "
        << r.relation << " " << r.threshold << (r.passed ? "  ok" : "  FAIL") << "\n";
  }
  return report.passed() ? 0 : 1;
}

int cmd_gen_data(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = prepare_out(opts.out);
  return with_data(cfg.data, [&](const auto& train, const auto& val) {
    save_dataset(train, out / "train.bin");
    save_dataset(val, out / "val.bin");
    write_json(out / "data.json", {{"task", to_string(cfg.data.task)},
                                   {"config", cfg.to_json()["data"]},
                                   {"train_size", train.size()},
                                   {"val_size", val.size()},
                                   {"train_fingerprint", fingerprint(train.features.values())},
                                   {"val_fingerprint", fingerprint(val.features.values())}});
    log << "wrote " << train.size() << " train / " << val.size() << " val samples to "
        << out.string() << "\n";
    return 0;
  });
}

int cmd_distill(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = prepare_out(opts.out);
  return with_data(cfg.data, [&](const auto& train, const auto& val) {
    std::optional<double> teacher_time;
    const ModelParams teacher = obtain_teacher(cfg, train, val, out, log, true, &teacher_time);
    const TrainedModel student = distill_student(cfg.student, teacher, train, val);
    save_checkpoint(student.params, out / "student.ckpt");

    nlohmann::json metrics = student.report.to_json(false);
    metrics["teacher_val_metric"] = evaluate(teacher, val);
    write_json(out / "metrics.json", metrics);
    write_json(out / "timing.json",
               {{"student_wall_time_s", student.report.wall_time_s},
                {"teacher_wall_time_s",
                 teacher_time ? nlohmann::json(*teacher_time) : nlohmann::json(nullptr)}});

    const ProbabilityHistogram hist =
        probability_histograms(teacher, student.params, histogram_view(val), 4.0, 64);
    write_json(out / "histogram.json", {{"raw", hist.to_json()}, {"clipped", hist.clipped().to_json()}});

    log << "student (" << to_string(cfg.student.mode) << ", seed " << cfg.student.seed << "): val "
        << student.report.metric << " " << fixed(student.report.final_val_metric) << "\n";
    return 0;
  });
}

int cmd_sweep(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = prepare_out(opts.out);
  const bool dense = cfg.data.task == Task::segmentation;
  const DistillConfig& base = cfg.student.distill;

  LossMode candidate = cfg.student.mode;
  if (candidate == LossMode::ce || candidate == LossMode::kd)
    candidate = dense ? LossMode::bdd_seg : LossMode::bdd;
  const std::vector<SweepVariant> baseline{
      {"ce", LossMode::ce, base}, {"kd", LossMode::kd, base}, {to_string(candidate), candidate, base}};

  auto alpha = alpha_grid_variants(base, cfg.sweep.alphas, cfg.sweep.alpha_tau);
  auto temps = temperature_grid_variants(base, cfg.sweep.temperatures, cfg.sweep.include_accumulate);
  if (dense) {
    for (auto* grid : {&alpha, &temps})
      for (auto& v : *grid)
        if (v.mode == LossMode::bdd) v.mode = LossMode::bdd_seg;
  }

  return with_data(cfg.data, [&](const auto& train, const auto& val) {
    const ModelParams teacher = obtain_teacher(cfg, train, val, out, log, opts.timing);
    auto emit = [&](const std::string& stem, const std::vector<SweepVariant>& variants) {
      const SweepTable table = sweep_table(cfg, teacher, train, val, variants, opts.threads);
      write_text(out / (stem + ".csv"), table.to_csv(opts.timing));
      write_text(out / (stem + "_summary.csv"), table.summary_csv());
      print_summary(log, stem, table);
      return table;
    };
    const SweepTable base_table = emit("baseline", baseline);
    write_text(out / "delta_ce_kd.csv", paired_delta_csv(base_table.paired_deltas("ce", "kd")));
    write_text(out / "delta_kd_bdd.csv",
               paired_delta_csv(base_table.paired_deltas("kd", to_string(candidate))));
    emit("alpha_sweep", alpha);
    emit("tau_sweep", temps);
    return 0;
  });
}

int cmd_eval(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = opts.out;
  return with_data(cfg.data, [&](const auto& train, const auto& val) {
    nlohmann::json models = nlohmann::json::object();
    for (const char* name : {"teacher", "student"}) {
      const fs::path ckpt = out / (std::string(name) + ".ckpt");
      if (!fs::exists(ckpt)) continue;
      const ModelParams params = load_checkpoint(ckpt);
      const auto w = widths_of(params);
      if (w.front() != cfg.data.dim || w.back() != cfg.data.classes) {
        throw ConfigError(ckpt.string() + ": widths " + widths_string(w) +
                          " do not fit the configured data");
      }
      const double v = evaluate(params, val), t = evaluate(params, train);
      models[name] = {{"widths", w}, {"val_metric", v}, {"train_metric", t},
                      {"fingerprint", fingerprint(params)}};
      log << name << ": val " << fixed(v) << ", train " << fixed(t) << "\n";
    }
    if (models.empty()) throw ConfigError("no teacher.ckpt or student.ckpt in " + out.string());
    write_json(out / "eval.json", {{"task", to_string(cfg.data.task)},
                                   {"metric", cfg.data.task == Task::classification ? "top1" : "miou"},
                                   {"models", models}});
    return 0;
  });
}

}  // namespace bdd
