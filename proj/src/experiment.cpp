#include "bdd/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "bdd/errors.hpp"

namespace bdd {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& field,
                         const std::string& what) const {
    const int line = node.IsDefined() && node.Mark().line >= 0 ? node.Mark().line + 1 : 0;
    throw ConfigError(source_ + ":" + std::to_string(line) + ": " + field + ": " + what);
  }

  void require_map(const YAML::Node& node, const std::string& field,
                   std::initializer_list<const char*> keys) const {
    if (!node.IsMap()) fail(node, field, "expected a mapping");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, join(field, key), "unknown key");
    }
  }

  double real(const YAML::Node& node, const std::string& field) const {
    if (!node.IsScalar()) fail(node, field, "expected a number");
    try {
      return node.as<double>();
    } catch (const YAML::Exception&) {
      fail(node, field, "expected a number, got '" + node.Scalar() + "'");
    }
  }

  std::uint64_t count(const YAML::Node& node, const std::string& field) const {
    if (!node.IsScalar()) fail(node, field, "expected a nonnegative integer");
    const std::string& text = node.Scalar();
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size() || text.front() == '-' || text.front() == '+') {
      fail(node, field, "expected a nonnegative integer, got '" + text + "'");
    }
    return v;
  }

  bool flag(const YAML::Node& node, const std::string& field) const {
    try {
      return node.as<bool>();
    } catch (const YAML::Exception&) {
      fail(node, field, "expected true or false");
    }
  }

  std::string text(const YAML::Node& node, const std::string& field) const {
    if (!node.IsScalar()) fail(node, field, "expected a string");
    return node.Scalar();
  }

  const YAML::Node& sequence(const YAML::Node& node, const std::string& field) const {
    if (!node.IsSequence() || node.size() == 0) fail(node, field, "expected a nonempty list");
    return node;
  }

  static std::string join(const std::string& a, const std::string& b) {
    return a.empty() ? b : a + "." + b;
  }

 private:
  std::string source_;
};

template <class F>
void if_present(const YAML::Node& map, const char* key, F&& apply) {
  if (const YAML::Node n = map[key]) apply(n);
}

void read_data(const Reader& r, const YAML::Node& n, DataConfig& d) {
  r.require_map(n, "data",
                {"task", "classes", "dim", "per_class", "overlap", "separation", "noise", "seed",
                 "train_fraction", "height", "width", "samples", "min_rects", "max_rects"});
  if_present(n, "task", [&](const YAML::Node& v) {
    const std::string t = r.text(v, "data.task");
    if (t == "classification") d.task = Task::classification;
    else if (t == "segmentation") d.task = Task::segmentation;
    else r.fail(v, "data.task", "expected classification or segmentation, got '" + t + "'");
  });
  auto positive = [&](const char* key, std::size_t& out, std::size_t minimum = 1) {
    if_present(n, key, [&](const YAML::Node& v) {
      const std::string f = std::string("data.") + key;
      out = r.count(v, f);
      if (out < minimum) r.fail(v, f, "must be >= " + std::to_string(minimum));
    });
  };
  positive("classes", d.classes, 2);
  positive("dim", d.dim);
  positive("per_class", d.per_class);
  positive("height", d.height, 4);
  positive("width", d.width, 4);
  positive("samples", d.samples);
  positive("min_rects", d.min_rects);
  positive("max_rects", d.max_rects);
  if_present(n, "overlap", [&](const YAML::Node& v) {
    d.overlap = r.real(v, "data.overlap");
    if (!(d.overlap >= 0.0 && d.overlap <= 1.0)) r.fail(v, "data.overlap", "must lie in [0,1]");
  });
  if_present(n, "separation", [&](const YAML::Node& v) {
    d.separation = r.real(v, "data.separation");
    if (!(d.separation >= 0.0)) r.fail(v, "data.separation", "must be >= 0");
  });
  if_present(n, "noise", [&](const YAML::Node& v) {
    d.noise = r.real(v, "data.noise");
    if (!(d.noise > 0.0)) r.fail(v, "data.noise", "must be > 0");
  });
  if_present(n, "seed", [&](const YAML::Node& v) { d.seed = r.count(v, "data.seed"); });
  if_present(n, "train_fraction", [&](const YAML::Node& v) {
    d.train_fraction = r.real(v, "data.train_fraction");
    if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0))
      r.fail(v, "data.train_fraction", "must lie in (0,1)");
  });
  if (d.min_rects > d.max_rects) r.fail(n, "data.min_rects", "exceeds data.max_rects");
}

void read_schedule(const Reader& r, const YAML::Node& n, const std::string& role, TrainConfig& t,
                   MLPSpec& spec) {
  if_present(n, "widths", [&](const YAML::Node& v) {
    const std::string f = role + ".widths";
    r.sequence(v, f);
    spec.layer_widths.clear();
    for (const auto& w : v) {
      const std::size_t width = r.count(w, f);
      if (width == 0) r.fail(w, f, "widths must be >= 1");
      spec.layer_widths.push_back(width);
    }
    if (spec.layer_widths.size() < 2) r.fail(v, f, "needs at least input and output widths");
  });
  if_present(n, "epochs", [&](const YAML::Node& v) {
    t.epochs = r.count(v, role + ".epochs");
    if (t.epochs < 1) r.fail(v, role + ".epochs", "must be >= 1");
  });
  if_present(n, "batch_size", [&](const YAML::Node& v) {
    t.batch_size = r.count(v, role + ".batch_size");
    if (t.batch_size < 1) r.fail(v, role + ".batch_size", "must be >= 1");
  });
  if_present(n, "lr", [&](const YAML::Node& v) {
    t.lr = r.real(v, role + ".lr");
    if (!(t.lr >= 0.0)) r.fail(v, role + ".lr", "must be >= 0");
  });
  if_present(n, "momentum", [&](const YAML::Node& v) {
    t.momentum = r.real(v, role + ".momentum");
    if (!(t.momentum >= 0.0 && t.momentum < 1.0)) r.fail(v, role + ".momentum", "must lie in [0,1)");
  });
}

void read_distill(const Reader& r, const YAML::Node& n, DistillConfig& c) {
  r.require_map(n, "distill",
                {"alpha", "beta", "tau_f", "tau_r", "tau_set", "epsilon", "normalize_by_classes",
                 "tau_square_rescale"});
  auto nonneg = [&](const char* key, double& out, bool strict) {
    if_present(n, key, [&](const YAML::Node& v) {
      const std::string f = std::string("distill.") + key;
      out = r.real(v, f);
      if (strict ? !(out > 0.0) : !(out >= 0.0)) r.fail(v, f, strict ? "must be > 0" : "must be >= 0");
    });
  };
  nonneg("alpha", c.alpha, false);
  nonneg("beta", c.beta, false);
  nonneg("tau_f", c.tau_f, true);
  nonneg("tau_r", c.tau_r, true);
  if_present(n, "tau_set", [&](const YAML::Node& v) {
    r.sequence(v, "distill.tau_set");
    c.tau_set.clear();
    for (const auto& t : v) {
      c.tau_set.push_back(r.real(t, "distill.tau_set"));
      if (!(c.tau_set.back() > 0.0)) r.fail(t, "distill.tau_set", "temperatures must be > 0");
    }
  });
  if_present(n, "epsilon", [&](const YAML::Node& v) {
    c.epsilon = r.real(v, "distill.epsilon");
    if (!(c.epsilon > 0.0 && c.epsilon <= 1e-6)) r.fail(v, "distill.epsilon", "must lie in (0, 1e-6]");
  });
  if_present(n, "normalize_by_classes", [&](const YAML::Node& v) {
    c.normalize_by_classes = r.flag(v, "distill.normalize_by_classes");
  });
  if_present(n, "tau_square_rescale", [&](const YAML::Node& v) {
    c.tau_square_rescale = r.flag(v, "distill.tau_square_rescale");
  });
}

void read_sweep(const Reader& r, const YAML::Node& n, SweepGrid& s) {
  r.require_map(n, "sweep", {"alphas", "alpha_tau", "temperatures", "include_accumulate"});
  if_present(n, "alphas", [&](const YAML::Node& v) {
    r.sequence(v, "sweep.alphas");
    s.alphas.clear();
    for (const auto& a : v) {
      s.alphas.push_back(r.real(a, "sweep.alphas"));
      if (!(s.alphas.back() >= 0.0)) r.fail(a, "sweep.alphas", "must be >= 0");
    }
  });
  if_present(n, "alpha_tau", [&](const YAML::Node& v) {
    s.alpha_tau = r.real(v, "sweep.alpha_tau");
    if (!(s.alpha_tau > 0.0)) r.fail(v, "sweep.alpha_tau", "must be > 0");
  });
  if_present(n, "temperatures", [&](const YAML::Node& v) {
    r.sequence(v, "sweep.temperatures");
    s.temperatures.clear();
    for (const auto& p : v) {
      if (!p.IsSequence() || p.size() != 2) r.fail(p, "sweep.temperatures", "expected [tau_f, tau_r]");
      const double f = r.real(p[0], "sweep.temperatures"), rr = r.real(p[1], "sweep.temperatures");
      if (!(f > 0.0 && rr > 0.0)) r.fail(p, "sweep.temperatures", "temperatures must be > 0");
      s.temperatures.emplace_back(f, rr);
    }
  });
  if_present(n, "include_accumulate", [&](const YAML::Node& v) {
    s.include_accumulate = r.flag(v, "sweep.include_accumulate");
  });
}

void check_widths(const Reader& r, const YAML::Node& root, const std::string& role,
                  const MLPSpec& spec, const DataConfig& d) {
  const YAML::Node at = root[role] && root[role]["widths"] ? root[role]["widths"] : root;
  if (spec.layer_widths.front() != d.dim)
    r.fail(at, role + ".widths", "input width must equal data.dim (" + std::to_string(d.dim) + ")");
  if (spec.layer_widths.back() != d.classes)
    r.fail(at, role + ".widths",
           "output width must equal data.classes (" + std::to_string(d.classes) + ")");
}

}  // namespace

std::string to_string(Task task) {
  return task == Task::classification ? "classification" : "segmentation";
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source) {
  const Reader r(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": syntax: " + e.msg);
  }
  ExperimentConfig cfg;
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  r.require_map(root, "", {"data", "teacher", "student", "distill", "seeds", "sweep"});

  if_present(root, "data", [&](const YAML::Node& n) { read_data(r, n, cfg.data); });
  if (!root["data"] || !root["data"]["dim"]) {
    if (cfg.data.task == Task::segmentation) cfg.data.dim = 8;
  }
  if (!root["data"] || !root["data"]["classes"]) {
    if (cfg.data.task == Task::segmentation) cfg.data.classes = 4;
  }
  if (!root["data"] || !root["data"]["separation"]) {
    if (cfg.data.task == Task::segmentation) cfg.data.separation = 3.0;
  }

  // Defaults follow the data shape; explicit widths override them.
  cfg.teacher.teacher = {{cfg.data.dim, 128, 128, cfg.data.classes}, 1};
  cfg.student.student = {{cfg.data.dim, 8, cfg.data.classes}, 0};
  cfg.student.epochs = 5;
  cfg.student.lr = 0.01;
  cfg.student.mode = cfg.data.task == Task::segmentation ? LossMode::bdd_seg : LossMode::bdd;
  if (cfg.data.task == Task::segmentation) cfg.student.distill = DistillConfig::segmentation_defaults();

  if_present(root, "teacher", [&](const YAML::Node& n) {
    r.require_map(n, "teacher", {"widths", "init_seed", "epochs", "batch_size", "lr", "momentum", "seed"});
    read_schedule(r, n, "teacher", cfg.teacher, cfg.teacher.teacher);
    if_present(n, "init_seed", [&](const YAML::Node& v) {
      cfg.teacher.teacher.seed = r.count(v, "teacher.init_seed");
    });
    if_present(n, "seed", [&](const YAML::Node& v) { cfg.teacher.seed = r.count(v, "teacher.seed"); });
  });
  if_present(root, "student", [&](const YAML::Node& n) {
    r.require_map(n, "student", {"widths", "epochs", "batch_size", "lr", "momentum", "mode", "kd_tau"});
    read_schedule(r, n, "student", cfg.student, cfg.student.student);
    if_present(n, "mode", [&](const YAML::Node& v) {
      try {
        cfg.student.mode = parse_loss_mode(r.text(v, "student.mode"));
      } catch (const ConfigError& e) {
        r.fail(v, "student.mode", e.what());
      }
    });
    if_present(n, "kd_tau", [&](const YAML::Node& v) {
      cfg.student.kd_tau = r.real(v, "student.kd_tau");
      if (!(cfg.student.kd_tau > 0.0)) r.fail(v, "student.kd_tau", "must be > 0");
    });
  });
  if_present(root, "distill", [&](const YAML::Node& n) { read_distill(r, n, cfg.student.distill); });
  if_present(root, "seeds", [&](const YAML::Node& n) {
    r.sequence(n, "seeds");
    cfg.seeds.clear();
    for (const auto& s : n) cfg.seeds.push_back(r.count(s, "seeds"));
  });
  if_present(root, "sweep", [&](const YAML::Node& n) { read_sweep(r, n, cfg.sweep); });

  check_widths(r, root, "teacher", cfg.teacher.teacher, cfg.data);
  check_widths(r, root, "student", cfg.student.student, cfg.data);
  if (cfg.student.mode == LossMode::bdd_seg && cfg.data.task != Task::segmentation) {
    r.fail(root["student"]["mode"], "student.mode", "bdd_seg requires data.task: segmentation");
  }
  cfg.student.teacher = cfg.teacher.teacher;
  cfg.teacher.student = cfg.student.student;
  cfg.student.seed = cfg.seeds.front();
  cfg.student.student.seed = cfg.seeds.front();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.string());
}

void ExperimentConfig::validate() const {
  teacher.validate();
  student.validate();
  student.distill.validate();
  if (seeds.empty()) throw ConfigError("seeds: expected a nonempty list");
  if (sweep.alphas.empty() || sweep.temperatures.empty())
    throw ConfigError("sweep: grids must be nonempty");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json temps = nlohmann::json::array();
  for (const auto& [f, r] : sweep.temperatures) temps.push_back({f, r});
  return {{"data",
           {{"task", to_string(data.task)},
            {"classes", data.classes},
            {"dim", data.dim},
            {"per_class", data.per_class},
            {"overlap", data.overlap},
            {"separation", data.separation},
            {"noise", data.noise},
            {"seed", data.seed},
            {"train_fraction", data.train_fraction},
            {"height", data.height},
            {"width", data.width},
            {"samples", data.samples},
            {"min_rects", data.min_rects},
            {"max_rects", data.max_rects}}},
          {"teacher", bdd::to_json(teacher)},
          {"student", bdd::to_json(student)},
          {"seeds", seeds},
          {"sweep",
           {{"alphas", sweep.alphas},
            {"alpha_tau", sweep.alpha_tau},
            {"temperatures", temps},
            {"include_accumulate", sweep.include_accumulate}}}};
}

ClassificationSplits make_classification_data(const DataConfig& cfg) {
  const auto full = gen_gaussian_mixture(cfg.classes, cfg.dim, cfg.per_class, cfg.overlap, cfg.seed,
                                         {cfg.separation, cfg.noise});
  auto [train, val] = train_val_split(full, cfg.train_fraction, cfg.seed);
  return {std::move(train), std::move(val)};
}

SegmentationSplits make_segmentation_data(const DataConfig& cfg) {
  GridOptions opts;
  opts.feature_dim = cfg.dim;
  opts.min_rects = cfg.min_rects;
  opts.max_rects = cfg.max_rects;
  opts.separation = cfg.separation;
  opts.noise = cfg.noise;
  const auto full =
      gen_segmentation_grids(cfg.classes, cfg.height, cfg.width, cfg.samples, cfg.seed, opts);
  auto [train, val] = train_val_split(full, cfg.train_fraction, cfg.seed);
  return {std::move(train), std::move(val)};
}

}  // namespace bdd
