#include "bdd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "bdd/errors.hpp"
#include "bdd/ops.hpp"
#include "bdd/optim.hpp"

namespace bdd {

namespace {

// Rows of a flat [rows, D] input grouped into items: one row per sample for
// classification, H*W rows per grid for dense prediction.
struct TaskView {
  Tensor inputs;
  std::span<const int> labels;
  std::size_t items = 0;
  std::size_t rows_per_item = 1;
  std::size_t height = 1, width = 1;
  std::size_t classes = 0;
  bool dense = false;
};

TaskView view_of(const ClassificationDataset& ds) {
  return {ds.features, ds.labels, ds.size(), 1, 1, 1, ds.class_count, false};
}

TaskView view_of(const SegmentationGridDataset& ds, const Tensor& cells) {
  return {cells,       ds.labels,   ds.size(),      ds.height() * ds.width(),
          ds.height(), ds.width(),  ds.class_count, true};
}

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t items = 0;
};

Batch gather(const TaskView& task, std::span<const std::size_t> items) {
  const std::size_t d = task.inputs.extent(1), r = task.rows_per_item;
  Batch b;
  b.items = items.size();
  std::vector<double> x(items.size() * r * d);
  b.labels.resize(items.size() * r);
  const auto src = task.inputs.values();
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::copy_n(src.begin() + items[i] * r * d, r * d, x.begin() + i * r * d);
    std::copy_n(task.labels.begin() + items[i] * r, r, b.labels.begin() + i * r);
  }
  b.inputs = Tensor::from({items.size() * r, d}, std::move(x));
  return b;
}

// [b*H*W, C] cell logits -> [b, C, H, W]
Tensor to_dense(const Tensor& cell_logits, const TaskView& task, std::size_t items) {
  const std::size_t c = cell_logits.extent(1);
  return permute(reshape(cell_logits, {items, task.height, task.width, c}), {0, 3, 1, 2});
}

DistillTerm term_for(LossMode mode) {
  switch (mode) {
    case LossMode::kd:
      return DistillTerm::kd;
    case LossMode::bdd_accum:
      return DistillTerm::bdd_accumulated;
    default:
      return DistillTerm::bdd;
  }
}

struct Objective {
  LossMode mode;
  DistillConfig distill;
  const ModelParams* teacher = nullptr;
};

struct ObjectiveValue {
  Tensor loss;
  double ce = 0.0;
};

ObjectiveValue evaluate_objective(const Objective& obj, const ModelParams& params,
                                  const TaskView& task, const Batch& batch) {
  Tensor logits = forward_logits(params, batch.inputs);
  if (obj.mode == LossMode::ce) {
    Tensor ce = cross_entropy(logits, batch.labels);
    return {ce, ce.item()};
  }
  Tensor teacher_logits = predict_logits(*obj.teacher, batch.inputs);
  Tensor ce_probe = cross_entropy(logits.detach(), batch.labels);
  if (task.dense) {
    logits = to_dense(logits, task, batch.items);
    teacher_logits = to_dense(teacher_logits, task, batch.items).detach();
  }
  LogitBatch pair(logits, teacher_logits);
  return {overall_loss(pair, batch.labels, obj.distill, term_for(obj.mode)), ce_probe.item()};
}

// Mean objective over the whole set, evaluated in fixed-size chunks.
std::pair<double, double> full_objective(const Objective& obj, const ModelParams& params,
                                         const TaskView& task, std::size_t chunk) {
  ModelParams frozen = params.clone();
  frozen.set_requires_grad(false);
  double loss = 0.0, ce = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx(task.items);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < task.items; start += chunk) {
    const std::size_t len = std::min(chunk, task.items - start);
    const Batch b = gather(task, std::span(idx).subspan(start, len));
    const auto v = evaluate_objective(obj, frozen, task, b);
    loss += v.loss.item() * static_cast<double>(len);
    ce += v.ce * static_cast<double>(len);
    count += len;
  }
  return {loss / static_cast<double>(count), ce / static_cast<double>(count)};
}

double task_metric(const ModelParams& params, const TaskView& task) {
  const Tensor logits = predict_logits(params, task.inputs);
  if (!task.dense) return top1_from_logits(logits, task.labels);
  return miou_from_predictions(argmax_rows(logits), task.labels, task.classes);
}

double task_ce(const ModelParams& params, const TaskView& task) {
  return cross_entropy(predict_logits(params, task.inputs), task.labels).item();
}

std::string split_digest(const TaskView& task) {
  std::vector<double> buf(task.inputs.values().begin(), task.inputs.values().end());
  for (int y : task.labels) buf.push_back(static_cast<double>(y));
  return fingerprint(buf);
}

TrainedModel fit(const TrainConfig& cfg, const MLPSpec& spec, const Objective& obj,
                 const TaskView& train, const TaskView& val, const std::string& role) {
  const auto t0 = std::chrono::steady_clock::now();
  if (spec.input_width() != train.inputs.extent(1)) {
    throw ConfigError(role + " input width " + std::to_string(spec.input_width()) +
                      " does not match feature dimension " +
                      std::to_string(train.inputs.extent(1)));
  }
  if (spec.class_count() != train.classes) {
    throw ConfigError(role + " output width " + std::to_string(spec.class_count()) +
                      " does not match class count " + std::to_string(train.classes));
  }

  ModelParams params = init_params(spec);
  MetricsReport report;
  report.role = role;
  report.metric = train.dense ? "miou" : "top1";
  report.mode = obj.mode;
  report.seed = cfg.seed;
  report.config = to_json(cfg);
  report.init_fingerprint = fingerprint(params);
  report.split_fingerprint = split_digest(train);
  std::tie(report.initial_train_loss, report.initial_train_ce) =
      full_objective(obj, params, train, cfg.batch_size);

  Sgd opt(params.tensors(), cfg.lr, cfg.momentum);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.items);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const Batch b = gather(train, std::span(order).subspan(start, len));
      const Tensor loss = evaluate_objective(obj, params, train, b).loss;
      if (!std::isfinite(loss.item())) {
        throw DivergenceError(role + " training diverged: loss " + std::to_string(loss.item()) +
                              " at epoch " + std::to_string(epoch) + ", batch offset " +
                              std::to_string(start));
      }
      backward(loss);
      opt.step();
      loss_sum += loss.item() * static_cast<double>(len);
      seen += len;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_metric = task_metric(params, train);
    rec.val_loss = task_ce(params, val);
    rec.val_metric = task_metric(params, val);
    report.epochs.push_back(rec);
  }

  report.final_train_loss = full_objective(obj, params, train, cfg.batch_size).first;
  if (report.epochs.empty()) {
    report.final_train_metric = task_metric(params, train);
    report.final_val_metric = task_metric(params, val);
  } else {
    report.final_train_metric = report.epochs.back().train_metric;
    report.final_val_metric = report.epochs.back().val_metric;
  }
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(params), std::move(report)};
}

void check_teacher(const ModelParams& teacher, const MLPSpec& student) {
  for (const auto& t : teacher.tensors()) {
    if (t.requires_grad()) throw ContractError("distill_student: teacher must be frozen");
  }
  if (teacher.layers.empty() ||
      teacher.layers.back().weight.extent(1) != student.class_count()) {
    throw ConfigError("teacher and student class counts differ");
  }
}

TrainedModel teacher_fit(const TrainConfig& cfg, const TaskView& train, const TaskView& val) {
  TrainConfig teacher_cfg = cfg;
  teacher_cfg.mode = LossMode::ce;
  teacher_cfg.validate();
  TrainedModel out =
      fit(teacher_cfg, cfg.teacher, {LossMode::ce, cfg.distill, nullptr}, train, val, "teacher");
  out.params.set_requires_grad(false);
  return out;
}

TrainedModel student_fit(const TrainConfig& cfg, const ModelParams& teacher,
                         const TaskView& train, const TaskView& val) {
  cfg.validate();
  if (cfg.mode == LossMode::bdd_seg && !train.dense) {
    throw ConfigError("mode bdd_seg requires segmentation data");
  }
  if (cfg.mode != LossMode::ce) check_teacher(teacher, cfg.student);
  Objective obj{cfg.mode, cfg.effective_distill(), &teacher};
  return fit(cfg, cfg.student, obj, train, val, "student");
}

void bump(std::vector<std::uint64_t>& hist, double p) {
  const std::size_t bins = hist.size();
  auto b = static_cast<std::size_t>(p * static_cast<double>(bins));
  hist[std::min(b, bins - 1)] += 1;
}

std::vector<std::uint64_t> clip_series(std::vector<std::uint64_t> h) {
  if (h.size() < 2) return h;
  std::vector<std::uint64_t> sorted = h;
  std::nth_element(sorted.begin(), sorted.begin() + 1, sorted.end(), std::greater<>());
  const std::uint64_t cap = sorted[1];
  for (auto& v : h) v = std::min(v, cap);
  return h;
}

}  // namespace

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::ce:
      return "ce";
    case LossMode::kd:
      return "kd";
    case LossMode::bdd:
      return "bdd";
    case LossMode::bdd_accum:
      return "bdd_accum";
    case LossMode::bdd_seg:
      return "bdd_seg";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  for (LossMode m : {LossMode::ce, LossMode::kd, LossMode::bdd, LossMode::bdd_accum,
                     LossMode::bdd_seg}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown loss mode '" + name + "' (expected ce|kd|bdd|bdd_accum|bdd_seg)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  // lr == 0 is accepted so a run can be used as a no-op baseline.
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(kd_tau > 0.0)) throw ConfigError("kd_tau must be > 0");
  teacher.validate();
  student.validate();
  distill.validate();
}

DistillConfig TrainConfig::effective_distill() const {
  DistillConfig d = distill;
  if (mode == LossMode::kd) {
    d.tau_f = kd_tau;
    d.tau_r = kd_tau;
    d.alpha = 0.0;
  } else if (mode == LossMode::ce) {
    d.alpha = 0.0;
    d.beta = 0.0;
  }
  return d;
}

nlohmann::json to_json(const MLPSpec& spec) {
  return {{"layer_widths", spec.layer_widths}, {"seed", spec.seed}};
}

nlohmann::json to_json(const DistillConfig& cfg) {
  return {{"alpha", cfg.alpha},
          {"beta", cfg.beta},
          {"tau_f", cfg.tau_f},
          {"tau_r", cfg.tau_r},
          {"tau_set", cfg.tau_set},
          {"epsilon", cfg.epsilon},
          {"normalize_by_classes", cfg.normalize_by_classes},
          {"tau_square_rescale", cfg.tau_square_rescale}};
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},     {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},             {"momentum", cfg.momentum},
          {"seed", cfg.seed},         {"mode", to_string(cfg.mode)},
          {"kd_tau", cfg.kd_tau},     {"teacher", to_json(cfg.teacher)},
          {"student", to_json(cfg.student)}, {"distill", to_json(cfg.distill)}};
}

nlohmann::json MetricsReport::to_json(bool include_timing) const {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& e : epochs) {
    trace.push_back({{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_metric", e.train_metric},
                     {"val_loss", e.val_loss},
                     {"val_metric", e.val_metric}});
  }
  nlohmann::json j = {{"role", role},
                      {"metric", metric},
                      {"mode", to_string(mode)},
                      {"seed", seed},
                      {"initial_train_loss", initial_train_loss},
                      {"initial_train_ce", initial_train_ce},
                      {"epochs", trace},
                      {"final_train_loss", final_train_loss},
                      {"final_train_metric", final_train_metric},
                      {"final_val_metric", final_val_metric},
                      {"init_fingerprint", init_fingerprint},
                      {"split_fingerprint", split_fingerprint},
                      {"config", config}};
  if (include_timing) j["wall_time_s"] = wall_time_s;
  return j;
}

TrainedModel train_teacher(const TrainConfig& cfg, const ClassificationDataset& train,
                           const ClassificationDataset& val) {
  return teacher_fit(cfg, view_of(train), view_of(val));
}

TrainedModel train_teacher(const TrainConfig& cfg, const SegmentationGridDataset& train,
                           const SegmentationGridDataset& val) {
  const Tensor tc = cell_features(train), vc = cell_features(val);
  return teacher_fit(cfg, view_of(train, tc), view_of(val, vc));
}

TrainedModel distill_student(const TrainConfig& cfg, const ModelParams& teacher,
                             const ClassificationDataset& train, const ClassificationDataset& val) {
  return student_fit(cfg, teacher, view_of(train), view_of(val));
}

TrainedModel distill_student(const TrainConfig& cfg, const ModelParams& teacher,
                             const SegmentationGridDataset& train,
                             const SegmentationGridDataset& val) {
  const Tensor tc = cell_features(train), vc = cell_features(val);
  return student_fit(cfg, teacher, view_of(train, tc), view_of(val, vc));
}

Tensor predict_logits(const ModelParams& params, const Tensor& x) {
  bool needs_copy = false;
  for (const auto& t : params.tensors()) needs_copy = needs_copy || t.requires_grad();
  if (!needs_copy) return forward_logits(params, x.detach());
  ModelParams frozen = params.clone();
  frozen.set_requires_grad(false);
  return forward_logits(frozen, x.detach());
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.dim() != 2) throw DimensionError("argmax_rows expects [N,C]");
  const std::size_t n = logits.extent(0), c = logits.extent(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits[i * c + k] > logits[i * c + best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

double top1_from_logits(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw DimensionError("top1: label count mismatch");
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double miou_from_predictions(std::span<const int> predicted, std::span<const int> truth,
                             std::size_t classes) {
  if (predicted.size() != truth.size()) throw DimensionError("miou: length mismatch");
  std::vector<std::uint64_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= classes ||
        static_cast<std::size_t>(t) >= classes) {
      throw IndexError("miou: label outside [0, C)");
    }
    if (p == t) {
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::uint64_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    total += static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++present;
  }
  if (present == 0) throw ContractError("miou: no class present in prediction or truth");
  return total / static_cast<double>(present);
}

double evaluate_top1(const ModelParams& params, const ClassificationDataset& data) {
  return task_metric(params, view_of(data));
}

double evaluate_miou(const ModelParams& params, const SegmentationGridDataset& data) {
  const Tensor cells = cell_features(data);
  return task_metric(params, view_of(data, cells));
}

ProbabilityHistogram ProbabilityHistogram::clipped() const {
  ProbabilityHistogram h = *this;
  h.teacher_positive = clip_series(teacher_positive);
  h.teacher_negative = clip_series(teacher_negative);
  h.student_positive = clip_series(student_positive);
  h.student_negative = clip_series(student_negative);
  return h;
}

nlohmann::json ProbabilityHistogram::to_json() const {
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = static_cast<double>(i) / static_cast<double>(bins);
  const ProbabilityHistogram c = clipped();
  auto series = [](const ProbabilityHistogram& h) {
    return nlohmann::json{{"teacher_positive", h.teacher_positive},
                          {"teacher_negative", h.teacher_negative},
                          {"student_positive", h.student_positive},
                          {"student_negative", h.student_negative}};
  };
  return {{"tau", tau}, {"bins", bins}, {"edges", edges}, {"counts", series(*this)},
          {"clipped_counts", series(c)}};
}

ProbabilityHistogram probability_histograms(const ModelParams& teacher, const ModelParams& student,
                                            const ClassificationDataset& data, double tau,
                                            std::size_t bins) {
  if (bins == 0) throw ParameterError("histogram needs at least one bin");
  ProbabilityHistogram h;
  h.tau = tau;
  h.bins = bins;
  for (auto* v : {&h.teacher_positive, &h.teacher_negative, &h.student_positive,
                  &h.student_negative})
    v->assign(bins, 0);
  const Tensor pt = softmax_tau(predict_logits(teacher, data.features), tau);
  const Tensor ps = softmax_tau(predict_logits(student, data.features), tau);
  const std::size_t c = data.class_count;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const bool positive = static_cast<int>(k) == data.labels[i];
      bump(positive ? h.teacher_positive : h.teacher_negative, pt[i * c + k]);
      bump(positive ? h.student_positive : h.student_negative, ps[i * c + k]);
    }
  }
  return h;
}

std::string fingerprint(std::span<const double> values) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      hash ^= b;
      hash *= 1099511628211ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

std::string fingerprint(const ModelParams& params) {
  std::vector<double> all;
  for (const auto& t : params.tensors()) all.insert(all.end(), t.values().begin(), t.values().end());
  return fingerprint(all);
}

}  // namespace bdd
