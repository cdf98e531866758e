#include "bdd/sweep.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "bdd/errors.hpp"

namespace bdd {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string tau_column(const std::vector<double>& taus) {
  std::string out;
  for (std::size_t i = 0; i < taus.size(); ++i) out += (i ? "|" : "") + num(taus[i]);
  return out;
}

// alpha, tau_f, tau_r, beta as written to CSV for one variant.
std::string hyper_columns(const SweepVariant& v, double kd_tau) {
  TrainConfig probe;
  probe.mode = v.mode;
  probe.distill = v.distill;
  probe.kd_tau = kd_tau;
  const DistillConfig d = probe.effective_distill();
  const bool accum = v.mode == LossMode::bdd_accum;
  return num(d.alpha) + "," + (accum ? tau_column(d.tau_set) : num(d.tau_f)) + "," +
         (accum ? tau_column(d.tau_set) : num(d.tau_r)) + "," + num(d.beta);
}

double kd_tau_of(const SweepRow& row) { return row.report.config.value("kd_tau", 4.0); }

template <typename Dataset>
SweepTable sweep_impl(const TrainConfig& cfg, const ModelParams& teacher, const Dataset& train,
                      const Dataset& val, const std::vector<std::uint64_t>& seeds,
                      const std::vector<SweepVariant>& variants, std::size_t threads) {
  if (seeds.empty() || variants.empty()) throw ParameterError("sweep needs seeds and variants");
  SweepTable table;
  table.variants = variants;
  table.seeds = seeds;
  const std::size_t jobs = seeds.size() * variants.size();
  table.rows.resize(jobs);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const std::uint64_t seed = seeds[j / variants.size()];
      const std::size_t v = j % variants.size();
      try {
        TrainConfig run = cfg;
        run.seed = seed;
        run.student.seed = seed;
        run.mode = variants[v].mode;
        run.distill = variants[v].distill;
        table.rows[j] = {seed, v, distill_student(run, teacher, train, val).report};
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return table;
}

}  // namespace

const SweepRow& SweepTable::at(std::uint64_t seed, const std::string& variant) const {
  for (const auto& r : rows)
    if (r.seed == seed && variants[r.variant].name == variant) return r;
  throw IndexError("sweep has no row for seed " + std::to_string(seed) + ", variant " + variant);
}

std::vector<VariantSummary> SweepTable::summaries() const {
  std::vector<VariantSummary> out;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<double> xs;
    for (const auto& r : rows)
      if (r.variant == v) xs.push_back(r.report.final_val_metric);
    VariantSummary s;
    s.name = variants[v].name;
    s.runs = xs.size();
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
      double ss = 0.0;
      for (double x : xs) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    out.push_back(s);
  }
  return out;
}

std::vector<PairedDelta> SweepTable::paired_deltas(const std::string& baseline,
                                                   const std::string& candidate) const {
  std::vector<PairedDelta> out;
  for (std::uint64_t s : seeds) {
    const double b = at(s, baseline).report.final_val_metric;
    const double c = at(s, candidate).report.final_val_metric;
    out.push_back({s, b, c, c - b});
  }
  return out;
}

std::string SweepTable::to_csv(bool include_timing) const {
  std::string out = "seed,mode,alpha,tau_f,tau_r,beta,final_top1_or_miou,wall_time_s\n";
  for (const auto& r : rows) {
    const auto& v = variants[r.variant];
    out += std::to_string(r.seed) + "," + to_string(v.mode) + "," + hyper_columns(v, kd_tau_of(r)) +
           "," + num(r.report.final_val_metric) + "," +
           (include_timing ? num(r.report.wall_time_s) : std::string("0")) + "\n";
  }
  return out;
}

std::string SweepTable::summary_csv() const {
  std::string out = "variant,mode,alpha,tau_f,tau_r,beta,runs,mean,std\n";
  const auto sums = summaries();
  const double kd_tau = rows.empty() ? 4.0 : kd_tau_of(rows.front());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out += variants[v].name + "," + to_string(variants[v].mode) + "," +
           hyper_columns(variants[v], kd_tau) + "," + std::to_string(sums[v].runs) + "," +
           num(sums[v].mean) + "," + num(sums[v].stddev) + "\n";
  }
  return out;
}

std::string paired_delta_csv(const std::vector<PairedDelta>& deltas) {
  std::string out = "seed,baseline,candidate,delta\n";
  for (const auto& d : deltas) {
    out += std::to_string(d.seed) + "," + num(d.baseline) + "," + num(d.candidate) + "," +
           num(d.delta) + "\n";
  }
  return out;
}

std::size_t sweep_threads_from_env() {
  const char* raw = std::getenv("BDD_THREADS");
  if (!raw) return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  return (end != raw && *end == '\0' && v > 0) ? static_cast<std::size_t>(v) : 1;
}

SweepTable run_seed_sweep(const TrainConfig& cfg, const ModelParams& teacher,
                          const ClassificationDataset& train, const ClassificationDataset& val,
                          const std::vector<std::uint64_t>& seeds,
                          const std::vector<SweepVariant>& variants, std::size_t threads) {
  return sweep_impl(cfg, teacher, train, val, seeds, variants, threads);
}

SweepTable run_seed_sweep(const TrainConfig& cfg, const ModelParams& teacher,
                          const SegmentationGridDataset& train, const SegmentationGridDataset& val,
                          const std::vector<std::uint64_t>& seeds,
                          const std::vector<SweepVariant>& variants, std::size_t threads) {
  return sweep_impl(cfg, teacher, train, val, seeds, variants, threads);
}

std::vector<SweepVariant> alpha_grid_variants(const DistillConfig& base,
                                              const std::vector<double>& alphas, double tau) {
  std::vector<SweepVariant> out;
  for (double a : alphas) {
    DistillConfig d = base;
    d.alpha = a;
    d.tau_f = tau;
    d.tau_r = tau;
    out.push_back({"alpha=" + num(a), LossMode::bdd, d});
  }
  return out;
}

std::vector<SweepVariant> temperature_grid_variants(
    const DistillConfig& base, const std::vector<std::pair<double, double>>& pairs,
    bool include_accumulate) {
  std::vector<SweepVariant> out;
  for (const auto& [tf, tr] : pairs) {
    DistillConfig d = base;
    d.tau_f = tf;
    d.tau_r = tr;
    out.push_back({"tau=" + num(tf) + "/" + num(tr), LossMode::bdd, d});
  }
  if (include_accumulate) out.push_back({"accumulate", LossMode::bdd_accum, base});
  return out;
}

}  // namespace bdd
