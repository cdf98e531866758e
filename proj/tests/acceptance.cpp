// One line per criterion; exit status 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "bdd/commands.hpp"
#include "bdd/sweep.hpp"

using namespace bdd;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-6;
constexpr double kGradBudgetS = 10.0;
constexpr double kIdentityTol = 1e-12;
constexpr double kNonnegFloor = -1e-12;
constexpr double kOracleTol = 1e-6;
constexpr double kZeroAvoidRatio = 1e3;
constexpr double kChannelTol = 1e-10;
constexpr double kTeacherFloor = 0.90;
constexpr double kCeGap = 0.02;
constexpr double kBddSlack = 0.005;
constexpr double kDistillBudgetS = 300.0;
constexpr double kAlphaZeroTol = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string g(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Tensor random_logits(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 2.5);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

struct Outcome {
  std::string id;
  bool passed = false;
  std::string detail;
};

// Everything a criterion produced, compared byte-wise on the rerun.
struct Run {
  std::vector<Outcome> outcomes;
  std::map<std::string, std::string> artifacts;
};

// Direct summation of KL(p || q) for softmax(a / tau), softmax(b / tau).
double kl_direct(const std::vector<double>& a, const std::vector<double>& b, double tau) {
  auto soft = [tau](const std::vector<double>& z) {
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] / tau);
    for (double& x : p) x /= s;
    return p;
  };
  const auto p = soft(a), q = soft(b);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

void a1(Run& run) {
  const auto t0 = Clock::now();
  GradcheckOptions o;
  o.trials = 50;
  o.tolerance = kGradTol;
  const auto report = run_gradcheck_suite(o);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_loss;
  for (const auto& e : report.entries) {
    if (e.max_relative_error >= worst) {
      worst = e.max_relative_error;
      worst_loss = e.loss;
    }
  }
  run.outcomes.push_back({"A1", report.passed() && worst < kGradTol && elapsed < kGradBudgetS,
                          "gradcheck 5 losses x 50 trials, max rel err " + g(worst, 3) + " (" +
                              worst_loss + ") < " + g(kGradTol) + ", " + g(elapsed, 3) + " s < " +
                              g(kGradBudgetS) + " s"});
  run.artifacts["A1 gradcheck.json"] = report.to_json().dump();
}

void a2(Run& run) {
  std::mt19937_64 rng(2);
  double worst_identity = 0.0, min_kl = INFINITY;
  for (int i = 0; i < 1000; ++i) {
    const Tensor s = random_logits({1, 10}, rng), t = random_logits({1, 10}, rng);
    const LogitBatch pair(s, t), self(s, s);
    min_kl = std::min({min_kl, forward_kl(pair, 1.0).item(), reverse_kl(pair, 1.0).item()});
    worst_identity = std::max({worst_identity, std::abs(forward_kl(self, 1.0).item()),
                               std::abs(reverse_kl(self, 1.0).item())});
  }
  const LogitBatch pair(Tensor::from({1, 2}, {0.0, 0.0}), Tensor::from({1, 2}, {2.0, 0.0}));
  const double fwd = forward_kl(pair, 1.0).item(), rev = reverse_kl(pair, 1.0).item();
  const double fwd_oracle = kl_direct({2, 0}, {0, 0}, 1.0), rev_oracle = kl_direct({0, 0}, {2, 0}, 1.0);
  const double err = std::max(std::abs(fwd - fwd_oracle), std::abs(rev - rev_oracle));
  const bool ok = worst_identity < kIdentityTol && min_kl > kNonnegFloor && err < kOracleTol &&
                  std::abs(fwd - rev) > 0.1;
  run.outcomes.push_back(
      {"A2", ok,
       "KL(p||p) max " + g(worst_identity, 3) + ", min KL over 1000 pairs " + g(min_kl, 4) +
           ", [2,0]/[0,0] forward " + g(fwd, 9) + " reverse " + g(rev, 9) + " vs oracle " +
           g(fwd_oracle, 9) + " / " + g(rev_oracle, 9) + " (err " + g(err, 2) + ")"});
  run.artifacts["A2"] = g(worst_identity, 17) + " " + g(min_kl, 17) + " " + g(fwd, 17) + " " + g(rev, 17);
}

void a3(Run& run) {
  const auto probe = zero_avoiding_probe({0.0, 0.0, -20.0}, {0.0, 0.0, 0.0}, 2, 1.0);
  const double ratio = probe.logit_ratio();
  run.outcomes.push_back({"A3", ratio > kZeroAvoidRatio,
                          "logit space: |dKL_r/dz2| " + g(std::abs(probe.reverse_logit_grad)) +
                              " / |dKL_f/dz2| " + g(std::abs(probe.forward_logit_grad)) + " = " +
                              g(ratio, 4) + ", needs > " + g(kZeroAvoidRatio)});
  // Same class, derivatives taken with respect to the student probability.
  const double pratio = probe.prob_ratio();
  run.outcomes.push_back({"A3-prob", pratio > kZeroAvoidRatio,
                          "probability space: |dKL_r/dp2| " + g(std::abs(probe.reverse_prob_grad)) +
                              " / |dKL_f/dp2| " + g(std::abs(probe.forward_prob_grad), 4) + " = " +
                              g(pratio, 4) + ", p_T(2) = " + g(probe.teacher_prob, 4)});
  run.artifacts["A3"] = g(ratio, 17) + " " + g(pratio, 17);
}

void a4(Run& run) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> rows(1, 8), cols(2, 12);
  double worst = 0.0;
  std::string trace;
  for (int i = 0; i < 100; ++i) {
    DistillConfig cfg;
    cfg.alpha = 10.0 * unit(rng);
    cfg.tau_f = 0.25 + 10.0 * unit(rng);
    cfg.tau_r = 0.25 + 10.0 * unit(rng);
    const Shape shape{rows(rng), cols(rng)};
    const LogitBatch pair(random_logits(shape, rng), random_logits(shape, rng));
    const double fused = bdd_loss(pair, cfg).item();
    const double composed = forward_kl(pair, cfg.tau_f).item() + cfg.alpha * reverse_kl(pair, cfg.tau_r).item();
    worst = std::max(worst, std::abs(fused - composed));
    trace += g(fused, 17) + "\n";
  }
  run.outcomes.push_back({"A4", worst == 0.0,
                          "bdd_loss - (forward_kl(tau_f) + alpha reverse_kl(tau_r)) over 100 configs, max |diff| " +
                              g(worst, 3) + " (must be 0)"});
  run.artifacts["A4"] = trace;
}

void a5(Run& run) {
  std::mt19937_64 rng(5);
  const DistillConfig cfg;
  double worst = 0.0;
  std::string trace;
  for (int i = 0; i < 20; ++i) {
    const Tensor s = random_logits({2, 4, 3, 3}, rng), t = random_logits({2, 4, 3, 3}, rng);
    const double fused = bdd_seg_loss(LogitBatch(s, t), cfg).item();
    worst = std::max(worst, std::abs(fused - seg_loss_channel_loop(s, t, cfg)));
    trace += g(fused, 17) + "\n";
  }
  run.outcomes.push_back({"A5", worst < kChannelTol,
                          "bdd_seg_loss vs per-channel loop on 20 random [2,4,3,3] pairs, max |diff| " +
                              g(worst, 3) + " < " + g(kChannelTol)});
  run.artifacts["A5"] = trace;
}

double mean_of(const SweepTable& table, const std::string& variant) {
  for (const auto& s : table.summaries())
    if (s.name == variant) return s.mean;
  throw std::runtime_error("no variant " + variant);
}

void a6(Run& run, const ExperimentConfig& cfg, const fs::path& out, bool verbose) {
  const auto t0 = Clock::now();
  const auto data = make_classification_data(cfg.data);
  const TrainedModel teacher = train_teacher(cfg.teacher, data.train, data.val);
  const DistillConfig& base = cfg.student.distill;
  const std::vector<SweepVariant> variants{
      {"ce", LossMode::ce, base}, {"kd", LossMode::kd, base}, {"bdd", LossMode::bdd, base}};
  const SweepTable table = run_seed_sweep(cfg.student, teacher.params, data.train, data.val, cfg.seeds,
                                          variants, sweep_threads_from_env());
  const double elapsed = seconds_since(t0);

  const double t = teacher.report.final_val_metric;
  const double ce = mean_of(table, "ce"), kd = mean_of(table, "kd"), bdd = mean_of(table, "bdd");
  const auto deltas = table.paired_deltas("kd", "bdd");
  const std::string delta_csv = paired_delta_csv(deltas);
  fs::create_directories(out);
  std::ofstream(out / "a6_delta_kd_bdd.csv", std::ios::binary) << delta_csv;
  std::ofstream(out / "a6_runs.csv", std::ios::binary) << table.to_csv(false);

  const bool ok = t >= kTeacherFloor && ce <= t - kCeGap && kd > ce && bdd >= kd - kBddSlack &&
                  deltas.size() == cfg.seeds.size() && elapsed < kDistillBudgetS;
  run.outcomes.push_back(
      {"A6", ok,
       "teacher " + g(t, 4) + " >= " + g(kTeacherFloor) + "; " + std::to_string(cfg.seeds.size()) +
           "-seed means ce " + g(ce, 4) + " kd " + g(kd, 4) + " bdd " + g(bdd, 4) + "; ce <= teacher-" +
           g(kCeGap) + ", kd > ce, bdd >= kd-" + g(kBddSlack) + "; " + g(elapsed, 3) + " s < " +
           g(kDistillBudgetS) + " s; deltas in " + (out / "a6_delta_kd_bdd.csv").string()});
  if (verbose) {
    std::cout << "  paired kd -> bdd deltas\n";
    for (const auto& d : deltas)
      std::cout << "    seed " << d.seed << "  kd " << g(d.baseline, 4) << "  bdd " << g(d.candidate, 4)
                << "  delta " << std::showpos << g(d.delta, 3) << std::noshowpos << "\n";
  }
  run.artifacts["A6 teacher"] = teacher.report.to_json(false).dump();
  run.artifacts["A6 runs.csv"] = table.to_csv(false);
  run.artifacts["A6 delta.csv"] = delta_csv;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Header present, constant column count, numeric cells where expected.
bool well_formed(const std::vector<std::vector<std::string>>& rows, const std::string& header,
                 std::size_t data_rows) {
  if (rows.size() != data_rows + 1) return false;
  std::string h;
  for (std::size_t i = 0; i < rows[0].size(); ++i) h += (i ? "," : "") + rows[0][i];
  if (h != header) return false;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) return false;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c == 1) continue;  // mode
      // The accumulated mode lists its temperatures as 1|2|4|8.
      std::istringstream parts(rows[r][c]);
      std::size_t n = 0;
      for (std::string part; std::getline(parts, part, '|'); ++n) {
        char* end = nullptr;
        std::strtod(part.c_str(), &end);
        if (part.empty() || *end != '\0') return false;
      }
      if (n == 0) return false;
    }
  }
  return true;
}

void a7(Run& run, const fs::path& config, const fs::path& out, const ExperimentConfig& cfg) {
  fs::remove_all(out);
  CommandOptions o;
  o.config = config;
  o.out = out;
  o.timing = false;
  o.threads = sweep_threads_from_env();
  std::ostringstream log;
  const int code = cmd_sweep(o, log);

  const std::string header = "seed,mode,alpha,tau_f,tau_r,beta,final_top1_or_miou,wall_time_s";
  const std::size_t n = cfg.seeds.size();
  const auto alpha = read_csv(out / "alpha_sweep.csv");
  const auto tau = read_csv(out / "tau_sweep.csv");
  const auto baseline = read_csv(out / "baseline.csv");
  bool shapes = code == 0 && well_formed(alpha, header, 5 * n) && well_formed(tau, header, 4 * n) &&
                well_formed(baseline, header, 3 * n);

  std::string grid;
  double worst = INFINITY;
  if (shapes) {
    // Per seed: alphas 0,1,2,4,8 at tau 4/4, then (2,8), (4,4), (8,2) and the accumulated mode.
    const std::vector<std::string> alphas{"0", "1", "2", "4", "8"};
    const std::vector<std::pair<std::string, std::string>> taus{{"2", "8"}, {"4", "4"}, {"8", "2"}};
    worst = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < 5; ++k) {
        const auto& r = alpha[1 + 5 * s + k];
        shapes = shapes && r[1] == "bdd" && r[2] == alphas[k] && r[3] == "4" && r[4] == "4";
      }
      for (std::size_t k = 0; k < 4; ++k) {
        const auto& r = tau[1 + 4 * s + k];
        shapes = shapes && (k < 3 ? r[1] == "bdd" && r[3] == taus[k].first && r[4] == taus[k].second
                                  : r[1] == "bdd_accum");
      }
      const auto& kd = baseline[1 + 3 * s + 1];
      shapes = shapes && kd[1] == "kd";
      worst = std::max(worst, std::abs(std::stod(alpha[1 + 5 * s][6]) - std::stod(kd[6])));
    }
    grid = "alpha rows " + std::to_string(alpha.size() - 1) + ", tau rows " +
           std::to_string(tau.size() - 1) + " over " + std::to_string(n) + " seeds";
  }
  run.outcomes.push_back({"A7", shapes && worst <= kAlphaZeroTol,
                          "sweep exit " + std::to_string(code) + ", " + (grid.empty() ? "malformed CSV" : grid) +
                              ", |alpha=0 - kd| max " + g(worst, 3) + " <= " + g(kAlphaZeroTol) +
                              "; CSVs in " + out.string()});
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().extension() == ".csv" || entry.path().extension() == ".json")
      run.artifacts["A7 " + entry.path().filename().string()] = slurp(entry.path());
  }
}

Run run_all(const fs::path& config, const fs::path& out, const std::string& pass, bool verbose) {
  const ExperimentConfig cfg = load_experiment_config(config);
  Run run;
  a1(run);
  a2(run);
  a3(run);
  a4(run);
  a5(run);
  a6(run, cfg, out / pass, verbose);
  a7(run, config, out / pass / "sweep", cfg);
  return run;
}

void print(const Outcome& o) {
  std::cout << (o.passed ? "PASS " : "FAIL ") << o.id << "  " << o.detail << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bdd acceptance suite"};
  fs::path config = "configs/classification.yaml";
  fs::path out = "acceptance_out";
  app.add_option("--config", config, "classification experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", out, "directory for the emitted tables");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto t0 = Clock::now();
    const Run first = run_all(config, out, "run1", true);
    for (const auto& o : first.outcomes) print(o);

    // A8: everything again from scratch, outputs compared byte for byte.
    const Run second = run_all(config, out, "run2", false);
    std::vector<std::string> differing;
    for (const auto& [name, text] : first.artifacts) {
      const auto it = second.artifacts.find(name);
      if (it == second.artifacts.end() || it->second != text) differing.push_back(name);
    }
    if (second.artifacts.size() != first.artifacts.size()) differing.push_back("(artifact set)");
    std::string detail = std::to_string(first.artifacts.size()) + " JSON/CSV artifacts from A1-A7 rerun, ";
    if (differing.empty()) {
      detail += "all bit-identical (wall time masked)";
    } else {
      detail += "differing:";
      for (const auto& d : differing) detail += " " + d;
    }
    const Outcome a8{"A8", differing.empty(), detail};
    print(a8);

    std::size_t failed = !a8.passed;
    for (const auto& o : first.outcomes) failed += !o.passed;
    std::cout << (failed ? "FAILED " : "PASSED ") << failed << " criteria failed, "
              << g(seconds_since(t0), 3) << " s total" << std::endl;
    return failed ? 1 : 0;
  } catch (const std::exception& e) {
    std::cerr << "acceptance: " << e.what() << "\n";
    return 3;
  }
}
