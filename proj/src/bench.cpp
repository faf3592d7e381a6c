#include "lsnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <ostream>
#include <exception>
#include <thread>

namespace lsnet {

void BenchmarkConfig::validate() const {
  if (n_test < 0 || iterations < 1 || !(sigma >= 0) || lambda0s.empty() || threads < 1) {
    throw Error(ErrorCode::InvalidArgument, "invalid benchmark configuration");
  }
  for (double l : lambda0s) {
    if (!(l > 0)) throw Error(ErrorCode::InvalidArgument, "lambda0 values must be positive");
  }
  classical.validate();
}

CurveInstance benchmark_instance(std::uint64_t root_seed, int index, double sigma) {
  const Rng test_root = Rng(root_seed).derive("curve-test");
  Rng rng = test_root.derive(std::uint64_t(index));
  const CurveTag tag = kAllCurveTags[std::size_t(index) % kAllCurveTags.size()];
  return sample_instance(CurveFamily::standard(tag), rng, sigma);
}

std::string lm_method_name(double lambda0) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "lm(%.0e)", lambda0);
  return buf;
}

namespace {

void append_trace(std::vector<BenchmarkRow>& rows, const CurveInstance& inst, const std::string& method,
                  const SolverTrace& trace, int N) {
  double wall = 0.0;
  for (int i = 0; i <= N; ++i) {
    if (std::size_t(i) < trace.size()) wall += trace.wall_ms[i];
    rows.push_back({inst.seed, std::string(to_string(inst.tag)), i, method, trace.objective_at(i),
                    curve_param_error(inst.tag, trace.iterate_at(i), inst.truth), wall});
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<BenchmarkRow> run_instance(const MetaModel* model, const BenchmarkConfig& config, int index) {
  const CurveInstance inst = benchmark_instance(config.seed, index, config.sigma);
  const CurveProblem problem(inst);
  const Vector x0 = CurveFamily::standard(inst.tag).initial_guess();
  std::vector<BenchmarkRow> rows;
  const int N = config.iterations;
  for (double l0 : config.lambda0s) {
    ClassicalConfig cc = config.classical;
    cc.lambda0 = l0;
    cc.max_iterations = N;
    append_trace(rows, inst, lm_method_name(l0), solve_classical(problem, x0, cc, ClassicalMethod::LevenbergMarquardt),
                 N);
  }
  if (model) append_trace(rows, inst, kLsNetMethod, ls_net_solve(problem, *model, x0, N, config.epsilon), N);
  return rows;
}

}  // namespace

BenchmarkResult run_benchmark(const MetaModel* model, const BenchmarkConfig& config) {
  config.validate();
  std::vector<std::vector<BenchmarkRow>> per_instance(std::size_t(config.n_test));
  const int workers = std::min(config.threads, std::max(config.n_test, 1));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors{std::size_t(workers)};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < config.n_test; i += workers) per_instance[std::size_t(i)] = run_instance(model, config, i);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BenchmarkResult result;
  for (auto& rows : per_instance) result.rows.insert(result.rows.end(), rows.begin(), rows.end());

  // objective[method][iteration][instance]
  std::vector<std::string> methods;
  for (double l0 : config.lambda0s) methods.push_back(lm_method_name(l0));
  if (model) methods.push_back(kLsNetMethod);
  const int N = config.iterations;
  std::vector<std::vector<std::vector<double>>> obj(methods.size(), std::vector<std::vector<double>>(N + 1));
  for (const BenchmarkRow& r : result.rows) {
    const auto m = std::size_t(std::find(methods.begin(), methods.end(), r.method) - methods.begin());
    obj[m][std::size_t(r.iteration)].push_back(r.objective);
  }
  BenchmarkSummary& s = result.summary;
  s.has_lsnet = model != nullptr;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodSummary ms{methods[m], {}};
    for (int it : kSummaryIterations) ms.median_objective.push_back(median(obj[m][std::size_t(std::min(it, N))]));
    s.methods.push_back(std::move(ms));
  }
  const auto best_lm = [&](int iteration) {
    std::size_t best = 0;
    double best_median = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < config.lambda0s.size(); ++m) {
      const double med = median(obj[m][std::size_t(std::min(iteration, N))]);
      if (med < best_median) {
        best_median = med;
        best = m;
      }
    }
    return best;
  };
  const auto win_rate = [&](std::size_t lm, int iteration) {
    if (!model || config.n_test == 0) return 0.0;
    const auto& a = obj.back()[std::size_t(std::min(iteration, N))];
    const auto& b = obj[lm][std::size_t(std::min(iteration, N))];
    int wins = 0;
    for (std::size_t k = 0; k < a.size(); ++k) wins += a[k] < b[k];
    return double(wins) / double(a.size());
  };
  const std::size_t b5 = best_lm(5), b15 = best_lm(15);
  s.best_lm_at_5 = methods[b5];
  s.best_lm_at_15 = methods[b15];
  s.win_rate_5 = win_rate(b5, 5);
  s.win_rate_15 = win_rate(b15, 15);
  return result;
}

void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows) {
  os << "seed,family,iteration,method,objective,param_err_l1,wall_ms\n";
  for (const BenchmarkRow& r : rows) {
    os << r.seed << ',' << r.family << ',' << r.iteration << ',' << r.method << ',' << format_double(r.objective) << ','
       << format_double(r.param_err_l1) << ',' << format_double(r.wall_ms) << '\n';
  }
}

void write_benchmark_summary(std::ostream& os, const BenchmarkSummary& summary) {
  os << "median objective by iteration\n" << std::left << std::setw(12) << "method";
  for (int it : kSummaryIterations) os << std::setw(14) << ("it " + std::to_string(it));
  os << '\n';
  for (const MethodSummary& m : summary.methods) {
    os << std::setw(12) << m.method;
    for (double v : m.median_objective) os << std::setw(14) << std::setprecision(6) << v;
    os << '\n';
  }
  if (summary.has_lsnet) {
    os << "lsnet win rate at iteration 5 vs " << summary.best_lm_at_5 << ": " << summary.win_rate_5 << '\n';
    os << "lsnet win rate at iteration 15 vs " << summary.best_lm_at_15 << ": " << summary.win_rate_15 << '\n';
  }
}

namespace {

template <typename F>
double time_per_call(F&& f, double min_total_ms) {
  using clock = std::chrono::steady_clock;
  int calls = 0;
  const auto start = clock::now();
  double elapsed = 0.0;
  do {
    f();
    ++calls;
    elapsed = std::chrono::duration<double, std::milli>(clock::now() - start).count();
  } while (elapsed < min_total_ms);
  return Stopwatch::deterministic() ? 0.0 : elapsed / calls;
}

}  // namespace

std::vector<TimingPoint> timing_sweep(const TimingConfig& config) {
  std::vector<TimingPoint> out;
  Rng model_rng = Rng(config.seed).derive("timing-model");
  const MetaModel model = MetaModel::conv(config.conv, model_rng);
  for (const auto& [w, h] : config.resolutions) {
    SceneConfig sc;
    sc.width = w;
    sc.height = h;
    Rng rng = Rng(config.seed).derive("timing").derive(std::uint64_t(w) * 1000 + std::uint64_t(h));
    const StereoProblem problem(synth_scene(rng, sc));
    const Vector x0 = stereo_initial_iterate(problem, sc.mean_depth);
    TimingPoint p{w, h, problem.instance().pixel_count(), 0.0, 0.0};
    volatile double sink = 0.0;
    // Masked pixels leave zero diagonals, so raise the damping the way the
    // solver would until the first iteration factorizes, then time that.
    const ClassicalConfig classical;
    double lambda = classical.lambda0;
    {
      const NormalEquations ne = problem.normal_equations(x0);
      for (int retry = 0;; ++retry) {
        try {
          lm_step_normal(ne.hessian, ne.gradient, lambda);
          break;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::NotPositiveDefinite || retry >= classical.max_retries) throw;
          lambda *= classical.lambda_up;
        }
      }
    }
    p.lm_ms = time_per_call(
        [&] {
          const NormalEquations ne = problem.normal_equations(x0);
          sink = sink + lm_step_normal(ne.hessian, ne.gradient, lambda)[0];
        },
        config.min_total_ms);
    const RecurrentState state = zero_state(model, p.pixels);
    p.lsnet_ms = time_per_call(
        [&] {
          const Linearization lin = problem.linearize(x0);
          const FeatureImage f = phi_dense(lin.jacobian, lin.residuals.r);
          sink = sink + predict_update(model, f, state, x0).dx[0];
        },
        config.min_total_ms);
    out.push_back(p);
  }
  return out;
}

double power_law_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidArgument, "power-law fit needs >= 2 points");
  double mx = 0, my = 0;
  const double n = double(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0) || !(y[k] > 0)) throw Error(ErrorCode::DomainError, "power-law fit needs positive values");
    mx += std::log(x[k]) / n;
    my += std::log(y[k]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log(x[k]) - mx;
    sxy += dx * (std::log(y[k]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

void write_timing_csv(std::ostream& os, const std::vector<TimingPoint>& points) {
  os << "width,height,pixels,lm_ms,lsnet_ms\n";
  for (const TimingPoint& p : points) {
    os << p.width << ',' << p.height << ',' << p.pixels << ',' << format_double(p.lm_ms) << ','
       << format_double(p.lsnet_ms) << '\n';
  }
}

}  // namespace lsnet
