#include "lsnet/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lsnet/bench.hpp"
#include "lsnet/diagnostics.hpp"
#include "lsnet/training.hpp"

namespace lsnet {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  std::string out = ".";
  int threads = 1;
};

struct SceneOptions {
  int width = 32;
  int height = 24;
  std::string type = "fronto";
  double mean_depth = 2.0;
  double focal_scale = 0.5;
  double rotation_deg = 1.0;
  double min_translation = 0.02;
  double max_translation = 0.05;
  double texture_amplitude = 0.42;

  void add(CLI::App* app) {
    app->add_option("--width", width, "Image width")->capture_default_str();
    app->add_option("--height", height, "Image height")->capture_default_str();
    app->add_option("--scene", type, "fronto | slanted | two-plane")->capture_default_str();
    app->add_option("--mean-depth", mean_depth, "Mean scene depth")->capture_default_str();
    app->add_option("--focal-scale", focal_scale, "Focal length as a fraction of the width")->capture_default_str();
    app->add_option("--rotation-deg", rotation_deg, "Largest ground-truth rotation")->capture_default_str();
    app->add_option("--min-translation", min_translation, "Smallest baseline / mean depth")->capture_default_str();
    app->add_option("--max-translation", max_translation, "Largest baseline / mean depth")->capture_default_str();
    app->add_option("--texture-amplitude", texture_amplitude, "Texture contrast")->capture_default_str();
  }

  SceneConfig config() const {
    SceneConfig sc;
    sc.width = width;
    sc.height = height;
    sc.type = parse_scene_type(type);
    sc.mean_depth = mean_depth;
    sc.focal_scale = focal_scale;
    sc.max_rotation_deg = rotation_deg;
    sc.min_translation = min_translation;
    sc.max_translation = max_translation;
    sc.texture_amplitude = texture_amplitude;
    return sc;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  os << text;
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

template <typename F>
void write_stream(const fs::path& path, F&& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  f(os);
  if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// ------------------------------------------------------------ gen-curves

struct GenCurves {
  std::vector<std::string> families = {"expsum", "sine", "sinc", "gaussian"};
  int count = 10;
  double sigma = 0.1;

  void add(CLI::App* app) {
    app->add_option("--families", families, "Comma-separated curve families")->delimiter(',')->capture_default_str();
    app->add_option("--count", count, "Number of instances")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--sigma", sigma, "Observation noise")->capture_default_str();
  }

  int run(const Globals& g, std::ostream& out) const {
    std::vector<CurveTag> tags;
    for (const auto& f : families) tags.push_back(parse_curve_tag(f));
    if (tags.empty()) throw Error(ErrorCode::InvalidArgument, "no curve family given");
    const Rng root = Rng(g.seed).derive("gen-curves");
    std::ostringstream manifest;
    manifest << "index,file,family,seed,a,b\n";
    for (int i = 0; i < count; ++i) {
      const CurveTag tag = tags[std::size_t(i) % tags.size()];
      Rng rng = root.derive(std::uint64_t(i));
      const CurveInstance inst = sample_instance(CurveFamily::standard(tag), rng, sigma);
      char name[32];
      std::snprintf(name, sizeof name, "curve_%05d.json", i);
      write_text(fs::path(g.out) / name, curve_instance_to_json(inst) + "\n");
      manifest << i << ',' << name << ',' << to_string(tag) << ',' << inst.seed << ',' << format_double(inst.truth[0])
               << ',' << format_double(inst.truth[1]) << '\n';
    }
    write_text(fs::path(g.out) / "curves_manifest.csv", manifest.str());
    out << "wrote " << count << " curve instances to " << g.out << '\n';
    return kExitOk;
  }
};

// ------------------------------------------------------------- gen-scene

struct GenScene {
  SceneOptions scene;
  double baseline = -1.0;

  void add(CLI::App* app) {
    scene.add(app);
    app->add_option("--baseline", baseline, "Exact baseline / mean depth (overrides the translation range)");
  }

  int run(const Globals& g, std::ostream& out, std::ostream& err) const {
    SceneConfig sc = scene.config();
    if (baseline >= 0.0) sc.min_translation = sc.max_translation = baseline;
    Rng rng = Rng(g.seed).derive("gen-scene");
    const StereoInstance inst = synth_scene(rng, sc);
    if (inst.pose.isZero(0.0)) err << "warning: zero baseline, the two views are identical\n";
    const fs::path dir(g.out);
    write_text(dir / "scene.json", stereo_instance_to_json(inst) + "\n");
    write_pgm((dir / "target.pgm").string(), inst.target);
    write_pgm((dir / "source.pgm").string(), inst.source);
    const double lo = inst.inverse_depth.minCoeff();
    const double hi = inst.inverse_depth.maxCoeff();
    write_pgm((dir / "depth.pgm").string(), inst.inverse_depth, lo, hi > lo ? hi : lo + 1.0);
    write_grid_csv((dir / "depth.csv").string(), inst.inverse_depth);
    Index visible = 0;
    for (char m : inst.mask) visible += m;
    out << "scene " << to_string(sc.type) << ' ' << sc.width << 'x' << sc.height << ", visible "
        << double(visible) / double(inst.pixel_count()) << ", |t| " << inst.pose.head<3>().norm() << ", |alpha| "
        << inst.pose.tail<3>().norm() << '\n';
    return kExitOk;
  }
};

// ----------------------------------------------------------------- train

struct Train {
  std::string problem = "curves";
  MetaTrainConfig cfg;
  double sigma = 0.1;
  std::string resume;
  bool quiet = false;
  SceneOptions scene;

  void add(CLI::App* app) {
    app->add_option("--problem", problem, "curves | stereo")->check(CLI::IsMember({"curves", "stereo"}))->capture_default_str();
    app->add_option("--unroll", cfg.unroll, "Unrolled iterations")->capture_default_str();
    app->add_option("--batch", cfg.batch_size, "Instances per outer step")->capture_default_str();
    app->add_option("--steps", cfg.outer_steps, "Outer steps")->capture_default_str();
    app->add_option("--lr", cfg.adam.lr, "ADAM learning rate")->capture_default_str();
    app->add_option("--clip", cfg.clip_norm, "Global gradient-norm clip")->capture_default_str();
    app->add_option("--validation-size", cfg.validation_size, "Held-out instances")->capture_default_str();
    app->add_option("--validate-every", cfg.validate_every, "Validation cadence")->capture_default_str();
    app->add_option("--log-every", cfg.log_every, "CSV row cadence")->capture_default_str();
    app->add_option("--checkpoint-every", cfg.checkpoint_every, "Checkpoint cadence (0 = final only)")
        ->capture_default_str();
    app->add_option("--failure-budget", cfg.failure_budget, "Fraction of steps that may be discarded")
        ->capture_default_str();
    app->add_option("--w-param", cfg.weights.param, "Curve loss weight")->capture_default_str();
    app->add_option("--w-depth", cfg.weights.depth, "Stereo depth loss weight")->capture_default_str();
    app->add_option("--w-pose", cfg.weights.pose, "Stereo pose loss weight")->capture_default_str();
    app->add_option("--hidden", cfg.dense.hidden, "Dense LSTM units")->capture_default_str();
    app->add_option("--layers", cfg.dense.layers, "Stacked dense cells")->capture_default_str();
    app->add_option("--channels", cfg.conv.channels, "Conv-LSTM channels")->capture_default_str();
    app->add_option("--sigma", sigma, "Curve observation noise")->capture_default_str();
    app->add_option("--resume", resume, "Checkpoint to continue from");
    app->add_flag("--quiet", quiet, "No progress lines");
    scene.add(app);
  }

  int run(const Globals& g, std::ostream& out, std::ostream& err) {
    const fs::path dir(g.out);
    cfg.seed = g.seed;
    cfg.checkpoint_path = (dir / "checkpoint.json").string();
    cfg.csv_path = (dir / "training.csv").string();
    cfg.verbose = !quiet;
    std::string resume_path = resume;
    // resume may name the checkpoint that the run keeps overwriting
    if (!resume_path.empty() && !fs::exists(resume_path)) throw Error(ErrorCode::IoError, "no checkpoint " + resume);
    TrainingResult r;
    try {
      r = problem == "curves"
              ? train_meta(cfg, curve_generator(g.seed, sigma, cfg.weights.param), resume_path)
              : train_meta(cfg, stereo_generator(g.seed, scene.config(), cfg.weights), resume_path);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFiniteGradient) {
        write_text(dir / "failure.txt", std::string(e.what()) + "\n");
        err << "training aborted: " << e.what() << " (diagnostics in " << (dir / "failure.txt").string() << ")\n";
      }
      throw;
    }
    save_model(r.best, (dir / "model.json").string());
    save_model(r.last, (dir / "last_model.json").string());
    out << "trained " << r.steps_done << " outer steps, best validation loss " << r.best_val_loss
        << ", discarded batches " << r.discarded_batches << '\n';
    return kExitOk;
  }
};

// ------------------------------------------------------------------ eval

struct Eval {
  std::string problem = "curves";
  std::string model_path;
  std::string method = "all";
  BenchmarkConfig bench;
  bool timing = false;
  std::vector<std::string> resolutions = {"16x12", "32x24", "64x48", "128x96"};
  bool deterministic_timing = false;
  SceneOptions scene;

  void add(CLI::App* app) {
    app->add_option("--problem", problem, "curves | stereo")->check(CLI::IsMember({"curves", "stereo"}))->capture_default_str();
    app->add_option("--model", model_path, "Model file");
    app->add_option("--method", method, "all | lm-only")->check(CLI::IsMember({"all", "lm-only"}))->capture_default_str();
    app->add_option("--n-test", bench.n_test, "Held-out instances")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--iterations", bench.iterations, "Solver iterations")->capture_default_str();
    app->add_option("--sigma", bench.sigma, "Curve observation noise")->capture_default_str();
    app->add_option("--lambda0", bench.lambda0s, "LM initial damping values")->delimiter(',')->capture_default_str();
    app->add_flag("--timing", timing, "Run the per-iteration cost sweep instead");
    app->add_option("--resolutions", resolutions, "Timing resolutions WxH")->delimiter(',')->capture_default_str();
    app->add_flag("--deterministic-timing", deterministic_timing, "Record every wall time as 0");
    scene.add(app);
  }

  int run(const Globals& g, std::ostream& out) {
    if (deterministic_timing) Stopwatch::set_deterministic(true);
    const fs::path dir(g.out);
    if (timing) return run_timing(g, out);
    std::optional<MetaModel> model;
    if (method != "lm-only") {
      if (model_path.empty()) throw Error(ErrorCode::InvalidArgument, "--model is required unless --method lm-only");
      model = load_model(model_path);
    }
    bench.seed = g.seed;
    bench.threads = g.threads;
    if (problem == "curves") {
      const BenchmarkResult r = run_benchmark(model ? &*model : nullptr, bench);
      write_stream(dir / "benchmark.csv", [&](std::ostream& os) { write_benchmark_csv(os, r.rows); });
      write_benchmark_summary(out, r.summary);
      return kExitOk;
    }
    return run_stereo(g, out, model ? &*model : nullptr);
  }

  int run_stereo(const Globals& g, std::ostream& out, const MetaModel* model) const {
    const SceneConfig sc = scene.config();
    const std::uint64_t root = Rng(g.seed).derive("stereo-test").seed();
    std::ostringstream csv;
    csv << "seed,iteration,method,objective,rotation_err_deg,translation_dir_err_deg,depth_l1,rmse,wall_ms\n";
    struct Final {
      std::vector<double> rotation, translation, rmse_ratio;
    } finals[2];
    for (int k = 0; k < bench.n_test; ++k) {
      const StereoTrainingInstance inst = stereo_training_instance(root, std::uint64_t(k), sc, {});
      const StereoInstance& si = inst.problem->instance();
      for (int m = 0; m < (model ? 2 : 1); ++m) {
        StereoSolveConfig cfg;
        cfg.iterations = bench.iterations;
        cfg.classical.max_iterations = bench.iterations;
        cfg.classical.lambda0 = bench.lambda0s.front();
        cfg.mean_depth = sc.mean_depth;
        const StereoSolution sol = solve_stereo(si, m == 0 ? nullptr : model, {}, cfg);
        const std::string name = m == 0 ? lm_method_name(cfg.classical.lambda0) : kLsNetMethod;
        double wall = 0.0;
        for (int i = 0; i <= bench.iterations; ++i) {
          const std::size_t at = std::min<std::size_t>(std::size_t(i), sol.metrics.size() - 1);
          if (std::size_t(i) < sol.trace.size()) wall += sol.trace.wall_ms[std::size_t(i)];
          const StereoMetrics& s = sol.metrics[at];
          csv << si.seed << ',' << i << ',' << name << ',' << format_double(sol.trace.objective_at(std::size_t(i)))
              << ',' << format_double(s.rotation_error_deg) << ',' << format_double(s.translation_direction_error_deg)
              << ',' << format_double(s.depth_l1) << ',' << format_double(s.rmse) << ',' << format_double(wall) << '\n';
        }
        finals[m].rotation.push_back(sol.metrics.back().rotation_error_deg);
        finals[m].translation.push_back(sol.metrics.back().translation_direction_error_deg);
        finals[m].rmse_ratio.push_back(sol.metrics.back().rmse / sol.metrics.front().rmse);
      }
    }
    write_text(fs::path(g.out) / "stereo_eval.csv", csv.str());
    const auto med = [](std::vector<double> v) {
      if (v.empty()) return std::nan("");
      std::sort(v.begin(), v.end());
      return v[v.size() / 2];
    };
    out << "median final errors over " << bench.n_test << " scenes\n";
    for (int m = 0; m < (model ? 2 : 1); ++m) {
      out << (m == 0 ? "lm" : "lsnet") << ": rotation " << med(finals[m].rotation) << " deg, translation direction "
          << med(finals[m].translation) << " deg, rmse ratio " << med(finals[m].rmse_ratio) << '\n';
    }
    return kExitOk;
  }

  int run_timing(const Globals& g, std::ostream& out) const {
    TimingConfig tc;
    tc.seed = g.seed;
    tc.resolutions.clear();
    for (const std::string& r : resolutions) {
      int w = 0, h = 0;
      char x = 0;
      std::istringstream is(r);
      if (!(is >> w >> x >> h) || x != 'x') throw Error(ErrorCode::InvalidArgument, "resolution must be WxH: " + r);
      tc.resolutions.push_back({w, h});
    }
    const std::vector<TimingPoint> points = timing_sweep(tc);
    write_stream(fs::path(g.out) / "timing.csv", [&](std::ostream& os) { write_timing_csv(os, points); });
    out << std::left << std::setw(10) << "size" << std::setw(10) << "pixels" << std::setw(14) << "lm ms"
        << "lsnet ms\n";
    std::vector<double> px, lm, net;
    for (const TimingPoint& p : points) {
      out << std::setw(10) << (std::to_string(p.width) + "x" + std::to_string(p.height)) << std::setw(10) << p.pixels
          << std::setw(14) << p.lm_ms << p.lsnet_ms << '\n';
      px.push_back(double(p.pixels));
      lm.push_back(p.lm_ms);
      net.push_back(p.lsnet_ms);
    }
    if (points.size() >= 2 && !Stopwatch::deterministic()) {
      out << "power-law exponent in pixel count: lm " << power_law_exponent(px, lm) << ", lsnet "
          << power_law_exponent(px, net) << '\n';
    }
    return kExitOk;
  }
};

// ------------------------------------------------------------- gradcheck

struct GradCheck {
  std::string problem = "all";
  int instances = 100;
  int stereo_instances = 20;
  double tol = -1.0;
  std::string inject_sign_bug;

  void add(CLI::App* app) {
    app->add_option("--problem", problem, "all | curves | stereo | bptt")
        ->check(CLI::IsMember({"all", "curves", "stereo", "bptt"}))
        ->capture_default_str();
    app->add_option("--instances", instances, "Instances per curve family")->capture_default_str();
    app->add_option("--stereo-instances", stereo_instances, "Stereo instances")->capture_default_str();
    app->add_option("--tol", tol, "Relative tolerance for every check (default: per check)");
    // Test hook: negate one family's analytic Jacobian.
    app->add_option("--inject-sign-bug", inject_sign_bug, "")->group("");
  }

  int run(const Globals& g, std::ostream& out, std::ostream& err) const {
    std::vector<CheckResult> results;
    const auto pick = [&](double fallback) { return tol >= 0.0 ? tol : fallback; };
    if (!inject_sign_bug.empty() && inject_sign_bug != "stereo") parse_curve_tag(inject_sign_bug);
    if (problem == "all" || problem == "curves") {
      for (CurveTag tag : kAllCurveTags) {
        results.push_back(
            check_curve_jacobian(tag, instances, pick(1e-5), g.seed, inject_sign_bug == to_string(tag)));
      }
    }
    if (problem == "all" || problem == "stereo") {
      results.push_back(
          check_photometric_jacobian(stereo_instances, pick(1e-3), g.seed, 32, 24, inject_sign_bug == "stereo"));
    }
    if (problem == "all" || problem == "bptt") results.push_back(check_bptt_gradients(4, 3, pick(1e-4), g.seed));
    bool ok = true;
    for (const CheckResult& r : results) {
      out << (r.passed ? "PASS " : "FAIL ") << r.name << "  max rel error " << r.worst_error << "  (" << r.worst
          << ")\n";
      if (!r.passed) {
        ok = false;
        err << "check failed: " << r.name << ", worst offender " << r.worst << '\n';
      }
    }
    return ok ? kExitOk : kExitCheckFailed;
  }
};

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::IoError:
    case ErrorCode::CorruptFile: return kExitIo;
    case ErrorCode::NonFiniteGradient: return kExitNonFiniteGradient;
    case ErrorCode::VersionMismatch: return kExitVersionMismatch;
    case ErrorCode::DegenerateScene: return kExitDegenerateScene;
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidSigma: return kExitUsage;
    default: return kExitFailure;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Classical and learned nonlinear least-squares solvers", "lsnet");
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.set_config("--config", "", "INI file with key = value lines and [subcommand] sections");
  Globals g;
  app.add_option("--seed", g.seed, "Root seed")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for benchmark evaluation")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.require_subcommand(1);
  app.fallthrough();

  GenCurves gen_curves;
  GenScene gen_scene;
  Train train;
  Eval eval;
  GradCheck gradcheck;
  CLI::App* c_curves = app.add_subcommand("gen-curves", "Write curve-fitting instances");
  CLI::App* c_scene = app.add_subcommand("gen-scene", "Render a synthetic two-view instance");
  CLI::App* c_train = app.add_subcommand("train", "Meta-train a learned solver");
  CLI::App* c_eval = app.add_subcommand("eval", "Benchmark solvers on held-out instances");
  CLI::App* c_grad = app.add_subcommand("gradcheck", "Finite-difference checks of Jacobians and BPTT");
  gen_curves.add(c_curves);
  gen_scene.add(c_scene);
  train.add(c_train);
  eval.add(c_eval);
  gradcheck.add(c_grad);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::FileError& e) {
    err << e.what() << '\n';
    return kExitIo;
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    fs::create_directories(g.out);
  } catch (const fs::filesystem_error& e) {
    err << "cannot create output directory: " << e.what() << '\n';
    return kExitIo;
  }
  const bool deterministic = Stopwatch::deterministic();
  try {
    write_text(fs::path(g.out) / "resolved_config.ini", app.config_to_str(true, false));
    int code = kExitOk;
    if (c_curves->parsed()) code = gen_curves.run(g, out);
    if (c_scene->parsed()) code = gen_scene.run(g, out, err);
    if (c_train->parsed()) code = train.run(g, out, err);
    if (c_eval->parsed()) code = eval.run(g, out);
    if (c_grad->parsed()) code = gradcheck.run(g, out, err);
    Stopwatch::set_deterministic(deterministic);
    return code;
  } catch (const Error& e) {
    Stopwatch::set_deterministic(deterministic);
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace lsnet
