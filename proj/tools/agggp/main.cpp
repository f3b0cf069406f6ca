// agggp: command-line front end for aggregated-output GP regression.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "agggp/dataset_io.hpp"
#include "agggp/distreg.hpp"
#include "agggp/errors.hpp"
#include "agggp/file_util.hpp"
#include "agggp/harness.hpp"
#include "agggp/methods.hpp"
#include "agggp/model_io.hpp"
#include "agggp/optim.hpp"
#include "agggp/synth.hpp"
#include "agggp/variational.hpp"

namespace fs = std::filesystem;
using namespace agggp;

namespace {

constexpr double kZ95 = 1.959964;

struct TrainFlags {
  Index iters = 20000;
  double lr = 1e-3;
  Index batch = 0;
  std::uint64_t seed = 0;
  bool trainable_z = false;
  std::string noise_mode = "plain";
  std::string sampling = "epoch";
  std::string update = "per-epoch";
  Index inducing = 1;
  Index patience = 0;
  bool freeze = false;

  void add_to(CLI::App* app) {
    app->add_option("--iters", iters, "Training iterations (minibatches)")->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--batch", batch, "Minibatch size (0 = all regions)")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_flag("--trainable-z", trainable_z, "Optimise the inducing locations");
    app->add_option("--noise-mode", noise_mode, "plain | weighted")->capture_default_str();
    app->add_option("--sampling", sampling, "epoch | iid")->capture_default_str();
    app->add_option("--update", update, "per-epoch | per-batch")->capture_default_str();
    app->add_option("--inducing-per-region", inducing, "KMeans centres per region")->capture_default_str();
    app->add_option("--patience", patience, "Early-stopping patience in epochs (0 = off)")->capture_default_str();
    app->add_flag("--freeze-hyper", freeze, "Keep kernel and noise hyperparameters fixed");
  }

  MethodConfig method_config(const std::string& method) const {
    MethodConfig cfg;
    cfg.method = method;
    cfg.seed = seed;
    cfg.init.inducing_per_region = inducing;
    cfg.init.noise_mode = parse_noise_mode(noise_mode);
    cfg.init.trainable_z = trainable_z;
    cfg.train.iterations = iters;
    cfg.train.lr = lr;
    cfg.train.batch_size = batch;
    cfg.train.update = parse_update_mode(update);
    cfg.train.sampling = parse_sampling(sampling);
    cfg.train.patience = patience;
    cfg.train.freeze_hyperparameters = freeze;
    return cfg;
  }
};

std::string predictions_csv(const std::vector<std::string>& ids, const std::vector<GaussianPrediction>& preds,
                            bool with_variance = true) {
  std::ostringstream out;
  if (!with_variance) {
    out << "region_id,mean\n";
    for (std::size_t i = 0; i < preds.size(); ++i) out << ids[i] << ',' << format_double(preds[i].mean) << '\n';
    return out.str();
  }
  out << "region_id,mean,variance,lower95,upper95\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double sd = std::sqrt(std::max(0.0, preds[i].variance));
    out << ids[i] << ',' << format_double(preds[i].mean) << ',' << format_double(preds[i].variance) << ','
        << format_double(preds[i].mean - kZ95 * sd) << ',' << format_double(preds[i].mean + kZ95 * sd) << '\n';
  }
  return out.str();
}

std::string trace_csv(const std::vector<TraceEntry>& trace) {
  std::ostringstream out;
  out << "iteration,elbo\n";
  for (const auto& t : trace) out << t.iteration << ',' << format_double(t.elbo) << '\n';
  return out.str();
}

fs::path default_trace_path(const fs::path& model_path) {
  return fs::path(model_path.string() + ".trace.csv");
}

Index resolution_by_name(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t l = 0; l < names.size(); ++l) {
    if (names[l] == name) return static_cast<Index>(l);
  }
  throw InputError("unknown resolution '" + name + "'");
}

std::pair<Index, Index> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw InputError("--grid must look like WxH");
  const double w = parse_double(text.substr(0, x), "--grid width");
  const double h = parse_double(text.substr(x + 1), "--grid height");
  if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h)) throw InputError("--grid needs positive integers");
  return {static_cast<Index>(w), static_cast<Index>(h)};
}

int run_synth(const std::string& config_path, const std::string& out_dir) {
  const SynthConfig cfg = synth_config_from_json(read_file(config_path));
  const SynthResult result = generate(cfg);
  write_synth(result, out_dir);
  std::cout << "wrote " << result.data.size() << " regions to " << out_dir << " (noise std "
            << format_double(result.noise_std) << ")\n";
  return 0;
}

int run_fit(const std::string& method, const std::string& data_path, const std::string& out,
            const std::string& trace_out, const std::string& resolution, const TrainFlags& flags) {
  if (method != "mvbagg" && method != "vbagg") {
    throw InputError("fit supports mvbagg and vbagg; use 'baseline' for the other methods");
  }
  const MultiResDataset data = load_dataset(data_path);
  MethodConfig cfg = flags.method_config(method);
  if (method == "vbagg" && !resolution.empty()) cfg.vbagg_resolution = data.resolution_index(resolution);
  std::vector<TraceEntry> trace;
  try {
    const auto start = std::chrono::steady_clock::now();
    const auto fitted = fit_method(cfg, data);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_model(*fitted->variational_model(), out);
    trace = *fitted->trace();
    std::cout << "trained " << method << " in " << format_double(secs) << " s";
    if (!trace.empty()) std::cout << ", final ELBO " << format_double(trace.back().elbo);
    std::cout << '\n';
  } catch (const TrainingAborted& e) {
    write_file_atomic(trace_out.empty() ? default_trace_path(out) : fs::path(trace_out), trace_csv(e.trace()));
    throw;
  }
  write_file_atomic(trace_out.empty() ? default_trace_path(out) : fs::path(trace_out), trace_csv(trace));
  return 0;
}

int run_predict(const std::string& model_path, const std::string& data_path, const std::string& out,
                bool no_noise) {
  const MVBAggModel model = load_model(model_path);
  MultiResDataset data = load_dataset(data_path);
  if (data.num_resolutions() != model.num_resolutions()) {
    // A single-resolution model may be applied to one resolution of the data.
    if (model.num_resolutions() != 1) throw InputError("model and data have different resolutions");
    const Index sel[] = {data.resolution_index(model.resolution_names.front())};
    data = data.select_resolutions(sel);
  }
  const auto preds = predict(model, data, !no_noise);
  write_file_atomic(out, predictions_csv(data.region_ids(), preds));
  return 0;
}

int run_cv_cmd(const std::string& method, const std::string& data_path, const std::string& out, Index folds,
               const std::string& resolution, const std::string& predictions_out, bool time_gram, double ridge,
               const TrainFlags& flags) {
  const MultiResDataset data = load_dataset(data_path);
  MethodConfig cfg = flags.method_config(method);
  cfg.ridge = ridge;
  if (method == "vbagg" && !resolution.empty()) cfg.vbagg_resolution = data.resolution_index(resolution);
  CVReport report = run_cv(data, cfg, CVOptions{folds, flags.seed});
  if (time_gram) {
    const auto start = std::chrono::steady_clock::now();
    const auto specs = default_level1_specs(data, flags.seed);
    const Eigen::MatrixXd G = embedding_gram(specs, data, data);
    report.timings["krre_gram_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.timings["krre_gram_trace"] = G.trace();
  }
  write_file_atomic(out, report_to_json(report));
  if (!predictions_out.empty()) write_file_atomic(predictions_out, predictions_csv(data.region_ids(), report.predictions));
  std::cout << report_table({report});
  if (report.has_coverage) {
    std::printf("coverage: 80%% -> %.3f, 95%% -> %.3f\n", report.coverage80, report.coverage95);
  }
  for (const auto& f : report.folds) {
    if (f.failed) return 2;
  }
  return 0;
}

int run_disagg(const std::string& model_path, const std::string& resolution, const std::string& grid,
               const std::vector<double>& bounds, const std::string& points_path, const std::string& out) {
  const MVBAggModel model = load_model(model_path);
  const Index l = resolution_by_name(model.resolution_names, resolution);
  const Index d = model.kernels[static_cast<std::size_t>(l)].input_dim;
  std::ostringstream csv;
  if (!points_path.empty()) {
    std::istringstream in(read_file(points_path));
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      std::vector<double> r;
      for (auto f : split_csv_line(line)) r.push_back(parse_double(f, "query point"));
      if (static_cast<Index>(r.size()) != d) throw InputError("query points must have " + std::to_string(d) + " columns");
      rows.push_back(std::move(r));
    }
    Eigen::MatrixXd Xq(static_cast<Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (Index k = 0; k < d; ++k) Xq(static_cast<Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
    }
    const auto preds = disaggregate(model, l, Xq);
    csv << "point";
    for (Index k = 0; k < d; ++k) csv << ",f" << k;
    csv << ",mean,var\n";
    for (Index i = 0; i < Xq.rows(); ++i) {
      csv << i;
      for (Index k = 0; k < d; ++k) csv << ',' << format_double(Xq(i, k));
      csv << ',' << format_double(preds[static_cast<std::size_t>(i)].mean) << ','
          << format_double(preds[static_cast<std::size_t>(i)].variance) << '\n';
    }
  } else {
    if (d != 2) throw InputError("--grid needs a two-dimensional resolution; use --points otherwise");
    if (bounds.size() != 4) throw InputError("--bounds takes xmin xmax ymin ymax");
    const auto [w, h] = parse_grid(grid);
    Eigen::MatrixXd Xq(w * h, 2);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        Xq(r * w + c, 0) = bounds[0] + (bounds[1] - bounds[0]) * (static_cast<double>(c) + 0.5) / static_cast<double>(w);
        Xq(r * w + c, 1) = bounds[2] + (bounds[3] - bounds[2]) * (static_cast<double>(r) + 0.5) / static_cast<double>(h);
      }
    }
    const auto preds = disaggregate(model, l, Xq);
    csv << "point,lon,lat,mean,var\n";
    for (Index i = 0; i < Xq.rows(); ++i) {
      csv << i << ',' << format_double(Xq(i, 0)) << ',' << format_double(Xq(i, 1)) << ','
          << format_double(preds[static_cast<std::size_t>(i)].mean) << ','
          << format_double(preds[static_cast<std::size_t>(i)].variance) << '\n';
    }
  }
  write_file_atomic(out, csv.str());
  return 0;
}

int run_baseline(const std::string& method, const std::string& data_path, const std::string& test_path,
                 const std::string& hyper_from, double ridge, const std::string& out, const TrainFlags& flags) {
  const MultiResDataset train = load_dataset(data_path);
  const MultiResDataset test = test_path.empty() ? train : load_dataset(test_path);
  MethodConfig cfg = flags.method_config(method);
  cfg.ridge = ridge;
  if (!hyper_from.empty()) cfg.hyper_source = load_model(hyper_from);
  const auto fitted = fit_method(cfg, train);
  write_file_atomic(out, predictions_csv(test.region_ids(), fitted->predict(test), fitted->has_variance()));
  return 0;
}

int run_check_grad(const std::string& data_path, const std::string& model_path, double tol, bool verbose,
                   const TrainFlags& flags) {
  const MultiResDataset data = load_dataset(data_path);
  MVBAggModel model;
  if (model_path.empty()) {
    ModelInitOptions init;
    init.seed = flags.seed;
    init.inducing_per_region = flags.inducing;
    init.trainable_z = flags.trainable_z;
    init.noise_mode = parse_noise_mode(flags.noise_mode);
    model = initialize_model(data, init);
    // Move q away from the prior so every term of the gradient is exercised.
    std::mt19937_64 rng(flags.seed);
    std::normal_distribution<double> normal(0.0, 0.3);
    for (auto& ind : model.vstate.resolutions) {
      for (Index i = 0; i < ind.eta.size(); ++i) ind.eta[i] += normal(rng);
      for (Index i = 0; i < ind.size(); ++i) {
        for (Index j = 0; j < i; ++j) ind.chol_sigma(i, j) += 0.1 * normal(rng);
      }
    }
  } else {
    model = load_model(model_path);
  }
  std::vector<Index> batch;
  if (flags.batch > 0 && flags.batch < data.size()) {
    MinibatchSampler sampler(data.size(), flags.batch, Sampling::Epoch, flags.seed);
    batch = sampler.next();
  } else {
    for (Index i = 0; i < data.size(); ++i) batch.push_back(i);
  }
  const auto report = check_gradient(model, data, batch, data.size());
  if (verbose) {
    std::printf("%-40s %16s %16s %12s\n", "parameter", "analytic", "numeric", "rel_error");
    for (const auto& e : report.entries) {
      std::printf("%-40s %16.8e %16.8e %12.3e\n", e.name.c_str(), e.analytic, e.numeric, e.rel_error);
    }
  }
  std::printf("%zu parameters, max relative error %.3e (%s)\n", report.entries.size(), report.max_rel_error,
              report.worst.c_str());
  if (report.max_rel_error > tol) {
    std::printf("gradient check FAILED (tolerance %.1e)\n", tol);
    return 2;
  }
  std::printf("gradient check passed (tolerance %.1e)\n", tol);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggregated-output Gaussian process regression (VBAgg / MVBAgg) and baselines"};
  app.require_subcommand(1);

  std::string config, out, data, model, method = "mvbagg", resolution, trace_out, grid = "100x100", points,
                                        test, hyper_from, predictions_out;
  std::vector<double> bounds{0.0, 1.0, 0.0, 1.0};
  Index folds = 5;
  double ridge = 0.1, tol = 1e-4;
  bool no_noise = false, verbose = false, time_gram = false;
  TrainFlags flags;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-resolution dataset");
  synth->add_option("--config", config, "Synth config JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  auto* fit = app.add_subcommand("fit", "Train MVBAgg or VBAgg and save the model");
  fit->add_option("--method", method, "mvbagg | vbagg")->capture_default_str();
  fit->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", out, "Model JSON path")->required();
  fit->add_option("--trace", trace_out, "Trace CSV path (default <out>.trace.csv)");
  fit->add_option("--resolution", resolution, "Resolution used by vbagg (default: first)");
  flags.add_to(fit);

  auto* pred = app.add_subcommand("predict", "Aggregate predictions of a saved model");
  pred->add_option("--model", model, "Model JSON")->required()->check(CLI::ExistingFile);
  pred->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", out, "Predictions CSV")->required();
  pred->add_flag("--no-noise", no_noise, "Latent aggregate variance without observation noise");

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation of one method");
  cv->add_option("--method", method, "Method name")->capture_default_str();
  cv->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", out, "Report JSON path")->required();
  cv->add_option("--folds", folds, "Number of folds")->capture_default_str();
  cv->add_option("--resolution", resolution, "Resolution used by vbagg");
  cv->add_option("--predictions", predictions_out, "Held-out predictions CSV");
  cv->add_flag("--time-krre-gram", time_gram, "Also time the full KRRe embedding Gram");
  cv->add_option("--ridge", ridge, "Ridge parameter for lre/krre")->capture_default_str();
  flags.add_to(cv);

  auto* dis = app.add_subcommand("disagg", "Pointwise posterior of one latent function");
  dis->add_option("--model", model, "Model JSON")->required()->check(CLI::ExistingFile);
  dis->add_option("--resolution", resolution, "Resolution name")->required();
  dis->add_option("--grid", grid, "Grid size WxH over --bounds")->capture_default_str();
  dis->add_option("--bounds", bounds, "xmin xmax ymin ymax")->expected(4);
  dis->add_option("--points", points, "CSV of query points (header row, one column per dimension)")
      ->check(CLI::ExistingFile);
  dis->add_option("--out", out, "Output CSV")->required();

  auto* base = app.add_subcommand("baseline", "Fit a baseline and write predictions");
  base->add_option("--method", method, "exact-agg | centroid-gp | lre | krre | lr | mvbagg | vbagg")->required();
  base->add_option("--data", data, "Training dataset manifest")->required()->check(CLI::ExistingFile);
  base->add_option("--test", test, "Dataset to predict (default: the training data)")->check(CLI::ExistingFile);
  base->add_option("--hyper-from", hyper_from, "Model JSON supplying exact-agg hyperparameters")
      ->check(CLI::ExistingFile);
  base->add_option("--ridge", ridge, "Ridge parameter for lre/krre")->capture_default_str();
  base->add_option("--out", out, "Predictions CSV")->required();
  flags.add_to(base);

  auto* cg = app.add_subcommand("check-grad", "Compare analytic ELBO gradients with finite differences");
  cg->add_option("--data", data, "Dataset manifest")->required()->check(CLI::ExistingFile);
  cg->add_option("--model", model, "Model JSON (default: a perturbed initial model)")->check(CLI::ExistingFile);
  cg->add_option("--tol", tol, "Maximum relative error")->capture_default_str();
  cg->add_flag("--verbose", verbose, "Print every component");
  flags.add_to(cg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*synth) return run_synth(config, out);
    if (*fit) return run_fit(method, data, out, trace_out, resolution, flags);
    if (*pred) return run_predict(model, data, out, no_noise);
    if (*cv) return run_cv_cmd(method, data, out, folds, resolution, predictions_out, time_gram, ridge, flags);
    if (*dis) return run_disagg(model, resolution, grid, bounds, points, out);
    if (*base) return run_baseline(method, data, test, hyper_from, ridge, out, flags);
    if (*cg) return run_check_grad(data, model, tol, verbose, flags);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
