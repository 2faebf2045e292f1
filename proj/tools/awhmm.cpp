#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aggwass/aw_distance.hpp"
#include "aggwass/error.hpp"
#include "aggwass/kl_baseline.hpp"
#include "aggwass/model_io.hpp"
#include "aggwass/synth_bench.hpp"

namespace fs = std::filesystem;
using namespace aggwass;

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const char* code, const std::string& message) {
  std::cerr << "error: " << code << ": " << one_line(message) << '\n';
  return 1;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw InvalidInput("--out: cannot write " + out_path);
  out << text;
}

struct DistArgs {
  std::string a, b, method = "maw";
  std::optional<double> alpha;
  double p = 1.0;
  Eigen::Index n = 500;
  Eigen::Index length = 100;
  Eigen::Index kl_budget = 2000;
  std::uint64_t seed = 0;
};

void cmd_dist(const DistArgs& args) {
  const GmmHmm h1 = load_model(args.a);
  const GmmHmm h2 = load_model(args.b);
  const Method method = parse_method(args.method);
  std::ostringstream os;
  os << "method=" << args.method << '\n';
  if (method == Method::kl) {
    if (args.length < 1 || args.kl_budget < 1)
      throw InvalidInput("--length and --kl-budget must be >= 1");
    const Eigen::Index n_seq = std::max<Eigen::Index>(1, args.kl_budget / args.length);
    const KlEstimate e =
        kl_hmm_estimate(h1, h2, args.length, n_seq, derive_seed(args.seed, "kl", {0, 1}),
                        derive_seed(args.seed, "kl", {1, 0}));
    os << "kl=" << num(e.value) << '\n'
       << "forward=" << num(e.forward) << '\n'
       << "backward=" << num(e.backward) << '\n';
  } else {
    if (!args.alpha) throw InvalidInput("--alpha is required for maw and iaw");
    AwTerms t;
    if (method == Method::maw) {
      t = maw_terms(h1, h2, args.p);
    } else {
      Rng rng = substream(args.seed, "iaw", {0, 1});
      IawOptions opts;
      opts.n = args.n;
      t = iaw_terms(h1, h2, args.p, rng, opts);
    }
    const DistanceReport r = combine(t, *args.alpha);
    os << "marginal=" << num(r.marginal) << '\n'
       << "transition=" << num(r.transition) << '\n'
       << "alpha=" << num(r.alpha) << '\n'
       << "combined=" << num(r.combined) << '\n';
  }
  std::cout << os.str();
}

struct BenchArgs {
  ExperimentConfig cfg;
  std::string family = "mu-perturb";
  std::string preset = "table1";
  std::vector<double> scales;
  int replicates = 1;
  std::vector<std::string> methods{"kl", "maw", "iaw"};
  bool oracle = false, noise = false;
  std::string out;
};

void cmd_bench(BenchArgs& args) {
  ExperimentConfig& cfg = args.cfg;
  cfg.family = parse_family(args.family);
  if (args.preset == "table1")
    cfg.preset = Preset::table1;
  else if (args.preset == "general")
    cfg.preset = Preset::general;
  else
    throw InvalidInput("config field preset: unknown value '" + args.preset + "'");
  if (args.oracle && args.noise) throw InvalidInput("--oracle and --noise are exclusive");
  cfg.mode = args.oracle ? DistanceMode::oracle
                         : (args.noise ? DistanceMode::noise : DistanceMode::computed);
  if (args.scales.empty()) args.scales.push_back(cfg.scale);
  std::vector<Method> methods;
  for (const auto& m : args.methods) methods.push_back(parse_method(m));
  const auto rows = run_bench(cfg, args.scales, args.replicates, methods);
  emit(format_bench_table(rows), args.out);
  if (!args.out.empty()) {
    for (Method m : methods) {
      double sum = 0.0;
      int count = 0;
      for (const auto& r : rows)
        if (r.method == m) {
          sum += r.mean_auc;
          ++count;
        }
      std::printf("%s mean_auc=%.6f\n", to_string(m), sum / count);
    }
  }
}

struct ToyArgs {
  std::string variant = "mean-shift";
  int batches = 100, batch_size = 50;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_toy(const ToyArgs& args) {
  ToyVariant v;
  if (args.variant == "mean-shift")
    v = ToyVariant::mean_shift;
  else if (args.variant == "var-scale")
    v = ToyVariant::var_scale;
  else
    throw InvalidInput("--variant: unknown value '" + args.variant + "'");
  Rng rng = substream(args.seed, "toy");
  const auto rows = toy_remark3(v, args.batches, args.batch_size, rng);
  std::ostringstream os;
  os << "i,w2_mean,w2_std,kl_mean,kl_std\n";
  for (const auto& r : rows)
    os << r.i << ',' << detail::fmt(r.w2_mean) << ',' << detail::fmt(r.w2_std) << ','
       << detail::fmt(r.kl_mean) << ',' << detail::fmt(r.kl_std) << '\n';
  emit(os.str(), args.out);
}

struct SelectArgs {
  std::string dir;
  std::string manifest;
  std::string method = "maw";
  std::vector<double> grid;
  double p = 1.0;
  Eigen::Index n = 500;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

void cmd_select_alpha(const SelectArgs& args) {
  const fs::path dir(args.dir);
  const fs::path manifest = args.manifest.empty() ? dir / "manifest.csv" : fs::path(args.manifest);
  std::ifstream in(manifest);
  if (!in) throw ParseError("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"file", "label"})
    throw ParseError("manifest header must be 'file,label'");
  std::vector<GmmHmm> models;
  std::vector<std::string> names;
  std::vector<int> labels;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2)
      throw ParseError("manifest line " + std::to_string(lineno) + ": expected 2 columns");
    fs::path f(cells[0]);
    if (f.is_relative()) f = dir / f;
    models.push_back(load_model(f.string()));
    auto it = std::find(names.begin(), names.end(), cells[1]);
    if (it == names.end()) {
      names.push_back(cells[1]);
      labels.push_back(static_cast<int>(names.size() - 1));
    } else {
      labels.push_back(static_cast<int>(it - names.begin()));
    }
  }
  ExperimentConfig cfg;
  cfg.p = args.p;
  cfg.iaw_samples = args.n;
  cfg.seed = args.seed;
  cfg.jobs = args.jobs;
  const auto grid = args.grid.empty() ? default_alpha_grid() : args.grid;
  const AlphaSelection s = select_alpha(models, labels, parse_method(args.method), grid, cfg);
  std::printf("alpha=%s\n", num(s.alpha).c_str());
  std::printf("grid_alpha,loo_accuracy\n");
  for (std::size_t k = 0; k < s.grid.size(); ++k)
    std::printf("%s,%.6f\n", num(s.grid[k]).c_str(), s.accuracy[k]);
}

void cmd_model_info(const std::string& path) {
  const GmmHmm h = load_model(path);
  std::ostringstream os;
  os << "states=" << h.states() << '\n' << "dim=" << h.dim() << '\n' << "stationary=";
  for (Eigen::Index k = 0; k < h.states(); ++k) os << (k ? "," : "") << num(h.stationary()(k));
  os << '\n' << "degenerate=" << (h.degenerate() ? "true" : "false") << '\n';
  std::cout << os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggregated Wasserstein distances between Gaussian HMMs"};
  app.require_subcommand(1);

  DistArgs dist;
  auto* c_dist = app.add_subcommand("dist", "distance between two model files");
  c_dist->add_option("model_a", dist.a, "first model (JSON)")->required();
  c_dist->add_option("model_b", dist.b, "second model (JSON)")->required();
  c_dist->add_option("--method", dist.method, "maw, iaw or kl")->capture_default_str();
  c_dist->add_option("--alpha", dist.alpha, "weight of the transition term (maw, iaw)");
  c_dist->add_option("--p", dist.p, "ground cost exponent in (0, 2]")->capture_default_str();
  c_dist->add_option("--n", dist.n, "iaw samples per mixture")->capture_default_str();
  c_dist->add_option("--length", dist.length, "kl sequence length")->capture_default_str();
  c_dist->add_option("--kl-budget", dist.kl_budget, "kl samples per direction")->capture_default_str();
  c_dist->add_option("--seed", dist.seed, "master seed")->capture_default_str();

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "synthetic retrieval benchmark");
  c_bench->add_option("--family", bench.family, "mu-perturb, sigma-perturb or trans-perturb")
      ->capture_default_str();
  c_bench->add_option("--preset", bench.preset, "table1 (2 states, 2-d) or general")
      ->capture_default_str();
  auto* o_scale = c_bench->add_option("--scale,--dmu,--dsigma,--dt,--gamma", bench.scales,
                                      "perturbation knob; repeat for several scales");
  o_scale->delimiter(',');
  c_bench->add_option("--replicates", bench.replicates)->capture_default_str();
  c_bench->add_option("--states", bench.cfg.states)->capture_default_str();
  c_bench->add_option("--dim", bench.cfg.dim)->capture_default_str();
  c_bench->add_option("--seeds", bench.cfg.seeds, "number of classes")->capture_default_str();
  c_bench->add_option("--per-seed", bench.cfg.sequences_per_seed, "instances per class")
      ->capture_default_str();
  c_bench->add_option("--length", bench.cfg.length)->capture_default_str();
  c_bench->add_option("--p", bench.cfg.p)->capture_default_str();
  c_bench->add_option("--alpha", bench.cfg.alpha, "fixed alpha; default selects it on training data");
  c_bench->add_option("--iaw-n", bench.cfg.iaw_samples)->capture_default_str();
  c_bench->add_option("--kl-budget", bench.cfg.kl_budget)->capture_default_str();
  c_bench->add_option("--alpha-train", bench.cfg.alpha_train_per_seed,
                      "training instances per class for alpha selection")
      ->capture_default_str();
  c_bench->add_option("--methods", bench.methods)->delimiter(',');
  c_bench->add_option("--seed", bench.cfg.seed)->capture_default_str();
  c_bench->add_option("--jobs", bench.cfg.jobs, "worker threads")->capture_default_str();
  c_bench->add_option("--out", bench.out, "result table path (default stdout)");
  c_bench->add_flag("--timing", bench.cfg.timing, "fill mean_ms_per_distance");
  c_bench->add_flag("--oracle", bench.oracle, "debug: replace distances by the class oracle");
  c_bench->add_flag("--noise", bench.noise, "debug: replace distances by uniform noise");

  ToyArgs toy;
  auto* c_toy = app.add_subcommand("toy", "W2 vs KL estimator spread on re-estimated Gaussians");
  c_toy->add_option("--variant", toy.variant, "mean-shift or var-scale")->capture_default_str();
  c_toy->add_option("--batches", toy.batches)->capture_default_str();
  c_toy->add_option("--batch-size", toy.batch_size)->capture_default_str();
  c_toy->add_option("--seed", toy.seed)->capture_default_str();
  c_toy->add_option("--out", toy.out);

  SelectArgs sel;
  auto* c_sel = app.add_subcommand("select-alpha", "choose alpha by leave-one-out 1-NN accuracy");
  c_sel->add_option("models_dir", sel.dir, "directory with model files and manifest.csv")
      ->required();
  c_sel->add_option("--manifest", sel.manifest, "manifest path (columns file,label)");
  c_sel->add_option("--method", sel.method, "maw or iaw")->capture_default_str();
  c_sel->add_option("--grid", sel.grid, "alpha values")->delimiter(',');
  c_sel->add_option("--p", sel.p)->capture_default_str();
  c_sel->add_option("--n", sel.n, "iaw samples per mixture")->capture_default_str();
  c_sel->add_option("--seed", sel.seed)->capture_default_str();
  c_sel->add_option("--jobs", sel.jobs)->capture_default_str();

  std::string info_path;
  auto* c_info = app.add_subcommand("model-info", "validate a model file and print a summary");
  c_info->add_option("model", info_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << to_string(ErrorCode::invalid_input) << ": " << one_line(e.what())
              << '\n';
    return 2;
  }

  try {
    if (c_dist->parsed()) cmd_dist(dist);
    if (c_bench->parsed()) cmd_bench(bench);
    if (c_toy->parsed()) cmd_toy(toy);
    if (c_sel->parsed()) cmd_select_alpha(sel);
    if (c_info->parsed()) cmd_model_info(info_path);
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
