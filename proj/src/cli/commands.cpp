#include "tdsr/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tdsr/cli/config.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/core/png_io.hpp"
#include "tdsr/core/rng.hpp"
#include "tdsr/data/synthetic.hpp"
#include "tdsr/eval/metrics.hpp"
#include "tdsr/io/container.hpp"

namespace tdsr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Raised for bad usage or configuration, mapped to kExitUsage.
struct UsageError : Error {
  using Error::Error;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) { io::write_file_bytes(p, {s.begin(), s.end()}); }

ExperimentConfig load_experiment(const fs::path& path, std::optional<std::uint64_t> seed) {
  try {
    const json j = read_json_file(path);
    if (is_matrix(j)) throw Error("config " + path.string() + " is a matrix; use the matrix subcommand");
    return parse_experiment(j, seed);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

struct PrepareArgs {
  std::string config, root;
  int scale = ScaleFactor::kDefault;
  double fraction = 0.7;
  int patch = 128, stride = 128;
  std::optional<std::uint64_t> seed;
  int synthetic = 0, page_size = 256, channels = 1;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  data::DatasetSpec spec;
  ScaleFactor s;
  std::uint64_t seed = a.seed.value_or(0);
  if (!a.config.empty()) {
    const auto cfg = load_experiment(a.config, a.seed);
    spec = cfg.data;
    s = cfg.model.scale;
    seed = cfg.seed;
  } else {
    if (a.root.empty()) throw UsageError("prepare needs --root or --config");
    try {
      s = ScaleFactor(a.scale);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    spec.root = a.root;
    spec.split_fraction = a.fraction;
    spec.patch_size_hr = a.patch;
    spec.stride_hr = a.stride;
    spec.seed = derive_seed(seed, "data");
  }
  try {
    spec.validate(s);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (a.synthetic > 0) {
    if (a.page_size < 64) throw UsageError("--page-size must be at least 64");
    fs::create_directories(spec.root / "hr");
    data::SyntheticOptions so;
    so.height = so.width = a.page_size;
    so.channels = a.channels;
    for (int i = 0; i < a.synthetic; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "page_%04d.png", i);
      const auto doc = data::generate_synthetic_document(derive_seed(seed, "synthetic/" + std::to_string(i)), so);
      save_png(doc.image, spec.root / "hr" / name);
    }
    out << "generated " << a.synthetic << " synthetic pages under " << (spec.root / "hr").string() << "\n";
  }
  if (!fs::is_directory(spec.root)) {
    err << "error: dataset root does not exist: " << spec.root.string() << "\n";
    return kExitFailure;
  }
  const auto ds = data::prepare_dataset(spec, s);
  data::write_prepared(ds);
  std::size_t n_train = 0, n_test = 0;
  for (const auto& id : ds.train_ids) n_train += ds.patches_of(id).size();
  for (const auto& id : ds.test_ids) n_test += ds.patches_of(id).size();
  out << "prepared " << ds.documents.size() << " documents: " << ds.train_ids.size() << " train (" << n_train
      << " patches), " << ds.test_ids.size() << " test (" << n_test << " patches)\n";
  if (!ds.errors.empty()) {
    err << ds.errors.size() << " file(s) could not be processed:\n";
    for (const auto& e : ds.errors) err << "  " << e << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

void print_epoch(std::ostream& out, const std::string& name, const train::EpochRecord& r) {
  out << name << " epoch " << r.epoch << ": total " << r.total;
  for (const auto& [id, v] : r.means) out << "  " << to_string(id) << " " << v << " (w " << r.weights.at(id) << ")";
  out << std::endl;
}

int run_matrix(const MatrixConfig& m, int jobs, std::ostream& out, std::ostream& err) {
  std::vector<train::MatrixRow> rows;
  for (const auto& e : m.rows)
    if (e.config) rows.push_back({e.name, e.config->train_setup(), e.init_from, to_json(*e.config)});
  std::vector<train::MatrixResult> results;
  if (!rows.empty()) {
    const auto ds = data::open_dataset(m.base.data, m.base.model.scale);
    const auto backend = make_backend(m.base.backend, m.base.seed);
    results = train::training_matrix(rows, ds, backend, m.base.output_dir, jobs);
  }
  // Restore file order, including rows whose config did not resolve.
  std::vector<train::MatrixResult> all;
  for (const auto& e : m.rows) {
    auto it = std::find_if(results.begin(), results.end(), [&](const auto& r) { return r.name == e.name; });
    if (it != results.end()) {
      all.push_back(*it);
    } else {
      train::MatrixResult r;
      r.name = e.name;
      r.run_dir = m.base.output_dir / e.name;
      r.error = e.error;
      all.push_back(r);
    }
  }
  fs::create_directories(m.base.output_dir);
  train::write_matrix_summary(all, m.base.output_dir / "matrix_summary.csv");
  int failed = 0;
  for (const auto& r : all) {
    out << r.name << ": " << (r.ok ? "ok" : "FAILED") << "\n";
    if (!r.ok) {
      ++failed;
      err << "row " << r.name << " failed: " << r.error << "\n";
    }
  }
  out << all.size() - failed << "/" << all.size() << " rows succeeded; summary in "
      << (m.base.output_dir / "matrix_summary.csv").string() << "\n";
  return failed ? kExitFailure : kExitOk;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& output, int jobs,
              bool matrix_only, std::ostream& out, std::ostream& err) {
  json j;
  try {
    j = read_json_file(config_path);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (!output.empty()) {
    if (is_matrix(j))
      j["base"]["output_dir"] = output;
    else
      j["output_dir"] = output;
  }
  if (is_matrix(j)) {
    MatrixConfig m;
    try {
      m = parse_matrix(j, seed);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return run_matrix(m, jobs, out, err);
  }
  if (matrix_only) throw UsageError("config " + config_path + " has no rows; use the train subcommand");
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment(j, seed);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto ds = data::open_dataset(cfg.data, cfg.model.scale);
  const auto backend = make_backend(cfg.backend, cfg.seed);
  train::RunOptions opts;
  opts.run_dir = cfg.run_dir();
  opts.config_snapshot = to_json(cfg);
  opts.cache_root = cfg.data.root;
  opts.run_name = cfg.name;
  opts.on_epoch = [&](const train::EpochRecord& r) { print_epoch(out, cfg.name, r); };
  train::train_run(cfg.train_setup(), ds, backend, opts);
  out << "run written to " << cfg.run_dir().string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string config, output, dataset, iou_mode = "mask";
  std::vector<std::string> checkpoints, runs;
  std::optional<std::uint64_t> seed;
  bool identity_bypass = false;
};

std::string sanitize(std::string s) {
  for (auto& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  std::vector<std::pair<fs::path, std::string>> ckpts;  // (path, label)
  for (const auto& r : a.runs) ckpts.emplace_back(fs::path(r) / "final.ckpt", fs::path(r).filename().string());
  for (const auto& c : a.checkpoints) ckpts.emplace_back(c, "");
  if (ckpts.empty()) throw UsageError("eval needs --checkpoint or --run");
  std::string config = a.config;
  if (config.empty() && !a.runs.empty()) config = (fs::path(a.runs.front()) / "config.snapshot").string();
  if (config.empty()) throw UsageError("eval needs --config (or a --run with a config.snapshot)");
  const auto cfg = load_experiment(config, a.seed);
  eval::EvalOptions opts;
  try {
    opts.iou_mode = eval::parse_iou_mode(a.iou_mode);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  opts.identity_bypass = a.identity_bypass;
  const fs::path out_dir = a.output.empty() ? cfg.output_dir : fs::path(a.output);
  const auto ds = data::open_dataset(cfg.data, cfg.model.scale);
  const auto backend = make_backend(cfg.backend, cfg.seed);

  eval::MetricReport report;
  report.dataset = a.dataset.empty() ? fs::absolute(cfg.data.root).lexically_normal().filename().string() : a.dataset;
  if (report.dataset.empty()) report.dataset = "dataset";
  report.iou_mode = opts.iou_mode;
  for (const auto& [path, run_label] : ckpts) {
    const auto model = models::load_checkpoint(path);
    const json meta = models::checkpoint_meta(path).value("extra", json::object());
    std::string label = run_label;
    if (label.empty()) label = meta.value("name", "");
    if (label.empty()) label = path.stem().string();
    opts.panel_dir = out_dir / "panels" / sanitize(label);
    eval::ReportRow row = eval::evaluate_model(model, ds, backend, opts);
    row.model = label;
    row.losses = LossSet::parse_label(meta.value("losses", std::string()));
    out << label << ": PSNR " << row.psnr_db << " dB, SSIM " << row.ssim << ", IoU " << row.iou << ", deep "
        << row.ctpn_deep_x100 << ", out " << row.ctpn_out_x100 << "\n";
    report.rows.push_back(row);
  }
  eval::render_report(report, out_dir / "report");
  out << "report written to " << (out_dir / "report" / (report.dataset + ".csv")).string() << "\n";
  return kExitOk;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& output, std::ostream& out) {
  if (files.empty()) throw UsageError("plot needs at least one metrics.csv");
  for (const auto& f : files) {
    const fs::path p(f);
    const auto table = parse_metrics_csv(read_text(p));
    std::string run = fs::absolute(p).lexically_normal().parent_path().filename().string();
    if (run.empty()) run = "run";
    const fs::path dir = output.empty() ? p.parent_path() : fs::path(output);
    if (!dir.empty()) fs::create_directories(dir);
    save_png(render_curves(table), dir / (run + "_curves.png"));
    write_text(dir / (run + "_weight_sums.csv"), weight_sums_csv(table));
    out << "wrote " << (dir / (run + "_curves.png")).string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-driven super-resolution toolkit", "tdsr"};
  app.require_subcommand(1);

  PrepareArgs pa;
  std::optional<std::uint64_t> prepare_seed;
  auto* prep = app.add_subcommand("prepare", "Split a document folder and cut LR/HR patch pairs");
  prep->add_option("--config", pa.config, "Experiment config (uses its data and model.scale)");
  prep->add_option("--root", pa.root, "Dataset root holding hr/ (and optionally lr/)");
  prep->add_option("--scale", pa.scale, "Scale factor");
  prep->add_option("--fraction", pa.fraction, "Training fraction");
  prep->add_option("--patch", pa.patch, "HR patch size");
  prep->add_option("--stride", pa.stride, "HR patch stride");
  prep->add_option("--seed", prepare_seed, "Top-level seed");
  prep->add_option("--synthetic", pa.synthetic, "Generate this many synthetic pages into <root>/hr first");
  prep->add_option("--page-size", pa.page_size, "Synthetic page side");
  prep->add_option("--channels", pa.channels, "Synthetic page channels (1 or 3)");

  std::string config, output;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  auto* tr = app.add_subcommand("train", "Train one experiment (or a matrix file)");
  tr->add_option("--config", config, "Experiment config")->required();
  tr->add_option("--seed", seed, "Override the top-level seed");
  tr->add_option("--output", output, "Override output_dir");
  tr->add_option("--jobs", jobs, "Parallel matrix rows")->check(CLI::PositiveNumber);

  std::string m_config, m_output;
  std::optional<std::uint64_t> m_seed;
  int m_jobs = 1;
  auto* mx = app.add_subcommand("matrix", "Train every row of a matrix file");
  mx->add_option("--config", m_config, "Matrix file")->required();
  mx->add_option("--seed", m_seed, "Override the top-level seed");
  mx->add_option("--output", m_output, "Override output_dir");
  mx->add_option("--jobs", m_jobs, "Parallel rows")->check(CLI::PositiveNumber);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score checkpoints on the test split and write the report");
  ev->add_option("--config", ea.config, "Experiment config providing data and detector");
  ev->add_option("--checkpoint", ea.checkpoints, "Model checkpoint (repeatable)");
  ev->add_option("--run", ea.runs, "Run directory (repeatable)");
  ev->add_option("--output", ea.output, "Output directory for report/ and panels/");
  ev->add_option("--dataset", ea.dataset, "Dataset label for the report file names");
  ev->add_option("--iou-mode", ea.iou_mode, "mask or matched");
  ev->add_option("--seed", ea.seed, "Override the top-level seed");
  ev->add_flag("--identity-bypass", ea.identity_bypass, "Score the HR image in place of the SR output");

  std::vector<std::string> plot_files;
  std::string plot_output;
  auto* pl = app.add_subcommand("plot", "Render loss and weight curves from metrics.csv");
  pl->add_option("metrics", plot_files, "metrics.csv files")->required();
  pl->add_option("--output", plot_output, "Output directory (default: next to each file)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string where = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name() + ": ";
    err << "error: " << where << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (prep->parsed()) {
      pa.seed = prepare_seed;
      return cmd_prepare(pa, out, err);
    }
    if (tr->parsed()) return cmd_train(config, seed, output, jobs, false, out, err);
    if (mx->parsed()) return cmd_train(m_config, m_seed, m_output, m_jobs, true, out, err);
    if (ev->parsed()) return cmd_eval(ea, out, err);
    if (pl->parsed()) return cmd_plot(plot_files, plot_output, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace tdsr::cli
