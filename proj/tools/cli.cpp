#include "cli.hpp"

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rfs/harness/experiment.hpp"
#include "rfs/io/artifacts.hpp"
#include "rfs/io/config.hpp"
#include "rfs/model/checkpoint.hpp"

namespace rfs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by every subcommand that reads a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::string task;
  std::string strategy;
  std::string encoding;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::string out_dir;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config");
    cmd->add_option("--preset", preset, "desk, paper or fig6 (overrides the config's preset)");
    cmd->add_option("--task", task, "copy, copy2, reverse, addition, sort, summation, scan");
    cmd->add_option("--strategy", strategy, "rfs, extension, interpolation, random_int");
    cmd->add_option("--encoding", encoding, "sinusoidal, rope, alibi, nope");
    cmd->add_option("--seed", seed, "seed for data and training");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--out-dir", out_dir, "output directory (relative to $RFS_OUTPUT_ROOT)");
  }

  io::RunConfig resolve() const {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config " + config_path);
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError("config " + config_path + ": " + e.what());
      }
    }
    if (!preset.empty()) doc["preset"] = preset;
    if (!task.empty()) {
      const std::string p = doc.value("preset", std::string("desk"));
      if (p == "paper" && !doc.contains("data")) {
        const auto d = io::paper_data(tasks::parse_task(task));
        doc["data"] = {{"n_train", d.n_train},
                       {"n_test", d.n_test},
                       {"train_max", d.train_max},
                       {"test_max", d.test_max}};
      }
      doc["data"]["task"] = task;
    }
    if (!strategy.empty()) doc["indexing"]["strategy"] = strategy;
    if (!encoding.empty()) {
      doc["model"]["encoding"]["kind"] = encoding;
      const bool has_scale = doc.contains("indexing") && doc["indexing"].contains("scale_L");
      if (encoding == "alibi" && !has_scale) {
        doc["indexing"]["scale_L"] = "auto";
      }
    }
    if (seed) {
      doc["data"]["seed"] = *seed;
      doc["train"]["seed"] = *seed;
    }
    if (steps) doc["train"]["steps"] = *steps;
    if (!out_dir.empty()) doc["output_dir"] = out_dir;
    return io::parse_run_config(doc);
  }
};

void progress_printer(std::ostream& err, harness::TrainOptions& opts) {
  opts.progress = [&err](std::size_t step, double loss) {
    err << "  step " << step << "  loss " << io::fmt_fixed(loss, 5) << '\n';
  };
}

std::string data_file_name(const io::RunConfig& c) {
  return std::string(tasks::to_string(c.data.task)) + "-tr" + std::to_string(c.data.train_max) +
         "-ts" + std::to_string(c.data.test_max) + "-s" + std::to_string(c.data.seed) + ".jsonl";
}

void write_records(const fs::path& dir, const std::vector<harness::RunRecord>& records,
                   const std::string& csv_name) {
  std::vector<io::CurveRow> rows;
  for (const auto& r : records) {
    io::append_ledger(dir / "ledger.jsonl", r);
    auto more = io::curve_rows(r);
    rows.insert(rows.end(), more.begin(), more.end());
  }
  io::write_curves_csv(dir / csv_name, rows);
}

void print_summary(std::ostream& out, const harness::RunRecord& r) {
  out << r.run_id << "  id " << io::fmt_fixed(100 * r.id_average, 1) << "%  ood "
      << io::fmt_fixed(100 * r.ood_average, 1) << "%\n";
}

int cmd_gen_data(const ConfigFlags& flags, const std::string& out_path, std::ostream& out) {
  const auto c = flags.resolve();
  const auto data = tasks::make_split(c.data.task, c.data.n_train, c.data.n_test,
                                      c.data.train_max, c.data.test_max, c.data.seed);
  const fs::path path =
      out_path.empty() ? io::output_dir(c) / "data" / data_file_name(c) : fs::path(out_path);
  io::write_dataset_jsonl(path, data, c.hash());
  out << path.string() << '\n';
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const std::string& data_path, std::ostream& out,
              std::ostream& err) {
  const auto c = flags.resolve();
  auto e = c.experiment();
  const fs::path dir = io::output_dir(c);
  harness::TrainOptions opts;
  progress_printer(err, opts);

  opts.diagnostic_checkpoint = dir / "diagnostic.ckpt";
  harness::RunOutput result =
      data_path.empty()
          ? harness::run_experiment(e, c.data.seed, c.deterministic, opts)
          : harness::run_on_dataset(e, io::read_dataset_jsonl(data_path), c.train.seed,
                                    c.deterministic, opts);

  const auto& r = result.record;
  const fs::path run_dir = dir / r.run_id;
  json meta{{"run_record", r},
            {"config", io::to_json(c)},
            {"config_hash", r.config_hash},
            {"seed", r.seed},
            {"schema_version", io::kArtifactSchemaVersion}};
  fs::create_directories(run_dir);
  model::save_checkpoint(run_dir / "model.ckpt", result.model, meta);
  io::write_text(run_dir / "record.json", json(r).dump(2) + "\n");
  write_records(dir, {r}, r.run_id + "/curves.csv");
  print_summary(out, r);
  out << (run_dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const ConfigFlags& flags, const std::string& ckpt, const std::string& data_path,
             const std::string& out_path, std::ostream& out) {
  auto loaded = model::load_checkpoint(ckpt);
  const auto& mcfg = loaded.model.config();
  io::RunConfig c;
  if (loaded.metadata.contains("config") && flags.config_path.empty() && flags.preset.empty()) {
    c = io::parse_run_config(loaded.metadata.at("config"));
  } else {
    c = flags.resolve();
  }
  if (!flags.task.empty()) c.data.task = tasks::parse_task(flags.task);
  if (flags.seed) c.data.seed = *flags.seed;
  const tasks::Dataset data = data_path.empty()
                                  ? tasks::make_split(c.data.task, c.data.n_train, c.data.n_test,
                                                      c.data.train_max, c.data.test_max,
                                                      c.data.seed)
                                  : io::read_dataset_jsonl(data_path);
  const auto eval =
      harness::evaluate_by_length(loaded.model, data.test, data.train_max, data.test_max);
  harness::RunRecord r;
  r.config_hash = loaded.metadata.value("config_hash", c.hash());
  r.seed = loaded.metadata.value("seed", c.data.seed);
  r.task = std::string(tasks::to_string(data.task));
  r.strategy = std::string(indexing::to_string(mcfg.indexing.strategy));
  r.encoding = std::string(encoding::to_string(mcfg.encoding.kind));
  r.variant = "eval";
  r.train_max = data.train_max;
  r.test_max = data.test_max;
  r.accuracy = eval.accuracy;
  const fs::path path =
      out_path.empty() ? fs::path(ckpt).parent_path() / "eval.csv" : fs::path(out_path);
  io::write_curves_csv(path, io::curve_rows(r));
  out << "id " << io::fmt_fixed(100 * eval.id_average, 1) << "%  ood "
      << io::fmt_fixed(100 * eval.ood_average, 1) << "%\n"
      << path.string() << '\n';
  return kExitOk;
}

int cmd_sweep(const ConfigFlags& flags, std::ostream& out) {
  const auto c = flags.resolve();
  harness::SweepGrid grid;
  for (const auto& s : c.sweep.strategies) grid.strategies.push_back(indexing::parse_strategy(s));
  for (const auto& s : c.sweep.encodings) grid.encodings.push_back(encoding::parse_encoding(s));
  grid.seeds = c.sweep.seeds;
  std::vector<harness::RunRecord> records;
  for (const auto& t : c.sweep.tasks) {
    auto base = c.experiment();
    base.variant = "sweep";
    const auto task = tasks::parse_task(t);
    if (c.preset == "paper") {
      const auto d = io::paper_data(task);
      base.n_train = d.n_train;
      base.n_test = d.n_test;
      base.train_max = d.train_max;
      base.test_max = d.test_max;
    }
    grid.tasks = {task};
    auto more = harness::run_sweep(base, grid, c.deterministic);
    for (const auto& r : more) print_summary(out, r);
    records.insert(records.end(), more.begin(), more.end());
  }
  write_records(io::output_dir(c), records, "sweep.csv");
  return kExitOk;
}

int cmd_ablate(const ConfigFlags& flags, std::ostream& out) {
  const auto c = flags.resolve();
  auto base = c.experiment();
  const auto records =
      harness::run_ablation(base, c.ablation.variants, c.ablation.seeds, c.deterministic);
  for (const auto& r : records) print_summary(out, r);
  for (const auto& v : c.ablation.variants) {
    std::vector<harness::RunRecord> group;
    for (const auto& r : records)
      if (r.variant == v) group.push_back(r);
    out << v << "  mean ood " << io::fmt_fixed(100 * harness::mean_ood(group), 1) << "%\n";
  }
  write_records(io::output_dir(c), records, "ablation.csv");
  return kExitOk;
}

int cmd_spectrum(const ConfigFlags& flags, const std::string& ckpt,
                 const std::vector<double>& distances, std::ostream& out) {
  auto c_flags = flags;
  if (c_flags.preset.empty() && c_flags.config_path.empty()) c_flags.preset = "fig6";
  const auto c = c_flags.resolve();
  const fs::path dir = io::output_dir(c);
  if (!ckpt.empty()) {
    const auto loaded = model::load_checkpoint(ckpt);
    std::vector<double> d = distances;
    if (d.empty()) {
      const double n = static_cast<double>(loaded.model.config().indexing.n_train_ref);
      for (double k = 0; k <= 4.0 * n; k += 1.0) d.push_back(k);
    }
    const auto stats = spectrum::attention_score_probe(loaded.model, d);
    std::ostringstream ss;
    io::write_probe_csv(ss, stats, loaded.metadata.value("config_hash", c.hash()));
    io::write_text(dir / "probe.csv", ss.str());
    out << (dir / "probe.csv").string() << '\n';
    return kExitOk;
  }
  std::vector<spectrum::SpectrumReport> reports;
  for (const auto& s : c.spectrum.strategies) {
    for (auto n : c.spectrum.lengths) {
      reports.push_back(spectrum::position_spectrum(indexing::parse_strategy(s), n, c.spectrum.d,
                                                    c.spectrum.range_L, c.spectrum.tolerance));
      out << s << " n=" << n << " rank " << reports.back().numerical_rank << '\n';
    }
  }
  std::ostringstream summary, values;
  io::write_spectrum_csv(summary, reports, c.hash());
  io::write_singular_values_csv(values, reports);
  io::write_text(dir / "spectrum.csv", summary.str());
  io::write_text(dir / "singular_values.csv", values.str());
  io::PlotOptions po;
  po.title = "Singular values of the sinusoidal position matrix (d=" +
             std::to_string(c.spectrum.d) + ")";
  po.config_hash = c.hash();
  io::write_text(dir / "spectrum.svg", io::spectrum_plot_svg(reports, po));
  out << (dir / "spectrum.csv").string() << '\n';
  return kExitOk;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_path,
             const std::string& task, const std::string& title, bool timestamp,
             std::ostream& out) {
  std::vector<io::CurveRow> rows;
  for (const auto& in : inputs) {
    if (fs::path(in).extension() == ".jsonl") {
      for (const auto& r : io::read_ledger(in)) {
        auto more = io::curve_rows(r);
        rows.insert(rows.end(), more.begin(), more.end());
      }
    } else {
      auto more = io::read_curves_csv(in);
      rows.insert(rows.end(), more.begin(), more.end());
    }
  }
  if (!task.empty()) {
    std::erase_if(rows, [&](const io::CurveRow& r) { return r.task != task; });
  }
  if (rows.empty()) throw RuntimeFailure("plot: no curve rows in the inputs");
  io::PlotOptions po;
  if (!title.empty()) po.title = title;
  std::string hashes;
  for (const auto& r : rows) {
    if (hashes.find(r.config_hash) == std::string::npos) {
      hashes += (hashes.empty() ? "" : " ") + r.config_hash;
    }
  }
  po.config_hash = hashes;
  if (timestamp) {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    po.timestamp = buf;
  }
  const fs::path path = out_path.empty() ? io::output_root() / "accuracy.svg" : fs::path(out_path);
  io::write_text(path, io::accuracy_plot_svg(rows, po));
  out << path.string() << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Position-indexing lab: data, training, evaluation, ablations, spectra, plots",
               "rfslab"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, eval_flags, sweep_flags, ablate_flags, spec_flags;
  std::string gen_out, train_data, eval_ckpt, eval_data, eval_out, spec_ckpt, plot_out, plot_task,
      plot_title;
  std::vector<double> spec_distances;
  std::vector<std::string> plot_inputs;
  bool plot_timestamp = false;

  auto* gen = app.add_subcommand("gen-data", "write a train/test dataset as JSONL");
  gen_flags.attach(gen);
  gen->add_option("--out", gen_out, "output file");

  auto* tr = app.add_subcommand("train", "train one model, save checkpoint and RunRecord");
  train_flags.attach(tr);
  tr->add_option("--data", train_data, "dataset JSONL from gen-data");

  auto* ev = app.add_subcommand("eval", "per-length accuracy CSV for a checkpoint");
  eval_flags.attach(ev);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "dataset JSONL");
  ev->add_option("--out", eval_out, "output CSV");

  auto* sw = app.add_subcommand("sweep", "strategy x encoding x task x seed grid");
  sweep_flags.attach(sw);

  auto* ab = app.add_subcommand("ablate", "training-distribution and scale ablation");
  ablate_flags.attach(ab);

  auto* sp = app.add_subcommand("spectrum", "position-matrix spectra, or an attention probe");
  spec_flags.attach(sp);
  sp->add_option("--checkpoint", spec_ckpt, "probe attention scores of this model");
  sp->add_option("--distances", spec_distances, "probe distances")->delimiter(',');

  auto* pl = app.add_subcommand("plot", "accuracy-vs-length SVG from curve CSVs or ledgers");
  pl->add_option("inputs", plot_inputs, "curve CSV or ledger JSONL files")->required();
  pl->add_option("--out", plot_out, "output SVG");
  pl->add_option("--task", plot_task, "only rows of this task");
  pl->add_option("--title", plot_title, "plot title");
  pl->add_flag("--timestamp", plot_timestamp, "embed the current UTC time");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_flags, gen_out, out);
    if (tr->parsed()) return cmd_train(train_flags, train_data, out, err);
    if (ev->parsed()) return cmd_eval(eval_flags, eval_ckpt, eval_data, eval_out, out);
    if (sw->parsed()) return cmd_sweep(sweep_flags, out);
    if (ab->parsed()) return cmd_ablate(ablate_flags, out);
    if (sp->parsed()) return cmd_spectrum(spec_flags, spec_ckpt, spec_distances, out);
    if (pl->parsed()) {
      return cmd_plot(plot_inputs, plot_out, plot_task, plot_title, plot_timestamp, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace rfs::cli
