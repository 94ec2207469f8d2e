#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rest/checkpoint.hpp"
#include "rest/config.hpp"
#include "rest/data.hpp"
#include "rest/error.hpp"
#include "rest/pipeline.hpp"
#include "rest/random.hpp"

namespace rest::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "TrainConfig JSON file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Config override key=value (repeatable)");
  c.seed_opt = cmd->add_option("--seed", c.seed, "Master seed");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) out->required();
}

TrainConfig resolve_config(const json& base, const Common& c) {
  json j = base;
  if (!c.config.empty()) {
    std::ifstream f(c.config);
    if (!f) throw ConfigError("cannot open config file " + c.config);
    json file;
    try {
      file = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config " + c.config + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config " + c.config + " must be a JSON object");
    j.update(file);
  }
  TrainConfig cfg = j.get<TrainConfig>();
  for (const auto& s : c.sets) apply_override(cfg, s);
  if (c.seed_opt && c.seed_opt->count() > 0) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

TrainConfig resolve_config(const Common& c) { return resolve_config(json(TrainConfig{}), c); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + tmp.string() + " for writing");
    f << text;
    if (!f) throw FormatError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename Fn>
void write_with(const fs::path& path, Fn&& fn) {
  std::ostringstream os;
  fn(os);
  write_text(path, os.str());
}

void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& args,
                    const TrainConfig& cfg, json extra = json::object()) {
  json m{{"command", command}, {"args", args}, {"seed", cfg.seed}, {"config", cfg}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(path, m.dump(2) + "\n");
}

Dataset load_data(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return import_csv(path);
  return read_dataset(path);
}

CheckpointMeta meta_for(const TrainConfig& cfg, Phase phase, int epoch) {
  CheckpointMeta meta;
  meta.config = cfg;
  meta.provenance = {phase, cfg.seed, epoch};
  return meta;
}

void save_history(const fs::path& path, const std::vector<EpochMetrics>& history) {
  write_with(path, [&](std::ostream& os) { write_metrics_csv(history, os); });
}

// Trains one phase, saving the last good weights on a numerical abort.
TrainResult run_phase(const Network& net, const DataBundle& data, const TrainConfig& cfg, const std::string& phase,
                      const fs::path& out, std::ostream& log, Phase kind) {
  try {
    return train_phase(net, data, cfg, phase, [&](const EpochMetrics& m) {
      log << phase << " epoch " << m.epoch << " loss " << m.train_loss << " val_macro_f1 " << m.val_macro_f1 << '\n';
    });
  } catch (const TrainingAborted& e) {
    save_checkpoint(e.last_good(), meta_for(cfg, kind, e.epoch()), out / (phase + "_last_good"));
    throw;
  }
}

void print_prune(std::ostream& out, const PruneResult& p) {
  out << "pruned " << p.mask.pruned << "/" << p.mask.total << " filters (" << p.mask.achieved()
      << "), param ratio " << p.report.param_ratio() << ", flop ratio " << p.report.flop_ratio() << '\n';
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw ConfigError("grid value '" + cell + "' is not a number");
    }
  }
  if (grid.empty()) throw ConfigError("grid is empty");
  return grid;
}

// PerturbationSpec from CLI text; adversarial step count follows the config
// unless given explicitly.
PerturbationSpec noise_for(const std::string& text, const TrainConfig& cfg) {
  PerturbationSpec p = PerturbationSpec::parse(text);
  if (p.kind == NoiseKind::kAdversarial && text.find("iters=") == std::string::npos) p.pgd.n_iter = cfg.eval_n_iter;
  p.seed = noise_seed(cfg.seed);
  p.validate();
  return p;
}

const SampleSet& pick_split(const DataBundle& b, const std::string& name) {
  if (name == "test") return b.test;
  if (name == "val") return b.val;
  if (name == "train") return b.train;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << "error: code=" << code << " kind=" << kind << " message=" << one_line(message) << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noise-robust, compact 1-D classifier training"};
  app.name("rest");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic sleep-stage dataset");
  std::string synth_out, synth_csv;
  SynthParams sp;
  synth->add_option("--out", synth_out, "Dataset file to write")->required();
  synth->add_option("--seed", sp.seed, "Generator seed");
  synth->add_option("--records", sp.n_records, "Number of records");
  synth->add_option("--epochs", sp.epochs_per_record, "Epochs per record");
  synth->add_option("--length", sp.epoch_length, "Samples per epoch");
  synth->add_option("--noise-floor", sp.noise_floor, "Std of the additive Gaussian floor");
  synth->add_option("--amplitude", sp.amplitude, "Scale of every class amplitude");
  synth->add_option("--stay", sp.stay_probability, "Probability of keeping the previous stage");
  synth->add_option("--from-csv", synth_csv, "Convert a CSV dataset instead of generating")->check(CLI::ExistingFile);

  std::string data_path, model_path, noise_text = "none", split_name = "test";

  auto* train = app.add_subcommand("train", "Phase 1: train with the full loss");
  Common train_c;
  train->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  add_common(train, train_c, true);

  auto* prune = app.add_subcommand("prune", "Phase 2: prune a trained checkpoint");
  Common prune_c;
  prune->add_option("--model", model_path, "Checkpoint prefix")->required();
  add_common(prune, prune_c, true);

  auto* retrain = app.add_subcommand("retrain", "Phase 3: retrain a pruned checkpoint");
  Common retrain_c;
  retrain->add_option("--model", model_path, "Pruned checkpoint prefix")->required();
  retrain->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  add_common(retrain, retrain_c, true);

  auto* rest = app.add_subcommand("rest", "Train, prune and retrain");
  Common rest_c;
  rest->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  add_common(rest, rest_c, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under one perturbation");
  Common eval_c;
  eval->add_option("--model", model_path, "Checkpoint prefix")->required();
  eval->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--noise", noise_text, "none, kind:level or kind:param=value");
  eval->add_option("--split", split_name, "train, val or test");
  add_common(eval, eval_c, false);

  auto* sweep = app.add_subcommand("sweep", "Clean + 9 noise cells macro-F1 matrix");
  Common sweep_c;
  std::vector<std::string> sweep_models;
  std::size_t noise_seeds = 1;
  sweep->add_option("--model", sweep_models, "Checkpoint prefix (repeatable, one row per run)")->required();
  sweep->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  sweep->add_option("--split", split_name, "train, val or test");
  sweep->add_option("--noise-seeds", noise_seeds, "Re-evaluate each model under this many noise seeds")
      ->check(CLI::PositiveNumber);
  add_common(sweep, sweep_c, false);

  auto* hyp = app.add_subcommand("hypnogram", "Per-epoch predicted stages of one record");
  Common hyp_c;
  long record_id = -1;
  hyp->add_option("--model", model_path, "Checkpoint prefix")->required();
  hyp->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  hyp->add_option("--record", record_id, "Record id (default: first test record)");
  add_common(hyp, hyp_c, true);

  auto* report = app.add_subcommand("report", "Parameter and FLOP summary of checkpoints");
  Common report_c;
  std::vector<std::string> report_models;
  report->add_option("--model", report_models, "Checkpoint prefix (repeatable; ratios relative to the first)")
      ->required();
  add_common(report, report_c, false);

  auto* search = app.add_subcommand("search", "Hyperparameter line/grid search on the validation split");
  Common search_c;
  std::string search_kind, grid_text, grid_g_text;
  search->add_option("--kind", search_kind, "epsilon, cg or lambdas")
      ->required()
      ->check(CLI::IsMember({"epsilon", "cg", "lambdas"}));
  search->add_option("--grid", grid_text, "Comma-separated values (lambda_o for lambdas)");
  search->add_option("--grid-g", grid_g_text, "Comma-separated lambda_g values");
  search->add_option("--data", data_path, "Dataset")->required()->check(CLI::ExistingFile);
  add_common(search, search_c, true);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    return fail(err, kUsage, "usage", e.what());
  }

  try {
    if (*synth) {
      Dataset d = synth_csv.empty() ? synth_generate(sp) : import_csv(synth_csv);
      d.validate();
      write_dataset(d, synth_out);
      json m{{"command", "synth"}, {"args", args}, {"seed", sp.seed}, {"records", d.records.size()},
             {"epoch_length", d.epoch_length}, {"epochs", d.num_epochs()}};
      write_text(synth_out + ".run_manifest.json", m.dump(2) + "\n");
      out << "wrote " << d.records.size() << " records, " << d.num_epochs() << " epochs to " << synth_out << '\n';
      return kOk;
    }

    if (*train) {
      const TrainConfig cfg = resolve_config(train_c);
      const fs::path dir = train_c.out;
      fs::create_directories(dir);
      const DataBundle data = prepare_data(load_data(data_path), cfg);
      const Network init = initial_network(cfg, data.train.sample_length);
      const TrainResult r = run_phase(init, data, cfg, "trained", dir, out, Phase::kTrained);
      save_checkpoint(r.net, meta_for(cfg, Phase::kTrained, cfg.epochs), dir / "trained");
      save_checkpoint(r.best, meta_for(cfg, Phase::kTrained, r.best_epoch + 1), dir / "trained_best");
      save_history(dir / "metrics.csv", r.history);
      write_manifest(dir / "run_manifest.json", "train", args, cfg, {{"data", data_path}});
      return kOk;
    }

    if (*prune) {
      const Checkpoint ck = load_checkpoint(model_path);
      const TrainConfig cfg = resolve_config(ck.meta.config, prune_c);
      const fs::path dir = prune_c.out;
      fs::create_directories(dir);
      const PruneResult p = prune_network(ck.network, cfg.sparsity);
      save_checkpoint(p.net, meta_for(cfg, Phase::kPruned, ck.meta.provenance.epoch), dir / "pruned");
      write_with(dir / "sparsity.csv", [&](std::ostream& os) { write_sparsity_csv(p.report, os); });
      write_manifest(dir / "run_manifest.json", "prune", args, cfg, {{"model", model_path}});
      print_prune(out, p);
      return kOk;
    }

    if (*retrain) {
      const Checkpoint ck = load_checkpoint(model_path);
      const TrainConfig cfg = resolve_config(ck.meta.config, retrain_c);
      const fs::path dir = retrain_c.out;
      fs::create_directories(dir);
      const DataBundle data = prepare_data(load_data(data_path), cfg);
      const TrainConfig phase3 = cfg.retrain_phase();
      const TrainResult r = run_phase(ck.network, data, phase3, "retrained", dir, out, Phase::kRetrained);
      save_checkpoint(r.net, meta_for(cfg, Phase::kRetrained, phase3.epochs), dir / "retrained");
      save_history(dir / "metrics.csv", r.history);
      write_manifest(dir / "run_manifest.json", "retrain", args, cfg, {{"data", data_path}, {"model", model_path}});
      return kOk;
    }

    if (*rest) {
      const TrainConfig cfg = resolve_config(rest_c);
      const fs::path dir = rest_c.out;
      fs::create_directories(dir);
      const DataBundle data = prepare_data(load_data(data_path), cfg);
      const Network init = initial_network(cfg, data.train.sample_length);
      const TrainResult t = run_phase(init, data, cfg, "trained", dir, out, Phase::kTrained);
      save_checkpoint(t.net, meta_for(cfg, Phase::kTrained, cfg.epochs), dir / "trained");
      save_checkpoint(t.best, meta_for(cfg, Phase::kTrained, t.best_epoch + 1), dir / "trained_best");
      const PruneResult p = prune_network(t.net, cfg.sparsity);
      save_checkpoint(p.net, meta_for(cfg, Phase::kPruned, cfg.epochs), dir / "pruned");
      write_with(dir / "sparsity.csv", [&](std::ostream& os) { write_sparsity_csv(p.report, os); });
      print_prune(out, p);
      const TrainConfig phase3 = cfg.retrain_phase();
      const TrainResult r = run_phase(p.net, data, phase3, "retrained", dir, out, Phase::kRetrained);
      save_checkpoint(r.net, meta_for(cfg, Phase::kRetrained, phase3.epochs), dir / "retrained");
      std::vector<EpochMetrics> history = t.history;
      history.insert(history.end(), r.history.begin(), r.history.end());
      save_history(dir / "metrics.csv", history);
      write_manifest(dir / "run_manifest.json", "rest", args, cfg, {{"data", data_path}});
      return kOk;
    }

    if (*eval) {
      const Checkpoint ck = load_checkpoint(model_path);
      const TrainConfig cfg = resolve_config(ck.meta.config, eval_c);
      const DataBundle data = prepare_data(load_data(data_path), cfg);
      const PerturbationSpec noise = noise_for(noise_text, cfg);
      const EvalReport r = evaluate(ck.network, pick_split(data, split_name), noise, data.stats, cfg.eval_batch_size);
      write_eval_csv(r, out);
      if (!eval_c.out.empty()) {
        const fs::path dir = eval_c.out;
        write_with(dir / "eval.csv", [&](std::ostream& os) { write_eval_csv(r, os); });
        write_with(dir / "confusion.csv", [&](std::ostream& os) { write_confusion_csv(r.confusion, os); });
        write_with(dir / "confusion_normalized.csv",
                   [&](std::ostream& os) { write_confusion_csv(r.confusion, os, true); });
        write_with(dir / "per_class.csv", [&](std::ostream& os) { write_per_class_csv(r.confusion, os); });
        write_manifest(dir / "run_manifest.json", "eval", args, cfg,
                       {{"data", data_path}, {"model", model_path}, {"noise", noise_text}, {"split", split_name}});
      }
      return kOk;
    }

    if (*sweep) {
      std::vector<SweepRow> rows;
      TrainConfig last_cfg;
      for (std::size_t m = 0; m < sweep_models.size(); ++m) {
        const Checkpoint ck = load_checkpoint(sweep_models[m]);
        const TrainConfig cfg = resolve_config(ck.meta.config, sweep_c);
        last_cfg = cfg;
        const DataBundle data = prepare_data(load_data(data_path), cfg);
        for (std::size_t r = 0; r < noise_seeds; ++r) {
          const std::uint64_t seed = r == 0 ? cfg.seed : derive_seed(cfg.seed, 0x5eed0000 + r);
          std::string run = sweep_models[m];
          if (noise_seeds > 1) run += "#" + std::to_string(r);
          rows.push_back(robustness_sweep(ck.network, pick_split(data, split_name), data.stats, cfg, seed, run));
        }
      }
      write_sweep_csv(rows, out);
      if (!sweep_c.out.empty()) {
        const fs::path dir = sweep_c.out;
        write_with(dir / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(rows, os); });
        write_manifest(dir / "run_manifest.json", "sweep", args, last_cfg,
                       {{"data", data_path}, {"models", sweep_models}, {"split", split_name}});
      }
      return kOk;
    }

    if (*hyp) {
      const Checkpoint ck = load_checkpoint(model_path);
      const TrainConfig cfg = resolve_config(ck.meta.config, hyp_c);
      const Dataset d = load_data(data_path);
      const DataBundle data = prepare_data(d, cfg);
      std::size_t index = d.records.size();
      for (std::size_t i = 0; i < d.records.size(); ++i) {
        const bool match = record_id >= 0 ? d.records[i].id == static_cast<std::uint32_t>(record_id)
                                          : data.assignment.of_record[i] == Split::kTest;
        if (match) {
          index = i;
          break;
        }
      }
      if (index == d.records.size()) throw ConfigError("record " + std::to_string(record_id) + " not found");
      const Hypnogram h = hypnogram(ck.network, d.records[index], d.epoch_length, cfg.context_k);
      const fs::path dir = hyp_c.out;
      const std::string stem = "hypnogram_" + std::to_string(h.record_id);
      write_with(dir / (stem + ".csv"), [&](std::ostream& os) { write_hypnogram_csv(h, os); });
      write_with(dir / (stem + ".svg"), [&](std::ostream& os) { write_hypnogram_svg(h, os); });
      write_manifest(dir / "run_manifest.json", "hypnogram", args, cfg,
                     {{"data", data_path}, {"model", model_path}, {"record", h.record_id}, {"agreement", h.agreement}});
      out << "record " << h.record_id << " epochs " << h.predicted.size() << " agreement " << h.agreement << '\n';
      return kOk;
    }

    if (*report) {
      std::ostringstream csv;
      csv << "model,phase,params,kilobytes,flops,mflops,param_ratio,flop_ratio\n";
      std::size_t base_params = 0;
      std::uint64_t base_flops = 0;
      for (std::size_t m = 0; m < report_models.size(); ++m) {
        const Checkpoint ck = load_checkpoint(report_models[m]);
        const ParamCount pc = count_params(ck.network);
        const FlopCount fc = count_flops(ck.network);
        if (m == 0) {
          base_params = pc.total;
          base_flops = fc.total;
        }
        csv << report_models[m] << ',' << to_string(ck.meta.provenance.phase) << ',' << pc.total << ','
            << pc.kilobytes() << ',' << fc.total << ',' << fc.mflops() << ','
            << static_cast<double>(base_params) / static_cast<double>(pc.total) << ','
            << static_cast<double>(base_flops) / static_cast<double>(fc.total) << '\n';
      }
      out << csv.str();
      if (!report_c.out.empty()) write_text(fs::path(report_c.out) / "report.csv", csv.str());
      return kOk;
    }

    if (*search) {
      const TrainConfig cfg = resolve_config(search_c);
      const fs::path dir = search_c.out;
      fs::create_directories(dir);
      const DataBundle data = prepare_data(load_data(data_path), cfg);
      const Network init = initial_network(cfg, data.train.sample_length);
      SearchTable table;
      if (search_kind == "epsilon") {
        table = search_epsilon(init, data, cfg, parse_grid(grid_text.empty() ? "0,2,4,6,8,10,12,14,16,18,20,22,24,26,28,30" : grid_text));
      } else if (search_kind == "cg") {
        table = search_cg(init, data, cfg, parse_grid(grid_text.empty() ? "0,0.1,0.2,0.3,0.4" : grid_text));
      } else {
        table = search_lambdas(init, data, cfg, parse_grid(grid_text.empty() ? "1e-3,3e-3,1e-2" : grid_text),
                               parse_grid(grid_g_text.empty() ? "1e-6,1e-5,1e-4" : grid_g_text));
      }
      write_with(dir / "search.csv", [&](std::ostream& os) { write_search_csv(table, os); });
      write_manifest(dir / "run_manifest.json", "search", args, cfg, {{"data", data_path}, {"kind", search_kind}});
      write_search_csv(table, out);
      return kOk;
    }
  } catch (const NumericalError& e) {
    return fail(err, kNumerical, "numerical", e.what());
  } catch (const ConfigError& e) {
    return fail(err, kUsage, "config", e.what());
  } catch (const FormatError& e) {
    return fail(err, kDataFormat, "format", e.what());
  } catch (const ShapeError& e) {
    return fail(err, kDataFormat, "shape", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, kDataFormat, "io", e.what());
  }
  return fail(err, kUsage, "usage", "no subcommand");
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace rest::cli
