#include "cli.hpp"

#include "stdiff/baselines.hpp"
#include "stdiff/checkpoint.hpp"
#include "stdiff/errors.hpp"
#include "stdiff/evaluation.hpp"
#include "stdiff/imputer.hpp"
#include "stdiff/masking.hpp"
#include "stdiff/plant.hpp"
#include "stdiff/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

namespace stdiff::cli {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"seed", "0"},
      {"threads", "1"},
      {"plant.kind", "scalar"},
      {"plant.a", "0.9"},
      {"plant.b", "1.0"},
      {"plant.c", "0.5"},
      {"plant.sigma", "0.1"},
      {"plant.length", "2000"},
      {"mask.level", "20"},
      {"mask.mean_block_length", "48"},
      {"mask.cofailure_fraction", "0.5"},
      {"mask.tolerance", "0.01"},
      {"schedule.steps", "1000"},
      {"schedule.beta_start", "0.0001"},
      {"schedule.beta_end", "0.02"},
      {"model.time_embed_dim", "64"},
      {"model.context_dim", "64"},
      {"model.encoder_width", "64"},
      {"model.encoder_layers", "2"},
      {"model.predictor_width", "128"},
      {"model.predictor_blocks", "3"},
      {"train.batch_size", "128"},
      {"train.steps", "2000"},
      {"train.learning_rate", "0.001"},
      {"train.final_lr_fraction", "1.0"},
      {"train.dropout", "0.1"},
      {"train.validation_fraction", "0.1"},
      {"train.eval_interval", "100"},
      {"train.eval_draws", "4"},
      {"impute.method", "stdiff"},
      {"impute.samples", "16"},
      {"impute.mode", "full"},
      {"impute.covariate_fallback", "mask-zero"},
      {"impute.locf_decay", "0.98"},
      {"impute.fill_unanchorable", "true"},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorKind::config, fmt::format("setting '{}' has invalid value '{}'", key, text));
  }
  return value;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::config, fmt::format("unknown setting '{}'", key));
  it->second = value;
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot read config file '{}'", path));
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    auto view = std::string_view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::config, fmt::format("{}:{}: expected 'key = value'", path, number));
    }
    set(std::string(trim(view.substr(0, eq))), std::string(trim(view.substr(eq + 1))));
  }
}

const std::string& RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::config, fmt::format("unknown setting '{}'", key));
  return it->second;
}

int RunConfig::integer(const std::string& key) const { return parse_number<int>(key, text(key)); }

std::uint64_t RunConfig::unsigned_integer(const std::string& key) const {
  return parse_number<std::uint64_t>(key, text(key));
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, text(key)); }

bool RunConfig::flag(const std::string& key) const {
  const auto& v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::config, fmt::format("setting '{}' must be true or false, got '{}'", key, v));
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot read '{}' for hashing", path));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace {

// Flag values as parsed; empty strings mean "not given".
struct Flags {
  std::string config;
  std::vector<std::string> settings;
  std::string manifest;
  bool verbose = false;
  std::string seed;
  std::string threads;
  std::vector<std::string> inputs;
  std::string output;
  std::string roles;
  std::string ledger;
  std::string checkpoint;
  std::string loss_curve;
  std::string report;
  std::string svg;
  std::string samples;
  std::string mode;
  std::string fallback;
  std::string level;
  std::string method;
  std::string plant;
  std::string length;
};

struct Run {
  std::string subcommand;
  RunConfig config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

std::string first_input(const Flags& flags) {
  if (flags.inputs.empty()) throw Error(ErrorKind::config, "--input is required");
  return flags.inputs.front();
}

TimeSeriesTable load_table(const std::string& path, const std::string& roles_path, Run& run) {
  if (roles_path.empty()) throw Error(ErrorKind::config, "--roles is required to read a CSV");
  run.inputs.push_back(path);
  run.inputs.push_back(roles_path);
  return load_csv(path, load_roles(roles_path));
}

void guard_outputs(const Run& run, const std::vector<std::string>& outputs) {
  namespace fs = std::filesystem;
  for (const auto& out : outputs) {
    for (const auto& in : run.inputs) {
      if (fs::weakly_canonical(out) == fs::weakly_canonical(in)) {
        throw Error(ErrorKind::config, fmt::format("output '{}' would overwrite input '{}'", out, in));
      }
    }
  }
}

void write_manifest(const Run& run, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["tool"] = "stdiff";
  doc["version"] = "0.1.0";
  doc["subcommand"] = run.subcommand;
  doc["config"] = run.config.values();
  auto hashes = [](const std::vector<std::string>& paths) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& p : paths) list.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    return list;
  };
  doc["inputs"] = hashes(run.inputs);
  doc["outputs"] = hashes(run.outputs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write manifest '{}'", path));
  out << doc.dump(2) << '\n';
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.schedule.steps = c.integer("schedule.steps");
  t.schedule.beta_start = c.real("schedule.beta_start");
  t.schedule.beta_end = c.real("schedule.beta_end");
  t.architecture.time_embed_dim = c.integer("model.time_embed_dim");
  t.architecture.context_dim = c.integer("model.context_dim");
  t.architecture.encoder_width = c.integer("model.encoder_width");
  t.architecture.encoder_layers = c.integer("model.encoder_layers");
  t.architecture.predictor_width = c.integer("model.predictor_width");
  t.architecture.predictor_blocks = c.integer("model.predictor_blocks");
  t.batch_size = c.integer("train.batch_size");
  t.steps = c.integer("train.steps");
  t.learning_rate = c.real("train.learning_rate");
  t.final_lr_fraction = c.real("train.final_lr_fraction");
  t.dropout = c.real("train.dropout");
  t.validation_fraction = c.real("train.validation_fraction");
  t.eval_interval = c.integer("train.eval_interval");
  t.eval_draws = c.integer("train.eval_draws");
  t.seed = c.unsigned_integer("seed");
  return t;
}

void cmd_simulate(const Flags& flags, Run& run, std::ostream& out) {
  const auto& c = run.config;
  PlantConfig plant;
  const auto& kind = c.text("plant.kind");
  if (kind == "scalar") {
    plant = PlantConfig::scalar(c.real("plant.a"), c.real("plant.b"), c.real("plant.sigma"), c.real("plant.c"));
  } else if (kind == "nonlinear") {
    plant = PlantConfig::nonlinear_default();
  } else {
    throw Error(ErrorKind::config, fmt::format("plant.kind must be scalar or nonlinear, got '{}'", kind));
  }
  const int length = c.integer("plant.length");
  if (length < 2) throw Error(ErrorKind::config, "plant.length must be at least 2");
  plant.length = static_cast<std::size_t>(length);
  plant.seed = c.unsigned_integer("seed");
  const auto sim = simulate_plant(plant);
  std::vector<std::string> outputs{flags.output};
  if (!flags.roles.empty()) outputs.push_back(flags.roles);
  guard_outputs(run, outputs);
  save_csv(flags.output, sim.table);
  if (!flags.roles.empty()) save_roles(flags.roles, sim.table);
  run.outputs = outputs;
  out << fmt::format("simulated {} rows of the {} plant into {}\n", sim.table.length(), kind, flags.output);
}

void cmd_mask(const Flags& flags, Run& run, std::ostream& out) {
  const auto& c = run.config;
  const auto table = load_table(first_input(flags), flags.roles, run);
  if (flags.ledger.empty()) throw Error(ErrorKind::config, "--ledger is required");
  MaskPlan plan = MaskPlan::scenario(c.integer("mask.level"), c.unsigned_integer("seed"));
  plan.mean_block_length = c.real("mask.mean_block_length");
  plan.cofailure_fraction = c.real("mask.cofailure_fraction");
  plan.tolerance = c.real("mask.tolerance");
  const auto result = generate_block_masks(table, plan);
  guard_outputs(run, {flags.output, flags.ledger});
  save_csv(flags.output, result.masked);
  save_ledger(flags.ledger, result.masked, result.ledger);
  run.outputs = {flags.output, flags.ledger};
  out << fmt::format("masked {} blocks: state rate {:.4f}, covariate rate {:.4f}, {} ledger entries\n",
                     result.blocks.size(), result.state_rate(), result.covariate_rate(), result.ledger.size());
}

void cmd_train(const Flags& flags, Run& run, std::ostream& out, std::ostream& err) {
  const auto table = load_table(first_input(flags), flags.roles, run);
  const auto cfg = train_config(run.config);
  const auto result = train(table, cfg);
  std::vector<std::string> outputs{flags.output};
  if (!flags.loss_curve.empty()) outputs.push_back(flags.loss_curve);
  guard_outputs(run, outputs);
  save_checkpoint(flags.output, result.checkpoint);
  if (!flags.loss_curve.empty()) save_loss_curve(flags.loss_curve, result.curve);
  run.outputs = outputs;
  if (flags.verbose) {
    for (const auto& p : result.curve) {
      err << fmt::format("step {} train {:.5f} validation {:.5f}\n", p.step, p.train_loss, p.validation_loss);
    }
  }
  out << fmt::format("trained {} steps on {} transitions: train loss {:.5f}, validation loss {:.5f}\n", cfg.steps,
                     result.train_transitions, result.final_train_loss, result.final_validation_loss);
}

void cmd_impute(const Flags& flags, Run& run, std::ostream& out) {
  const auto& c = run.config;
  const auto table = load_table(first_input(flags), flags.roles, run);
  const auto& method = c.text("impute.method");
  std::vector<std::string> outputs{flags.output};
  if (method != "stdiff") {
    BaselineMethod baseline;
    if (method == "locf") {
      baseline = BaselineMethod::locf;
    } else if (method == "linear") {
      baseline = BaselineMethod::linear;
    } else if (method == "kalman") {
      baseline = BaselineMethod::kalman;
    } else {
      throw Error(ErrorKind::config, fmt::format("impute.method must be stdiff, locf, linear or kalman, got '{}'", method));
    }
    const auto completed = apply_baseline(baseline, table);
    guard_outputs(run, outputs);
    save_csv(flags.output, completed);
    run.outputs = outputs;
    out << fmt::format("filled state gaps with {}\n", method);
    return;
  }

  if (flags.checkpoint.empty()) throw Error(ErrorKind::config, "--checkpoint is required for stdiff imputation");
  run.inputs.push_back(flags.checkpoint);
  const auto checkpoint = load_checkpoint(flags.checkpoint);
  ImputeOptions options;
  options.samples = c.integer("impute.samples");
  options.seed = c.unsigned_integer("seed");
  options.mode = parse_impute_mode(c.text("impute.mode"));
  options.fallback = parse_covariate_fallback(c.text("impute.covariate_fallback"));
  options.locf_decay = c.real("impute.locf_decay");
  options.threads = c.integer("threads");
  options.fill_unanchorable = c.flag("impute.fill_unanchorable");
  const auto imputation = impute_series(table, checkpoint, options);

  std::vector<LedgerEntry> ledger;
  if (!flags.ledger.empty()) {
    run.inputs.push_back(flags.ledger);
    ledger = load_ledger(flags.ledger, table);
  }
  if (!flags.report.empty()) outputs.push_back(flags.report);
  guard_outputs(run, outputs);
  save_csv(flags.output, imputation.completed);
  if (!flags.report.empty()) {
    std::ofstream report(flags.report, std::ios::binary | std::ios::trunc);
    if (!report) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", flags.report));
    write_gap_report(report, table, imputation, flags.ledger.empty() ? nullptr : &ledger);
  }
  run.outputs = outputs;
  std::size_t filled = 0;
  for (const auto& g : imputation.gaps) filled += g.result ? 1 : 0;
  out << fmt::format("imputed {} of {} gaps with {} samples each\n", filled, imputation.gaps.size(), options.samples);
}

void cmd_eval(const Flags& flags, Run& run, std::ostream& out) {
  const auto& c = run.config;
  const auto table = load_table(first_input(flags), flags.roles, run);
  if (flags.ledger.empty()) throw Error(ErrorKind::config, "--ledger is required");
  run.inputs.push_back(flags.ledger);
  const auto ledger = load_ledger(flags.ledger, table);
  auto report = masked_mae_rmse(table, ledger);
  report.method = c.text("impute.method");
  report.level = c.integer("mask.level");
  report.seed = c.unsigned_integer("seed");
  guard_outputs(run, {flags.output});
  std::ofstream file(flags.output, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", flags.output));
  write_curve_rows(file, curve_rows(report));
  file.close();
  run.outputs = {flags.output};
  for (const auto& m : report.channels) {
    out << fmt::format("{} {}: MAE {:.5f} RMSE {:.5f} over {} entries\n", report.method, m.channel, m.mae, m.rmse,
                       m.count);
  }
}

void cmd_report(const Flags& flags, Run& run, std::ostream& out) {
  if (flags.inputs.empty()) throw Error(ErrorKind::config, "--input needs at least one metrics file");
  std::vector<CurveRow> rows;
  for (const auto& path : flags.inputs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot read '{}'", path));
    auto part = read_curve_rows(in);
    rows.insert(rows.end(), part.begin(), part.end());
    run.inputs.push_back(path);
  }
  const auto summary = summarize_curve(rows);
  std::vector<std::string> outputs{flags.output};
  if (!flags.svg.empty()) outputs.push_back(flags.svg);
  guard_outputs(run, outputs);
  {
    std::ofstream file(flags.output, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", flags.output));
    write_curve_summary(file, summary);
  }
  if (!flags.svg.empty()) {
    std::ofstream file(flags.svg, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", flags.svg));
    file << render_degradation_svg(summary);
  }
  run.outputs = outputs;
  out << format_summary_table(summary);
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "Key-value config file (default from $STDIFF_CONFIG)");
  app->add_option("--set", f.settings, "Override one setting, key=value (repeatable)");
  app->add_option("--seed", f.seed, "Global seed");
  app->add_option("--threads", f.threads, "Worker threads");
  app->add_option("--manifest", f.manifest, "Manifest path (default: <output>.manifest.json)");
  app->add_flag("-v,--verbose", f.verbose, "Progress on stderr");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"State-transition diffusion imputation for control-driven time series", "stdiff"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  auto* simulate = app.add_subcommand("simulate", "Simulate a plant into a CSV");
  add_common(simulate, f);
  simulate->add_option("-o,--output", f.output, "Output CSV")->required();
  simulate->add_option("--roles", f.roles, "Write the role map here");
  simulate->add_option("--plant", f.plant, "Plant kind")->check(CLI::IsMember({"scalar", "nonlinear"}));
  simulate->add_option("--length", f.length, "Number of rows");

  auto* mask = app.add_subcommand("mask", "Apply block missingness and write the ledger");
  add_common(mask, f);
  mask->add_option("-i,--input", f.inputs, "Complete CSV")->required()->expected(1);
  mask->add_option("--roles", f.roles, "Role map")->required();
  mask->add_option("-o,--output", f.output, "Masked CSV")->required();
  mask->add_option("--ledger", f.ledger, "Ledger of hidden values")->required();
  mask->add_option("--level", f.level, "Missingness level")->check(CLI::IsMember({"20", "30", "40", "50"}));

  auto* train_cmd = app.add_subcommand("train", "Train the transition model");
  add_common(train_cmd, f);
  train_cmd->add_option("-i,--input", f.inputs, "Masked CSV")->required()->expected(1);
  train_cmd->add_option("--roles", f.roles, "Role map")->required();
  train_cmd->add_option("-o,--output,--checkpoint", f.output, "Checkpoint path")->required();
  train_cmd->add_option("--loss-curve", f.loss_curve, "Loss curve CSV");

  auto* impute = app.add_subcommand("impute", "Fill state gaps");
  add_common(impute, f);
  impute->add_option("-i,--input", f.inputs, "Masked CSV")->required()->expected(1);
  impute->add_option("--roles", f.roles, "Role map")->required();
  impute->add_option("-o,--output", f.output, "Completed CSV")->required();
  impute->add_option("--checkpoint", f.checkpoint, "Trained checkpoint");
  impute->add_option("--report", f.report, "Per-gap diagnostics CSV");
  impute->add_option("--ledger", f.ledger, "Ledger for per-gap MAE in the report");
  impute->add_option("--samples", f.samples, "Samples per gap");
  impute->add_option("--mode", f.mode, "Conditioning mode")->check(CLI::IsMember({"full", "history-only"}));
  impute->add_option("--covariate-fallback", f.fallback, "Missing covariate handling")
      ->check(CLI::IsMember({"mask-zero", "locf", "linear", "kalman"}));
  impute->add_option("--method", f.method, "Imputation method")
      ->check(CLI::IsMember({"stdiff", "locf", "linear", "kalman"}));

  auto* eval = app.add_subcommand("eval", "Score a completed CSV against the ledger");
  add_common(eval, f);
  eval->add_option("-i,--input", f.inputs, "Completed CSV")->required()->expected(1);
  eval->add_option("--roles", f.roles, "Role map")->required();
  eval->add_option("--ledger", f.ledger, "Ledger")->required();
  eval->add_option("-o,--output", f.output, "Metrics CSV")->required();
  eval->add_option("--method", f.method, "Method label");
  eval->add_option("--level", f.level, "Level label")->check(CLI::IsMember({"20", "30", "40", "50"}));

  auto* report = app.add_subcommand("report", "Summarize metrics files into curves");
  add_common(report, f);
  report->add_option("-i,--input", f.inputs, "Metrics CSV files")->required();
  report->add_option("-o,--output", f.output, "Summary CSV")->required();
  report->add_option("--svg", f.svg, "Degradation plot");

  std::vector<const char*> argv{"stdiff"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\nrun 'stdiff --help' for usage\n";
    return kExitUsage;
  }

  Run run;
  run.subcommand = app.get_subcommands().front()->get_name();
  try {
    std::string config_path = f.config;
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') config_path = env;
    }
    if (!config_path.empty()) {
      run.config.merge_file(config_path);
      run.inputs.push_back(config_path);
    }
    for (const auto& s : f.settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(ErrorKind::config, fmt::format("--set expects key=value, got '{}'", s));
      run.config.set(std::string(trim(std::string_view(s).substr(0, eq))),
                     std::string(trim(std::string_view(s).substr(eq + 1))));
    }
    const std::pair<const std::string*, const char*> overrides[] = {
        {&f.seed, "seed"},
        {&f.threads, "threads"},
        {&f.samples, "impute.samples"},
        {&f.mode, "impute.mode"},
        {&f.fallback, "impute.covariate_fallback"},
        {&f.level, "mask.level"},
        {&f.method, "impute.method"},
        {&f.plant, "plant.kind"},
        {&f.length, "plant.length"},
    };
    for (const auto& [value, key] : overrides) {
      if (!value->empty()) run.config.set(key, *value);
    }

    if (run.subcommand == "simulate") {
      cmd_simulate(f, run, out);
    } else if (run.subcommand == "mask") {
      cmd_mask(f, run, out);
    } else if (run.subcommand == "train") {
      cmd_train(f, run, out, err);
    } else if (run.subcommand == "impute") {
      cmd_impute(f, run, out);
    } else if (run.subcommand == "eval") {
      cmd_eval(f, run, out);
    } else {
      cmd_report(f, run, out);
    }
    write_manifest(run, f.manifest.empty() ? f.output + ".manifest.json" : f.manifest);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << fmt::format("error: {}\n", e.what());
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace stdiff::cli
