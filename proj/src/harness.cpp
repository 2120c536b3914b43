#include "cegc/harness.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "cegc/checkpoint.hpp"
#include "cegc/io.hpp"
#include "cegc/metrics.hpp"

namespace cegc {

namespace {

double parse_real(const std::string& key, const std::string& value) {
  double v = 0.0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw UsageError("--" + key + ": '" + value + "' is not a number");
  return v;
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw UsageError("--" + key + ": '" + value + "' is not a non-negative integer");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw UsageError("--" + key + ": '" + value + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename Fn>
void parallel_for(std::size_t jobs, Fn&& fn) {
  const std::size_t workers = eval_threads(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<RegistrationPair> load_pairs(const std::vector<DatasetEntry>& entries) {
  std::vector<RegistrationPair> pairs;
  pairs.reserve(entries.size());
  for (const auto& e : entries) pairs.push_back(load_pair(e.dir));
  return pairs;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing required option ") + what);
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path.string());
}

}  // namespace

void RunConfig::validate() const {
  if (points < 3) throw UsageError("--points must be at least 3");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw UsageError("--overlap must lie in (0, 1]");
  if (noise && !(noise_sigma >= 0.0 && noise_clip >= 0.0)) throw UsageError("noise sigma and clip must be non-negative");
  if (!(overlap_tau > 0.0)) throw UsageError("--tau must be positive");
  if (k < 1) throw UsageError("--k must be at least 1");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw UsageError("--keep-ratio must lie in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw UsageError("--lambda must lie in [0, 1]");
  if (!(lr > 0.0)) throw UsageError("--lr must be positive");
  if (!(match_temperature > 0.0)) throw UsageError("--temperature must be positive");
  if (feature_dim < 1 || agnn_widths.empty()) throw UsageError("model widths must be positive");
  for (const auto& m : methods) {
    if (m != "cegc" && m != "icp") throw UsageError("unknown method '" + m + "' (expected cegc or icp)");
  }
  ModelConfig probe;
  for (const auto& a : ablations) {
    try {
      apply_ablation(probe, a);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.agnn.k = k;
  m.agnn.widths = agnn_widths;
  m.agnn.out_dim = feature_dim;
  m.context.rounds = context_rounds;
  m.context.key_dim = key_dim;
  m.hoce.keep_ratio = keep_ratio;
  m.norm = norm;
  m.match_temperature = match_temperature;
  m.init_seed = seed;
  for (const auto& a : ablations) apply_ablation(m, a);
  return m;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "seed") c.seed = parse_count(key, value);
  else if (key == "points") c.points = parse_count(key, value);
  else if (key == "overlap") c.keep_fraction = parse_real(key, value);
  else if (key == "noise") c.noise = parse_bool(key, value);
  else if (key == "noise-sigma") {
    c.noise_sigma = parse_real(key, value);
    c.noise = c.noise_sigma > 0.0;
  } else if (key == "noise-clip") c.noise_clip = parse_real(key, value);
  else if (key == "tau") c.overlap_tau = parse_real(key, value);
  else if (key == "k") c.k = parse_count(key, value);
  else if (key == "keep-ratio") c.keep_ratio = parse_real(key, value);
  else if (key == "lambda") c.lambda = parse_real(key, value);
  else if (key == "lr") c.lr = parse_real(key, value);
  else if (key == "epochs") c.epochs = parse_count(key, value);
  else if (key == "ablate") c.ablations = split_list(value);
  else if (key == "feature-dim") c.feature_dim = parse_count(key, value);
  else if (key == "agnn-widths") {
    c.agnn_widths.clear();
    for (const auto& w : split_list(value)) c.agnn_widths.push_back(parse_count(key, w));
  } else if (key == "context-rounds") c.context_rounds = parse_count(key, value);
  else if (key == "key-dim") c.key_dim = parse_count(key, value);
  else if (key == "norm") {
    if (value == "batch") c.norm = NormMode::batch;
    else if (value == "per-cloud") c.norm = NormMode::per_cloud;
    else if (value == "none") c.norm = NormMode::none;
    else throw UsageError("--norm: expected batch, per-cloud or none, got '" + value + "'");
  } else if (key == "temperature") c.match_temperature = parse_real(key, value);
  else if (key == "manifest") c.manifest = value;
  else if (key == "data") c.data = value;
  else if (key == "out") c.out = value;
  else if (key == "checkpoint") c.checkpoint = value;
  else if (key == "source") c.source = value;
  else if (key == "target") c.target = value;
  else if (key == "split") c.split = value;
  else if (key == "methods") c.methods = split_list(value);
  else if (key == "icp-iterations") c.icp_iterations = parse_count(key, value);
  else throw UsageError("unknown setting '" + key + "'");
}

void apply_config_file(RunConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), number, "expected key=value");
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw ParseError(path.string(), number, e.what());
    }
  }
}

std::size_t eval_threads(std::size_t jobs) {
  std::size_t n = std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
  if (const char* env = std::getenv("CEGC_THREADS")) {
    std::size_t v = 0;
    const std::string s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 1) {
      throw UsageError("CEGC_THREADS must be a positive integer, got '" + s + "'");
    }
    n = v;
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

std::vector<DatasetEntry> read_dataset(const fs::path& root, const std::string& split) {
  const fs::path index = root / "dataset.txt";
  if (!fs::exists(index)) throw IoError("dataset index not found: " + index.string());
  std::vector<DatasetEntry> out;
  for (const auto& r : read_records(index)) {
    DatasetEntry e{root / r.get("pair"), r.get_or("split", "train"), r.get_or("mesh", "")};
    if (split.empty() || e.split == split) out.push_back(std::move(e));
  }
  return out;
}

int cmd_shapes(const RunConfig& config, std::ostream& log) {
  ensure_dir(config.out);
  std::ofstream manifest = open_output(config.out / "manifest.txt");
  manifest << "# built-in meshes\n";
  for (const auto& name : builtin_shape_names()) {
    save_mesh_off(builtin_shape(name), config.out / (name + ".off"));
    manifest << format_record({{"path", name + ".off"}, {"split", "train"}}, {"path", "split"}) << '\n';
  }
  log << "wrote " << builtin_shape_names().size() << " meshes to " << config.out.string() << '\n';
  return kExitOk;
}

int cmd_synth(const RunConfig& config, std::ostream& log) {
  config.validate();
  require_file(config.manifest, "--manifest");
  const auto records = read_records(config.manifest);
  const fs::path base = config.manifest.parent_path();

  std::vector<std::string> missing;
  for (const auto& r : records) {
    if (r.fields.count("shape")) continue;
    const fs::path p = base / r.get("path");
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) {
    for (const auto& m : missing) log << "error: mesh not found: " << m << '\n';
    throw IoError(std::to_string(missing.size()) + " mesh file(s) missing");
  }

  PairOptions options;
  options.points = config.points;
  options.keep_fraction = config.keep_fraction;
  options.tau = config.overlap_tau;
  if (config.noise) options.noise = NoiseConfig{config.noise_sigma, config.noise_clip};

  ensure_dir(config.out / "pairs");
  std::ofstream index = open_output(config.out / "dataset.txt");
  std::size_t count = 0;
  for (std::size_t li = 0; li < records.size(); ++li) {
    const auto& r = records[li];
    const bool builtin = r.fields.count("shape") > 0;
    const std::string mesh_name = builtin ? r.get("shape") : r.get("path");
    const Mesh mesh = builtin ? builtin_shape(mesh_name) : normalize_unit_sphere(load_mesh(base / mesh_name));
    const std::string split = r.get_or("split", "train");
    if (split != "train" && split != "test") {
      throw ParseError(config.manifest.string(), r.line, "split must be train or test, got '" + split + "'");
    }
    const std::uint64_t line_seed = r.fields.count("seed")
                                        ? parse_count("seed", r.get("seed"))
                                        : derive_seed(config.seed, 1000 + li);
    const std::uint64_t n_pairs = parse_count("pairs", r.get_or("pairs", "1"));
    for (std::uint64_t p = 0; p < n_pairs; ++p) {
      const std::uint64_t seed = derive_seed(line_seed, p);
      RegistrationPair pair = make_pair(mesh, options, seed);
      std::ostringstream name;
      name << "pairs/" << std::setw(4) << std::setfill('0') << count;
      pair.source.id = pair.target.id = name.str();
      save_pair(pair, config.out / name.str());
      index << format_record({{"pair", name.str()},
                              {"split", split},
                              {"mesh", mesh_name},
                              {"seed", std::to_string(seed)},
                              {"overlap", format_double(pair.overlap_ratio)}},
                             {"pair", "split", "mesh", "seed", "overlap"})
            << '\n';
      ++count;
    }
  }
  log << count << " pairs written to " << config.out.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.data.empty()) throw UsageError("missing required option --data");
  const auto entries = read_dataset(config.data, "train");
  if (entries.empty()) throw UsageError("no train pairs in " + config.data.string());
  const auto pairs = load_pairs(entries);

  Model model(config.model_config());
  ensure_dir(config.out);
  std::ofstream csv = open_output(config.out / "train_log.csv");
  write_epoch_header(csv);
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.lr = config.lr;
  tc.lambda = config.lambda;
  std::size_t current_epoch = 0;
  try {
    train(model, pairs, tc, [&](const EpochLog& e) {
      current_epoch = e.epoch;
      write_epoch_row(csv, e);
      csv.flush();
    });
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("training aborted in epoch " + std::to_string(current_epoch + 1) + ": " + e.what());
  }
  save_checkpoint((config.out / "model.ckpt").string(), model);
  log << "trained " << config.epochs << " epochs on " << pairs.size() << " pairs; checkpoint "
      << (config.out / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_register(const RunConfig& config, std::ostream& log) {
  require_file(config.checkpoint, "--checkpoint");
  require_file(config.source, "--source");
  require_file(config.target, "--target");
  const auto model = load_checkpoint(config.checkpoint.string());
  const PointCloud source = load_cloud(config.source);
  const PointCloud target = load_cloud(config.target);
  const PoseSolution pose = model->register_pair(source, target);
  ensure_dir(config.out);
  write_transform(config.out / "pose.txt", pose.transform, pose.residual);
  save_cloud_xyz(pose.transform.apply(source), config.out / "aligned.xyz");
  log << "residual " << format_double(pose.residual) << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.data.empty()) throw UsageError("missing required option --data");
  const auto entries = read_dataset(config.data, config.split);
  if (entries.empty()) {
    throw UsageError("no pairs to evaluate in " + config.data.string() +
                     (config.split.empty() ? "" : " (split " + config.split + ")"));
  }
  const auto pairs = load_pairs(entries);
  std::unique_ptr<Model> model;
  if (std::find(config.methods.begin(), config.methods.end(), "cegc") != config.methods.end()) {
    require_file(config.checkpoint, "--checkpoint");
    model = load_checkpoint(config.checkpoint.string());
  }

  std::vector<RigidTransform> gt;
  for (const auto& p : pairs) gt.push_back(p.gt);
  std::vector<std::pair<std::string, MetricReport>> reports;
  ensure_dir(config.out);
  std::ofstream per_pair = open_output(config.out / "per_pair.csv");
  per_pair << "method,pair,Error(R),Error(t)\n";
  for (const auto& method : config.methods) {
    std::vector<RigidTransform> est(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      if (method == "cegc") {
        est[i] = model->register_pair(pairs[i].source, pairs[i].target).transform;
      } else {
        est[i] = icp_baseline(pairs[i].source, pairs[i].target, config.icp_iterations).solution.transform;
      }
    });
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      per_pair << method << ',' << fs::relative(entries[i].dir, config.data).generic_string() << ','
               << format_double(rotation_error_deg(est[i].R, gt[i].R)) << ','
               << format_double(translation_error(est[i].t, gt[i].t)) << '\n';
    }
    reports.emplace_back(method, pose_metrics(est, gt));
  }

  std::ofstream csv = open_output(config.out / "metrics.csv");
  write_report_csv_header(csv);
  for (const auto& [method, r] : reports) write_report_csv_row(csv, method, r);
  std::ofstream json = open_output(config.out / "metrics.json");
  json << report_json(reports);

  log << std::left << std::setw(8) << "method";
  for (const char* h : {"RMSE(R)", "RMSE(t)", "MAE(R)", "MAE(t)", "Error(R)", "Error(t)"}) log << std::setw(11) << h;
  log << '\n' << std::fixed << std::setprecision(4);
  for (const auto& [method, r] : reports) {
    log << std::setw(8) << method;
    for (double v : {r.rmse_r, r.rmse_t, r.mae_r, r.mae_t, r.err_r, r.err_t}) log << std::setw(11) << v;
    log << '\n';
  }
  log << std::defaultfloat << pairs.size() << " pairs\n";
  return kExitOk;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Partial-overlap point cloud registration toolkit"};
  app.require_subcommand(1);
  std::map<std::string, std::string> values;
  std::map<std::string, std::vector<std::string>> lists;
  std::string config_file;
  bool noise_flag = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key=value settings file (flags take precedence)");
    for (const char* key : {"seed", "points", "overlap", "noise-sigma", "noise-clip", "tau", "k", "keep-ratio",
                            "lambda", "lr", "epochs", "feature-dim", "agnn-widths", "context-rounds", "key-dim",
                            "norm", "temperature", "out"}) {
      cmd->add_option(std::string("--") + key, values[key]);
    }
    cmd->add_flag("--noise", noise_flag, "perturb clouds with clipped Gaussian noise");
    cmd->add_option("--ablate", lists["ablate"], "no-hoce | no-cams | no-semantic | no-geometric")->take_all();
  };
  CLI::App* shapes = app.add_subcommand("shapes", "write the built-in meshes and a manifest");
  CLI::App* synth = app.add_subcommand("synth", "synthesize registration pairs from a mesh manifest");
  CLI::App* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  CLI::App* reg = app.add_subcommand("register", "register a source cloud onto a target cloud");
  CLI::App* eval = app.add_subcommand("eval", "evaluate methods on a dataset");
  for (CLI::App* cmd : {shapes, synth, train_cmd, reg, eval}) add_common(cmd);
  synth->add_option("--manifest", values["manifest"], "mesh manifest (path= split= pairs= seed=)");
  train_cmd->add_option("--data", values["data"]);
  eval->add_option("--data", values["data"]);
  eval->add_option("--split", values["split"]);
  eval->add_option("--methods", lists["methods"], "cegc, icp")->take_all();
  eval->add_option("--icp-iterations", values["icp-iterations"]);
  for (CLI::App* cmd : {reg, eval}) cmd->add_option("--checkpoint", values["checkpoint"]);
  reg->add_option("--source", values["source"]);
  reg->add_option("--target", values["target"]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    RunConfig config;
    if (!config_file.empty()) apply_config_file(config, config_file);
    for (const auto& [key, value] : values) {
      if (cmd->get_option_no_throw("--" + key) && cmd->count("--" + key) > 0) apply_setting(config, key, value);
    }
    for (const auto& [key, items] : lists) {
      if (!cmd->get_option_no_throw("--" + key) || cmd->count("--" + key) == 0) continue;
      std::string joined;
      for (const auto& item : items) joined += (joined.empty() ? "" : ",") + item;
      apply_setting(config, key, joined);
    }
    if (noise_flag) config.noise = true;

    const std::string name = cmd->get_name();
    if (name == "shapes") return cmd_shapes(config, out);
    if (name == "synth") return cmd_synth(config, out);
    if (name == "train") return cmd_train(config, out);
    if (name == "register") return cmd_register(config, out);
    return cmd_eval(config, out);
  } catch (const BadMagicError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadMagic;
  } catch (const UnsupportedVersionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadVersion;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace cegc
