#include "cli.hpp"

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "stepsteer/backend/protocol.hpp"
#include "stepsteer/backend/records.hpp"
#include "stepsteer/backend/toy_model.hpp"
#include "stepsteer/error.hpp"
#include "stepsteer/eval.hpp"
#include "stepsteer/extraction.hpp"
#include "stepsteer/intervention.hpp"
#include "stepsteer/json_io.hpp"
#include "stepsteer/layer_select.hpp"
#include "stepsteer/probe.hpp"
#include "stepsteer/prompts.hpp"
#include "stepsteer/random.hpp"
#include "stepsteer/record.hpp"
#include "stepsteer/synthetic.hpp"

namespace stepsteer::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDataDirEnv = "STEPSTEER_DATA_DIR";

fs::path resolve_input(const std::string& text, bool directory = false) {
  fs::path path(text);
  if (path.is_relative() && !fs::exists(path)) {
    if (const char* dir = std::getenv(kDataDirEnv); dir != nullptr && *dir != '\0') {
      fs::path alt = fs::path(dir) / path;
      if (fs::exists(alt)) path = alt;
    }
  }
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "input not found: " + text);
  if (directory != fs::is_directory(path)) {
    throw Error(ErrorCode::ConfigError, text + (directory ? " is not a directory" : " is a directory"));
  }
  return path;
}

std::string format_number(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

void write_json(const fs::path& path, const Json& value) { write_text_file(path, dump_json(value) + "\n"); }

// ---------------------------------------------------------------- option groups

struct DataArgs {
  std::string samples;
  std::size_t synthetic = 0;
  std::uint64_t data_seed = 0;

  void add(CLI::App* app) {
    app->add_option("--samples", samples, "Labelled samples (JSONL)");
    app->add_option("--synthetic", synthetic, "Generate this many synthetic samples instead")
        ->check(CLI::PositiveNumber);
    app->add_option("--data-seed", data_seed, "Seed of the synthetic samples")->capture_default_str();
  }

  std::vector<LabeledSample> load() const {
    if (synthetic > 0) {
      if (!samples.empty()) throw Error(ErrorCode::ConfigError, "--samples and --synthetic are exclusive");
      return make_synthetic_samples(synthetic, data_seed);
    }
    return load_samples(resolve_input(samples.empty() ? "samples.jsonl" : samples));
  }

  Json to_json() const {
    if (synthetic > 0) return Json{{"synthetic", synthetic}, {"data_seed", data_seed}};
    return Json{{"samples", samples.empty() ? "samples.jsonl" : samples}};
  }
};

struct ToyArgs {
  int layers = 4;
  int hidden = 32;
  int heads = 4;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--toy-layers", layers, "Toy model depth")->capture_default_str();
    app->add_option("--toy-hidden", hidden, "Toy model width")->capture_default_str();
    app->add_option("--toy-heads", heads, "Toy model attention heads")->capture_default_str();
    app->add_option("--toy-seed", seed, "Toy model weight seed")->capture_default_str();
  }

  ToyConfig config() const {
    ToyConfig c;
    c.n_layers = layers;
    c.hidden_dim = hidden;
    c.n_heads = heads;
    c.seed = seed;
    return c;
  }
};

struct PolicyArgs {
  std::string variant = "none";
  std::string layers;
  double alpha_strict = 1.0;
  double alpha_lenient = 1.0;
  double tau_low = 0.5;
  double tau_high = 0.7;
  double rho_strict = 0.0;
  double rho_lenient = 0.0;
  bool no_sample_adaptive = false;
  bool no_delimiter_adaptive = false;
  std::string vectors;
  std::string probe;

  void add(CLI::App* app, bool with_layers = true) {
    app->add_option("--variant", variant, "none, uni, bi or caa")
        ->check(CLI::IsMember({"none", "uni", "bi", "caa"}))
        ->capture_default_str();
    if (with_layers) app->add_option("--layers", layers, "Intervention layers: list or a:b:step");
    app->add_option("--alpha-strict", alpha_strict)->capture_default_str();
    app->add_option("--alpha-lenient", alpha_lenient)->capture_default_str();
    app->add_option("--tau-low", tau_low)->capture_default_str();
    app->add_option("--tau-high", tau_high)->capture_default_str();
    app->add_option("--rho-strict", rho_strict)->capture_default_str();
    app->add_option("--rho-lenient", rho_lenient)->capture_default_str();
    app->add_flag("--no-sample-adaptive", no_sample_adaptive, "Route every sample to strict");
    app->add_flag("--no-delimiter-adaptive", no_delimiter_adaptive, "Steer every delimiter");
    app->add_option("--vectors", vectors, "Directory of steering vector files");
    app->add_option("--probe", probe, "Probe weight file");
  }

  SteerPolicy policy() const {
    SteerPolicy p;
    p.variant = *variant_from_string(variant);
    if (!layers.empty()) p.layers = parse_int_list(layers);
    p.alpha_strict = alpha_strict;
    p.alpha_lenient = alpha_lenient;
    p.tau_low = tau_low;
    p.tau_high = tau_high;
    p.rho_strict = rho_strict;
    p.rho_lenient = rho_lenient;
    p.sample_adaptive = !no_sample_adaptive;
    p.delimiter_adaptive = !no_delimiter_adaptive;
    return p;
  }

  SteeringSet load_vectors(const SteerPolicy& p) const {
    if (p.variant == Variant::None) return {};
    if (vectors.empty()) throw Error(ErrorCode::ConfigError, "--vectors is required for variant " + variant);
    return SteeringSet::load_directory(resolve_input(vectors, true), p.layers);
  }

  std::optional<ProbeFile> load_probe() const {
    if (probe.empty()) return std::nullopt;
    return stepsteer::load_probe(resolve_input(probe));
  }

  Json files_json() const { return Json{{"vectors", vectors}, {"probe", probe}}; }
};

struct GenerationArgs {
  std::size_t n_consistency = 1;
  std::uint64_t seed = 0;
  std::string prompt = "basic";
  std::size_t max_tokens = 96;
  double temperature = 0.0;
  double top_p = 1.0;

  void add(CLI::App* app) {
    std::vector<std::string> prompts;
    for (auto name : prompt_kind_names()) prompts.emplace_back(name);
    app->add_option("--n-consistency", n_consistency, "Rollouts per sample, majority-voted")
        ->capture_default_str();
    app->add_option("--seed", seed, "Base seed")->capture_default_str();
    app->add_option("--prompt", prompt, "Prompt template")->check(CLI::IsMember(prompts))->capture_default_str();
    app->add_option("--max-tokens", max_tokens)->capture_default_str();
    app->add_option("--temperature", temperature, "0 decodes greedily")->capture_default_str();
    app->add_option("--top-p", top_p)->capture_default_str();
  }

  Json to_json() const {
    return Json{{"n_consistency", n_consistency}, {"seed", seed},         {"prompt", prompt},
                {"max_tokens", max_tokens},       {"temperature", temperature}, {"top_p", top_p}};
  }
};

struct CorpusArgs {
  std::string rollouts = "rollouts.jsonl";
  std::string states = "states.jsonl";
  std::string layers;
  std::string cues;
  std::size_t max_erroneous = 500;
  std::size_t max_correct = 500;

  void add(CLI::App* app) {
    app->add_option("--rollouts", rollouts, "Rollout trace file")->capture_default_str();
    app->add_option("--states", states, "Hidden-state record file")->capture_default_str();
    app->add_option("--layers", layers, "Layers to use (default: all recorded)");
    app->add_option("--cues", cues, "Cue table JSON (default: built-in)");
    app->add_option("--max-erroneous", max_erroneous)->capture_default_str();
    app->add_option("--max-correct", max_correct)->capture_default_str();
  }

  Json to_json() const {
    return Json{{"rollouts", rollouts},       {"states", states},
                {"layers", layers},           {"cues", cues},
                {"max_erroneous", max_erroneous}, {"max_correct", max_correct}};
  }

  struct Loaded {
    ContrastCorpus corpus;
    std::vector<int> layers;
  };

  Loaded build(const std::vector<LabeledSample>& samples) const {
    const auto records = load_state_records(resolve_input(states));
    const auto sets = assemble_rollout_sets(samples, load_rollouts(resolve_input(rollouts)));
    std::vector<int> use;
    if (!layers.empty()) {
      use = parse_int_list(layers);
    } else {
      std::set<int> seen;
      for (const auto& r : records) seen.insert(r.layer);
      use.assign(seen.begin(), seen.end());
    }
    if (use.empty()) throw Error(ErrorCode::ConfigError, "no layers recorded in " + states);
    const CueTable table = cues.empty() ? CueTable::defaults() : CueTable::load(resolve_input(cues));
    const StateIndex index(records);
    Loaded out{build_corpus(sets, index, use, table, CorpusOptions{max_erroneous, max_correct}), use};
    return out;
  }
};

// ---------------------------------------------------------------- subcommands

int run_record(const DataArgs& data, const ToyArgs& toy, const RecordOptions& options,
               const std::string& out_dir, std::ostream& out) {
  const auto samples = data.load();
  const ToyModel model(toy.config());
  const Json config{{"subcommand", "record"},
                    {"data", data.to_json()},
                    {"backend", {{"name", "toy"}, {"toy", model.config().to_json()}}},
                    {"record", options.to_json()}};
  const RecordResult result = record_rollouts(samples, model, options);
  const fs::path dir(out_dir);
  std::vector<Json> sample_rows;
  for (const auto& s : samples) sample_rows.push_back(sample_to_json(s));
  write_jsonl(dir / "samples.jsonl", config, sample_rows);
  store_rollouts(result.rollouts, dir / "rollouts.jsonl", config);
  replay_store(result.events, dir / "states.jsonl", config);
  out << dump_json(Json{{"samples", samples.size()},
                        {"rollouts", result.rollouts.size()},
                        {"delimiter_events", result.events.size()},
                        {"generated_tokens", result.generated_tokens}})
      << "\n";
  return kExitOk;
}

int run_extract(const DataArgs& data, const CorpusArgs& corpus_args, const std::string& kind,
                const std::string& out_dir, std::ostream& out) {
  const auto samples = data.load();
  const Json config{{"subcommand", "extract-vectors"},
                    {"data", data.to_json()},
                    {"corpus", corpus_args.to_json()},
                    {"kind", kind}};
  auto loaded = corpus_args.build(samples);
  std::vector<std::pair<SteeringVector, fs::path>> outputs;
  for (int layer : loaded.layers) {
    std::vector<DirectionKind> kinds;
    if (kind != "lenient") kinds.push_back(DirectionKind::Strict);
    if (kind != "strict") kinds.push_back(DirectionKind::Lenient);
    for (DirectionKind k : kinds) {
      SteeringVector v = extract_direction(loaded.corpus, layer, k);
      outputs.emplace_back(std::move(v), fs::path(out_dir) / steering_vector_filename(k, layer));
    }
  }
  // Nothing is written unless every requested direction exists.
  for (const auto& [v, path] : outputs) save_steering_vector(v, path, config);

  Json summary{{"retained_erroneous", loaded.corpus.retained_erroneous()},
               {"retained_correct", loaded.corpus.retained_correct()},
               {"rejected_by_filter", loaded.corpus.rejected_by_filter()},
               {"unlocalized", loaded.corpus.unlocalized()},
               {"files", Json::array()}};
  for (const auto& [v, path] : outputs) {
    summary["files"].push_back(Json{{"path", path.filename().string()},
                                    {"layer", v.layer},
                                    {"kind", std::string(to_string(v.kind))},
                                    {"n_positive", v.n_positive},
                                    {"n_negative", v.n_negative}});
  }
  write_json(fs::path(out_dir) / "extract_summary.json", Json{{"config", config}, {"summary", summary}});
  out << dump_json(summary) << "\n";
  return kExitOk;
}

struct ProbeArgs {
  int layer = 0;
  std::string pooling = "mean";
  double val_fraction = 0.2;
  std::string hidden = "256,256";
  ProbeTrainConfig train;
};

int run_train_probe(const DataArgs& data, const ToyArgs& toy, const GenerationArgs& gen,
                    ProbeArgs args, const std::string& out_path, std::ostream& out) {
  const auto hidden = parse_int_list(args.hidden);
  if (hidden.size() != 2 || hidden[0] <= 0 || hidden[1] <= 0) {
    throw Error(ErrorCode::ConfigError, "--hidden needs two positive widths");
  }
  args.train.hidden = {static_cast<std::size_t>(hidden[0]), static_cast<std::size_t>(hidden[1])};
  args.train.seed = gen.seed;
  args.train.validate();
  if (!(args.val_fraction >= 0.0 && args.val_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "--val-fraction must lie in [0, 1)");
  }
  const Pooling pooling = *pooling_from_string(args.pooling);
  const auto samples = data.load();
  const ToyModel model(toy.config());
  if (args.layer < 0 || args.layer >= model.config().n_layers) {
    throw Error(ErrorCode::ConfigError, "--layer outside the backend");
  }
  const PromptKind prompt = *prompt_kind_from_string(gen.prompt);

  std::vector<LabeledVector> all;
  for (const auto& s : samples) {
    const auto states = model.prompt_states(model.tokenize(render_prompt(prompt, s).flattened()),
                                            std::span<const int>(&args.layer, 1));
    all.push_back(LabeledVector{pool(std::span<const Vector>(states.at(args.layer)), pooling),
                                s.fully_correct() ? 1 : 0});
  }
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(gen.seed, SeedStream::DataSplit, 0));
  shuffle(std::span<std::size_t>(order), rng);
  const auto n_val = static_cast<std::size_t>(args.val_fraction * static_cast<double>(all.size()));
  std::vector<LabeledVector> train, validation;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? validation : train).push_back(all[order[i]]);

  const ProbeTrainResult result = train_probe(train, validation, args.train);
  std::optional<double> val_auc;
  if (!validation.empty()) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& v : validation) {
      scores.push_back(probe_forward(v.x, result.weights));
      labels.push_back(v.label);
    }
    try {
      val_auc = auc(scores, labels);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateLabels) throw;
    }
  }
  ProbeFile file;
  file.weights = result.weights;
  file.pooling = pooling;
  file.layer = args.layer;
  file.config = Json{{"subcommand", "train-probe"},
                     {"data", data.to_json()},
                     {"backend", {{"name", "toy"}, {"toy", model.config().to_json()}}},
                     {"prompt", gen.prompt},
                     {"layer", args.layer},
                     {"pooling", args.pooling},
                     {"val_fraction", args.val_fraction},
                     {"train", args.train.to_json()}};
  save_probe(file, out_path);
  out << dump_json(Json{{"train", train.size()},
                        {"validation", validation.size()},
                        {"epochs_run", result.log.epochs_run},
                        {"best_epoch", result.log.best_epoch},
                        {"stopped_early", result.log.stopped_early},
                        {"validation_auc", val_auc ? Json(*val_auc) : Json(nullptr)}})
      << "\n";
  return kExitOk;
}

int run_select_layer(const DataArgs& data, const CorpusArgs& corpus_args, int k, double val_fraction,
                     std::uint64_t seed, const std::string& out_path, std::ostream& out) {
  if (k <= 0) throw Error(ErrorCode::InvalidK, "--k must be positive");
  const auto samples = data.load();
  auto loaded = corpus_args.build(samples);
  const Json config{{"subcommand", "select-layer"},
                    {"data", data.to_json()},
                    {"corpus", corpus_args.to_json()},
                    {"k", k},
                    {"val_fraction", val_fraction},
                    {"seed", seed}};

  std::vector<std::future<std::optional<LayerScore>>> jobs;
  for (int layer : loaded.layers) {
    jobs.push_back(std::async(std::launch::async, [&, layer]() -> std::optional<LayerScore> {
      const auto split = separability_split(loaded.corpus, layer, val_fraction, seed);
      try {
        return score_layer(layer, split.train, split.validation);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::DegenerateLabels) return std::nullopt;
        throw;
      }
    }));
  }
  std::vector<LayerScore> scores;
  Json skipped = Json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (auto s = jobs[i].get()) {
      scores.push_back(*s);
    } else {
      skipped.push_back(loaded.layers[i]);
    }
  }
  if (scores.empty()) {
    throw Error(ErrorCode::DegenerateLabels, "no layer has both TR and FA states in train and validation");
  }
  const auto ranked = rank_layers(scores, static_cast<int>(scores.size()));
  std::vector<Json> rows;
  for (const auto& s : ranked) rows.push_back(s.to_json());
  write_jsonl(out_path, config, rows);
  Json shortlist = Json::array();
  for (const auto& s : rank_layers(scores, k)) shortlist.push_back(s.layer);
  out << dump_json(Json{{"shortlist", shortlist}, {"skipped_layers", skipped}}) << "\n";
  return kExitOk;
}

struct EvalSetup {
  std::vector<LabeledSample> samples;
  EvalOptions options;
  Json config;
};

EvalSetup prepare_eval(const DataArgs& data, const PolicyArgs& policy_args, const GenerationArgs& gen) {
  EvalSetup s;
  s.samples = data.load();
  s.options.policy = policy_args.policy();
  s.options.policy.validate();
  s.options.vectors = policy_args.load_vectors(s.options.policy);
  s.options.probe = policy_args.load_probe();
  s.options.n_consistency = gen.n_consistency;
  s.options.seed = gen.seed;
  s.options.prompt = *prompt_kind_from_string(gen.prompt);
  s.options.max_tokens = gen.max_tokens;
  s.options.temperature = gen.temperature;
  s.options.top_p = gen.top_p;
  return s;
}

void write_report(const EvalReport& report, const std::string& out_path, const std::string& csv_path,
                  std::ostream& out) {
  if (!out_path.empty()) write_json(out_path, report.to_json());
  if (!csv_path.empty()) write_text_file(csv_path, report.to_csv());
  Json summary = report.metrics.to_json();
  summary["tflops_per_sample"] =
      report.rows.empty() ? 0.0 : report.flops.tflops() / static_cast<double>(report.rows.size());
  summary["delimiters"] = report.total_delimiters;
  summary["interventions"] = report.total_interventions;
  out << dump_json(summary) << "\n";
}

int run_evaluate(const DataArgs& data, const std::string& backend, const ToyArgs& toy,
                 const PolicyArgs& policy_args, const GenerationArgs& gen, const std::string& rollouts,
                 const std::string& out_path, const std::string& csv_path, std::ostream& out) {
  if (backend == "replay") {
    if (policy_args.variant != "none") {
      throw Error(ErrorCode::ConfigError, "the replay backend only scores recorded traces; use --variant none");
    }
    const auto samples = data.load();
    EvalReport report = evaluate_recorded(samples, load_rollouts(resolve_input(rollouts)));
    report.config = Json{{"subcommand", "evaluate"},
                         {"data", data.to_json()},
                         {"backend", {{"name", "replay"}, {"rollouts", rollouts}}}};
    write_report(report, out_path, csv_path, out);
    return kExitOk;
  }
  EvalSetup setup = prepare_eval(data, policy_args, gen);
  const ToyModel model(toy.config());
  EvalReport report = run_eval(setup.samples, setup.options, model);
  report.config = Json{{"subcommand", "evaluate"},
                       {"data", data.to_json()},
                       {"backend", {{"name", "toy"}, {"toy", model.config().to_json()}}},
                       {"policy", policy_to_json(setup.options.policy)},
                       {"files", policy_args.files_json()},
                       {"generation", gen.to_json()}};
  write_report(report, out_path, csv_path, out);
  return kExitOk;
}

int run_sweep(const DataArgs& data, const ToyArgs& toy, const PolicyArgs& policy_args,
              const GenerationArgs& gen, const std::string& layer_grid, const std::string& alpha_grid,
              const std::string& out_dir, std::size_t jobs, std::ostream& out) {
  const std::vector<int> layers = parse_int_list(layer_grid);
  const std::vector<double> alphas = parse_double_list(alpha_grid);
  if (layers.empty() || alphas.empty()) throw Error(ErrorCode::ConfigError, "empty sweep grid");

  PolicyArgs all_layers = policy_args;
  all_layers.layers = layer_grid;
  EvalSetup base = prepare_eval(data, all_layers, gen);
  const ToyModel model(toy.config());

  struct Cell {
    int layer;
    double alpha;
    fs::path path;
    std::optional<MetricSummary> metrics;
  };
  std::vector<Cell> cells;
  for (int l : layers) {
    for (double a : alphas) {
      cells.push_back(Cell{l, a, fs::path(out_dir) / ("L" + std::to_string(l) + "_a" + format_number(a) + ".json"),
                           std::nullopt});
    }
  }
  // Validate every cell before running any.
  auto cell_options = [&](const Cell& c) {
    EvalOptions o = base.options;
    o.policy.layers = {c.layer};
    o.policy.alpha_strict = c.alpha;
    o.policy.alpha_lenient = c.alpha;
    validate_eval_options(o, model.descriptor());
    return o;
  };
  for (const auto& c : cells) cell_options(c);

  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        Cell& c = cells[i];
        const EvalOptions o = cell_options(c);
        EvalReport report = run_eval(base.samples, o, model);
        report.config = Json{{"subcommand", "sweep"},
                             {"data", data.to_json()},
                             {"backend", {{"name", "toy"}, {"toy", model.config().to_json()}}},
                             {"policy", policy_to_json(o.policy)},
                             {"files", policy_args.files_json()},
                             {"generation", gen.to_json()},
                             {"grid", {{"layers", layer_grid}, {"alphas", alpha_grid}}}};
        write_json(c.path, report.to_json());
        c.metrics = report.metrics;
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  Json grid = Json::array();
  for (const auto& c : cells) {
    grid.push_back(Json{{"layer", c.layer},
                        {"alpha", c.alpha},
                        {"report", c.path.filename().string()},
                        {"f1", c.metrics->f1 ? Json(*c.metrics->f1) : Json(nullptr)}});
  }
  out << dump_json(Json{{"cells", cells.size()}, {"grid", grid}}) << "\n";
  return kExitOk;
}

std::atomic<bool> g_stop{false};

extern "C" void handle_stop_signal(int) { g_stop = true; }

int run_serve(const PolicyArgs& policy_args, const std::string& host, std::uint16_t port,
              double max_seconds, std::ostream& out) {
  EngineConfig engine;
  engine.policy = policy_args.policy();
  engine.policy.validate();
  engine.vectors = policy_args.load_vectors(engine.policy);
  engine.probe = policy_args.load_probe();
  require_vectors_for(engine.policy, engine.vectors, std::nullopt);

  ProtocolServer server(std::move(engine));
  const std::uint16_t bound = server.start(host, port);
  out << dump_json(Json{{"listening", bound}, {"host", host}}) << std::endl;

  g_stop = false;
  auto previous_int = std::signal(SIGINT, handle_stop_signal);
  auto previous_term = std::signal(SIGTERM, handle_stop_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (max_seconds > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= max_seconds) {
      break;
    }
  }
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  server.stop();
  out << dump_json(Json{{"sessions", server.sessions_served()}}) << "\n";
  return kExitOk;
}

void print_error(std::ostream& err, std::string_view kind, std::string_view detail) {
  err << dump_json(Json{{"error", std::string(kind)}, {"detail", std::string(detail)}}) << "\n";
}

}  // namespace

std::vector<int> parse_int_list(const std::string& text) {
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "not an integer: '" + s + "' in '" + text + "'");
    }
  };
  std::vector<int> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw Error(ErrorCode::ConfigError, "range must be start:end:step, got " + text);
    const int start = to_int(parts[0]), end = to_int(parts[1]), step = to_int(parts[2]);
    if (step <= 0) throw Error(ErrorCode::ConfigError, "range step must be positive in " + text);
    for (int v = start; v < end; v += step) out.push_back(v);
    return out;
  }
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) {
    if (!p.empty()) out.push_back(to_int(p));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ',');) {
    if (p.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "not a number: '" + p + "' in '" + text + "'");
    }
  }
  return out;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Delimiter-level activation steering for step-level verifiers", "stepsteer"};
  app.set_config("--config", "", "TOML or INI file; flags given on the command line win");
  app.require_subcommand(1);

  DataArgs data;
  ToyArgs toy;
  PolicyArgs policy;
  GenerationArgs gen;
  CorpusArgs corpus;

  // record
  auto* record = app.add_subcommand("record", "Sample traces and delimiter states from the toy backend");
  RecordOptions record_opts;
  std::string record_layers, record_out, record_prompt = "basic";
  data.add(record);
  toy.add(record);
  record->add_option("--layers", record_layers, "Layers to record: list or a:b:step")->required();
  record->add_option("--rollouts", record_opts.n_rollouts)->capture_default_str();
  record->add_option("--temperature", record_opts.temperature)->capture_default_str();
  record->add_option("--top-p", record_opts.top_p)->capture_default_str();
  record->add_option("--max-tokens", record_opts.max_tokens)->capture_default_str();
  record->add_option("--seed", record_opts.seed)->capture_default_str();
  std::vector<std::string> prompts;
  for (auto name : prompt_kind_names()) prompts.emplace_back(name);
  record->add_option("--prompt", record_prompt)->check(CLI::IsMember(prompts))->capture_default_str();
  record->add_option("--out-dir", record_out, "Output directory")->required();

  // extract-vectors
  auto* extract = app.add_subcommand("extract-vectors", "Build strict and lenient steering vectors");
  std::string extract_kind = "both", extract_out;
  data.add(extract);
  corpus.add(extract);
  extract->add_option("--kind", extract_kind)->check(CLI::IsMember({"both", "strict", "lenient"}))
      ->capture_default_str();
  extract->add_option("--out-dir", extract_out)->required();

  // train-probe
  auto* train = app.add_subcommand("train-probe", "Fit the solution-correctness probe on prompt states");
  ProbeArgs probe_args;
  std::string probe_out;
  data.add(train);
  toy.add(train);
  train->add_option("--layer", probe_args.layer)->required();
  train->add_option("--pooling", probe_args.pooling)->check(CLI::IsMember({"mean", "last_token"}))
      ->capture_default_str();
  train->add_option("--epochs", probe_args.train.max_epochs)->capture_default_str();
  train->add_option("--lr", probe_args.train.learning_rate)->capture_default_str();
  train->add_option("--weight-decay", probe_args.train.weight_decay)->capture_default_str();
  train->add_option("--batch-size", probe_args.train.batch_size)->capture_default_str();
  train->add_option("--dropout", probe_args.train.dropout)->capture_default_str();
  train->add_option("--patience", probe_args.train.patience)->capture_default_str();
  train->add_option("--hidden", probe_args.hidden, "Two hidden widths")->capture_default_str();
  train->add_option("--val-fraction", probe_args.val_fraction)->capture_default_str();
  train->add_option("--seed", gen.seed)->capture_default_str();
  train->add_option("--prompt", gen.prompt)->check(CLI::IsMember(prompts))->capture_default_str();
  train->add_option("--out", probe_out)->required();

  // select-layer
  auto* select = app.add_subcommand("select-layer", "Rank layers by TR/FA linear separability");
  int select_k = 6;
  double select_val = 0.3;
  std::uint64_t select_seed = 0;
  std::string select_out;
  data.add(select);
  corpus.add(select);
  select->add_option("--k", select_k)->capture_default_str();
  select->add_option("--val-fraction", select_val)->capture_default_str();
  select->add_option("--seed", select_seed)->capture_default_str();
  select->add_option("--out", select_out)->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Run the verifier with a steering policy and score it");
  std::string backend = "toy", eval_rollouts, eval_out, eval_csv;
  data.add(evaluate);
  toy.add(evaluate);
  policy.add(evaluate);
  gen.add(evaluate);
  evaluate->add_option("--backend", backend)->check(CLI::IsMember({"toy", "replay"}))->capture_default_str();
  evaluate->add_option("--rollouts", eval_rollouts, "Recorded traces for the replay backend");
  evaluate->add_option("--out", eval_out, "Report JSON");
  evaluate->add_option("--csv", eval_csv, "Aggregate CSV");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Grid over intervention layer and strength");
  std::string sweep_layers, sweep_alphas, sweep_out;
  std::size_t sweep_jobs = 1;
  data.add(sweep);
  toy.add(sweep);
  policy.add(sweep, false);
  gen.add(sweep);
  sweep->add_option("--layers", sweep_layers, "Layer grid, a:b:step or list")->required();
  sweep->add_option("--alphas", sweep_alphas, "Strength grid, comma list")->required();
  sweep->add_option("--out-dir", sweep_out)->required();
  sweep->add_option("--jobs", sweep_jobs, "Grid cells run concurrently")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the steering engine over the wire protocol");
  std::string serve_host = "127.0.0.1";
  std::uint16_t serve_port = 0;
  double serve_seconds = 0.0;
  policy.add(serve);
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port, "0 picks a free port")->capture_default_str();
  serve->add_option("--max-seconds", serve_seconds, "Stop after this long; 0 runs until signalled")
      ->capture_default_str();

  std::vector<const char*> argv{"stepsteer"};
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
    print_error(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (*record) {
      record_opts.tap_layers = parse_int_list(record_layers);
      record_opts.prompt = *prompt_kind_from_string(record_prompt);
      return run_record(data, toy, record_opts, record_out, out);
    }
    if (*extract) return run_extract(data, corpus, extract_kind, extract_out, out);
    if (*train) return run_train_probe(data, toy, gen, probe_args, probe_out, out);
    if (*select) return run_select_layer(data, corpus, select_k, select_val, select_seed, select_out, out);
    if (*evaluate) {
      return run_evaluate(data, backend, toy, policy, gen, eval_rollouts, eval_out, eval_csv, out);
    }
    if (*sweep) return run_sweep(data, toy, policy, gen, sweep_layers, sweep_alphas, sweep_out, sweep_jobs, out);
    if (*serve) return run_serve(policy, serve_host, serve_port, serve_seconds, out);
  } catch (const Error& e) {
    print_error(err, to_string(e.code()), e.detail());
    switch (e.code()) {
      case ErrorCode::ConfigError:
      case ErrorCode::EmptyContrastSet:
      case ErrorCode::InvalidK:
        return kExitConfig;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return kExitFailure;
  }
  print_error(err, "usage", "no subcommand");
  return kExitUsage;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace stepsteer::cli
