#include "ds4d/cli.hpp"

#include "ds4d/learner.hpp"
#include "ds4d/net.hpp"
#include "ds4d/operator_sim.hpp"
#include "ds4d/pipeline.hpp"
#include "ds4d/recorder.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace ds4d::cli {

namespace {

// JSON config files: top-level scalars and arrays apply to the main command,
// objects named after a subcommand apply to that subcommand.
class JsonConfig : public CLI::Config {
public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConfigError("writing JSON config files is not supported");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void collect(const nlohmann::json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto next = parents;
        next.push_back(key);
        collect(value, next, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

const std::vector<std::string> kTaskNames = {"lift", "pickplace", "stack"};

sim::TaskKind parse_task(const std::string& s) {
  if (s == "lift") return sim::TaskKind::Lift;
  if (s == "pickplace") return sim::TaskKind::PickPlace;
  return sim::TaskKind::Stack;
}

std::string task_name(sim::TaskKind k) {
  std::string s(sim::to_string(k));
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<int> parse_ints(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    const int v = std::stoi(part, &used);
    if (used != part.size()) throw CLI::ValidationError("expected comma-separated integers: " + csv);
    out.push_back(v);
  }
  return out;
}

struct Globals {
  bool json = false;
  std::string model_path;

  sim::SimModel model() const {
    return model_path.empty() ? sim::default_model() : sim::load_model(model_path);
  }
};

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string task = "lift";
  std::string address = "127.0.0.1";
  std::uint16_t port = net::kDefaultTcpPort;
  std::uint16_t ws_port = net::kDefaultWsPort;
  double hz = 100.0;
  std::uint64_t ticks = 0;
  std::uint64_t seed = 1;
  std::string mapping;
  std::string record;
};

int cmd_serve(const Globals& g, const ServeArgs& a, std::ostream& out) {
  g_stop.store(false);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const sim::SimModel model = g.model();
  const sim::TaskKind task = parse_task(a.task);
  auto setup = operator_sim::OperatorSetup::defaults(model);
  if (!a.mapping.empty()) {
    std::ifstream in(a.mapping);
    if (!in) throw std::runtime_error("cannot open mapping config " + a.mapping);
    mapping::merge_json(nlohmann::json::parse(in), setup.cfg, setup.cal);
  }
  setup.cfg.validate();

  bus::Bus bus;
  recorder::Recorder rec(bus.subscribe(topic::kRecordStep));
  Pipeline pipe(bus, model, task, setup.cfg, setup.cal);
  recorder::Dataset data;
  data.header = recorder::make_header(model, task);

  std::uint64_t episode = 0;
  std::uint64_t episode_ticks = 0;
  std::uint64_t hold = 0;
  auto begin_episode = [&] {
    const std::uint64_t seed = operator_sim::collection_seed(a.seed, episode);
    pipe.reset(seed);
    rec.start(task, "console", seed);
    episode_ticks = 0;
    hold = 0;
  };
  auto end_episode = [&](bool success) {
    rec.drain();
    const auto snap = pipe.world().snapshot();
    auto demo = rec.finish(success, model.world.dt, snap.objects);
    spdlog::info("episode {} {} after {} ticks ({} steps)", episode, success ? "succeeded" : "timed out",
                 episode_ticks, demo.steps.size());
    if (!demo.steps.empty()) data.demos.push_back(std::move(demo));
    ++episode;
  };
  begin_episode();

  net::ServerOptions so;
  so.address = a.address;
  so.tcp_port = a.port;
  so.ws_port = a.ws_port;
  net::Server server(bus, so);
  server.start();

  out << "ds4d serve ready task=" << a.task << " tcp=" << server.tcp_port() << " ws=" << server.ws_port()
      << " hz=" << a.hz << std::endl;

  const std::uint64_t settle = static_cast<std::uint64_t>(a.hz);  // keep a solved scene up for a second
  LoopOptions lo;
  lo.hz = a.hz;
  lo.max_ticks = a.ticks;
  const LoopStats st = run_loop(pipe, lo, g_stop, [&](Pipeline&, const Pipeline::TickResult& r) {
    rec.drain();
    ++episode_ticks;
    if (r.success && ++hold >= settle) {
      end_episode(true);
      begin_episode();
    } else if (!r.success && episode_ticks >= pipe.task().horizon_ticks) {
      end_episode(false);
      begin_episode();
    }
  });
  server.stop();
  std::signal(SIGINT, SIG_DFL);
  std::signal(SIGTERM, SIG_DFL);

  if (!a.record.empty()) {
    recorder::save(data, a.record);
  }
  const auto c = server.counters();
  if (g.json) {
    out << nlohmann::json{{"ticks", st.ticks},
                          {"overruns", st.overruns},
                          {"median_tick_ms", st.median_tick_ms},
                          {"p99_tick_ms", st.p99_tick_ms},
                          {"achieved_hz", st.achieved_hz},
                          {"frames_in", c.frames_in},
                          {"frames_out", c.frames_out},
                          {"rejected", c.rejected},
                          {"dropped", c.dropped},
                          {"demos", data.demos.size()}}
               .dump(2)
        << "\n";
  } else {
    out << std::fixed << std::setprecision(3) << "ticks " << st.ticks << ", overruns " << st.overruns
        << ", median tick " << st.median_tick_ms << " ms, p99 " << st.p99_tick_ms << " ms, rate "
        << st.achieved_hz << " Hz\n"
        << "frames in " << c.frames_in << ", out " << c.frames_out << ", rejected " << c.rejected
        << ", dropped " << c.dropped << "\n";
    if (!a.record.empty()) out << "recorded " << data.demos.size() << " demos to " << a.record << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// collect

struct CollectArgs {
  std::string task = "lift";
  int episodes = 50;
  double noise = 0.005;
  std::uint64_t seed = 7;
  std::string out;
};

int cmd_collect(const Globals& g, const CollectArgs& a, std::ostream& out) {
  const sim::SimModel model = g.model();
  const sim::TaskKind task = parse_task(a.task);
  operator_sim::EpisodeOptions opt;
  opt.setup = operator_sim::OperatorSetup::defaults(model);
  opt.max_ticks = model.task(task).horizon_ticks;

  recorder::Dataset data;
  data.header = recorder::make_header(model, task);
  int successes = 0;
  for (int i = 0; i < a.episodes; ++i) {
    const std::uint64_t seed = operator_sim::collection_seed(a.seed, static_cast<std::uint64_t>(i));
    auto r = operator_sim::run_episode(model, task, seed, a.noise, opt);
    spdlog::debug("episode {} seed {:#x}: {} in {} steps", i, seed, operator_sim::to_string(r.termination),
                  r.demo.steps.size());
    if (r.demo.success) ++successes;
    data.demos.push_back(std::move(r.demo));
  }
  recorder::save(data, a.out);
  if (g.json) {
    out << nlohmann::json{{"task", a.task}, {"episodes", a.episodes}, {"successes", successes}, {"out", a.out}}
               .dump(2)
        << "\n";
  } else {
    out << "collected " << a.episodes << " " << a.task << " demos (" << successes << " successful) to "
        << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string data;
  bool successful_only = false;
};

int cmd_stats(const Globals& g, const StatsArgs& a, std::ostream& out) {
  const recorder::Dataset d = recorder::load(a.data);
  const auto values = recorder::durations(d, a.successful_only);
  std::vector<recorder::ReportRow> rows;
  rows.push_back({task_name(d.header.task) + " (ours)", recorder::stats(values), false});
  rows.push_back(recorder::reference_row());
  if (g.json) {
    out << recorder::report_json(rows).dump(2) << "\n";
  } else {
    out << recorder::format_table(rows);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<std::string> hidden;
  std::optional<double> validation;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  const sim::SimModel model = g.model();
  const recorder::Dataset d = recorder::load(a.data);
  recorder::check_model(d, model);
  learner::TrainConfig cfg = learner::default_train_config(model.task(d.header.task));
  cfg.seed = a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.hidden) cfg.hidden = parse_ints(*a.hidden);
  if (a.validation) cfg.validation_fraction = *a.validation;
  cfg.validate();

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = learner::train_bc(d, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const nlohmann::json meta = {{"task", task_name(d.header.task)},
                               {"model_hash", model.hash()},
                               {"dataset", a.data},
                               {"demos", d.demos.size()},
                               {"epochs", cfg.epochs},
                               {"learning_rate", cfg.learning_rate},
                               {"batch_size", cfg.batch_size},
                               {"seed", cfg.seed}};
  learner::save_policy(result.policy, a.out, meta);
  const double final_loss = result.train_loss.empty() ? 0.0 : result.train_loss.back();
  if (g.json) {
    nlohmann::json j = {{"out", a.out}, {"final_train_loss", final_loss}, {"seconds", seconds}};
    if (!result.val_loss.empty()) j["final_val_loss"] = result.val_loss.back();
    out << j.dump(2) << "\n";
  } else {
    out << "trained on " << d.demos.size() << " demos, final loss " << final_loss;
    if (!result.val_loss.empty()) out << " (validation " << result.val_loss.back() << ")";
    out << ", " << std::fixed << std::setprecision(1) << seconds << " s, saved " << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string policy;
  std::string task;
  int episodes = 50;
  std::string seeds = "1,2,3";
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  const sim::SimModel model = g.model();
  const auto file = learner::load_policy(a.policy);
  std::string task = a.task;
  if (task.empty()) {
    if (!file.metadata.contains("task")) throw CLI::ValidationError("--task is required for this policy");
    task = file.metadata["task"].get<std::string>();
  }
  if (std::find(kTaskNames.begin(), kTaskNames.end(), task) == kTaskNames.end()) {
    throw CLI::ValidationError("unknown task " + task);
  }
  std::vector<std::uint64_t> seeds;
  for (int s : parse_ints(a.seeds)) {
    if (s < 0) throw CLI::ValidationError("seeds must be non-negative");
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  const auto report = learner::evaluate(file.policy, model, parse_task(task), a.episodes, seeds);
  if (g.json) {
    out << learner::report_json({report}).dump(2) << "\n";
  } else {
    out << learner::format_report({report});
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// replay

struct ReplayArgs {
  std::string data;
  std::size_t episode = 0;
  bool check = false;
};

int cmd_replay(const Globals& g, const ReplayArgs& a, std::ostream& out) {
  const sim::SimModel model = g.model();
  const recorder::Dataset d = recorder::load(a.data);
  recorder::check_model(d, model);
  if (a.episode >= d.demos.size()) {
    throw std::out_of_range("episode " + std::to_string(a.episode) + " out of range (" +
                            std::to_string(d.demos.size()) + " demos)");
  }
  const auto& demo = d.demos[a.episode];
  const auto r = operator_sim::replay(model, demo);
  if (g.json) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : r.final_objects) {
      const Vec3 p = o.pose.translation();
      objects.push_back({{"id", o.id}, {"position", {p.x(), p.y(), p.z()}}});
    }
    out << nlohmann::json{{"episode", a.episode},
                          {"steps", demo.steps.size()},
                          {"success", r.success},
                          {"recorded_success", demo.success},
                          {"matches", r.matches},
                          {"objects", objects}}
               .dump(2)
        << "\n";
  } else {
    out << "episode " << a.episode << ": " << demo.steps.size() << " steps, success " << std::boolalpha
        << r.success << " (recorded " << demo.success << "), final state "
        << (r.matches ? "matches" : "differs") << "\n";
  }
  return a.check && !r.matches ? kExitDomain : kExitOk;
}

// ---------------------------------------------------------------------------
// subset

struct SubsetArgs {
  std::string data;
  std::string out;
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

int cmd_subset(const Globals& g, const SubsetArgs& a, std::ostream& out) {
  const recorder::Dataset d = recorder::load(a.data);
  const recorder::Dataset s = recorder::subset(d, a.fraction, a.seed);
  recorder::save(s, a.out);
  if (g.json) {
    out << nlohmann::json{{"in", d.demos.size()}, {"out", s.demos.size()}, {"path", a.out}}.dump(2) << "\n";
  } else {
    out << "kept " << s.demos.size() << " of " << d.demos.size() << " demos in " << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// model

struct ModelArgs {
  std::string out;
};

int cmd_model(const Globals& g, const ModelArgs& a, std::ostream& out) {
  const sim::SimModel model = g.model();
  if (!a.out.empty()) sim::save_model(model, a.out);
  if (g.json) {
    out << nlohmann::json{{"name", model.name}, {"version", model.version}, {"hash", model.hash()}}.dump(2)
        << "\n";
  } else {
    out << model.name << " v" << model.version << " hash " << model.hash() << "\n";
  }
  return kExitOk;
}

void setup_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto logger = std::make_shared<spdlog::logger>("ds4d", sink);
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("DS4D_LOG")) {
    level = spdlog::level::from_str(env);
  }
  logger->set_level(level);
  spdlog::set_default_logger(logger);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  setup_logging(err);

  CLI::App app{"ds4d: teleoperation, demonstration recording and behavior cloning", "ds4d"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.allow_config_extras(false);

  Globals g;
  app.add_flag("--json", g.json, "Machine-readable JSON output");
  app.add_option("--model", g.model_path, "Simulator model file (default: built-in model)")
      ->check(CLI::ExistingFile);

  auto task_check = CLI::IsMember(kTaskNames);

  ServeArgs serve;
  auto* s = app.add_subcommand("serve", "Run the bus, simulator loop and network endpoints");
  s->add_option("--task", serve.task, "Task to simulate")->check(task_check)->capture_default_str();
  s->add_option("--address", serve.address, "Listen address")->capture_default_str();
  s->add_option("--port", serve.port, "TCP port for binary envelopes (0 picks a free port)")
      ->capture_default_str();
  s->add_option("--ws-port", serve.ws_port, "WebSocket port, path /ws (0 picks a free port)")
      ->capture_default_str();
  s->add_option("--hz", serve.hz, "Control loop rate")->check(CLI::PositiveNumber)->capture_default_str();
  s->add_option("--ticks", serve.ticks, "Stop after this many ticks (0 runs until interrupted)")
      ->capture_default_str();
  s->add_option("--seed", serve.seed, "Base reset seed for successive episodes")->capture_default_str();
  s->add_option("--mapping", serve.mapping, "JSON file overriding mapping and calibration settings")
      ->check(CLI::ExistingFile);
  s->add_option("--record", serve.record, "Save demonstrations recorded while serving to this file");

  CollectArgs collect;
  auto* c = app.add_subcommand("collect", "Collect demonstrations with the synthetic operator");
  c->add_option("--task", collect.task, "Task")->check(task_check)->capture_default_str();
  c->add_option("--episodes", collect.episodes, "Number of episodes")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c->add_option("--noise", collect.noise, "Operator noise sigma in meters")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  c->add_option("--seed", collect.seed, "Base collection seed")->capture_default_str();
  c->add_option("--out", collect.out, "Output dataset file")->required();

  StatsArgs stats;
  auto* st = app.add_subcommand("stats", "Completion-time statistics of a dataset");
  st->add_option("data", stats.data, "Dataset file")->required()->check(CLI::ExistingFile);
  st->add_flag("--successful-only", stats.successful_only, "Only count successful demonstrations");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a behavior-cloning policy");
  t->add_option("--data", train.data, "Dataset file")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Output policy file")->required();
  t->add_option("--seed", train.seed, "Training seed")->capture_default_str();
  t->add_option("--epochs", train.epochs, "Training epochs (default 200)")->check(CLI::PositiveNumber);
  t->add_option("--batch-size", train.batch_size, "Minibatch size (default 64)")->check(CLI::PositiveNumber);
  t->add_option("--lr", train.lr, "Learning rate (default 0.1, cosine decayed)")->check(CLI::PositiveNumber);
  t->add_option("--hidden", train.hidden, "Hidden layer sizes, comma separated (default 64,64)");
  t->add_option("--validation", train.validation, "Fraction of demos held out (default 0)")
      ->check(CLI::Range(0.0, 0.5));

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a policy in simulation");
  e->add_option("--policy", eval.policy, "Policy file")->required()->check(CLI::ExistingFile);
  e->add_option("--task", eval.task, "Task (default: the task the policy was trained on)")->check(task_check);
  e->add_option("--episodes", eval.episodes, "Episodes per seed")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  e->add_option("--seeds", eval.seeds, "Evaluation seeds, comma separated")->capture_default_str();

  ReplayArgs replay;
  auto* r = app.add_subcommand("replay", "Re-execute a recorded demonstration");
  r->add_option("data", replay.data, "Dataset file")->required()->check(CLI::ExistingFile);
  r->add_option("--episode", replay.episode, "Demonstration index")->capture_default_str();
  r->add_flag("--check-determinism", replay.check, "Exit 1 unless the final state matches bit for bit");

  SubsetArgs subset;
  auto* sb = app.add_subcommand("subset", "Sample a fraction of a dataset's demonstrations");
  sb->add_option("data", subset.data, "Dataset file")->required()->check(CLI::ExistingFile);
  sb->add_option("--fraction", subset.fraction, "Fraction of demos to keep, in (0, 1]")
      ->required()
      ->check(CLI::Range(0.0, 1.0));
  sb->add_option("--seed", subset.seed, "Sampling seed")->capture_default_str();
  sb->add_option("--out", subset.out, "Output dataset file")->required();

  ModelArgs model;
  auto* m = app.add_subcommand("model", "Print the simulator model hash, optionally writing the model file");
  m->add_option("--out", model.out, "Write the model JSON here");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_serve(g, serve, out);
    if (c->parsed()) return cmd_collect(g, collect, out);
    if (st->parsed()) return cmd_stats(g, stats, out);
    if (t->parsed()) return cmd_train(g, train, out);
    if (e->parsed()) return cmd_eval(g, eval, out);
    if (r->parsed()) return cmd_replay(g, replay, out);
    if (sb->parsed()) return cmd_subset(g, subset, out);
    if (m->parsed()) return cmd_model(g, model, out);
  } catch (const CLI::ValidationError& ex) {
    err << "ds4d: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "ds4d: " << ex.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace ds4d::cli
