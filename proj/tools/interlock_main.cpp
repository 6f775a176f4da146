// interlock CLI: train / simulate / sweep / gradcheck / eval.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "interlock/checkpoint.hpp"
#include "interlock/config.hpp"
#include "interlock/errors.hpp"
#include "interlock/metrics.hpp"
#include "interlock/rng.hpp"
#include "interlock/sched.hpp"

namespace fs = std::filesystem;
using namespace interlock;

namespace {

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::parse_file(path);
    for (const std::string& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

std::string out_root(const std::string& flag, const RunConfig& cfg) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("INTERLOCK_OUT")) return env;
    return cfg.get("run.out", "runs");
}

// "end_to_end" | "hogwild" | "n_wise" | "grouped_local" | "<k>_wise" sugar
void apply_strategy_token(RunConfig& cfg, const std::string& tok) {
    if (tok == "end_to_end" || tok == "hogwild" || tok == "n_wise" || tok == "grouped_local") {
        cfg.set("strategy.kind", tok);
        return;
    }
    const auto pos = tok.find("_wise");
    if (pos != std::string::npos && pos > 0 && pos + 5 == tok.size()) {
        cfg.set("strategy.kind", "n_wise");
        cfg.set("strategy.n", tok.substr(0, pos));
        return;
    }
    throw ConfigError("strategy.kind: unknown strategy '" + tok + "'");
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    return out + "\"";
}

std::string join_semi(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ";";
        s += format_double(v[i]);
    }
    return s;
}

std::string join_semi_int(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ";";
        s += std::to_string(v[i]);
    }
    return s;
}

void append_results_row(const std::string& root, const RunConfig& cfg, const std::string& rid,
                        std::uint64_t seed, int components, const RunResult& res) {
    const fs::path path = fs::path(root) / "results.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw DataError("cannot append results table: " + path.string());
    if (fresh)
        f << "run_id,arch,components,strategy,param,mix_local,seed,mode,steps,time_logical,final_loss,"
             "train_acc,test_acc,heads_train,heads_test,ens_test,staleness\n";
    const RoutingPolicy pol = cfg.policy();
    int param = 0;
    if (pol.kind == RoutingPolicy::Kind::NWise) param = pol.nwise;
    if (pol.kind == RoutingPolicy::Kind::GroupedLocal) param = pol.group;
    f << rid << "," << csv_quote(cfg.arch().to_string()) << "," << components << "," << pol.kind_name() << ","
      << param << "," << (pol.mix_local ? "true" : "false") << "," << seed << ","
      << cfg.get("run.mode", "reference") << "," << res.steps << "," << res.time_logical << ","
      << format_double(res.history.empty() ? 0.0 : res.history.back().losses.back()) << ","
      << format_double(res.train_eval.head_acc.back()) << "," << format_double(res.test_eval.head_acc.back())
      << "," << csv_quote(join_semi(res.train_eval.head_acc)) << ","
      << csv_quote(join_semi(res.test_eval.head_acc)) << "," << csv_quote(join_semi(res.test_eval.ensemble_acc))
      << "," << csv_quote(join_semi_int(res.staleness_last)) << "\n";
}

int run_one_seed(const RunConfig& cfg, std::uint64_t seed, const std::string& root, bool quiet = false) {
    const std::string rid = run_id(cfg, seed);
    const fs::path dir = fs::path(root) / ("run-" + rid);
    fs::create_directories(dir);

    Dataset ds = cfg.make_dataset(seed);
    PartitionedModel model = build_model(cfg.arch(), derive_seed(seed, "init"));
    TrainOptions opt = cfg.train_options(seed);
    opt.metrics_path = (dir / "metrics.csv").string();

    RunResult res;
    try {
        res = train(model, ds, opt);
    } catch (const RunAborted& e) {
        std::cerr << "run " << rid << " aborted: " << e.what() << "\n";
        std::ofstream(dir / "config.cfg") << cfg.serialize();
        return 1;
    }
    save_checkpoint((dir / "checkpoint.ilck").string(), model, seed, static_cast<std::uint64_t>(res.steps));
    std::ofstream(dir / "config.cfg") << cfg.serialize();
    append_results_row(root, cfg, rid, seed, model.n(), res);
    if (!quiet) {
        std::cout << "run " << rid << " seed " << seed << ": steps " << res.steps << ", logical time "
                  << res.time_logical << ", final loss " << format_double(res.history.back().losses.back())
                  << ", test acc " << format_double(res.test_eval.head_acc.back()) << "\n";
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_flag) {
    RunConfig cfg = load_config(config_path, sets);
    cfg.validate();
    const std::string root = out_root(out_flag, cfg);
    fs::create_directories(root);
    int rc = 0;
    for (std::uint64_t seed : cfg.seeds()) rc |= run_one_seed(cfg, seed, root);
    return rc;
}

int cmd_simulate(int a, int b, const std::string& strategy, int n, int g, bool mix, const std::string& trace_path) {
    sched::PipelineConfig cfg;
    cfg.a = a;
    cfg.b = b;
    RunConfig tmp;
    apply_strategy_token(tmp, strategy);
    const std::string kind = tmp.items().at("strategy.kind");
    if (kind == "end_to_end") cfg.strategy = RoutingPolicy::Kind::EndToEnd;
    else if (kind == "hogwild") cfg.strategy = RoutingPolicy::Kind::Hogwild;
    else if (kind == "n_wise") cfg.strategy = RoutingPolicy::Kind::NWise;
    else cfg.strategy = RoutingPolicy::Kind::GroupedLocal;
    cfg.nwise = tmp.has("strategy.n") ? std::stoi(tmp.items().at("strategy.n")) : n;
    cfg.group = g;
    cfg.mix_local = mix;

    const sched::Trace trace = sched::simulate(cfg);
    const std::int64_t closed = sched::closed_form_timesteps(cfg);
    const auto stale = sched::staleness(trace);

    std::cout << trace.makespan << " " << closed << "\n";
    std::cout << "makespan," << trace.makespan << "," << closed << "\n";
    for (int k = 1; k <= a; ++k)
        std::cout << "utilization," << k << "," << format_double(trace.utilization[static_cast<std::size_t>(k - 1)])
                  << "\n";
    for (int k = 1; k <= a; ++k)
        std::cout << "staleness," << k << "," << stale.steady[static_cast<std::size_t>(k - 1)] << "\n";

    if (!trace_path.empty()) {
        std::ofstream f(trace_path);
        if (!f) throw DataError("cannot write trace: " + trace_path);
        f << "accelerator,slot,batch,phase,flow\n";
        for (const auto& e : trace.events)
            f << e.accel << "," << e.slot << "," << e.batch << ","
              << (e.phase == sched::Phase::Forward ? "forward" : "backward") << "," << e.flow << "\n";
    }
    return trace.makespan == closed ? 0 : 1;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& sets,
              const std::vector<std::string>& axes, const std::string& out_flag) {
    const RunConfig base = load_config(config_path, sets);
    struct Axis {
        std::string key;
        std::vector<std::string> values;
    };
    std::vector<Axis> parsed;
    for (const std::string& ax : axes) {
        const auto eq = ax.find('=');
        if (eq == std::string::npos) throw ConfigError("--axis expects key=v1,v2,..., got '" + ax + "'");
        Axis a;
        a.key = ax.substr(0, eq);
        std::string cur;
        for (char c : ax.substr(eq + 1) + ",") {
            if (c == ',') {
                if (!cur.empty()) a.values.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (a.values.empty()) throw ConfigError("--axis '" + a.key + "' has no values");
        parsed.push_back(std::move(a));
    }

    const std::string root = out_root(out_flag, base);
    fs::create_directories(root);

    int rc = 0;
    std::vector<std::size_t> pick(parsed.size(), 0);
    std::int64_t total = 1;
    for (const Axis& a : parsed) total *= static_cast<std::int64_t>(a.values.size());
    for (std::int64_t it = 0; it < total; ++it) {
        RunConfig cfg = base;
        std::int64_t rest = it;
        std::string label;
        for (std::size_t d = 0; d < parsed.size(); ++d) {
            const Axis& a = parsed[d];
            const std::string& v = a.values[static_cast<std::size_t>(rest % static_cast<std::int64_t>(a.values.size()))];
            rest /= static_cast<std::int64_t>(a.values.size());
            if (a.key == "strategy") apply_strategy_token(cfg, v);
            else cfg.set(a.key, v);
            label += (label.empty() ? "" : " ") + a.key + "=" + v;
        }
        cfg.validate();
        std::cout << "[sweep " << (it + 1) << "/" << total << "] " << label << "\n";
        for (std::uint64_t seed : cfg.seeds()) rc |= run_one_seed(cfg, seed, root, /*quiet=*/true);
    }
    std::cout << "sweep complete: results in " << (fs::path(root) / "results.csv").string() << "\n";
    return rc;
}

int cmd_gradcheck(const std::string& config_path, const std::vector<std::string>& sets, int batch, double eps,
                  int coords, std::uint64_t seed) {
    RunConfig cfg = load_config(config_path, sets);
    const ArchitectureSpec spec = cfg.arch();
    const RoutingPolicy pol = cfg.policy();
    PartitionedModel model = build_model(spec, derive_seed(seed, "init"));

    std::vector<int> shape = spec.input_shape;
    shape.insert(shape.begin(), batch);
    Tensor x(shape);
    Rng rng(derive_seed(seed, "gradcheck-input"));
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    std::vector<int> targets(static_cast<std::size_t>(batch));
    for (int& t : targets) t = rng.uniform_int(spec.num_classes);

    const auto rep = routed_grad_check(model, pol, x, targets, eps, coords, seed);
    for (int k = 1; k <= model.n(); ++k)
        std::cout << "component " << k << " max relative error "
                  << format_double(rep.per_component[static_cast<std::size_t>(k - 1)]) << "\n";
    std::cout << "max relative error " << format_double(rep.max_rel_err) << " (worst: " << rep.worst_param << ")\n";
    return rep.max_rel_err < 1e-4 ? 0 : 1;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const std::vector<std::string>& sets,
             const std::string& metrics_path) {
    if (!metrics_path.empty()) {
        const MetricsSummary s = read_metrics(metrics_path);
        std::cout << "last step " << s.last_step << "\n";
        for (std::size_t k = 0; k < s.last_losses.size(); ++k)
            std::cout << "loss_c" << (k + 1) << " " << format_double(s.last_losses[k]) << "\n";
        for (std::size_t k = 0; k < s.final_test_head_acc.size(); ++k)
            std::cout << "test_head_" << (k + 1) << " " << format_double(s.final_test_head_acc[k]) << "\n";
        if (checkpoint.empty()) return 0;
    }
    const Checkpoint ck = load_checkpoint(checkpoint);
    PartitionedModel model = restore_model(ck);
    RunConfig cfg = load_config(config_path, sets);
    Dataset ds = cfg.make_dataset(ck.seed);

    std::cout << "checkpoint: step " << ck.step << ", arch " << ck.arch << "\n";
    std::cout << "split,head,accuracy,ensemble_top_m,ensemble_accuracy\n";
    for (const bool test : {false, true}) {
        const EvalResult ev = evaluate(model, ds, test);
        for (int k = 1; k <= model.n(); ++k)
            std::cout << (test ? "test" : "train") << "," << k << ","
                      << format_double(ev.head_acc[static_cast<std::size_t>(k - 1)]) << "," << k << ","
                      << format_double(ev.ensemble_acc[static_cast<std::size_t>(k - 1)]) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"partitioned-network training lab with routed gradients and a pipeline schedule simulator"};
    app.require_subcommand(1);

    std::string config_path, out_flag, trace_path, checkpoint, metrics_path, strategy = "end_to_end";
    std::vector<std::string> sets, axes;
    int a = 4, b = 10, n = 1, g = 1, batch = 4, coords = 20;
    bool mix = false;
    double eps = 1e-5;
    std::uint64_t seed = 1;

    auto* train_cmd = app.add_subcommand("train", "train a partitioned model per the run config");
    train_cmd->add_option("--config", config_path, "run configuration file");
    train_cmd->add_option("--set", sets, "override config keys (key=value)");
    train_cmd->add_option("--out", out_flag, "output root (or env INTERLOCK_OUT)");

    auto* sim_cmd = app.add_subcommand("simulate", "simulate a pipeline schedule and check the closed form");
    sim_cmd->add_option("--a", a, "accelerators")->required();
    sim_cmd->add_option("--b", b, "training steps")->required();
    sim_cmd->add_option("--strategy", strategy, "end_to_end | hogwild | <k>_wise | n_wise | grouped_local")
        ->required();
    sim_cmd->add_option("--n", n, "window for n_wise");
    sim_cmd->add_option("--g", g, "block size for grouped_local");
    sim_cmd->add_flag("--mix_local", mix, "windowed-sum gradient reading");
    sim_cmd->add_option("--trace", trace_path, "write the event trace CSV here");

    auto* sweep_cmd = app.add_subcommand("sweep", "cross-product of config overrides, one results table");
    sweep_cmd->add_option("--config", config_path, "base run configuration file");
    sweep_cmd->add_option("--set", sets, "override config keys (key=value)");
    sweep_cmd->add_option("--axis", axes, "sweep axis key=v1,v2,... ('strategy' accepts 2_wise sugar)")
        ->required();
    sweep_cmd->add_option("--out", out_flag, "output root (or env INTERLOCK_OUT)");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the routed gradients");
    grad_cmd->add_option("--config", config_path, "run configuration file (model.* and strategy.*)");
    grad_cmd->add_option("--set", sets, "override config keys (key=value)");
    grad_cmd->add_option("--batch", batch, "probe batch size");
    grad_cmd->add_option("--eps", eps, "central difference step");
    grad_cmd->add_option("--coords", coords, "sampled coordinates per parameter (0 = all)");
    grad_cmd->add_option("--seed", seed, "probe seed");

    auto* eval_cmd = app.add_subcommand("eval", "accuracy table from a checkpoint (or metrics re-summary)");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
    eval_cmd->add_option("--config", config_path, "run configuration file (data.* keys)");
    eval_cmd->add_option("--set", sets, "override config keys (key=value)");
    eval_cmd->add_option("--metrics", metrics_path, "metrics file to re-summarize");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, sets, out_flag);
        if (sim_cmd->parsed()) return cmd_simulate(a, b, strategy, n, g, mix, trace_path);
        if (sweep_cmd->parsed()) return cmd_sweep(config_path, sets, axes, out_flag);
        if (grad_cmd->parsed()) return cmd_gradcheck(config_path, sets, batch, eps, coords, seed);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, config_path, sets, metrics_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
