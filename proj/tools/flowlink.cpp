#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "flowlink/flowlink.hpp"

namespace fs = std::filesystem;
using namespace flowlink;

namespace {

struct Tunables {
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app, const std::vector<std::string>& keys) {
        for (const auto& key : keys) {
            std::string flag = key == "h" ? "--hops" : key == "k" ? "--iterations" : "--" + key;
            for (auto& c : flag)
                if (c == '_') c = '-';
            options[key] = app->add_option(flag, values[key], "override config key " + key);
        }
    }

    Settings given() const {
        Settings out;
        for (const auto& [k, opt] : options)
            if (opt->count() > 0) out[k] = values.at(k);
        return out;
    }
};

struct ConfigArgs {
    std::string config_path;
    Tunables tunables;

    void attach(CLI::App* app, const std::vector<std::string>& keys) {
        app->add_option("--config", config_path, "key=value config file");
        tunables.attach(app, keys);
    }

    RunConfig resolve() const {
        const Settings file = config_path.empty() ? Settings{} : load_config_file(config_path);
        return resolve_config(file, tunables.given(), std::getenv("FLOWLINK_SEED"));
    }
};

struct GraphArgs {
    std::string data, nodes, edges;

    void attach(CLI::App* app) {
        app->add_option("--data", data, "prepared dataset directory");
        app->add_option("--nodes", nodes, "node CSV (id,x,y[,z])");
        app->add_option("--edges", edges, "edge CSV (u,v)");
    }

    SpatialGraph load() const {
        if (!data.empty()) return load_graph_csv(fs::path(data) / "nodes.csv", fs::path(data) / "edges.csv");
        if (nodes.empty() || edges.empty()) throw ConfigError("give --data or both --nodes and --edges");
        return load_graph_csv(nodes, edges);
    }
};

void print_metrics(const LinkMetrics& m) {
    auto hk = [](const char* name, const std::optional<double>& x) {
        if (x) std::cout << name << '=' << *x << '\n';
        else std::cout << name << "=n/a\n";
    };
    std::cout << "auc=" << m.auc << '\n';
    hk("hits@100", m.hits100);
    hk("hits@50", m.hits50);
    hk("hits@20", m.hits20);
}

void print_history(const HistoryEntry& h) {
    std::cout << "step=" << h.step << " epoch=" << h.epoch << " loss=" << h.train_loss << " val_auc=" << h.val_auc
              << std::endl;
}

int run_train(const std::string& data, const std::string& out, bool resume, const RunConfig& rc) {
    const DatasetSplit ds = load_dataset(data);
    const RunResult res = run_training(ds, rc, out, resume, print_history);
    std::cout << "layer=" << to_string(res.state.best.config().layer) << " params=" << res.state.best.param_count()
              << " steps=" << res.state.step << " best_step=" << res.state.best_step
              << " best_val_auc=" << res.state.best_val_auc << '\n';
    print_metrics(res.test);
    return 0;
}

const std::vector<std::string> kSeedOnly{"seed"};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Link prediction on spatial graphs with graph attentive vectors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "flowlink 0.1.0");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic spatial network");
    std::string synth_kind = "vessel";
    std::size_t synth_nodes = 5000;
    std::string synth_out;
    ConfigArgs synth_cfg;
    synth->add_option("--kind", synth_kind, "vessel (3D tree) or road (2D grid)")->capture_default_str();
    synth->add_option("--num-nodes", synth_nodes, "number of nodes")->capture_default_str();
    synth->add_option("--out", synth_out, "output directory for nodes.csv and edges.csv")->required();
    synth_cfg.tunables.attach(synth, kSeedOnly);

    // prepare
    auto* prepare = app.add_subcommand("prepare", "sample negatives and split links 80/10/10");
    GraphArgs prep_graph;
    std::optional<double> prep_delta;
    std::string prep_out;
    ConfigArgs prep_cfg;
    prep_graph.attach(prepare);
    prepare->add_option("--delta", prep_delta, "override the negative sampling radius");
    prepare->add_option("--out", prep_out, "output directory")->required();
    prep_cfg.tunables.attach(prepare, kSeedOnly);

    // train / ablate
    auto* train_cmd = app.add_subcommand("train", "train a model on a prepared dataset");
    std::string train_data, train_out;
    bool train_resume = false;
    ConfigArgs train_cfg;
    train_cmd->add_option("--data", train_data, "prepared dataset directory")->required();
    train_cmd->add_option("--out", train_out, "run directory")->required();
    train_cmd->add_flag("--resume", train_resume, "continue from <out>/state.ckpt when present");
    train_cfg.attach(train_cmd, setting_keys());

    auto* ablate = app.add_subcommand("ablate", "train with a replacement message-passing layer");
    std::string abl_data, abl_out;
    ConfigArgs abl_cfg;
    ablate->add_option("--data", abl_data, "prepared dataset directory")->required();
    ablate->add_option("--out", abl_out, "run directory")->required();
    abl_cfg.attach(ablate, setting_keys());
    abl_cfg.tunables.options["layer"]->required();

    // eval
    auto* eval = app.add_subcommand("eval", "score a split with a checkpoint, or score a predictions file");
    std::string eval_data, eval_model, eval_split = "test", eval_preds, eval_out;
    std::uint64_t eval_pool_seed = 0;
    ConfigArgs eval_cfg;
    eval->add_option("--data", eval_data, "prepared dataset directory");
    eval->add_option("--model", eval_model, "run directory with model.ckpt");
    eval->add_option("--split", eval_split, "train, val or test")->capture_default_str();
    eval->add_option("--predictions", eval_preds, "predictions CSV to score instead of running a model");
    eval->add_option("--pool-seed", eval_pool_seed, "negative pool seed for --predictions")->capture_default_str();
    eval->add_option("--out", eval_out, "directory for metrics.json and predictions.csv");
    eval_cfg.tunables.attach(eval, {"threads"});

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "predict one node pair");
    GraphArgs pred_graph;
    std::string pred_model;
    NodeId pred_u = 0, pred_v = 0;
    pred_graph.attach(predict_cmd);
    predict_cmd->add_option("--model", pred_model, "run directory with model.ckpt")->required();
    predict_cmd->add_option("-u,--u", pred_u, "first target node")->required();
    predict_cmd->add_option("-v,--v", pred_v, "second target node")->required();

    // explain
    auto* explain = app.add_subcommand("explain", "export per-edge scalars and flow statistics");
    std::string ex_data, ex_model, ex_split = "test", ex_out;
    std::size_t ex_limit = 0;
    ConfigArgs ex_cfg;
    explain->add_option("--data", ex_data, "prepared dataset directory")->required();
    explain->add_option("--model", ex_model, "run directory with model.ckpt")->required();
    explain->add_option("--split", ex_split, "train, val or test")->capture_default_str();
    explain->add_option("--limit", ex_limit, "export at most this many samples (0 = all)")->capture_default_str();
    explain->add_option("--out", ex_out, "explain.jsonl path")->required();
    ex_cfg.tunables.attach(explain, {"threads"});

    // invariance
    auto* inv = app.add_subcommand("invariance", "translation / rotation probe for one pair");
    GraphArgs inv_graph;
    std::string inv_model, inv_mode = "translate", inv_out;
    NodeId inv_u = 0, inv_v = 0;
    int inv_shifts = 100;
    ConfigArgs inv_cfg;
    inv_graph.attach(inv);
    inv->add_option("--model", inv_model, "run directory with model.ckpt")->required();
    inv->add_option("-u,--u", inv_u, "first target node")->required();
    inv->add_option("-v,--v", inv_v, "second target node")->required();
    inv->add_option("--mode", inv_mode, "translate or rotate")->capture_default_str();
    inv->add_option("--shifts", inv_shifts, "number of integer shifts in translate mode")->capture_default_str();
    inv->add_option("--out", inv_out, "write the full report as JSON");
    inv_cfg.tunables.attach(inv, kSeedOnly);

    // toy
    auto* toy = app.add_subcommand("toy", "bifurcation probe over branch angles");
    std::string toy_model, toy_out;
    std::vector<double> toy_psi{30, 60, 90, 120, 150, 180};
    toy->add_option("--model", toy_model, "run directory with model.ckpt")->required();
    toy->add_option("--psi", toy_psi, "branch angles in degrees")->capture_default_str();
    toy->add_option("--out", toy_out, "write one JSON record per angle");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) {
            const RunConfig rc = synth_cfg.resolve();
            const SpatialGraph g = generate_synthetic_network(parse_network_kind(synth_kind), synth_nodes, rc.train.seed);
            save_graph_csv(g, fs::path(synth_out) / "nodes.csv", fs::path(synth_out) / "edges.csv");
            std::cout << "nodes=" << g.num_nodes() << " edges=" << g.num_edges() << " d_spatial=" << g.dim() << '\n';
        } else if (*prepare) {
            const RunConfig rc = prep_cfg.resolve();
            const DatasetSplit ds = prepare_dataset(prep_graph.load(), rc.train.seed, prep_delta);
            save_dataset(ds, prep_out);
            std::cout << split_metadata(ds).dump(2) << '\n';
        } else if (*train_cmd) {
            return run_train(train_data, train_out, train_resume, train_cfg.resolve());
        } else if (*ablate) {
            return run_train(abl_data, abl_out, false, abl_cfg.resolve());
        } else if (*eval) {
            const RunConfig rc = eval_cfg.resolve();
            std::vector<PredictionRecord> records;
            std::uint64_t pool = eval_pool_seed;
            if (!eval_preds.empty()) {
                records = load_predictions_csv(eval_preds);
            } else {
                if (eval_data.empty() || eval_model.empty()) throw ConfigError("give --predictions or --data and --model");
                const DatasetSplit ds = load_dataset(eval_data);
                const GavModel model = load_model(eval_model);
                const auto samples =
                    prepare_samples(*ds.graph, ds.select(parse_split(eval_split)), model.config().h, rc.train.worker_count());
                records = evaluate(model, samples, rc.train.worker_count());
                pool = pool_seed(ds);
            }
            const LinkMetrics m = compute_metrics(records, pool);
            print_metrics(m);
            if (!eval_out.empty()) {
                nlohmann::ordered_json j;
                j["auc"] = m.auc;
                j["hits@100"] = m.hits100 ? nlohmann::ordered_json(*m.hits100) : nlohmann::ordered_json();
                j["hits@50"] = m.hits50 ? nlohmann::ordered_json(*m.hits50) : nlohmann::ordered_json();
                j["hits@20"] = m.hits20 ? nlohmann::ordered_json(*m.hits20) : nlohmann::ordered_json();
                j["negative_pool"] = m.pool_size;
                write_json(fs::path(eval_out) / "metrics.json", j);
                save_predictions_csv(records, fs::path(eval_out) / "predictions.csv");
            }
        } else if (*predict_cmd) {
            const GavModel model = load_model(pred_model);
            const PredictionRecord r = predict(pred_graph.load(), pred_u, pred_v, model);
            std::cout << explain_json(r).dump(2) << '\n';
        } else if (*explain) {
            const RunConfig rc = ex_cfg.resolve();
            const DatasetSplit ds = load_dataset(ex_data);
            const GavModel model = load_model(ex_model);
            auto selected = ds.select(parse_split(ex_split));
            if (ex_limit > 0 && selected.size() > ex_limit) selected.resize(ex_limit);
            const auto samples = prepare_samples(*ds.graph, selected, model.config().h, rc.train.worker_count());
            const auto records = evaluate(model, samples, rc.train.worker_count());
            interpretability_export(records, ex_out);
            std::vector<PredictionRecord> pos, neg;
            for (const auto& r : records) (r.label == 1 ? pos : neg).push_back(r);
            nlohmann::ordered_json summary;
            summary["samples"] = records.size();
            summary["consistency_negatives"] = to_json(sink_source_consistency(neg));
            summary["consistency_positives"] = to_json(sink_source_consistency(pos));
            summary["certainty"] = to_json(certainty_stats(records));
            std::cout << summary.dump(2) << '\n';
        } else if (*inv) {
            const RunConfig rc = inv_cfg.resolve();
            const GavModel model = load_model(inv_model);
            const InvarianceReport rep =
                invariance_harness(model, inv_graph.load(), inv_u, inv_v, parse_invariance_mode(inv_mode), rc.train.seed,
                                   inv_shifts);
            std::cout << "baseline_prob=" << rep.baseline_probability << '\n';
            for (const auto& s : rep.series) std::cout << "axis=" << s.axis << " std=" << s.std << '\n';
            std::cout << "max_abs_logit_diff=" << rep.max_abs_logit_diff << '\n';
            if (!inv_out.empty()) write_json(inv_out, to_json(rep));
        } else if (*toy) {
            const GavModel model = load_model(toy_model);
            std::vector<PredictionRecord> records;
            for (double psi : toy_psi) {
                records.push_back(toy_bifurcation(psi, model));
                std::cout << "psi=" << psi << " prob=" << records.back().probability << '\n';
            }
            if (!toy_out.empty()) interpretability_export(records, toy_out);
        }
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
