#include "roct/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "roct/checkpoint.hpp"
#include "roct/data.hpp"
#include "roct/metrics.hpp"
#include "roct/trainer.hpp"

namespace fs = std::filesystem;

namespace roct {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "train.initial_lr",  "train.decay_rate",    "train.decay_every_epochs",
        "train.momentum",    "train.batch_size",    "train.epochs",
        "train.seed",        "train.clip_max_norm",
        "augment.hflip",     "augment.vflip",       "augment.zoom_range",
        "augment.shift_range", "augment.rotation_degrees",
        "model.spec",        "model.input_size",    "model.capsules",
        "model.capsule_dim", "model.routing_iters", "model.dropout_rate",
        "model.compressor",
    };
    return keys;
}

void check_known_keys(const RunConfig& cfg) {
    for (const auto& [key, value] : cfg.values) {
        if (!known_keys().count(key)) {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct EnsembleChoice {
    BackboneSpec a;
    std::optional<BackboneSpec> b;
    int input_size = 0;
};

EnsembleChoice spec_by_name(const std::string& name) {
    EnsembleChoice c;
    if (name == "paper") {
        c.a = BackboneSpec::preset("paper-xception");
        c.b = BackboneSpec::preset("paper-effv2b0");
        c.input_size = 512;
    } else if (name == "toy") {
        c.a = BackboneSpec::preset("toy-xception");
        c.b = BackboneSpec::preset("toy-effv2");
        c.input_size = 64;
    } else {
        throw std::invalid_argument("model: unknown spec '" + name + "' (expected toy or paper)");
    }
    return c;
}

HeadConfig head_from(const RunConfig& rc) {
    HeadConfig head;
    head.out_capsules = rc.get_int("model.capsules", head.out_capsules);
    head.out_dim = rc.get_int("model.capsule_dim", head.out_dim);
    head.routing_iters = rc.get_int("model.routing_iters", head.routing_iters);
    head.dropout_rate = rc.get_double("model.dropout_rate", head.dropout_rate);
    const std::string comp = rc.get("model.compressor", "srnet");
    if (comp == "srnet")
        head.compressor = HeadConfig::Compressor::Srnet;
    else if (comp == "gap")
        head.compressor = HeadConfig::Compressor::Gap;
    else
        throw std::invalid_argument("model: unknown compressor '" + comp + "' (expected srnet or gap)");
    return head;
}

ModelGraph model_from(const RunConfig& rc, int class_count, std::uint64_t seed) {
    EnsembleChoice choice = spec_by_name(rc.get("model.spec", "toy"));
    const int input = rc.get_int("model.input_size", choice.input_size);
    return build_ensemble(choice.a, choice.b, head_from(rc), class_count, input, seed);
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig cfg;
    cfg.initial_lr = rc.get_double("train.initial_lr", cfg.initial_lr);
    cfg.decay_rate = rc.get_double("train.decay_rate", cfg.decay_rate);
    cfg.decay_every_epochs = rc.get_int("train.decay_every_epochs", cfg.decay_every_epochs);
    cfg.momentum = rc.get_double("train.momentum", cfg.momentum);
    cfg.batch_size = rc.get_int("train.batch_size", cfg.batch_size);
    cfg.epochs = rc.get_int("train.epochs", cfg.epochs);
    cfg.seed = static_cast<std::uint64_t>(rc.get_int("train.seed", 0));
    cfg.clip_max_norm = rc.get_double("train.clip_max_norm", cfg.clip_max_norm);
    cfg.augment.hflip = rc.get_bool("augment.hflip", cfg.augment.hflip);
    cfg.augment.vflip = rc.get_bool("augment.vflip", cfg.augment.vflip);
    cfg.augment.zoom_range = rc.get_double("augment.zoom_range", cfg.augment.zoom_range);
    cfg.augment.shift_range = rc.get_double("augment.shift_range", cfg.augment.shift_range);
    cfg.augment.rotation_degrees = rc.get_double("augment.rotation_degrees", cfg.augment.rotation_degrees);
    return cfg;
}

// Every key the run actually used, defaults included, for the echo file.
RunConfig effective_config(const RunConfig& rc) {
    RunConfig out = rc;
    const TrainConfig t = train_config_from(rc);
    char buf[64];
    auto put = [&](const std::string& key, const std::string& v) {
        if (!out.has(key)) out.set(key, v);
    };
    auto put_num = [&](const std::string& key, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        put(key, buf);
    };
    put_num("train.initial_lr", t.initial_lr);
    put_num("train.decay_rate", t.decay_rate);
    put("train.decay_every_epochs", std::to_string(t.decay_every_epochs));
    put_num("train.momentum", t.momentum);
    put("train.batch_size", std::to_string(t.batch_size));
    put("train.epochs", std::to_string(t.epochs));
    put("train.seed", std::to_string(t.seed));
    put_num("train.clip_max_norm", t.clip_max_norm);
    put("augment.hflip", t.augment.hflip ? "true" : "false");
    put("augment.vflip", t.augment.vflip ? "true" : "false");
    put_num("augment.zoom_range", t.augment.zoom_range);
    put_num("augment.shift_range", t.augment.shift_range);
    put_num("augment.rotation_degrees", t.augment.rotation_degrees);
    const HeadConfig h = head_from(rc);
    put("model.spec", rc.get("model.spec", "toy"));
    put("model.input_size",
        std::to_string(rc.get_int("model.input_size", spec_by_name(rc.get("model.spec", "toy")).input_size)));
    put("model.capsules", std::to_string(h.out_capsules));
    put("model.capsule_dim", std::to_string(h.out_dim));
    put("model.routing_iters", std::to_string(h.routing_iters));
    put_num("model.dropout_rate", h.dropout_rate);
    put("model.compressor", h.compressor == HeadConfig::Compressor::Srnet ? "srnet" : "gap");
    return out;
}

void print_load_report(const LoadReport& rep) {
    std::cout << "loaded " << rep.copied.size() << " parameters";
    if (!rep.skipped_shape.empty()) {
        std::cout << "; reinitialized " << rep.skipped_shape.size() << " (shape mismatch):";
        for (const auto& n : rep.skipped_shape) std::cout << " " << n;
    }
    if (!rep.only_in_file.empty()) std::cout << "; ignored " << rep.only_in_file.size() << " file-only entries";
    if (!rep.only_in_model.empty()) std::cout << "; kept " << rep.only_in_model.size() << " model-only entries";
    std::cout << "\n";
}

int cmd_prepare(const std::string& data_root, const std::string& layout, double fraction,
                std::uint64_t seed, const std::string& out_manifest) {
    DataLayout dl;
    if (layout == "flat")
        dl = DataLayout::Flat;
    else if (layout == "kermany" || layout == "presplit")
        dl = DataLayout::PreSplit;
    else
        throw std::invalid_argument("prepare: unknown layout '" + layout + "' (expected flat or kermany)");

    DatasetManifest m = prepare_manifest(data_root, dl, fraction, seed);
    check_no_leakage(m);
    write_manifest(m, out_manifest);
    for (const auto& [label, counts] : m.class_counts()) {
        std::cout << "class " << label << ": train " << counts.first << ", test " << counts.second << "\n";
    }
    std::cout << "manifest written to " << out_manifest << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const RunConfig& rc, const std::string& init_from,
              bool loose, const std::string& out_dir) {
    DatasetManifest manifest = read_manifest(manifest_path);
    fs::create_directories(out_dir);

    TrainConfig cfg = train_config_from(rc);
    ModelGraph model = model_from(rc, static_cast<int>(manifest.classes.size()), cfg.seed);
    if (!init_from.empty()) {
        LoadReport rep = load_checkpoint(init_from, model, !loose);
        print_load_report(rep);
    }

    cfg.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    cfg.verbose = true;
    TrainHistory history = fit(model, manifest, cfg);

    write_history_csv(history, (fs::path(out_dir) / "history.csv").string());
    std::map<std::string, std::string> extra;
    extra["trained_epochs"] = std::to_string(cfg.epochs);
    save_checkpoint(model, (fs::path(out_dir) / "final.ckpt").string(), extra);
    write_effective_config(effective_config(rc), (fs::path(out_dir) / "effective_config.txt").string());
    std::cout << "trained " << history.rows.size() << " epochs; outputs in " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& checkpoint, const std::string& out_dir) {
    DatasetManifest manifest = read_manifest(manifest_path);
    fs::create_directories(out_dir);

    auto meta = read_checkpoint_metadata(checkpoint);
    ModelGraph model = model_from_metadata(meta, 0);
    load_checkpoint(checkpoint, model, true);
    if (static_cast<int>(manifest.classes.size()) != model.class_count) {
        throw std::invalid_argument("eval: checkpoint expects " + std::to_string(model.class_count) +
                                    " classes but the manifest has " + std::to_string(manifest.classes.size()));
    }

    ConfusionMatrix cm = evaluate(model, manifest, manifest.test);
    MetricsReport report = compute_report(cm);
    write_confusion_csv(cm, (fs::path(out_dir) / "confusion_matrix.csv").string());
    write_metrics_json(report, (fs::path(out_dir) / "metrics.json").string());
    std::cout << "accuracy " << report.overall_accuracy << ", mean specificity " << report.mean_specificity
              << "; outputs in " << out_dir << "\n";
    return 0;
}

}  // namespace

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + it->second + "'");
    }
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t used = 0;
        const int v = std::stoi(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + it->second + "'");
    }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

RunConfig read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: line " + std::to_string(lineno) + " of '" + path +
                                     "' is not key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error("config: line " + std::to_string(lineno) + " of '" + path +
                                     "' has an empty key");
        }
        cfg.set(key, value);
    }
    return cfg;
}

void write_effective_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("config: cannot write '" + path + "'");
    for (const auto& [key, value] : cfg.values) os << key << " = " << value << "\n";
}

int run(int argc, const char* const* argv) {
    CLI::App app{"retinal OCT ensemble classifier"};
    app.require_subcommand(1);

    std::string data_root, layout = "flat", manifest, spec, config_path, init_from, out;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
    int epochs = -1, batch_size = -1;
    bool loose = false;

    CLI::App* prepare = app.add_subcommand("prepare", "scan an image tree and write a split manifest");
    prepare->add_option("--data-root", data_root, "root of the image tree")->required();
    prepare->add_option("--layout", layout, "flat (class dirs) or kermany (pre-split train/test)");
    prepare->add_option("--test-fraction", test_fraction, "per-class test share for flat layouts");
    prepare->add_option("--seed", seed, "split shuffle seed");
    prepare->add_option("--out", out, "manifest output path")->required();

    CLI::App* train = app.add_subcommand("train", "train a model on a prepared manifest");
    train->add_option("--manifest", manifest, "manifest file from prepare")->required();
    train->add_option("--spec", spec, "model spec: toy or paper");
    train->add_option("--config", config_path, "config file with dotted keys");
    train->add_option("--init-from", init_from, "checkpoint to initialize from");
    train->add_flag("--loose", loose, "allow shape mismatches when initializing");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--batch-size", batch_size, "mini-batch size");
    train->add_option("--seed", seed, "run seed (init, shuffle, augment, dropout)");
    train->add_option("--out", out, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest's test split");
    eval->add_option("--manifest", manifest, "manifest file from prepare")->required();
    eval->add_option("--init-from", init_from, "checkpoint to evaluate")->required();
    eval->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help() << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (prepare->parsed()) {
            return cmd_prepare(data_root, layout, test_fraction, seed, out);
        }
        if (train->parsed()) {
            RunConfig rc;
            if (!config_path.empty()) rc = read_config_file(config_path);
            check_known_keys(rc);
            // flags beat file values
            if (!spec.empty()) rc.set("model.spec", spec);
            if (epochs >= 0) rc.set("train.epochs", std::to_string(epochs));
            if (batch_size >= 0) rc.set("train.batch_size", std::to_string(batch_size));
            if (train->count("--seed")) rc.set("train.seed", std::to_string(seed));
            return cmd_train(manifest, rc, init_from, loose, out);
        }
        return cmd_eval(manifest, init_from, out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace roct
