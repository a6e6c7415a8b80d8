// Command-line surface: corpus synthesis, training, evaluation, robustness
// and ablation experiments, and cross-run report generation.
//
// Exit codes: 0 success, 2 usage/validation error, 3 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cold/harness.hpp"
#include "cold/report.hpp"

namespace fs = std::filesystem;
using namespace cold;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(const std::string& s) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
    return buf;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read " + path);
    return json::parse(in);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::string resolve_out_dir(std::string out, const std::string& command,
                            const std::string& config_hash) {
    if (out.empty()) {
        const char* root = std::getenv("COLD_OUT_ROOT");
        if (!root || !*root)
            throw std::invalid_argument("--out not given and COLD_OUT_ROOT is not set");
        out = (fs::path(root) / (command + "-" + config_hash.substr(0, 8))).string();
    }
    fs::create_directories(out);
    return out;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_hash, std::uint64_t seed,
                    const std::vector<std::string>& artifacts) {
    json m{{"command", command},
           {"config_hash", config_hash},
           {"seed", seed},
           {"artifacts", artifacts}};
    write_text((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

int cmd_synth(const std::string& spec_path, std::string out) {
    const json spec_json = load_json_file(spec_path);
    SynthSpec spec = spec_json.get<SynthSpec>();
    spec.validate();
    const std::string hash = hash_hex(json(spec).dump());
    out = resolve_out_dir(out, "synth", hash);
    Corpus corpus = generate(spec);
    save_corpus(corpus, out);
    write_manifest(out, "synth", hash, spec.seed,
                   {"spec.json", "train.jsonl", "val.jsonl", "test.jsonl"});
    std::cout << "corpus written to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& corpus_dir,
              std::string out) {
    const json cfg_json = load_json_file(config_path);
    TrainConfig cfg = cfg_json.get<TrainConfig>();
    cfg.validate();
    const std::string hash = hash_hex(json(cfg).dump());
    out = resolve_out_dir(out, "train", hash);
    Corpus corpus = load_corpus(corpus_dir);
    TrainResult tr = train(cfg, corpus);
    save_checkpoint(tr.params, tr.model, (fs::path(out) / "checkpoint.json").string());
    write_train_log(tr.log, (fs::path(out) / "train_log.jsonl").string());
    write_text((fs::path(out) / "config.json").string(), json(cfg).dump(2) + "\n");
    json summary{{"best_val_metric", tr.best_val_metric},
                 {"selection_metric", tr.selection_metric},
                 {"best_epoch", tr.best_epoch},
                 {"skipped_steps", tr.skipped_steps}};
    write_text((fs::path(out) / "train_summary.json").string(), summary.dump(2) + "\n");
    write_manifest(out, "train", hash, cfg.seed,
                   {"checkpoint.json", "train_log.jsonl", "config.json",
                    "train_summary.json"});
    std::cout << "checkpoint written to " << out << " (best " << tr.selection_metric
              << " " << tr.best_val_metric << ")\n";
    return 0;
}

struct EvalFlags {
    std::string checkpoint;
    std::string corpus_dir;
    std::string split = "test";
    std::string corrupt_modality;
    double fraction = 0.5;
    bool contiguous = false;
    bool temp_scale = false;
    std::uint64_t corrupt_seed = 99;
    std::string out;
};

EvalResult run_eval(const EvalFlags& flags, ModelConfig* model_out = nullptr) {
    Checkpoint ck = load_checkpoint(flags.checkpoint);
    Corpus corpus = load_corpus(flags.corpus_dir);
    EvalOptions opts;
    opts.temperature_scaling = flags.temp_scale;
    if (!flags.corrupt_modality.empty()) {
        if (flags.corrupt_modality != "V" && flags.corrupt_modality != "A")
            throw std::invalid_argument("--corrupt-modality must be V or A");
        opts.corrupt = CorruptOptions{flags.corrupt_modality[0], flags.fraction,
                                      flags.contiguous, flags.corrupt_seed};
    }
    if (model_out) *model_out = ck.model;
    return evaluate(ck.params, ck.model, corpus, flags.split, opts);
}

int cmd_eval(EvalFlags flags) {
    json key{{"checkpoint", flags.checkpoint}, {"split", flags.split},
             {"corrupt", flags.corrupt_modality}, {"fraction", flags.fraction},
             {"contiguous", flags.contiguous}, {"temp_scale", flags.temp_scale}};
    const std::string hash = hash_hex(key.dump());
    flags.out = resolve_out_dir(flags.out, "eval", hash);
    ModelConfig model;
    EvalResult ev = run_eval(flags, &model);
    write_text((fs::path(flags.out) / "metrics.json").string(), ev.metrics.dump(2) + "\n");
    write_traces_csv(ev.traces, (fs::path(flags.out) / "traces.csv").string());
    std::vector<std::string> artifacts{"metrics.json", "traces.csv"};
    if (ev.reliability) {
        reliability_export(*ev.reliability,
                           (fs::path(flags.out) / "reliability.csv").string());
        artifacts.push_back("reliability.csv");
    }
    write_manifest(flags.out, "eval", hash, flags.corrupt_seed, artifacts);
    std::cout << ev.metrics.dump(2) << "\n";
    return 0;
}

int cmd_robustness(EvalFlags flags) {
    if (flags.corrupt_modality.empty()) flags.corrupt_modality = "V";
    json key{{"checkpoint", flags.checkpoint}, {"split", flags.split},
             {"modality", flags.corrupt_modality}, {"fraction", flags.fraction}};
    const std::string hash = hash_hex(key.dump());
    flags.out = resolve_out_dir(flags.out, "robustness", hash);

    EvalFlags clean = flags;
    clean.corrupt_modality.clear();
    ModelConfig model;
    EvalResult ev_clean = run_eval(clean, &model);
    EvalResult ev_corrupt = run_eval(flags);

    json rb{{"model", to_string(model.fusion)},
            {"task", to_string(model.task)},
            {"modality", flags.corrupt_modality},
            {"fraction", flags.fraction},
            {"contiguous", flags.contiguous},
            {"clean", ev_clean.metrics},
            {"corrupted", ev_corrupt.metrics}};
    write_text((fs::path(flags.out) / "robustness.json").string(), rb.dump(2) + "\n");
    write_traces_csv(ev_corrupt.traces,
                     (fs::path(flags.out) / "traces_corrupted.csv").string());
    write_manifest(flags.out, "robustness", hash, flags.corrupt_seed,
                   {"robustness.json", "traces_corrupted.csv"});
    std::cout << rb.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& corpus_dir,
               std::string out) {
    const json cfg_json = load_json_file(config_path);
    TrainConfig cfg = cfg_json.get<TrainConfig>();
    cfg.validate();
    const std::string hash = hash_hex(json(cfg).dump());
    out = resolve_out_dir(out, "ablate", hash);
    Corpus corpus = load_corpus(corpus_dir);
    auto rows = run_ablation(cfg, corpus);
    json table = json::array();
    std::ostringstream csv;
    csv << "configuration,ccc_valence,ccc_arousal\n";
    for (const auto& row : rows) {
        table.push_back(json{{"name", row.name},
                             {"weights", row.weights},
                             {"ccc_valence", row.ccc_valence},
                             {"ccc_arousal", row.ccc_arousal}});
        csv << row.name << ',' << row.ccc_valence << ',' << row.ccc_arousal << '\n';
    }
    write_text((fs::path(out) / "ablation.json").string(), table.dump(2) + "\n");
    write_text((fs::path(out) / "ablation.csv").string(), csv.str());
    write_manifest(out, "ablate", hash, cfg.seed, {"ablation.json", "ablation.csv"});
    std::cout << csv.str();
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, std::string out) {
    std::vector<RunRecord> runs;
    for (const auto& dir : run_dirs) runs.push_back(read_run_dir(dir));
    json key{{"runs", run_dirs}};
    const std::string hash = hash_hex(key.dump());
    out = resolve_out_dir(out, "report", hash);
    const std::string text = render_report_text(runs);
    write_text((fs::path(out) / "report.txt").string(), text);
    write_text((fs::path(out) / "report.csv").string(), render_report_csv(runs));
    write_manifest(out, "report", hash, 0, {"report.txt", "report.csv"});
    std::cout << text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"COLD fusion experiments: uncertainty-aware multimodal sequence "
                 "regression and classification on synthetic corpora"};
    app.require_subcommand(1);

    std::string spec_path, config_path, corpus_dir, out_dir, report_out;
    std::vector<std::string> run_dirs;
    EvalFlags eval_flags;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    synth->add_option("--spec", spec_path, "SynthSpec JSON file")->required();
    synth->add_option("--out", out_dir, "output corpus directory");

    auto* train_cmd = app.add_subcommand("train", "train a fusion model");
    train_cmd->add_option("--config", config_path, "TrainConfig JSON file")->required();
    train_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
    train_cmd->add_option("--out", out_dir, "output run directory");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "checkpoint path")
        ->required();
    eval_cmd->add_option("--corpus", eval_flags.corpus_dir, "corpus directory")->required();
    eval_cmd->add_option("--split", eval_flags.split, "train|val|test");
    eval_cmd->add_option("--corrupt-modality", eval_flags.corrupt_modality,
                         "corrupt this modality (V or A)");
    eval_cmd->add_option("--fraction", eval_flags.fraction, "corrupted frame fraction");
    eval_cmd->add_flag("--contiguous", eval_flags.contiguous,
                       "corrupt one contiguous run of frames");
    eval_cmd->add_flag("--temp-scale", eval_flags.temp_scale,
                       "run temperature scaling (classification)");
    eval_cmd->add_option("--corrupt-seed", eval_flags.corrupt_seed, "corruption rng seed");
    eval_cmd->add_option("--out", eval_flags.out, "output run directory");

    auto* robust = app.add_subcommand("robustness",
                                      "clean vs corrupted evaluation of one checkpoint");
    robust->add_option("--checkpoint", eval_flags.checkpoint, "checkpoint path")
        ->required();
    robust->add_option("--corpus", eval_flags.corpus_dir, "corpus directory")->required();
    robust->add_option("--split", eval_flags.split, "train|val|test");
    robust->add_option("--modality", eval_flags.corrupt_modality, "V or A");
    robust->add_option("--fraction", eval_flags.fraction, "corrupted frame fraction");
    robust->add_flag("--contiguous", eval_flags.contiguous,
                     "corrupt one contiguous run of frames");
    robust->add_option("--corrupt-seed", eval_flags.corrupt_seed, "corruption rng seed");
    robust->add_option("--out", eval_flags.out, "output run directory");

    auto* ablate = app.add_subcommand("ablate", "run the five-row loss ablation grid");
    ablate->add_option("--config", config_path, "TrainConfig JSON file")->required();
    ablate->add_option("--corpus", corpus_dir, "corpus directory")->required();
    ablate->add_option("--out", out_dir, "output run directory");

    auto* report = app.add_subcommand("report", "aggregate run directories");
    report->add_option("--runs", run_dirs, "run directories")->required()->expected(-1);
    report->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir);
        if (train_cmd->parsed()) return cmd_train(config_path, corpus_dir, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(eval_flags);
        if (robust->parsed()) return cmd_robustness(eval_flags);
        if (ablate->parsed()) return cmd_ablate(config_path, corpus_dir, out_dir);
        if (report->parsed()) return cmd_report(run_dirs, report_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
