// Experiment runner: dataset generation, VQA pretraining, frozen/joint
// multi-task training, loss sweeps, evaluation reports, and judge-sheet
// aggregation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vqarat/experiment.hpp"
#include "vqarat/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vqarat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitIo = 4;
constexpr int kExitSubRun = 5;

struct CliError : std::runtime_error {
    int code;
    CliError(int code_, const std::string& msg) : std::runtime_error(msg), code(code_) {}
};

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw CliError(kExitIo, "cannot create output directory " + dir);
    std::ofstream probe(fs::path(dir) / ".write_probe");
    if (!probe) throw CliError(kExitIo, "output directory " + dir + " is not writable");
    probe.close();
    fs::remove(fs::path(dir) / ".write_probe");
}

ExperimentConfig load_config_with_overrides(CLI::App* cmd, const std::string& config_path,
                                            ExperimentConfig cfg) {
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw CliError(kExitIo, "cannot open config file " + config_path);
        ExperimentConfig from_file = ExperimentConfig::from_json(json::parse(in));
        // flags that were not given on the command line take the file value;
        // not every subcommand defines every flag
        auto keep = [&](const char* flag) {
            const CLI::Option* opt = cmd->get_option_no_throw(flag);
            return opt && opt->count() > 0;
        };
        ExperimentConfig merged = from_file;
        if (keep("--mode")) merged.mode = cfg.mode;
        if (keep("--loss")) merged.loss = cfg.loss;
        if (keep("--lambda")) merged.lambda = cfg.lambda;
        if (keep("--beta")) merged.beta = cfg.beta;
        if (keep("--batch")) merged.batch_size = cfg.batch_size;
        if (keep("--lr")) merged.lr = cfg.lr;
        if (keep("--epochs")) merged.epochs = cfg.epochs;
        if (keep("--seed")) merged.seed = cfg.seed;
        if (keep("--out")) merged.out_dir = cfg.out_dir;
        return merged;
    }
    return cfg;
}

ParamMap load_checkpoint_or_die(const std::string& path, const char* flag) {
    if (path.empty())
        throw CliError(kExitValidation, std::string("missing required checkpoint flag ") + flag);
    if (!fs::exists(path)) throw CliError(kExitIo, "checkpoint not found: " + path);
    return load_checkpoint(path);
}

void check_vocab_match(const ParamMap& map, const std::string& key, const Vocabulary& vocab,
                       const std::string& what) {
    if (map.at(key).shape()[0] != vocab.size())
        throw CliError(kExitValidation, what + " checkpoint vocabulary size " +
                                            std::to_string(map.at(key).shape()[0]) +
                                            " does not match dataset vocabulary " +
                                            std::to_string(vocab.size()));
}

void write_eval_artifacts(const EvalResult& eval, const std::string& dir) {
    {
        std::ofstream out(fs::path(dir) / "report.json");
        out << eval.report.to_json().dump(2) << "\n";
    }
    std::ofstream dump(fs::path(dir) / "rationales.jsonl");
    for (const auto& row : eval.dump) {
        json j = {{"record_id", row.record_id},
                  {"question", row.question},
                  {"gold_answer", row.gold_answer},
                  {"predicted_answer", row.predicted_answer},
                  {"gold_rationale", row.gold_rationale},
                  {"generated_rationale", row.generated_rationale}};
        dump << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ExperimentConfig& cfg, const json& flags) {
    ensure_out_dir(cfg.out_dir);
    DatasetSplit split = build_dataset(cfg.n_train, cfg.n_val, cfg.master_seed);
    save_dataset(split, cfg.out_dir);
    write_manifest(cfg.out_dir, "gen-data", flags);
    std::cout << "wrote " << split.train.size() << " train / " << split.val.size() << " val records to "
              << cfg.out_dir << "\n";
    return kExitOk;
}

int cmd_pretrain(const ExperimentConfig& cfg, const json& flags) {
    ensure_out_dir(cfg.out_dir);
    LoadedDataset data = load_dataset(cfg.data_path);
    EncoderParams enc = EncoderParams::init(cfg.encoder_config(data.vocabulary.size()), cfg.seed);
    TrainResult res = pretrain_vqa_only(cfg.train_config(), data.train, data.val, enc, data.vocabulary);
    save_checkpoint(res.encoder_params, (fs::path(cfg.out_dir) / "encoder.json").string());
    write_history_jsonl(res.history, (fs::path(cfg.out_dir) / "history.jsonl").string());
    write_manifest(cfg.out_dir, "pretrain", flags);
    std::cout << "pretrain done; best epoch " << res.best_epoch << ", final val accuracy "
              << res.history.back().val_accuracy << "\n";
    return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& pretrained_path, const json& flags) {
    ensure_out_dir(cfg.out_dir);
    LoadedDataset data = load_dataset(cfg.data_path);
    TrainConfig tcfg = cfg.train_config();

    bool needs_pretrained = cfg.mode == "fr" || cfg.loss == "kldiv";
    if (needs_pretrained && pretrained_path.empty())
        throw CliError(kExitValidation,
                       "--pretrained is required for --mode fr and --loss kldiv");

    EncoderConfig ecfg;
    ParamMap enc_map;
    if (!pretrained_path.empty()) {
        enc_map = load_checkpoint_or_die(pretrained_path, "--pretrained");
        check_vocab_match(enc_map, "encoder.tok_emb", data.vocabulary, "encoder");
        ecfg = encoder_config_from_map(enc_map, cfg.n_heads);
    } else {
        EncoderParams fresh = EncoderParams::init(cfg.encoder_config(data.vocabulary.size()), cfg.seed);
        enc_map = fresh.param_map();
        ecfg = fresh.cfg;
    }
    EncoderParams enc = EncoderParams::from_param_map(ecfg, enc_map);

    LmConfig lcfg = cfg.lm_config(data.vocabulary.size());
    lcfg.d_in = ecfg.d;
    LmParams lm = LmParams::init(lcfg, cfg.seed);

    ReferenceScoresFn ref_fn;
    const ReferenceScoresFn* ref_ptr = nullptr;
    if (cfg.loss == "kldiv") {
        ParamMap ref_map = enc_map.clone_detached();
        EncoderParams ref_enc = EncoderParams::from_param_map(ecfg, ref_map);
        ref_fn = make_reference_fn(ref_enc, data.vocabulary);
        ref_ptr = &ref_fn;
    }

    TrainResult res = train(tcfg, data.train, data.val, enc, lm, data.vocabulary, ref_ptr);

    save_checkpoint(res.encoder_params, (fs::path(cfg.out_dir) / "encoder.json").string());
    save_checkpoint(res.lm_params, (fs::path(cfg.out_dir) / "lm.json").string());
    write_history_jsonl(res.history, (fs::path(cfg.out_dir) / "history.jsonl").string());

    EncoderParams best_enc = EncoderParams::from_param_map(ecfg, res.encoder_params);
    LmParams best_lm = LmParams::from_param_map(lcfg, res.lm_params);
    EvalResult eval = evaluate_model(best_enc, best_lm, data.vocabulary, data.val);
    write_eval_artifacts(eval, cfg.out_dir);
    write_manifest(cfg.out_dir, "train", flags);
    std::cout << "train done; best epoch " << res.best_epoch << ", val accuracy "
              << eval.report.vqa_accuracy << ", BLEU-1 " << eval.report.bleu1 << "\n";
    return kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& pretrained_path, const json& flags) {
    ensure_out_dir(cfg.out_dir);
    LoadedDataset data = load_dataset(cfg.data_path);
    ParamMap enc_map = load_checkpoint_or_die(pretrained_path, "--pretrained");
    check_vocab_match(enc_map, "encoder.tok_emb", data.vocabulary, "encoder");

    TrainConfig base = cfg.train_config();
    base.mode = TrainMode::Joint;

    std::vector<SweepRow> rows;
    std::vector<std::string> failures;
    for (const auto& [label, comb] : sweep_configurations()) {
        SweepRow row = run_sweep_cell(label, comb, base, data, enc_map, cfg.n_heads, cfg);
        if (!row.ok) failures.push_back(label + ": " + row.error);
        if (row.ok) {
            fs::path cell_dir = fs::path(cfg.out_dir) / ("cell_" + label);
            fs::create_directories(cell_dir);
            write_history_jsonl(row.history, (cell_dir / "history.jsonl").string());
        }
        rows.push_back(std::move(row));
        std::cout << "sweep " << rows.back().loss_label << ": "
                  << (rows.back().ok ? "ok" : "FAILED") << "\n";
    }
    write_sweep_csv(rows, (fs::path(cfg.out_dir) / "sweep.csv").string());
    write_manifest(cfg.out_dir, "sweep", flags);
    if (!failures.empty()) {
        std::cerr << "failed cells:\n";
        for (const auto& f : failures) std::cerr << "  " << f << "\n";
        return kExitSubRun;
    }
    return kExitOk;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& encoder_path, const std::string& lm_path,
             const json& flags) {
    ensure_out_dir(cfg.out_dir);
    LoadedDataset data = load_dataset(cfg.data_path);
    ParamMap enc_map = load_checkpoint_or_die(encoder_path, "--encoder");
    ParamMap lm_map = load_checkpoint_or_die(lm_path, "--lm");
    check_vocab_match(enc_map, "encoder.tok_emb", data.vocabulary, "encoder");
    check_vocab_match(lm_map, "lm.tok_emb", data.vocabulary, "lm");
    EncoderParams enc = EncoderParams::from_param_map(encoder_config_from_map(enc_map, cfg.n_heads), enc_map);
    LmParams lm = LmParams::from_param_map(lm_config_from_map(lm_map, cfg.n_heads), lm_map);
    EvalResult eval = evaluate_model(enc, lm, data.vocabulary, data.val);
    write_eval_artifacts(eval, cfg.out_dir);
    write_manifest(cfg.out_dir, "eval", flags);
    std::cout << eval.report.to_json().dump(2) << "\n";
    return kExitOk;
}

int cmd_judge(const std::string& sheet_path, const std::string& out_path, const json& flags) {
    JudgeSheet sheet = load_judge_sheet_csv(sheet_path);
    JudgeAggregate agg = judge_aggregate(sheet);
    std::ofstream out(out_path);
    if (!out) throw CliError(kExitIo, "cannot open " + out_path);
    out << "model";
    for (std::size_t i = 0; i < agg.judge_ids.size(); ++i) out << ",H-" << (i + 1);
    out << ",Majority\n";
    out.setf(std::ios::fixed);
    out.precision(2);
    out << "model_a";
    for (double pct : agg.pct_b_per_judge) out << "," << (100.0 - pct);
    out << "," << (100.0 - agg.majority_pct_b - agg.tie_pct) << "\n";
    out << "model_b";
    for (double pct : agg.pct_b_per_judge) out << "," << pct;
    out << "," << agg.majority_pct_b << "\n";
    if (fs::path(out_path).has_parent_path())
        write_manifest(fs::path(out_path).parent_path().string(), "judge", flags);
    std::cout << "aggregated " << agg.n_items << " items from " << agg.judge_ids.size() << " judges\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale joint VQA + rationale generation experiments"};
    app.require_subcommand(1);

    ExperimentConfig cfg;
    std::string config_path, pretrained_path, encoder_path, lm_path, sheet_path, judge_out;

    auto add_common = [&](CLI::App* cmd, bool with_train_flags) {
        cmd->add_option("--out", cfg.out_dir, "output directory");
        cmd->add_option("--config", config_path, "JSON config file; flags override file values");
        if (with_train_flags) {
            cmd->add_option("--data", cfg.data_path, "dataset directory (train.jsonl/val.jsonl/vocab.json)");
            cmd->add_option("--epochs", cfg.epochs, "training epochs");
            cmd->add_option("--batch", cfg.batch_size, "batch size");
            cmd->add_option("--lr", cfg.lr, "learning rate");
            cmd->add_option("--clip", cfg.clip_norm, "global gradient-norm clip (0 disables)");
            cmd->add_option("--seed", cfg.seed, "training seed");
            cmd->add_option("--dim", cfg.d, "encoder width");
            cmd->add_option("--layers", cfg.layers, "encoder layers");
            cmd->add_option("--lm-dim", cfg.d_lm, "LM width");
            cmd->add_option("--lm-layers", cfg.lm_layers, "LM layers");
            cmd->add_option("--heads", cfg.n_heads, "attention heads");
        }
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    gen->add_option("--train", cfg.n_train, "number of training records");
    gen->add_option("--val", cfg.n_val, "number of validation records");
    gen->add_option("--seed", cfg.master_seed, "master seed");
    gen->add_option("--out", cfg.out_dir, "output directory")->required();

    CLI::App* pre = app.add_subcommand("pretrain", "VQA-only encoder pretraining");
    add_common(pre, true);
    pre->get_option("--data")->required();
    pre->get_option("--out")->required();

    CLI::App* tr = app.add_subcommand("train", "frozen or joint multi-task training");
    add_common(tr, true);
    tr->add_option("--mode", cfg.mode, "fr | ra")->check(CLI::IsMember({"fr", "ra"}));
    tr->add_option("--loss", cfg.loss, "weighted | var | kldiv")
        ->check(CLI::IsMember({"weighted", "var", "kldiv"}));
    tr->add_option("--lambda", cfg.lambda, "answer-loss weight for --loss weighted");
    tr->add_option("--beta", cfg.beta, "KL weight for --loss kldiv");
    tr->add_option("--pretrained", pretrained_path, "pretrained encoder checkpoint");
    tr->get_option("--data")->required();
    tr->get_option("--out")->required();

    CLI::App* sw = app.add_subcommand("sweep", "run all six loss configurations");
    add_common(sw, true);
    sw->add_option("--pretrained", pretrained_path, "pretrained encoder checkpoint")->required();
    sw->get_option("--data")->required();
    sw->get_option("--out")->required();

    CLI::App* ev = app.add_subcommand("eval", "evaluate checkpoints on the validation split");
    add_common(ev, true);
    ev->add_option("--encoder", encoder_path, "encoder checkpoint")->required();
    ev->add_option("--lm", lm_path, "LM checkpoint")->required();
    ev->get_option("--data")->required();
    ev->get_option("--out")->required();

    CLI::App* jd = app.add_subcommand("judge", "aggregate a human-judge preference sheet");
    jd->add_option("--sheet", sheet_path, "CSV: item_id,judge_id,preference")->required();
    jd->add_option("--out", judge_out, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    json flags = json::object();
    for (int i = 1; i < argc; ++i) flags["argv"].push_back(argv[i]);
    flags["seed"] = cfg.seed;
    flags["master_seed"] = cfg.master_seed;

    try {
        CLI::App* sub = app.get_subcommands().front();
        ExperimentConfig merged = load_config_with_overrides(sub, config_path, cfg);
        if (gen->parsed()) return cmd_gen_data(merged, flags);
        if (pre->parsed()) return cmd_pretrain(merged, flags);
        if (tr->parsed()) return cmd_train(merged, pretrained_path, flags);
        if (sw->parsed()) return cmd_sweep(merged, pretrained_path, flags);
        if (ev->parsed()) return cmd_eval(merged, encoder_path, lm_path, flags);
        if (jd->parsed()) return cmd_judge(sheet_path, judge_out, flags);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const VcrParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const JudgeSheetError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitUsage;
}
