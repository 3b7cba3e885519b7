#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqarat/metrics.hpp"
#include "vqarat/objectives.hpp"
#include "vqarat/synthdata.hpp"

namespace vqarat {

inline const char* kVersionString = "vqarat 0.1.0";

// ---------------------------------------------------------------------------
// Experiment configuration (JSON round-trip)
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    // training
    std::string mode = "ra";        // "fr" | "ra"
    std::string loss = "weighted";  // "weighted" | "var" | "kldiv"
    double lambda = 1.0;
    double beta = 1.0;
    std::size_t batch_size = 32;
    double lr = 3e-4;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;
    // dataset
    std::size_t n_train = 2000;
    std::size_t n_val = 500;
    std::uint64_t master_seed = 7;
    std::string data_path;  // when set, load instead of generating
    // model dims
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t d_lm = 64;
    std::size_t lm_layers = 2;
    std::size_t n_heads = 4;
    std::string out_dir = ".";

    nlohmann::json to_json() const {
        return {{"mode", mode},       {"loss", loss},           {"lambda", lambda},
                {"beta", beta},       {"batch_size", batch_size}, {"lr", lr},
                {"epochs", epochs},   {"seed", seed},           {"clip_norm", clip_norm},
                {"n_train", n_train},
                {"n_val", n_val},     {"master_seed", master_seed}, {"data_path", data_path},
                {"d", d},             {"layers", layers},       {"d_lm", d_lm},
                {"lm_layers", lm_layers}, {"n_heads", n_heads}, {"out_dir", out_dir}};
    }

    static ExperimentConfig from_json(const nlohmann::json& j) {
        ExperimentConfig c;
        c.mode = j.at("mode");
        c.loss = j.at("loss");
        c.lambda = j.at("lambda");
        c.beta = j.at("beta");
        c.batch_size = j.at("batch_size");
        c.lr = j.at("lr");
        c.epochs = j.at("epochs");
        c.seed = j.at("seed");
        c.clip_norm = j.value("clip_norm", 1.0);
        c.n_train = j.at("n_train");
        c.n_val = j.at("n_val");
        c.master_seed = j.at("master_seed");
        c.data_path = j.at("data_path");
        c.d = j.at("d");
        c.layers = j.at("layers");
        c.d_lm = j.at("d_lm");
        c.lm_layers = j.at("lm_layers");
        c.n_heads = j.at("n_heads");
        c.out_dir = j.at("out_dir");
        return c;
    }

    bool operator==(const ExperimentConfig&) const = default;

    TrainConfig train_config() const {
        TrainConfig t;
        t.mode = mode == "fr" ? TrainMode::Frozen : TrainMode::Joint;
        if (loss == "weighted")
            t.combinator = Combinator::weighted(lambda);
        else if (loss == "var")
            t.combinator = Combinator::uncertainty();
        else if (loss == "kldiv")
            t.combinator = Combinator::kldiv(beta);
        else
            throw std::invalid_argument("unknown loss '" + loss + "'");
        t.batch_size = batch_size;
        t.lr = lr;
        t.epochs = epochs;
        t.seed = seed;
        t.clip_norm = clip_norm;
        return t;
    }

    EncoderConfig encoder_config(std::size_t vocab_size) const {
        EncoderConfig e;
        e.d = d;
        e.layers = layers;
        e.n_heads = n_heads;
        e.vocab_size = vocab_size;
        return e;
    }

    LmConfig lm_config(std::size_t vocab_size) const {
        LmConfig l;
        l.d_lm = d_lm;
        l.layers = lm_layers;
        l.n_heads = n_heads;
        l.d_in = d;
        l.vocab_size = vocab_size;
        return l;
    }
};

// ---------------------------------------------------------------------------
// Config inference from checkpoints (dims are recoverable from shapes)
// ---------------------------------------------------------------------------

inline EncoderConfig encoder_config_from_map(const ParamMap& map, std::size_t n_heads = 4) {
    EncoderConfig c;
    const Tensor& tok = map.at("encoder.tok_emb");
    c.vocab_size = tok.shape()[0];
    c.d = tok.shape()[1];
    c.max_len = map.at("encoder.pos_emb").shape()[0];
    c.max_regions = map.at("encoder.region_pos").shape()[0];
    c.ff_mult = map.at("encoder.cross.w1").shape()[1] / c.d;
    c.layers = 0;
    for (const auto& name : map.names())
        if (name.rfind("encoder.text.", 0) == 0 && name.size() > 16 && name.substr(name.size() - 3) == ".wq")
            ++c.layers;
    c.n_heads = n_heads;
    return c;
}

inline LmConfig lm_config_from_map(const ParamMap& map, std::size_t n_heads = 4) {
    LmConfig c;
    const Tensor& tok = map.at("lm.tok_emb");
    c.vocab_size = tok.shape()[0];
    c.d_lm = tok.shape()[1];
    c.max_len = map.at("lm.pos_emb").shape()[0];
    c.d_in = map.at("lm.prefix_w").shape()[0];
    c.ff_mult = map.at("lm.block.0.w1").shape()[1] / c.d_lm;
    c.layers = 0;
    for (const auto& name : map.names())
        if (name.rfind("lm.block.", 0) == 0 && name.substr(name.size() - 3) == ".wq") ++c.layers;
    c.n_heads = n_heads;
    return c;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline void write_history_jsonl(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_history_jsonl: cannot open " + path);
    for (const auto& h : history) {
        nlohmann::json row = {{"epoch", h.epoch},
                              {"L_A", h.answer_loss},
                              {"L_R", h.rationale_loss},
                              {"kl", h.kl ? nlohmann::json(*h.kl) : nlohmann::json(nullptr)},
                              {"total", h.total},
                              {"val_accuracy", h.val_accuracy}};
        out << row.dump() << "\n";
    }
}

inline void write_manifest(const std::string& dir, const std::string& command, const nlohmann::json& flags) {
    nlohmann::json doc = {{"command", command}, {"flags", flags}, {"version", kVersionString}};
    std::ofstream out(std::filesystem::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("write_manifest: cannot open manifest in " + dir);
    out << doc.dump(2) << "\n";
}

struct LoadedDataset {
    std::vector<VqaRecord> train;
    std::vector<VqaRecord> val;
    Vocabulary vocabulary;
};

inline void save_dataset(const DatasetSplit& split, const std::string& dir) {
    std::filesystem::create_directories(dir);
    auto p = std::filesystem::path(dir);
    save_records_jsonl(split.train, (p / "train.jsonl").string());
    save_records_jsonl(split.val, (p / "val.jsonl").string());
    save_vocabulary(split.vocabulary, (p / "vocab.json").string());
}

inline LoadedDataset load_dataset(const std::string& dir) {
    auto p = std::filesystem::path(dir);
    LoadedDataset d;
    d.train = load_records_jsonl((p / "train.jsonl").string());
    d.val = load_records_jsonl((p / "val.jsonl").string());
    d.vocabulary = load_vocabulary((p / "vocab.json").string());
    return d;
}

// ---------------------------------------------------------------------------
// Sweep over the six loss configurations of the comparison table
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string loss_label;
    MetricsReport report;
    std::vector<EpochStats> history;
    bool ok = false;
    std::string error;
};

inline std::vector<std::pair<std::string, Combinator>> sweep_configurations() {
    return {{"lambda=1", Combinator::weighted(1.0)},   {"lambda=3", Combinator::weighted(3.0)},
            {"lambda=10", Combinator::weighted(10.0)}, {"lambda=1000", Combinator::weighted(1000.0)},
            {"var", Combinator::uncertainty()},        {"kldiv", Combinator::kldiv(1.0)}};
}

// One joint training run from a shared pretrained encoder; used per sweep cell.
inline SweepRow run_sweep_cell(const std::string& label, const Combinator& comb, const TrainConfig& base,
                               const LoadedDataset& data, const ParamMap& pretrained_encoder,
                               std::size_t n_heads, const ExperimentConfig& dims) {
    SweepRow row;
    row.loss_label = label;
    try {
        ParamMap enc_map = pretrained_encoder.clone();
        EncoderConfig ecfg = encoder_config_from_map(enc_map, n_heads);
        EncoderParams enc = EncoderParams::from_param_map(ecfg, enc_map);
        LmConfig lcfg = dims.lm_config(data.vocabulary.size());
        lcfg.d_in = ecfg.d;
        LmParams lm = LmParams::init(lcfg, base.seed);

        TrainConfig cfg = base;
        cfg.combinator = comb;
        ReferenceScoresFn ref_fn;
        const ReferenceScoresFn* ref_ptr = nullptr;
        if (comb.kind == Combinator::Kind::KlDiv) {
            ParamMap ref_map = pretrained_encoder.clone_detached();
            EncoderParams ref_enc = EncoderParams::from_param_map(ecfg, ref_map);
            ref_fn = make_reference_fn(ref_enc, data.vocabulary);
            ref_ptr = &ref_fn;
        }
        TrainResult res = train(cfg, data.train, data.val, enc, lm, data.vocabulary, ref_ptr);
        row.history = res.history;

        EncoderParams best_enc = EncoderParams::from_param_map(ecfg, res.encoder_params);
        LmParams best_lm = LmParams::from_param_map(lcfg, res.lm_params);
        row.report = evaluate_model(best_enc, best_lm, data.vocabulary, data.val).report;
        row.ok = true;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
    out << "loss,vqa_accuracy,bleu1\n";
    out.setf(std::ios::fixed);
    out.precision(2);
    for (const auto& r : rows)
        if (r.ok)
            out << r.loss_label << "," << r.report.vqa_accuracy << "," << r.report.bleu1 << "\n";
}

}  // namespace vqarat
