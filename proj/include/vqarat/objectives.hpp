#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "vqarat/adam.hpp"
#include "vqarat/encoder.hpp"
#include "vqarat/metrics.hpp"
#include "vqarat/rationale_lm.hpp"

namespace vqarat {

// ---------------------------------------------------------------------------
// Loss combinators (scalar forms)
// ---------------------------------------------------------------------------

struct LossBundle {
    double answer_loss = 0.0;
    double rationale_loss = 0.0;
    std::optional<double> kl;
    double total = 0.0;
};

inline double combine_weighted(double answer_loss, double rationale_loss, double lambda) {
    if (lambda <= 0.0) throw std::invalid_argument("combine_weighted: lambda must be > 0");
    return lambda * answer_loss + rationale_loss;
}

// Log-variance parameterization: exp(-s) * L + s per task.
inline double combine_uncertainty(double answer_loss, double rationale_loss, double s_a, double s_r) {
    return std::exp(-s_a) * answer_loss + std::exp(-s_r) * rationale_loss + s_a + s_r;
}

// KL(p_ref || q_pred) with 0*log(0/q) = 0 and q floored at 1e-12.
inline double kl_divergence(const std::vector<double>& p_ref, const std::vector<double>& q_pred) {
    if (p_ref.size() != 4 || q_pred.size() != 4)
        throw std::invalid_argument("kl_divergence: expected two length-4 distributions");
    double sp = 0.0, sq = 0.0;
    for (double p : p_ref) sp += p;
    for (double q : q_pred) sq += q;
    if (std::fabs(sp - 1.0) > 1e-9 || std::fabs(sq - 1.0) > 1e-9)
        throw std::invalid_argument("kl_divergence: inputs must each sum to 1");
    double kl = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (p_ref[i] <= 0.0) continue;
        kl += p_ref[i] * std::log(p_ref[i] / std::max(q_pred[i], 1e-12));
    }
    return std::max(kl, 0.0);
}

inline double combine_kldiv(double answer_loss, double rationale_loss, double kl, double beta) {
    if (beta < 0.0) throw std::invalid_argument("combine_kldiv: beta must be >= 0");
    return answer_loss + rationale_loss + beta * kl;
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

enum class TrainMode { Frozen, Joint };  // Fr / Ra

struct Combinator {
    enum class Kind { Weighted, Uncertainty, KlDiv } kind = Kind::Weighted;
    double lambda = 1.0;
    double beta = 1.0;

    static Combinator weighted(double lambda) { return {Kind::Weighted, lambda, 0.0}; }
    static Combinator uncertainty() { return {Kind::Uncertainty, 0.0, 0.0}; }
    static Combinator kldiv(double beta) { return {Kind::KlDiv, 0.0, beta}; }
};

struct TrainConfig {
    TrainMode mode = TrainMode::Joint;
    Combinator combinator = Combinator::weighted(1.0);
    std::size_t batch_size = 32;
    double lr = 3e-4;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;
    // ablation switch: answer loss enters the total as a constant, so only
    // rationale gradients reach the encoder
    bool detach_answer_loss = false;
};

struct UncertaintyParams {
    Tensor s_a = Tensor::scalar(0.0, true);
    Tensor s_r = Tensor::scalar(0.0, true);
};

struct EpochStats {
    std::size_t epoch = 0;
    double answer_loss = 0.0;
    double rationale_loss = 0.0;
    std::optional<double> kl;
    double total = 0.0;
    double val_accuracy = 0.0;
    double val_total = 0.0;
};

struct TrainResult {
    ParamMap encoder_params;  // best checkpoint by validation total loss
    ParamMap lm_params;
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
};

using ReferenceScoresFn = std::function<std::array<double, 4>(const VqaRecord&)>;

// Frozen forward evaluation of an encoder, usable as a kldiv reference.
// The copy is detached so reference passes are never recorded on a tape.
inline ReferenceScoresFn make_reference_fn(EncoderParams enc_live, Vocabulary vocab) {
    ParamMap live = enc_live.param_map();
    ParamMap frozen = live.clone_detached();
    EncoderParams enc = EncoderParams::from_param_map(enc_live.cfg, frozen);
    return [enc = std::move(enc), vocab = std::move(vocab)](const VqaRecord& rec) {
        OptionEmbeddings out = encoder_forward(enc, vocab, rec);
        std::array<double, 4> s;
        for (std::size_t i = 0; i < 4; ++i) s[i] = out.s.data()[i];
        return s;
    };
}

namespace detail_obj {

// KL(ref||q) as a graph node: -sum p log q + sum p log p (constant).
inline Tensor kl_node(const std::array<double, 4>& ref, const Tensor& q_scores) {
    double entropy_term = 0.0;
    std::vector<double> p(4);
    for (std::size_t i = 0; i < 4; ++i) {
        p[i] = ref[i];
        if (p[i] > 0.0) entropy_term += p[i] * std::log(p[i]);
    }
    Tensor p_const = Tensor::leaf({4}, p, false);
    Tensor cross = ops::scale(ops::sum(ops::mul(p_const, ops::log(q_scores))), -1.0);
    return ops::add(cross, Tensor::scalar(entropy_term, false));
}

struct RecordLoss {
    Tensor total;  // graph node
    LossBundle bundle;
};

inline std::vector<std::size_t> rationale_target_ids(const VqaRecord& rec, const Vocabulary& vocab) {
    std::vector<std::size_t> ids = vocab.encode(rec.gold_rationale_tokens);
    ids.push_back(Vocabulary::kEos);
    return ids;
}

// Builds the per-record loss graph. In Frozen mode the caller has already
// computed e_p and the answer terms outside the tape.
inline RecordLoss record_loss_joint(const TrainConfig& cfg, const EncoderParams& enc, const LmParams& lm,
                                    const UncertaintyParams& unc, const Vocabulary& vocab,
                                    const VqaRecord& rec, const ReferenceScoresFn* ref_fn) {
    OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
    Tensor la = ops::cross_entropy(emb.logits, rec.gold_answer);
    Tensor lr = rationale_nll(lm, emb.e_p, rationale_target_ids(rec, vocab));

    RecordLoss out;
    out.bundle.answer_loss = la.item();
    out.bundle.rationale_loss = lr.item();
    Tensor la_term = cfg.detach_answer_loss ? Tensor::scalar(la.item(), false) : la;

    switch (cfg.combinator.kind) {
        case Combinator::Kind::Weighted:
            if (cfg.combinator.lambda <= 0.0)
                throw std::invalid_argument("train: lambda must be > 0");
            out.total = ops::add(ops::scale(la_term, cfg.combinator.lambda), lr);
            out.bundle.total =
                combine_weighted(out.bundle.answer_loss, out.bundle.rationale_loss, cfg.combinator.lambda);
            break;
        case Combinator::Kind::Uncertainty: {
            Tensor ta = ops::mul(ops::exp(ops::scale(unc.s_a, -1.0)), la_term);
            Tensor tr = ops::mul(ops::exp(ops::scale(unc.s_r, -1.0)), lr);
            out.total = ops::add(ops::add(ta, tr), ops::add(unc.s_a, unc.s_r));
            out.bundle.total = combine_uncertainty(out.bundle.answer_loss, out.bundle.rationale_loss,
                                                   unc.s_a.item(), unc.s_r.item());
            break;
        }
        case Combinator::Kind::KlDiv: {
            if (!ref_fn) throw std::invalid_argument("train: kldiv combinator requires a reference model");
            std::array<double, 4> ref = (*ref_fn)(rec);
            Tensor kl = kl_node(ref, emb.s);
            out.total = ops::add(ops::add(la_term, lr), ops::scale(kl, cfg.combinator.beta));
            out.bundle.kl = kl.item();
            out.bundle.total = combine_kldiv(out.bundle.answer_loss, out.bundle.rationale_loss, *out.bundle.kl,
                                             cfg.combinator.beta);
            break;
        }
    }
    return out;
}

}  // namespace detail_obj

// Mean KL(ref||pred) of an encoder against a reference over a record set.
inline double mean_kl(const EncoderParams& enc, const Vocabulary& vocab,
                      const std::vector<VqaRecord>& records, const ReferenceScoresFn& ref_fn) {
    double sum = 0.0;
    for (const auto& rec : records) {
        OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
        std::array<double, 4> ref = ref_fn(rec);
        sum += kl_divergence({ref.begin(), ref.end()}, emb.s.data());
    }
    return sum / double(records.size());
}

inline double dataset_accuracy(const EncoderParams& enc, const Vocabulary& vocab,
                               const std::vector<VqaRecord>& records) {
    std::vector<std::size_t> preds, golds;
    for (const auto& rec : records) {
        OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
        preds.push_back(predict_answer(emb.s.data()));
        golds.push_back(rec.gold_answer);
    }
    return vqa_accuracy(preds, golds);
}

// End-to-end training under the selected multi-task loss. Returns the best
// checkpoint by validation total loss plus the full epoch history. In
// Frozen mode the encoder is evaluated forward-only and never updated.
inline TrainResult train(const TrainConfig& cfg, const std::vector<VqaRecord>& train_set,
                         const std::vector<VqaRecord>& val_set, EncoderParams& enc, LmParams& lm,
                         const Vocabulary& vocab, const ReferenceScoresFn* ref_fn = nullptr) {
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train: empty train or validation set");
    if (cfg.combinator.kind == Combinator::Kind::KlDiv && !ref_fn)
        throw std::invalid_argument("train: kldiv combinator requires a reference scores function");

    ParamMap enc_map = enc.param_map();
    ParamMap lm_map = lm.param_map();
    UncertaintyParams unc;

    std::vector<Tensor> trainable = lm_map.tensors();
    if (cfg.mode == TrainMode::Joint) {
        auto et = enc_map.tensors();
        trainable.insert(trainable.end(), et.begin(), et.end());
    }
    if (cfg.combinator.kind == Combinator::Kind::Uncertainty) {
        trainable.push_back(unc.s_a);
        trainable.push_back(unc.s_r);
    }
    AdamOptimizer opt(trainable, cfg.lr);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5487 + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_la = 0.0, sum_lr = 0.0, sum_kl = 0.0, sum_total = 0.0;
        bool has_kl = cfg.combinator.kind == Combinator::Kind::KlDiv;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            opt.zero_grad();
            for (std::size_t k = start; k < end; ++k) {
                const VqaRecord& rec = train_set[order[k]];
                detail_obj::RecordLoss loss;
                if (cfg.mode == TrainMode::Joint) {
                    Tape tape;
                    loss = detail_obj::record_loss_joint(cfg, enc, lm, unc, vocab, rec, ref_fn);
                    tape.backward(loss.total);
                } else {
                    // encoder runs outside any tape: forward-only, bit-frozen
                    OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
                    double la = -std::log(std::max(emb.s.data()[rec.gold_answer], 1e-300));
                    Tensor e_p = Tensor::leaf(emb.e_p.shape(), emb.e_p.data(), false);
                    Tape tape;
                    Tensor lr_node =
                        rationale_nll(lm, e_p, detail_obj::rationale_target_ids(rec, vocab));
                    loss.bundle.answer_loss = la;
                    loss.bundle.rationale_loss = lr_node.item();
                    Tensor la_const = Tensor::scalar(la, false);
                    switch (cfg.combinator.kind) {
                        case Combinator::Kind::Weighted:
                            loss.total = ops::add(ops::scale(la_const, cfg.combinator.lambda), lr_node);
                            loss.bundle.total = combine_weighted(la, lr_node.item(), cfg.combinator.lambda);
                            break;
                        case Combinator::Kind::Uncertainty: {
                            Tensor ta = ops::mul(ops::exp(ops::scale(unc.s_a, -1.0)), la_const);
                            Tensor tr = ops::mul(ops::exp(ops::scale(unc.s_r, -1.0)), lr_node);
                            loss.total = ops::add(ops::add(ta, tr), ops::add(unc.s_a, unc.s_r));
                            loss.bundle.total =
                                combine_uncertainty(la, lr_node.item(), unc.s_a.item(), unc.s_r.item());
                            break;
                        }
                        case Combinator::Kind::KlDiv: {
                            std::array<double, 4> ref = (*ref_fn)(rec);
                            double kl = kl_divergence({ref.begin(), ref.end()}, emb.s.data());
                            loss.total = ops::add(ops::add(la_const, lr_node),
                                                  Tensor::scalar(cfg.combinator.beta * kl, false));
                            loss.bundle.kl = kl;
                            loss.bundle.total = combine_kldiv(la, lr_node.item(), kl, cfg.combinator.beta);
                            break;
                        }
                    }
                    tape.backward(loss.total);
                }
                sum_la += loss.bundle.answer_loss;
                sum_lr += loss.bundle.rationale_loss;
                if (loss.bundle.kl) sum_kl += *loss.bundle.kl;
                sum_total += loss.bundle.total;
            }
            opt.scale_grads(1.0 / double(end - start));
            opt.step(cfg.clip_norm);
        }

        // validation pass, forward-only
        double val_total = 0.0;
        std::vector<std::size_t> preds, golds;
        for (const auto& rec : val_set) {
            OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
            double la = -std::log(std::max(emb.s.data()[rec.gold_answer], 1e-300));
            double lr = rationale_nll(lm, emb.e_p, detail_obj::rationale_target_ids(rec, vocab)).item();
            switch (cfg.combinator.kind) {
                case Combinator::Kind::Weighted:
                    val_total += combine_weighted(la, lr, cfg.combinator.lambda);
                    break;
                case Combinator::Kind::Uncertainty:
                    val_total += combine_uncertainty(la, lr, unc.s_a.item(), unc.s_r.item());
                    break;
                case Combinator::Kind::KlDiv: {
                    std::array<double, 4> ref = (*ref_fn)(rec);
                    val_total += combine_kldiv(la, lr, kl_divergence({ref.begin(), ref.end()}, emb.s.data()),
                                               cfg.combinator.beta);
                    break;
                }
            }
            preds.push_back(predict_answer(emb.s.data()));
            golds.push_back(rec.gold_answer);
        }
        val_total /= double(val_set.size());

        EpochStats stats;
        stats.epoch = epoch + 1;
        double n = double(train_set.size());
        stats.answer_loss = sum_la / n;
        stats.rationale_loss = sum_lr / n;
        if (has_kl) stats.kl = sum_kl / n;
        stats.total = sum_total / n;
        stats.val_accuracy = vqa_accuracy(preds, golds);
        stats.val_total = val_total;
        result.history.push_back(stats);

        if (val_total < best_val) {
            best_val = val_total;
            result.best_epoch = epoch + 1;
            result.encoder_params = enc_map.clone();
            result.lm_params = lm_map.clone();
        }
    }
    return result;
}

// VQA-only pretraining of the encoder (the stand-in for the pretrained
// reference model that Frozen mode freezes and kldiv references).
inline TrainResult pretrain_vqa_only(const TrainConfig& cfg, const std::vector<VqaRecord>& train_set,
                                     const std::vector<VqaRecord>& val_set, EncoderParams& enc,
                                     const Vocabulary& vocab) {
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("pretrain_vqa_only: empty train or validation set");
    ParamMap enc_map = enc.param_map();
    AdamOptimizer opt(enc_map.tensors(), cfg.lr);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5487 + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double sum_la = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            opt.zero_grad();
            for (std::size_t k = start; k < end; ++k) {
                const VqaRecord& rec = train_set[order[k]];
                Tape tape;
                OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
                Tensor la = ops::cross_entropy(emb.logits, rec.gold_answer);
                sum_la += la.item();
                tape.backward(la);
            }
            opt.scale_grads(1.0 / double(end - start));
            opt.step(cfg.clip_norm);
        }
        double val_la = 0.0;
        std::vector<std::size_t> preds, golds;
        for (const auto& rec : val_set) {
            OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
            val_la += -std::log(std::max(emb.s.data()[rec.gold_answer], 1e-300));
            preds.push_back(predict_answer(emb.s.data()));
            golds.push_back(rec.gold_answer);
        }
        val_la /= double(val_set.size());

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.answer_loss = sum_la / double(train_set.size());
        stats.total = stats.answer_loss;
        stats.val_accuracy = vqa_accuracy(preds, golds);
        stats.val_total = val_la;
        result.history.push_back(stats);
        if (val_la < best_val) {
            best_val = val_la;
            result.best_epoch = epoch + 1;
            result.encoder_params = enc_map.clone();
        }
    }
    return result;
}

}  // namespace vqarat
