#pragma once

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqarat/checkpoint.hpp"
#include "vqarat/synthdata.hpp"
#include "vqarat/transformer.hpp"
#include "vqarat/vocab.hpp"

namespace vqarat {

// Two-stream VQA encoder: question+option tokens in one stream, region
// features in the other, fused by one cross-attention block and pooled at
// the first position. Produces one embedding per answer option, joint
// softmax scores over the four options, and the score-weighted soft
// predicted-answer embedding.

struct EncoderConfig {
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t n_heads = 4;
    std::size_t ff_mult = 2;
    std::size_t max_len = 40;
    std::size_t max_regions = 8;
    std::size_t vocab_size = 0;
};

struct EncoderParams {
    EncoderConfig cfg;
    Tensor tok_emb;      // vocab x d
    Tensor pos_emb;      // max_len x d
    Tensor region_proj;  // kFeatureDim x d
    Tensor region_bias;  // d
    Tensor region_pos;   // max_regions x d
    std::vector<TransformerBlock> text_blocks;
    std::vector<TransformerBlock> region_blocks;
    TransformerBlock cross_block;
    Tensor ln_r_g, ln_r_b;  // final LN of the region stream (pre-LN needs one per stream)
    Tensor ln_f_g, ln_f_b;  // final LN of the fused text stream, before pooling
    Tensor score_w;  // d x 1, the only head mapping embeddings to scores
    Tensor score_b;  // 1

    static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed) {
        if (cfg.vocab_size == 0) throw std::invalid_argument("EncoderParams: vocab_size not set");
        std::mt19937_64 rng(mix_seed(seed, 0xe2c0de));
        EncoderParams p;
        p.cfg = cfg;
        p.tok_emb = gaussian_tensor({cfg.vocab_size, cfg.d}, kInitStd, rng);
        p.pos_emb = gaussian_tensor({cfg.max_len, cfg.d}, kInitStd, rng);
        p.region_proj = gaussian_tensor({kFeatureDim, cfg.d}, kInitStd, rng);
        p.region_bias = Tensor::zeros({cfg.d}, true);
        p.region_pos = gaussian_tensor({cfg.max_regions, cfg.d}, kInitStd, rng);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            p.text_blocks.push_back(TransformerBlock::init(cfg.d, cfg.n_heads, cfg.ff_mult * cfg.d, rng));
            p.region_blocks.push_back(TransformerBlock::init(cfg.d, cfg.n_heads, cfg.ff_mult * cfg.d, rng));
        }
        p.cross_block = TransformerBlock::init(cfg.d, cfg.n_heads, cfg.ff_mult * cfg.d, rng);
        p.ln_r_g = const_tensor({cfg.d}, 1.0);
        p.ln_r_b = Tensor::zeros({cfg.d}, true);
        p.ln_f_g = const_tensor({cfg.d}, 1.0);
        p.ln_f_b = Tensor::zeros({cfg.d}, true);
        p.score_w = gaussian_tensor({cfg.d, 1}, kInitStd, rng);
        p.score_b = Tensor::zeros({1}, true);
        return p;
    }

    ParamMap param_map() {
        ParamMap map;
        map.add("encoder.tok_emb", tok_emb);
        map.add("encoder.pos_emb", pos_emb);
        map.add("encoder.region_proj", region_proj);
        map.add("encoder.region_bias", region_bias);
        map.add("encoder.region_pos", region_pos);
        for (std::size_t l = 0; l < text_blocks.size(); ++l)
            text_blocks[l].register_params(map, "encoder.text." + std::to_string(l));
        for (std::size_t l = 0; l < region_blocks.size(); ++l)
            region_blocks[l].register_params(map, "encoder.region." + std::to_string(l));
        cross_block.register_params(map, "encoder.cross");
        map.add("encoder.ln_r_g", ln_r_g);
        map.add("encoder.ln_r_b", ln_r_b);
        map.add("encoder.ln_f_g", ln_f_g);
        map.add("encoder.ln_f_b", ln_f_b);
        map.add("encoder.score_w", score_w);
        map.add("encoder.score_b", score_b);
        return map;
    }

    // Rebinds all tensors to the entries of a loaded checkpoint.
    static EncoderParams from_param_map(const EncoderConfig& cfg, ParamMap& map) {
        EncoderParams p;
        p.cfg = cfg;
        p.tok_emb = map.at("encoder.tok_emb");
        p.pos_emb = map.at("encoder.pos_emb");
        p.region_proj = map.at("encoder.region_proj");
        p.region_bias = map.at("encoder.region_bias");
        p.region_pos = map.at("encoder.region_pos");
        p.text_blocks.resize(cfg.layers);
        p.region_blocks.resize(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            p.text_blocks[l].n_heads = cfg.n_heads;
            p.text_blocks[l].load_from(map, "encoder.text." + std::to_string(l));
            p.region_blocks[l].n_heads = cfg.n_heads;
            p.region_blocks[l].load_from(map, "encoder.region." + std::to_string(l));
        }
        p.cross_block.n_heads = cfg.n_heads;
        p.cross_block.load_from(map, "encoder.cross");
        p.ln_r_g = map.at("encoder.ln_r_g");
        p.ln_r_b = map.at("encoder.ln_r_b");
        p.ln_f_g = map.at("encoder.ln_f_g");
        p.ln_f_b = map.at("encoder.ln_f_b");
        p.score_w = map.at("encoder.score_w");
        p.score_b = map.at("encoder.score_b");
        return p;
    }
};

struct OptionEmbeddings {
    std::array<Tensor, 4> e;  // 1 x d each
    Tensor logits;            // [4]
    Tensor s;                 // [4] softmax scores
    Tensor e_p;               // 1 x d soft predicted-answer embedding
};

namespace detail_enc {

inline Tensor encode_region_stream(const EncoderParams& p, const std::vector<std::vector<double>>& feats) {
    if (feats.empty()) throw std::invalid_argument("encoder: record has no region features");
    if (feats.size() > p.cfg.max_regions)
        throw std::invalid_argument("encoder: too many regions (" + std::to_string(feats.size()) + ")");
    std::vector<double> flat;
    for (const auto& f : feats) {
        if (f.size() != kFeatureDim)
            throw std::invalid_argument("encoder: region feature dim must be " + std::to_string(kFeatureDim));
        flat.insert(flat.end(), f.begin(), f.end());
    }
    Tensor r = Tensor::leaf({feats.size(), kFeatureDim}, std::move(flat), false);
    Tensor x = ops::add(ops::add(ops::matmul(r, p.region_proj), p.region_bias),
                        ops::slice_rows(p.region_pos, 0, feats.size()));
    for (const auto& blk : p.region_blocks) x = self_block_forward(blk, x);
    return ops::layer_norm(x, p.ln_r_g, p.ln_r_b);
}

inline Tensor encode_text_with_regions(const EncoderParams& p, const std::vector<std::size_t>& ids,
                                       const Tensor& region_enc) {
    if (ids.size() > p.cfg.max_len)
        throw std::invalid_argument("encoder: sequence length " + std::to_string(ids.size()) +
                                    " exceeds max_len " + std::to_string(p.cfg.max_len));
    Tensor x = ops::add(ops::embedding(p.tok_emb, ids), ops::slice_rows(p.pos_emb, 0, ids.size()));
    for (const auto& blk : p.text_blocks) x = self_block_forward(blk, x);
    Tensor fused = ops::layer_norm(block_forward(p.cross_block, x, region_enc), p.ln_f_g, p.ln_f_b);
    return ops::slice_rows(fused, 0, 1);  // first-position pooling
}

}  // namespace detail_enc

// E_i for each option: [BOS] question [SEP] option, fused with the shared
// region encoding. Each embedding depends only on Q, I and its own option.
inline std::array<Tensor, 4> encode_options(const EncoderParams& p, const Vocabulary& vocab,
                                            const std::vector<std::string>& question_tokens,
                                            const std::vector<std::vector<double>>& region_features,
                                            const std::array<std::vector<std::string>, 4>& options) {
    Tensor region_enc = detail_enc::encode_region_stream(p, region_features);
    std::vector<std::size_t> base;
    base.push_back(Vocabulary::kBos);
    for (const auto& t : question_tokens) base.push_back(vocab.id(t));
    base.push_back(Vocabulary::kSep);

    std::array<Tensor, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<std::size_t> ids = base;
        for (const auto& t : options[i]) ids.push_back(vocab.id(t));
        out[i] = detail_enc::encode_text_with_regions(p, ids, region_enc);
    }
    return out;
}

// Joint softmax over the four per-option linear scores.
inline std::pair<Tensor, Tensor> answer_scores(const std::array<Tensor, 4>& embeddings,
                                               const Tensor& score_w, const Tensor& score_b) {
    std::size_t d = score_w.shape()[0];
    std::vector<Tensor> logit_parts;
    for (const auto& e : embeddings) {
        if (e.shape() != Shape{1, d})
            throw std::invalid_argument("answer_scores: embedding shape " + shape_str(e.shape()) +
                                        " incompatible with score head " + shape_str(score_w.shape()));
        logit_parts.push_back(ops::add(ops::matmul(e, score_w), ops::reshape(score_b, {1, 1})));
    }
    Tensor logits = ops::reshape(ops::concat(logit_parts, 1), {4});
    Tensor scores = ops::softmax(logits);
    return {logits, scores};
}

// E_p = sum_i s_i * E_i, differentiable in both scores and embeddings.
inline Tensor soft_answer_embedding(const std::array<Tensor, 4>& embeddings, const Tensor& scores) {
    if (scores.size() != 4) throw std::invalid_argument("soft_answer_embedding: expected 4 scores");
    double sum = 0.0;
    for (double s : scores.data()) sum += s;
    if (std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("soft_answer_embedding: scores sum to " + std::to_string(sum));
    Tensor stacked = ops::concat({embeddings[0], embeddings[1], embeddings[2], embeddings[3]}, 0);
    Tensor e_p = ops::matmul(ops::reshape(scores, {1, 4}), stacked);

    // weighted-sum identity, checked on every forward pass
    std::size_t d = e_p.size();
    for (std::size_t j = 0; j < d; ++j) {
        double expect = 0.0;
        for (std::size_t i = 0; i < 4; ++i) expect += scores.data()[i] * embeddings[i].data()[j];
        if (std::fabs(expect - e_p.data()[j]) > 1e-12)
            throw std::logic_error("soft_answer_embedding: weighted-sum identity violated");
    }
    return e_p;
}

inline std::size_t predict_answer(const std::vector<double>& scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;  // ties keep the lowest index
    return best;
}

inline OptionEmbeddings encoder_forward(const EncoderParams& p, const Vocabulary& vocab,
                                        const VqaRecord& rec) {
    OptionEmbeddings out;
    out.e = encode_options(p, vocab, rec.question_tokens, rec.region_features, rec.options);
    auto [logits, scores] = answer_scores(out.e, p.score_w, p.score_b);
    out.logits = logits;
    out.s = scores;
    out.e_p = soft_answer_embedding(out.e, scores);
    return out;
}

}  // namespace vqarat
