#pragma once

#include <algorithm>
#include <cctype>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "vqarat/checkpoint.hpp"
#include "vqarat/transformer.hpp"
#include "vqarat/vocab.hpp"

namespace vqarat {

// Causal transformer LM over rationale tokens, conditioned on the soft
// predicted-answer embedding injected as a single position-0 prefix
// vector. Rationale tokens start at position 1 with BOS. Output
// projection is tied to the token embedding table.

struct LmConfig {
    std::size_t d_lm = 64;
    std::size_t layers = 2;
    std::size_t n_heads = 4;
    std::size_t ff_mult = 2;
    std::size_t max_len = 24;
    std::size_t d_in = 64;  // encoder embedding width
    std::size_t vocab_size = 0;
};

struct LmParams {
    LmConfig cfg;
    Tensor tok_emb;   // vocab x d_lm, also the output projection
    Tensor pos_emb;   // max_len x d_lm
    Tensor prefix_w;  // d_in x d_lm
    Tensor prefix_b;  // d_lm
    std::vector<TransformerBlock> blocks;
    Tensor ln_f_g, ln_f_b;

    static LmParams init(const LmConfig& cfg, std::uint64_t seed) {
        if (cfg.vocab_size == 0) throw std::invalid_argument("LmParams: vocab_size not set");
        std::mt19937_64 rng(mix_seed(seed, 0x1a69));
        LmParams p;
        p.cfg = cfg;
        p.tok_emb = gaussian_tensor({cfg.vocab_size, cfg.d_lm}, kInitStd, rng);
        p.pos_emb = gaussian_tensor({cfg.max_len, cfg.d_lm}, kInitStd, rng);
        p.prefix_w = gaussian_tensor({cfg.d_in, cfg.d_lm}, kInitStd, rng);
        p.prefix_b = Tensor::zeros({cfg.d_lm}, true);
        for (std::size_t l = 0; l < cfg.layers; ++l)
            p.blocks.push_back(TransformerBlock::init(cfg.d_lm, cfg.n_heads, cfg.ff_mult * cfg.d_lm, rng));
        p.ln_f_g = const_tensor({cfg.d_lm}, 1.0);
        p.ln_f_b = Tensor::zeros({cfg.d_lm}, true);
        return p;
    }

    ParamMap param_map() {
        ParamMap map;
        map.add("lm.tok_emb", tok_emb);
        map.add("lm.pos_emb", pos_emb);
        map.add("lm.prefix_w", prefix_w);
        map.add("lm.prefix_b", prefix_b);
        for (std::size_t l = 0; l < blocks.size(); ++l)
            blocks[l].register_params(map, "lm.block." + std::to_string(l));
        map.add("lm.ln_f_g", ln_f_g);
        map.add("lm.ln_f_b", ln_f_b);
        return map;
    }

    static LmParams from_param_map(const LmConfig& cfg, ParamMap& map) {
        LmParams p;
        p.cfg = cfg;
        p.tok_emb = map.at("lm.tok_emb");
        p.pos_emb = map.at("lm.pos_emb");
        p.prefix_w = map.at("lm.prefix_w");
        p.prefix_b = map.at("lm.prefix_b");
        p.blocks.resize(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            p.blocks[l].n_heads = cfg.n_heads;
            p.blocks[l].load_from(map, "lm.block." + std::to_string(l));
        }
        p.ln_f_g = map.at("lm.ln_f_g");
        p.ln_f_b = map.at("lm.ln_f_b");
        return p;
    }
};

struct RationaleSequence {
    std::vector<std::size_t> tokens;
    bool terminated = false;
};

struct GenerationStrategy {
    enum class Kind { Greedy, Sample } kind = Kind::Greedy;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    static GenerationStrategy greedy() { return {}; }
    static GenerationStrategy sample(double temperature, std::uint64_t seed) {
        return {Kind::Sample, temperature, seed};
    }
};

namespace detail_lm {

// Vocabulary logits for every position of [prefix, BOS-led context].
inline Tensor lm_logits(const LmParams& p, const Tensor& e_p, const std::vector<std::size_t>& context_ids) {
    std::size_t m = context_ids.size() + 1;
    if (m > p.cfg.max_len)
        throw std::invalid_argument("rationale_lm: sequence of " + std::to_string(m) +
                                    " positions exceeds max_len " + std::to_string(p.cfg.max_len));
    if (e_p.shape() != Shape{1, p.cfg.d_in})
        throw std::invalid_argument("rationale_lm: e_p shape " + shape_str(e_p.shape()) + ", expected [1," +
                                    std::to_string(p.cfg.d_in) + "]");
    Tensor prefix = ops::add(ops::matmul(e_p, p.prefix_w), p.prefix_b);
    Tensor toks = ops::embedding(p.tok_emb, context_ids);
    Tensor x = ops::add(ops::concat({prefix, toks}, 0), ops::slice_rows(p.pos_emb, 0, m));
    Tensor mask = causal_mask(m);
    for (const auto& blk : p.blocks) x = self_block_forward(blk, x, &mask);
    Tensor h = ops::layer_norm(x, p.ln_f_g, p.ln_f_b);
    return ops::matmul(h, ops::transpose(p.tok_emb));
}

}  // namespace detail_lm

// Teacher-forced mean-per-token NLL of a token sequence given e_p.
// The sequence is scored exactly as given; callers wanting a trained
// end-of-sequence append EOS themselves.
inline Tensor rationale_nll(const LmParams& p, const Tensor& e_p, const std::vector<std::size_t>& tokens) {
    if (tokens.empty()) throw std::invalid_argument("rationale_nll: empty rationale");
    for (std::size_t t : tokens)
        if (t >= p.cfg.vocab_size)
            throw std::invalid_argument("rationale_nll: token id " + std::to_string(t) + " out of vocabulary");
    std::vector<std::size_t> context;
    context.push_back(Vocabulary::kBos);
    context.insert(context.end(), tokens.begin(), tokens.end() - 1);
    Tensor logits = detail_lm::lm_logits(p, e_p, context);
    // row 1 (BOS position) predicts tokens[0], row 1+i predicts tokens[i]
    Tensor pred_rows = ops::slice_rows(logits, 1, tokens.size());
    return ops::mean(ops::cross_entropy_rows(pred_rows, tokens));
}

inline RationaleSequence generate(const LmParams& p, const Tensor& e_p, std::size_t max_new_tokens,
                                  const GenerationStrategy& strategy) {
    if (max_new_tokens < 1) throw std::invalid_argument("generate: max_len must be >= 1");
    std::mt19937_64 rng(mix_seed(strategy.seed, 0x9e4));
    RationaleSequence out;
    std::vector<std::size_t> context{Vocabulary::kBos};
    for (std::size_t step = 0; step < max_new_tokens; ++step) {
        if (context.size() + 1 > p.cfg.max_len) break;
        Tensor logits = detail_lm::lm_logits(p, e_p, context);
        std::size_t m = logits.shape()[0], v = logits.shape()[1];
        const double* row = logits.data().data() + (m - 1) * v;
        std::size_t next;
        if (strategy.kind == GenerationStrategy::Kind::Greedy) {
            next = 0;
            for (std::size_t j = 1; j < v; ++j)
                if (row[j] > row[next]) next = j;
        } else {
            double temp = std::max(strategy.temperature, 1e-6);
            std::vector<double> probs(v);
            double mx = *std::max_element(row, row + v);
            double z = 0.0;
            for (std::size_t j = 0; j < v; ++j) z += (probs[j] = std::exp((row[j] - mx) / temp));
            std::uniform_real_distribution<double> dist(0.0, 1.0);
            double u = dist(rng) * z, acc = 0.0;
            next = v - 1;
            for (std::size_t j = 0; j < v; ++j) {
                acc += probs[j];
                if (u <= acc) { next = j; break; }
            }
        }
        if (next == Vocabulary::kEos) {
            out.terminated = true;
            return out;
        }
        out.tokens.push_back(next);
        context.push_back(next);
    }
    return out;
}

// --- entity-tag anonymization ---------------------------------------------

struct TagCapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline bool is_entity_tag(const std::string& token) {
    for (const char* prefix : {"[person", "[object"}) {
        std::size_t n = std::string(prefix).size();
        if (token.size() > n + 1 && token.compare(0, n, prefix) == 0 && token.back() == ']') {
            bool digits = true;
            for (std::size_t i = n; i + 1 < token.size(); ++i)
                if (!std::isdigit(static_cast<unsigned char>(token[i]))) digits = false;
            if (digits) return true;
        }
    }
    return false;
}

// Replaces entity tags by names drawn without replacement; the same tag
// maps to the same name within one call.
inline std::vector<std::string> anonymize_tags(const std::vector<std::string>& tokens,
                                               const std::vector<std::string>& name_pool,
                                               std::uint64_t seed) {
    if (name_pool.empty()) throw std::invalid_argument("anonymize_tags: empty name pool");
    std::vector<std::string> distinct;
    for (const auto& t : tokens)
        if (is_entity_tag(t) && std::find(distinct.begin(), distinct.end(), t) == distinct.end())
            distinct.push_back(t);
    if (distinct.size() > name_pool.size())
        throw TagCapacityError("anonymize_tags: " + std::to_string(distinct.size()) + " tags but only " +
                               std::to_string(name_pool.size()) + " names");
    std::vector<std::string> pool = name_pool;
    std::shuffle(pool.begin(), pool.end(), std::mt19937_64(mix_seed(seed, 0xa17)));
    std::unordered_map<std::string, std::string> mapping;
    for (std::size_t i = 0; i < distinct.size(); ++i) mapping.emplace(distinct[i], pool[i]);
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto it = mapping.find(t);
        out.push_back(it == mapping.end() ? t : it->second);
    }
    return out;
}

}  // namespace vqarat
