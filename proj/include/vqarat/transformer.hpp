#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "vqarat/checkpoint.hpp"
#include "vqarat/ops.hpp"
#include "vqarat/rng.hpp"
#include "vqarat/tensor.hpp"

namespace vqarat {

constexpr double kInitStd = 0.02;

// One pre-LN transformer block: multi-head attention (self or cross)
// followed by a GELU feed-forward, residual connections around both.
// Pre-LN keeps gradients well-scaled without a warmup schedule.
struct TransformerBlock {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b;
    Tensor w1, b1, w2, b2;
    Tensor ln2_g, ln2_b;
    std::size_t n_heads = 4;

    static TransformerBlock init(std::size_t d, std::size_t n_heads, std::size_t ff_hidden,
                                 std::mt19937_64& rng) {
        TransformerBlock b;
        b.n_heads = n_heads;
        b.wq = gaussian_tensor({d, d}, kInitStd, rng);
        b.bq = Tensor::zeros({d}, true);
        b.wk = gaussian_tensor({d, d}, kInitStd, rng);
        b.bk = Tensor::zeros({d}, true);
        b.wv = gaussian_tensor({d, d}, kInitStd, rng);
        b.bv = Tensor::zeros({d}, true);
        b.wo = gaussian_tensor({d, d}, kInitStd, rng);
        b.bo = Tensor::zeros({d}, true);
        b.ln1_g = const_tensor({d}, 1.0);
        b.ln1_b = Tensor::zeros({d}, true);
        b.w1 = gaussian_tensor({d, ff_hidden}, kInitStd, rng);
        b.b1 = Tensor::zeros({ff_hidden}, true);
        b.w2 = gaussian_tensor({ff_hidden, d}, kInitStd, rng);
        b.b2 = Tensor::zeros({d}, true);
        b.ln2_g = const_tensor({d}, 1.0);
        b.ln2_b = Tensor::zeros({d}, true);
        return b;
    }

    void register_params(ParamMap& map, const std::string& prefix) {
        map.add(prefix + ".wq", wq);
        map.add(prefix + ".bq", bq);
        map.add(prefix + ".wk", wk);
        map.add(prefix + ".bk", bk);
        map.add(prefix + ".wv", wv);
        map.add(prefix + ".bv", bv);
        map.add(prefix + ".wo", wo);
        map.add(prefix + ".bo", bo);
        map.add(prefix + ".ln1_g", ln1_g);
        map.add(prefix + ".ln1_b", ln1_b);
        map.add(prefix + ".w1", w1);
        map.add(prefix + ".b1", b1);
        map.add(prefix + ".w2", w2);
        map.add(prefix + ".b2", b2);
        map.add(prefix + ".ln2_g", ln2_g);
        map.add(prefix + ".ln2_b", ln2_b);
    }

    void load_from(ParamMap& map, const std::string& prefix) {
        wq = map.at(prefix + ".wq");
        bq = map.at(prefix + ".bq");
        wk = map.at(prefix + ".wk");
        bk = map.at(prefix + ".bk");
        wv = map.at(prefix + ".wv");
        bv = map.at(prefix + ".bv");
        wo = map.at(prefix + ".wo");
        bo = map.at(prefix + ".bo");
        ln1_g = map.at(prefix + ".ln1_g");
        ln1_b = map.at(prefix + ".ln1_b");
        w1 = map.at(prefix + ".w1");
        b1 = map.at(prefix + ".b1");
        w2 = map.at(prefix + ".w2");
        b2 = map.at(prefix + ".b2");
        ln2_g = map.at(prefix + ".ln2_g");
        ln2_b = map.at(prefix + ".ln2_b");
    }
};

// Additive attention mask: 0 where allowed, large negative where blocked.
inline Tensor causal_mask(std::size_t m) {
    std::vector<double> mask(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) mask[i * m + j] = -1e9;
    return Tensor::leaf({m, m}, std::move(mask), false);
}

inline Tensor multi_head_attention(const TransformerBlock& blk, const Tensor& x, const Tensor& kv,
                                   const Tensor* mask = nullptr) {
    std::size_t d = x.shape()[1];
    std::size_t hd = d / blk.n_heads;
    Tensor q = ops::add(ops::matmul(x, blk.wq), blk.bq);
    Tensor k = ops::add(ops::matmul(kv, blk.wk), blk.bk);
    Tensor v = ops::add(ops::matmul(kv, blk.wv), blk.bv);
    std::vector<Tensor> heads;
    double inv_sqrt_hd = 1.0 / std::sqrt(double(hd));
    for (std::size_t h = 0; h < blk.n_heads; ++h) {
        Tensor qh = ops::slice_cols(q, h * hd, hd);
        Tensor kh = ops::slice_cols(k, h * hd, hd);
        Tensor vh = ops::slice_cols(v, h * hd, hd);
        Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_hd);
        if (mask) scores = ops::add(scores, *mask);
        heads.push_back(ops::matmul(ops::softmax(scores), vh));
    }
    Tensor merged = ops::concat(heads, 1);
    return ops::add(ops::matmul(merged, blk.wo), blk.bo);
}

inline Tensor block_forward(const TransformerBlock& blk, const Tensor& x, const Tensor& kv,
                            const Tensor* mask = nullptr) {
    Tensor a = multi_head_attention(blk, ops::layer_norm(x, blk.ln1_g, blk.ln1_b), kv, mask);
    Tensor x1 = ops::add(x, a);
    Tensor h = ops::layer_norm(x1, blk.ln2_g, blk.ln2_b);
    Tensor f = ops::add(ops::matmul(ops::gelu(ops::add(ops::matmul(h, blk.w1), blk.b1)), blk.w2), blk.b2);
    return ops::add(x1, f);
}

inline Tensor self_block_forward(const TransformerBlock& blk, const Tensor& x,
                                 const Tensor* mask = nullptr) {
    return block_forward(blk, x, x, mask);
}

}  // namespace vqarat
