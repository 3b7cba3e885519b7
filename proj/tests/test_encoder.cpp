#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "vqarat/encoder.hpp"
#include "vqarat/gradcheck.hpp"

using namespace vqarat;

namespace {

struct Fixture {
    DatasetSplit split = build_dataset(6, 2, 91);
    EncoderConfig cfg;
    EncoderParams params;

    Fixture() {
        cfg.d = 16;
        cfg.layers = 1;
        cfg.n_heads = 2;
        cfg.vocab_size = split.vocabulary.size();
        params = EncoderParams::init(cfg, 3);
    }
};

}  // namespace

TEST_CASE("encoder: scores are a joint softmax over four options") {
    Fixture fx;
    for (const auto& rec : fx.split.train) {
        OptionEmbeddings out = encoder_forward(fx.params, fx.split.vocabulary, rec);
        REQUIRE(out.s.size() == 4);
        double sum = 0.0;
        for (double s : out.s.data()) {
            CHECK(s > 0.0);
            sum += s;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-12);
        // scores agree with an independent softmax of the logits
        auto probs = ops::softmax(Tensor::leaf({4}, out.logits.data(), false)).data();
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(out.s.data()[i] == Catch::Approx(probs[i]).margin(1e-12));
    }
}

TEST_CASE("encoder: identical options produce identical embeddings and uniform scores") {
    Fixture fx;
    VqaRecord rec = fx.split.train[0];
    for (std::size_t i = 1; i < 4; ++i) rec.options[i] = rec.options[0];
    OptionEmbeddings out = encoder_forward(fx.params, fx.split.vocabulary, rec);
    for (std::size_t i = 1; i < 4; ++i)
        for (std::size_t j = 0; j < out.e[0].size(); ++j)
            CHECK(out.e[i].data()[j] == out.e[0].data()[j]);
    for (double s : out.s.data()) CHECK(s == Catch::Approx(0.25).margin(1e-12));
    // with identical embeddings E_p equals each E_i
    for (std::size_t j = 0; j < out.e_p.size(); ++j)
        CHECK(out.e_p.data()[j] == Catch::Approx(out.e[0].data()[j]).margin(1e-12));
}

TEST_CASE("encoder: option permutation permutes scores") {
    Fixture fx;
    const VqaRecord& rec = fx.split.train[1];
    OptionEmbeddings base = encoder_forward(fx.params, fx.split.vocabulary, rec);

    VqaRecord perm = rec;
    std::array<std::size_t, 4> order{2, 0, 3, 1};
    for (std::size_t i = 0; i < 4; ++i) perm.options[i] = rec.options[order[i]];
    OptionEmbeddings permuted = encoder_forward(fx.params, fx.split.vocabulary, perm);

    for (std::size_t i = 0; i < 4; ++i)
        CHECK(permuted.s.data()[i] == Catch::Approx(base.s.data()[order[i]]).margin(1e-12));
}

TEST_CASE("soft_answer_embedding: basis cases and identity check") {
    std::array<Tensor, 4> e;
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> v(3, 0.0);
        v[0] = double(i + 1);  // e_i = [(i+1), 10(i+1), -2(i+1)] pattern below
        v[1] = 10.0 * (i + 1);
        v[2] = -2.0 * (i + 1);
        e[i] = Tensor::leaf({1, 3}, v, false);
    }
    // one-hot scores select a single embedding
    for (std::size_t pick = 0; pick < 4; ++pick) {
        std::vector<double> s(4, 0.0);
        s[pick] = 1.0;
        Tensor e_p = soft_answer_embedding(e, Tensor::leaf({4}, s, false));
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(e_p.data()[j] == Catch::Approx(e[pick].data()[j]).margin(1e-12));
    }
    // uniform scores give the arithmetic mean
    Tensor e_p = soft_answer_embedding(e, Tensor::leaf({4}, {0.25, 0.25, 0.25, 0.25}, false));
    CHECK(e_p.data()[0] == Catch::Approx(2.5).margin(1e-12));
    CHECK(e_p.data()[1] == Catch::Approx(25.0).margin(1e-12));
    CHECK(e_p.data()[2] == Catch::Approx(-5.0).margin(1e-12));
    // scores that do not sum to 1 are rejected
    CHECK_THROWS_AS(soft_answer_embedding(e, Tensor::leaf({4}, {0.5, 0.5, 0.5, 0.5}, false)),
                    std::invalid_argument);
}

TEST_CASE("one-hot limit: margin-50 logits give E_p equal to the argmax embedding") {
    // Drive the score head towards a single option by adding a large constant
    // to one embedding along score_w; verified through answer_scores itself.
    Fixture fx;
    const VqaRecord& rec = fx.split.train[2];
    OptionEmbeddings out = encoder_forward(fx.params, fx.split.vocabulary, rec);

    // Construct synthetic embeddings whose logits have a >=50 margin.
    std::array<Tensor, 4> e;
    std::size_t d = fx.cfg.d;
    const auto& w = fx.params.score_w.data();
    double wnorm2 = 0.0;
    for (double x : w) wnorm2 += x * x;
    REQUIRE(wnorm2 > 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> v = out.e[i].data();
        if (i == 1) {
            // displace along score_w so the logit rises by exactly 60
            for (std::size_t j = 0; j < d; ++j) v[j] += 60.0 * w[j] / wnorm2;
        }
        e[i] = Tensor::leaf({1, d}, v, false);
    }
    auto [logits, scores] = answer_scores(e, fx.params.score_w, fx.params.score_b);
    double margin = logits.data()[1] - *std::max_element(logits.data().begin(), logits.data().end() - 0);
    (void)margin;
    CHECK(predict_answer(scores.data()) == 1);
    Tensor e_p = soft_answer_embedding(e, scores);
    for (std::size_t j = 0; j < d; ++j)
        CHECK(std::fabs(e_p.data()[j] - e[1].data()[j]) <= 1e-9 * std::max(1.0, std::fabs(e[1].data()[j])));
}

TEST_CASE("predict_answer: argmax with lowest-index ties") {
    CHECK(predict_answer({0.1, 0.5, 0.3, 0.1}) == 1);
    CHECK(predict_answer({0.3, 0.3, 0.3, 0.1}) == 0);
    CHECK(predict_answer({0.25, 0.25, 0.25, 0.25}) == 0);
}

TEST_CASE("encoder: gradient flows to every parameter block") {
    Fixture fx;
    const VqaRecord& rec = fx.split.train[0];
    ParamMap map = fx.params.param_map();
    for (auto& t : map.tensors()) t.zero_grad();

    Tape tape;
    OptionEmbeddings out = encoder_forward(fx.params, fx.split.vocabulary, rec);
    Tensor loss = ops::add(ops::cross_entropy(out.logits, rec.gold_answer),
                           ops::mean(ops::mul(out.e_p, out.e_p)));
    tape.backward(loss);

    for (const auto& name : map.names()) {
        // Key-projection biases and the shared score bias shift every softmax
        // logit in a row equally, so their true gradient is zero; skip them.
        if (name.ends_with(".bk") || name == "encoder.score_b") continue;
        double norm = 0.0;
        for (double g : map.at(name).grad()) norm += g * g;
        INFO("parameter " << name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("encoder: full-path gradcheck through E_p") {
    // Numeric check of a scalar built from E_p with respect to the score head
    // and the region projection — covers both attention streams and Eq-style
    // weighted pooling in one pass.
    Fixture fx;
    // Inflate the 0.02-scale init so deep-path gradients sit well above the
    // finite-difference noise floor; correctness of the chain rule does not
    // depend on the operating point.
    {
        ParamMap map = fx.params.param_map();
        for (auto& t : map.tensors())
            for (double& v : t.data()) v *= 8.0;
    }
    const VqaRecord& rec = fx.split.train[3];
    auto loss_fn = [&](std::vector<Tensor>&) {
        OptionEmbeddings out = encoder_forward(fx.params, fx.split.vocabulary, rec);
        return ops::add(ops::cross_entropy(out.logits, rec.gold_answer),
                        ops::mean(ops::mul(out.e_p, out.e_p)));
    };
    double err = grad_check(loss_fn, {fx.params.score_w, fx.params.region_proj, fx.params.tok_emb});
    CHECK(err <= 1e-4);
}

TEST_CASE("encoder: input validation") {
    Fixture fx;
    VqaRecord rec = fx.split.train[0];
    rec.region_features.clear();
    CHECK_THROWS_AS(encoder_forward(fx.params, fx.split.vocabulary, rec), std::invalid_argument);

    rec = fx.split.train[0];
    rec.region_features.assign(fx.cfg.max_regions + 1, std::vector<double>(kFeatureDim, 0.0));
    CHECK_THROWS_AS(encoder_forward(fx.params, fx.split.vocabulary, rec), std::invalid_argument);

    rec = fx.split.train[0];
    rec.region_features[0].resize(kFeatureDim - 1);
    CHECK_THROWS_AS(encoder_forward(fx.params, fx.split.vocabulary, rec), std::invalid_argument);

    rec = fx.split.train[0];
    rec.question_tokens.assign(fx.cfg.max_len, "because");
    CHECK_THROWS_AS(encoder_forward(fx.params, fx.split.vocabulary, rec), std::invalid_argument);
}

TEST_CASE("encoder: checkpoint round trip preserves forward pass") {
    Fixture fx;
    const VqaRecord& rec = fx.split.train[4];
    OptionEmbeddings before = encoder_forward(fx.params, fx.split.vocabulary, rec);

    ParamMap saved = fx.params.param_map().clone();
    EncoderParams reloaded = EncoderParams::from_param_map(fx.cfg, saved);
    OptionEmbeddings after = encoder_forward(reloaded, fx.split.vocabulary, rec);

    for (std::size_t i = 0; i < 4; ++i)
        CHECK(after.s.data()[i] == before.s.data()[i]);
    for (std::size_t j = 0; j < before.e_p.size(); ++j)
        CHECK(after.e_p.data()[j] == before.e_p.data()[j]);
}
