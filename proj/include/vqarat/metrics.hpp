#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqarat/encoder.hpp"
#include "vqarat/rationale_lm.hpp"
#include "vqarat/synthdata.hpp"
#include "vqarat/vocab.hpp"

namespace vqarat {

using TokenList = std::vector<std::string>;

struct MetricsReport {
    double bleu1 = 0.0, bleu4 = 0.0;    // 0-100
    double rouge1 = 0.0, rougeL = 0.0;  // 0-100
    double cosine = 0.0;                // [-1,1]
    double vqa_accuracy = 0.0;          // percent
    std::size_t n_samples = 0;

    nlohmann::json to_json() const {
        return {{"bleu1", bleu1},   {"bleu4", bleu4},   {"rouge1", rouge1},
                {"rougeL", rougeL}, {"cosine", cosine}, {"vqa_accuracy", vqa_accuracy},
                {"n_samples", n_samples}};
    }
    static MetricsReport from_json(const nlohmann::json& j) {
        MetricsReport r;
        r.bleu1 = j.at("bleu1");
        r.bleu4 = j.at("bleu4");
        r.rouge1 = j.at("rouge1");
        r.rougeL = j.at("rougeL");
        r.cosine = j.at("cosine");
        r.vqa_accuracy = j.at("vqa_accuracy");
        r.n_samples = j.at("n_samples");
        return r;
    }
};

namespace detail_metrics {

inline std::map<TokenList, std::size_t> ngram_counts(const TokenList& tokens, std::size_t n) {
    std::map<TokenList, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++counts[TokenList(tokens.begin() + i, tokens.begin() + i + n)];
    return counts;
}

}  // namespace detail_metrics

// Corpus-level BLEU on a 0-100 scale: geometric mean of modified n-gram
// precisions for n = 1..max_n, times the brevity penalty, no smoothing.
inline double bleu(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references,
                   std::size_t max_n) {
    if (candidates.empty()) throw std::invalid_argument("bleu: empty corpus");
    if (candidates.size() != references.size())
        throw std::invalid_argument("bleu: candidate/reference count mismatch");
    std::vector<std::size_t> matched(max_n, 0), total(max_n, 0);
    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        cand_len += candidates[i].size();
        ref_len += references[i].size();
        for (std::size_t n = 1; n <= max_n; ++n) {
            auto cc = detail_metrics::ngram_counts(candidates[i], n);
            auto rc = detail_metrics::ngram_counts(references[i], n);
            for (const auto& [gram, count] : cc) {
                total[n - 1] += count;
                auto it = rc.find(gram);
                if (it != rc.end()) matched[n - 1] += std::min(count, it->second);
            }
        }
    }
    double log_sum = 0.0;
    for (std::size_t n = 0; n < max_n; ++n) {
        if (total[n] == 0 || matched[n] == 0) return 0.0;
        log_sum += std::log(double(matched[n]) / double(total[n]));
    }
    double geo = std::exp(log_sum / double(max_n));
    double bp = cand_len == 0 ? 0.0 : std::exp(std::min(0.0, 1.0 - double(ref_len) / double(cand_len)));
    return 100.0 * bp * geo;
}

// Per-pair n-gram F1 (clipped multiset overlap). A side shorter than n
// scores 0 for that pair.
inline double rouge_n_pair(const TokenList& candidate, const TokenList& reference, std::size_t n) {
    if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
    if (candidate.size() < n || reference.size() < n) return 0.0;
    auto cc = detail_metrics::ngram_counts(candidate, n);
    auto rc = detail_metrics::ngram_counts(reference, n);
    std::size_t overlap = 0, cand_total = 0, ref_total = 0;
    for (const auto& [g, c] : cc) cand_total += c;
    for (const auto& [g, c] : rc) ref_total += c;
    for (const auto& [g, c] : cc) {
        auto it = rc.find(g);
        if (it != rc.end()) overlap += std::min(c, it->second);
    }
    if (overlap == 0) return 0.0;
    double p = double(overlap) / double(cand_total);
    double r = double(overlap) / double(ref_total);
    return 100.0 * 2.0 * p * r / (p + r);
}

inline double rouge_n(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references,
                      std::size_t n) {
    if (candidates.empty()) throw std::invalid_argument("rouge_n: empty corpus");
    if (candidates.size() != references.size())
        throw std::invalid_argument("rouge_n: candidate/reference count mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        sum += rouge_n_pair(candidates[i], references[i], n);
    return sum / double(candidates.size());
}

inline std::size_t lcs_length(const TokenList& a, const TokenList& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double rouge_l_pair(const TokenList& candidate, const TokenList& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    std::size_t lcs = lcs_length(candidate, reference);
    if (lcs == 0) return 0.0;
    double p = double(lcs) / double(candidate.size());
    double r = double(lcs) / double(reference.size());
    return 100.0 * 2.0 * p * r / (p + r);
}

inline double rouge_l(const std::vector<TokenList>& candidates, const std::vector<TokenList>& references) {
    if (candidates.empty()) throw std::invalid_argument("rouge_l: empty corpus");
    if (candidates.size() != references.size())
        throw std::invalid_argument("rouge_l: candidate/reference count mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        sum += rouge_l_pair(candidates[i], references[i]);
    return sum / double(candidates.size());
}

// --- sentence-embedding cosine similarity ---------------------------------

// Token -> embedding table with a fixed UNK vector for unknown tokens.
struct SentenceEmbeddingTable {
    std::unordered_map<std::string, std::vector<double>> vectors;
    std::vector<double> unk;

    static SentenceEmbeddingTable from_lm(const Tensor& tok_emb, const Vocabulary& vocab) {
        SentenceEmbeddingTable t;
        std::size_t d = tok_emb.shape()[1];
        for (std::size_t i = 0; i < vocab.size(); ++i)
            t.vectors.emplace(vocab.token(i),
                              std::vector<double>(tok_emb.data().begin() + i * d,
                                                  tok_emb.data().begin() + (i + 1) * d));
        t.unk.assign(d, 0.0);
        return t;
    }
};

inline bool is_special_token(const std::string& t) {
    return t == "<pad>" || t == "<bos>" || t == "<eos>" || t == "<sep>";
}

inline std::vector<double> sentence_vector(const TokenList& tokens, const SentenceEmbeddingTable& table) {
    std::size_t d = table.unk.size();
    std::vector<double> v(d, 0.0);
    std::size_t n = 0;
    for (const auto& t : tokens) {
        if (is_special_token(t)) continue;
        auto it = table.vectors.find(t);
        const auto& e = it == table.vectors.end() ? table.unk : it->second;
        for (std::size_t j = 0; j < d; ++j) v[j] += e[j];
        ++n;
    }
    if (n > 0)
        for (double& x : v) x /= double(n);
    return v;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;  // zero vectors score 0 against anything
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double sentence_cosine(const std::vector<TokenList>& candidates,
                              const std::vector<TokenList>& references,
                              const SentenceEmbeddingTable& table) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("sentence_cosine: candidate/reference count mismatch");
    if (candidates.empty()) throw std::invalid_argument("sentence_cosine: empty corpus");
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        sum += cosine(sentence_vector(candidates[i], table), sentence_vector(references[i], table));
    return sum / double(candidates.size());
}

inline double vqa_accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& gold) {
    if (predictions.size() != gold.size())
        throw std::invalid_argument("vqa_accuracy: length mismatch");
    if (predictions.empty()) throw std::invalid_argument("vqa_accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == gold[i]) ++hits;
    return 100.0 * double(hits) / double(predictions.size());
}

// --- human-judgment aggregation -------------------------------------------

struct JudgeSheet {
    // (item_id, judge_id) -> preference, "a" or "b"
    struct Vote {
        std::string item_id, judge_id, preference;
    };
    std::vector<Vote> votes;
};

struct JudgeAggregate {
    std::vector<std::string> judge_ids;
    std::vector<double> pct_b_per_judge;  // percent of items preferring model b, per judge
    double majority_pct_b = 0.0;
    double tie_pct = 0.0;  // only populated for even judge counts
    std::size_t n_items = 0;
};

struct JudgeSheetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline JudgeAggregate judge_aggregate(const JudgeSheet& sheet) {
    std::set<std::string> items, judges;
    std::map<std::pair<std::string, std::string>, std::string> votes;
    for (const auto& v : sheet.votes) {
        if (v.preference != "a" && v.preference != "b")
            throw JudgeSheetError("judge_aggregate: preference must be 'a' or 'b', got '" + v.preference + "'");
        auto key = std::make_pair(v.item_id, v.judge_id);
        if (votes.count(key))
            throw JudgeSheetError("judge_aggregate: duplicate vote for (" + v.item_id + ", " + v.judge_id + ")");
        votes.emplace(key, v.preference);
        items.insert(v.item_id);
        judges.insert(v.judge_id);
    }
    if (judges.empty()) throw JudgeSheetError("judge_aggregate: no judges");
    std::string missing;
    for (const auto& it : items)
        for (const auto& j : judges)
            if (!votes.count({it, j})) missing += " (" + it + ", " + j + ")";
    if (!missing.empty()) throw JudgeSheetError("judge_aggregate: incomplete sheet, missing:" + missing);

    JudgeAggregate agg;
    agg.n_items = items.size();
    agg.judge_ids.assign(judges.begin(), judges.end());
    for (const auto& j : agg.judge_ids) {
        std::size_t b = 0;
        for (const auto& it : items)
            if (votes.at({it, j}) == "b") ++b;
        agg.pct_b_per_judge.push_back(100.0 * double(b) / double(items.size()));
    }
    std::size_t majority_b = 0, ties = 0;
    for (const auto& it : items) {
        std::size_t b = 0;
        for (const auto& j : agg.judge_ids)
            if (votes.at({it, j}) == "b") ++b;
        if (2 * b > agg.judge_ids.size())
            ++majority_b;
        else if (2 * b == agg.judge_ids.size())
            ++ties;
    }
    agg.majority_pct_b = 100.0 * double(majority_b) / double(items.size());
    agg.tie_pct = 100.0 * double(ties) / double(items.size());
    return agg;
}

// CSV with header item_id,judge_id,preference
inline JudgeSheet load_judge_sheet_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_judge_sheet_csv: cannot open " + path);
    JudgeSheet sheet;
    std::string line;
    bool header = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            if (line != "item_id,judge_id,preference")
                throw JudgeSheetError("judge sheet: bad header '" + line + "'");
            header = false;
            continue;
        }
        std::istringstream row(line);
        std::string item, judge, pref;
        if (!std::getline(row, item, ',') || !std::getline(row, judge, ',') || !std::getline(row, pref))
            throw JudgeSheetError("judge sheet line " + std::to_string(line_no) + ": expected 3 fields");
        sheet.votes.push_back({item, judge, pref});
    }
    return sheet;
}

// --- end-to-end evaluation ------------------------------------------------

struct EvalDumpRow {
    std::string record_id;
    std::string question;
    std::string gold_answer;
    std::string predicted_answer;
    std::string gold_rationale;
    std::string generated_rationale;
};

struct EvalResult {
    MetricsReport report;
    std::vector<EvalDumpRow> dump;
};

// Greedy generation for every record, all metrics against the gold
// rationales, accuracy from argmax answer prediction.
inline EvalResult evaluate_model(const EncoderParams& enc, const LmParams& lm, const Vocabulary& vocab,
                                 const std::vector<VqaRecord>& records) {
    if (records.empty()) throw std::invalid_argument("evaluate_model: empty evaluation set");
    std::vector<TokenList> generated, gold;
    std::vector<std::size_t> preds, golds;
    EvalResult result;
    for (const auto& rec : records) {
        try {
            OptionEmbeddings emb = encoder_forward(enc, vocab, rec);
            RationaleSequence seq = generate(lm, emb.e_p, lm.cfg.max_len, GenerationStrategy::greedy());
            TokenList gen_tokens = vocab.decode(seq.tokens);
            std::size_t pred = predict_answer(emb.s.data());
            generated.push_back(gen_tokens);
            gold.push_back(rec.gold_rationale_tokens);
            preds.push_back(pred);
            golds.push_back(rec.gold_answer);
            result.dump.push_back({rec.record_id, join_tokens(rec.question_tokens),
                                   join_tokens(rec.options[rec.gold_answer]), join_tokens(rec.options[pred]),
                                   join_tokens(rec.gold_rationale_tokens), join_tokens(gen_tokens)});
        } catch (const std::exception& e) {
            throw std::runtime_error("evaluate_model: record " + rec.record_id + ": " + e.what());
        }
    }
    MetricsReport& r = result.report;
    r.bleu1 = bleu(generated, gold, 1);
    r.bleu4 = bleu(generated, gold, 4);
    r.rouge1 = rouge_n(generated, gold, 1);
    r.rougeL = rouge_l(generated, gold);
    r.cosine = sentence_cosine(generated, gold, SentenceEmbeddingTable::from_lm(lm.tok_emb, vocab));
    r.vqa_accuracy = vqa_accuracy(preds, golds);
    r.n_samples = records.size();
    return result;
}

}  // namespace vqarat
