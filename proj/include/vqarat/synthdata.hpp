#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqarat/rng.hpp"
#include "vqarat/vocab.hpp"

namespace vqarat {

// ---------------------------------------------------------------------------
// Scene model: 2-3 attributed objects on a 4x4 grid.
// ---------------------------------------------------------------------------

// Attribute pools are deliberately larger than the 2-3 objects of any one
// scene, so every scene leaves at least three values of each attribute
// unused; distractor options draw from those unused values.
inline const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> v{"circle", "square", "triangle", "star", "diamond", "hexagon"};
    return v;
}
inline const std::vector<std::string>& color_names() {
    static const std::vector<std::string> v{"red", "green", "blue", "yellow", "purple", "orange"};
    return v;
}
inline const std::vector<std::string>& action_names() {
    static const std::vector<std::string> v{"standing", "running", "sitting", "holding", "jumping", "waving"};
    return v;
}

struct SceneObject {
    std::string entity_id;  // "[person1]", "[object2]", ...
    int shape = 0;          // index into shape_names()
    int color = 0;
    int row = 0;            // 0..3
    int col = 0;
    int action = 0;
    bool is_person = false;
    int ordinal = 1;  // the K in [personK] / [objectK]
};

struct Scene {
    std::vector<SceneObject> objects;
    std::uint64_t seed = 0;
};

constexpr int kGridSize = 4;
// 6 shape + 6 color + 6 action one-hots, row,col, person flag, and 5
// entity-ordinal slots. The identity block lets the model resolve question
// tags like "[person2]" to the region that carries them.
constexpr std::size_t kFeatureDim = 26;

inline std::vector<double> object_features(const SceneObject& o) {
    std::vector<double> f(kFeatureDim, 0.0);
    f[o.shape] = 1.0;
    f[6 + o.color] = 1.0;
    f[12 + o.action] = 1.0;
    f[18] = o.row / double(kGridSize - 1);
    f[19] = o.col / double(kGridSize - 1);
    f[20] = o.is_person ? 1.0 : 0.0;
    if (o.ordinal >= 1 && o.ordinal <= 5) f[20 + o.ordinal] = 1.0;
    return f;
}

inline Scene generate_scene(std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x5ce2e));
    Scene scene;
    scene.seed = seed;
    std::size_t n = 2 + rng() % 2;  // 2..3 objects

    std::vector<int> cells(kGridSize * kGridSize);
    for (int i = 0; i < kGridSize * kGridSize; ++i) cells[i] = i;
    std::shuffle(cells.begin(), cells.end(), rng);

    int persons = 0, things = 0;
    for (std::size_t i = 0; i < n; ++i) {
        SceneObject o;
        o.is_person = rng() % 2 == 0;
        if (o.is_person) {
            o.ordinal = ++persons;
            o.entity_id = "[person" + std::to_string(o.ordinal) + "]";
        } else {
            o.ordinal = ++things;
            o.entity_id = "[object" + std::to_string(o.ordinal) + "]";
        }
        o.shape = int(rng() % shape_names().size());
        o.color = int(rng() % color_names().size());
        o.action = int(rng() % action_names().size());
        o.row = cells[i] / kGridSize;
        o.col = cells[i] % kGridSize;
        scene.objects.push_back(o);
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct VqaRecord {
    std::string record_id;
    std::vector<std::vector<double>> region_features;
    std::vector<std::string> question_tokens;
    std::array<std::vector<std::string>, 4> options;
    std::size_t gold_answer = 0;
    std::vector<std::string> gold_rationale_tokens;
    bool synthetic_features = false;  // in-memory only, set by VCR ingestion
};

struct TemplateInapplicableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr int kNumTemplates = 4;

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// Finds a shape index held by exactly one object, if any (seeded choice
// among candidates).
inline std::optional<int> unique_shape(const Scene& scene, std::mt19937_64& rng) {
    std::vector<int> candidates;
    for (std::size_t s = 0; s < shape_names().size(); ++s) {
        int count = 0;
        for (const auto& o : scene.objects)
            if (o.shape == int(s)) ++count;
        if (count == 1) candidates.push_back(int(s));
    }
    if (candidates.empty()) return std::nullopt;
    return candidates[rng() % candidates.size()];
}

inline std::optional<int> lone_row(const Scene& scene, std::mt19937_64& rng) {
    std::vector<int> candidates;
    for (int r = 0; r < kGridSize; ++r) {
        int count = 0;
        for (const auto& o : scene.objects)
            if (o.row == r) ++count;
        if (count == 1) candidates.push_back(r);
    }
    if (candidates.empty()) return std::nullopt;
    return candidates[rng() % candidates.size()];
}

// Attribute values of `pool` that no object in the scene carries, in a
// seeded shuffle. With pools of 6-8 values and at most 5 objects there are
// always at least 3 absent colors/actions and 1 absent shape.
inline std::vector<std::string> absent_values(const Scene& scene,
                                              const std::vector<std::string>& pool,
                                              int SceneObject::* attr, std::mt19937_64& rng) {
    std::vector<bool> present(pool.size(), false);
    for (const auto& o : scene.objects) present[std::size_t(o.*attr)] = true;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!present[i]) out.push_back(pool[i]);
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

}  // namespace detail

// Instantiates one question template against a scene. Throws
// TemplateInapplicableError when the scene lacks what the template needs;
// the caller retries with another template.
inline VqaRecord make_record(const Scene& scene, int template_id, std::uint64_t seed) {
    if (template_id < 0 || template_id >= kNumTemplates)
        throw std::invalid_argument("make_record: unknown template " + std::to_string(template_id));
    std::mt19937_64 rng(mix_seed(seed, 0x7e3 + std::uint64_t(template_id)));

    VqaRecord rec;
    for (const auto& o : scene.objects) rec.region_features.push_back(object_features(o));

    std::vector<std::string> correct, rationale;
    std::vector<std::vector<std::string>> distractors;
    using detail::split_words;

    switch (template_id) {
        // Options are single attribute words: the gold value is carried by a
        // scene object, every distractor value appears nowhere in the scene,
        // so each option is verifiable against the region features alone.
        case 0: {  // color of a unique shape
            auto s = detail::unique_shape(scene, rng);
            if (!s) throw TemplateInapplicableError("no shape with exactly one instance");
            const SceneObject* obj = nullptr;
            for (const auto& o : scene.objects)
                if (o.shape == *s) obj = &o;
            const std::string& shape = shape_names()[*s];
            rec.question_tokens = split_words("what color is the " + shape + " ?");
            correct = {color_names()[obj->color]};
            rationale = split_words("because the " + shape + " at row " + std::to_string(obj->row) +
                                    " col " + std::to_string(obj->col) + " is " + color_names()[obj->color]);
            auto absent = detail::absent_values(scene, color_names(), &SceneObject::color, rng);
            for (int k = 0; k < 3; ++k) distractors.push_back({absent[k]});
            break;
        }
        case 1: {  // action of a tagged entity
            const SceneObject& obj = scene.objects[rng() % scene.objects.size()];
            rec.question_tokens = split_words("what is " + obj.entity_id + " doing ?");
            correct = {action_names()[obj.action]};
            rationale = split_words("because " + obj.entity_id + " is shown " + action_names()[obj.action]);
            auto absent = detail::absent_values(scene, action_names(), &SceneObject::action, rng);
            for (int k = 0; k < 3; ++k) distractors.push_back({absent[k]});
            break;
        }
        case 2: {  // shape of the object alone in its row
            auto r = detail::lone_row(scene, rng);
            if (!r) throw TemplateInapplicableError("no row with exactly one object");
            const SceneObject* obj = nullptr;
            for (const auto& o : scene.objects)
                if (o.row == *r) obj = &o;
            rec.question_tokens = split_words("what is at row " + std::to_string(*r) + " ?");
            correct = {shape_names()[obj->shape]};
            rationale = split_words("because the " + color_names()[obj->color] + " " +
                                    shape_names()[obj->shape] + " is at row " + std::to_string(obj->row) +
                                    " col " + std::to_string(obj->col));
            auto absent = detail::absent_values(scene, shape_names(), &SceneObject::shape, rng);
            for (int k = 0; k < 3; ++k) distractors.push_back({absent[k]});
            break;
        }
        case 3: {  // how many objects are <color>; query colors with count 0 or 1
            std::vector<int> zero_colors, one_colors;
            for (int c = 0; c < int(color_names().size()); ++c) {
                int count = 0;
                for (const auto& o : scene.objects)
                    if (o.color == c) ++count;
                if (count == 0) zero_colors.push_back(c);
                if (count == 1) one_colors.push_back(c);
            }
            // colors held by 2+ objects are never asked about, which keeps the
            // answer a presence test rather than genuine cardinality
            bool ask_present = !one_colors.empty() && rng() % 2 == 0;
            const auto& pool = ask_present ? one_colors : zero_colors;
            if (pool.empty()) throw TemplateInapplicableError("no color with count 0 or 1");
            int c = pool[rng() % pool.size()];
            const std::string& cname = color_names()[c];
            rec.question_tokens = split_words("how many objects are " + cname + " ?");
            correct = {ask_present ? "1" : "0"};
            if (ask_present) {
                const SceneObject* hit = nullptr;
                for (const auto& o : scene.objects)
                    if (o.color == c) hit = &o;
                rationale = split_words("because " + cname + " appears at row " + std::to_string(hit->row) +
                                        " col " + std::to_string(hit->col));
            } else {
                rationale = split_words("because no object is " + cname);
            }
            for (const char* d : {"0", "1", "2", "3"})
                if (correct[0] != d) distractors.push_back({d});
            break;
        }
    }

    // place the correct option at a seeded position
    std::size_t pos = rng() % 4;
    std::size_t di = 0;
    for (std::size_t i = 0; i < 4; ++i)
        rec.options[i] = (i == pos) ? correct : distractors[di++];
    rec.gold_answer = pos;
    rec.gold_rationale_tokens = rationale;
    rec.record_id = "s" + std::to_string(scene.seed) + "-t" + std::to_string(template_id);
    return rec;
}

// ---------------------------------------------------------------------------
// Entailment audit: re-derives the correct answer from the scene and the
// attributes the rationale cites, independently of the generator's choice.
// ---------------------------------------------------------------------------

inline bool audit_record(const Scene& scene, const VqaRecord& rec) {
    const auto& r = rec.gold_rationale_tokens;
    if (r.empty() || r[0] != "because") return false;
    const auto& gold = rec.options[rec.gold_answer];

    auto scene_object_at = [&](int row, int col) -> const SceneObject* {
        for (const auto& o : scene.objects)
            if (o.row == row && o.col == col) return &o;
        return nullptr;
    };

    // attribute: because the <shape> at row R col C is <color>  (gold: <color>)
    if (r.size() == 10 && r[1] == "the" && r[3] == "at" && r[4] == "row" && r[6] == "col" && r[8] == "is") {
        const SceneObject* o = scene_object_at(std::stoi(r[5]), std::stoi(r[7]));
        if (!o || shape_names()[o->shape] != r[2] || color_names()[o->color] != r[9]) return false;
        return join_tokens(gold) == r[9];
    }
    // action: because <tag> is shown <action>  (gold: <action>)
    if (r.size() == 5 && r[2] == "is" && r[3] == "shown") {
        for (const auto& o : scene.objects)
            if (o.entity_id == r[1])
                return action_names()[o.action] == r[4] && join_tokens(gold) == r[4];
        return false;
    }
    // spatial: because the <color> <shape> is at row R col C  (gold: <shape>)
    if (r.size() == 10 && r[1] == "the" && r[4] == "is" && r[5] == "at" && r[6] == "row" && r[8] == "col") {
        const SceneObject* o = scene_object_at(std::stoi(r[7]), std::stoi(r[9]));
        if (!o || color_names()[o->color] != r[2] || shape_names()[o->shape] != r[3]) return false;
        return join_tokens(gold) == r[3];
    }
    // counting, zero case: because no object is <color>  (gold: "0")
    if (r.size() == 5 && r[1] == "no" && r[2] == "object" && r[3] == "is") {
        for (const auto& o : scene.objects)
            if (color_names()[o.color] == r[4]) return false;
        return join_tokens(gold) == "0";
    }
    // counting, one case: because <color> appears at row R col C  (gold: "1")
    if (r.size() == 8 && r[2] == "appears" && r[3] == "at" && r[4] == "row" && r[6] == "col") {
        const SceneObject* o = scene_object_at(std::stoi(r[5]), std::stoi(r[7]));
        int count = 0;
        for (const auto& obj : scene.objects)
            if (color_names()[obj.color] == r[1]) ++count;
        if (!o || color_names()[o->color] != r[1] || count != 1) return false;
        return join_tokens(gold) == "1";
    }
    return false;
}

// ---------------------------------------------------------------------------
// Dataset building
// ---------------------------------------------------------------------------

struct DatasetSplit {
    std::vector<VqaRecord> train;
    std::vector<VqaRecord> val;
    Vocabulary vocabulary;
};

inline const std::vector<std::string>& default_name_pool() {
    static const std::vector<std::string> v{"Alex",  "Sam",   "Jordan", "Taylor", "Casey", "Morgan",
                                            "Riley", "Jamie", "Quinn",  "Avery",  "Dana",  "Robin"};
    return v;
}

// The synthetic language is closed: every token any generatable record can
// contain comes from the fixed template wording, the attribute pools, the
// grid digits, or the entity tags. Enumerating them in one deterministic
// order gives every synthetic dataset the identical vocabulary, so encoder
// checkpoints transfer between datasets of any size or seed.
inline Vocabulary synthetic_vocabulary() {
    Vocabulary v;
    for (const char* w : {"what", "color", "is", "the", "?", "doing", "at", "row", "how", "many",
                          "objects", "are", "because", "col", "shown", "appears", "no", "object"})
        v.add(w);
    for (const auto& pool : {shape_names(), color_names(), action_names()})
        for (const auto& w : pool) v.add(w);
    for (const char* d : {"0", "1", "2", "3"}) v.add(d);
    for (int k = 1; k <= 5; ++k) {
        v.add("[person" + std::to_string(k) + "]");
        v.add("[object" + std::to_string(k) + "]");
    }
    for (const auto& name : default_name_pool()) v.add(name);
    return v;
}

inline std::uint64_t scene_seed_for(std::uint64_t master_seed, std::size_t index) {
    return mix_seed(master_seed, index);
}

inline VqaRecord record_for_index(std::uint64_t master_seed, std::size_t index) {
    Scene scene = generate_scene(scene_seed_for(master_seed, index));
    std::mt19937_64 rng(mix_seed(master_seed, 0xbeef00ULL + index));
    int t0 = int(rng() % kNumTemplates);
    for (int k = 0; k < kNumTemplates; ++k) {
        try {
            VqaRecord rec = make_record(scene, (t0 + k) % kNumTemplates, scene.seed);
            rec.record_id = "r" + std::to_string(index) + "-" + rec.record_id;
            return rec;
        } catch (const TemplateInapplicableError&) {
            // next template; action and counting always apply, so this terminates
        }
    }
    throw std::logic_error("record_for_index: no applicable template");
}

inline DatasetSplit build_dataset(std::size_t n_train, std::size_t n_val, std::uint64_t master_seed) {
    if (n_train == 0 || n_val == 0)
        throw std::invalid_argument("build_dataset: n_train and n_val must be positive");
    DatasetSplit split;
    split.vocabulary = synthetic_vocabulary();
    for (std::size_t i = 0; i < n_train + n_val; ++i) {
        VqaRecord rec = record_for_index(master_seed, i);
        (i < n_train ? split.train : split.val).push_back(std::move(rec));
    }
    // the canonical vocabulary must already cover every emitted token
    auto check = [&](const std::vector<std::string>& toks) {
        for (const auto& t : toks)
            if (!split.vocabulary.contains(t))
                throw std::logic_error("build_dataset: token outside canonical vocabulary: " + t);
    };
    for (const auto* part : {&split.train, &split.val})
        for (const auto& r : *part) {
            check(r.question_tokens);
            for (const auto& o : r.options) check(o);
            check(r.gold_rationale_tokens);
        }
    return split;
}

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

inline void save_records_jsonl(const std::vector<VqaRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_records_jsonl: cannot open " + path);
    for (const auto& r : records) {
        nlohmann::json line = {{"record_id", r.record_id},
                               {"region_features", r.region_features},
                               {"question_tokens", r.question_tokens},
                               {"options", r.options},
                               {"gold_answer", r.gold_answer},
                               {"gold_rationale_tokens", r.gold_rationale_tokens}};
        out << line.dump() << "\n";
    }
}

inline std::vector<VqaRecord> load_records_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_records_jsonl: cannot open " + path);
    std::vector<VqaRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        VqaRecord r;
        r.record_id = j.at("record_id").get<std::string>();
        r.region_features = j.at("region_features").get<std::vector<std::vector<double>>>();
        r.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
        auto opts = j.at("options").get<std::vector<std::vector<std::string>>>();
        if (opts.size() != 4) throw std::runtime_error("load_records_jsonl: expected 4 options");
        for (std::size_t i = 0; i < 4; ++i) r.options[i] = opts[i];
        r.gold_answer = j.at("gold_answer").get<std::size_t>();
        r.gold_rationale_tokens = j.at("gold_rationale_tokens").get<std::vector<std::string>>();
        out.push_back(std::move(r));
    }
    return out;
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_vocabulary: cannot open " + path);
    out << nlohmann::json(vocab.tokens()).dump() << "\n";
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_vocabulary: cannot open " + path);
    auto tokens = nlohmann::json::parse(in).get<std::vector<std::string>>();
    Vocabulary v;
    for (const auto& t : tokens) v.add(t);
    return v;
}

// ---------------------------------------------------------------------------
// VCR-format ingestion
// ---------------------------------------------------------------------------

struct VcrParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VcrValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FeatureSource {
    enum class Kind { SidecarFile, SyntheticHash } kind = Kind::SyntheticHash;
    std::string sidecar_path;  // JSON: annot_id -> list of kFeatureDim-d vectors
};

namespace detail {

// VCR token streams mix plain words with integer lists referring to scene
// objects; integers are flattened to single-token tags.
inline std::vector<std::string> flatten_vcr_tokens(const nlohmann::json& arr,
                                                   const std::vector<std::string>& object_types) {
    std::vector<std::string> out;
    for (const auto& el : arr) {
        if (el.is_string()) {
            out.push_back(el.get<std::string>());
        } else if (el.is_array()) {
            for (const auto& idx : el) {
                std::size_t k = idx.get<std::size_t>();
                std::string type = k < object_types.size() ? object_types[k] : "person";
                std::string prefix = type == "person" ? "person" : "object";
                out.push_back("[" + prefix + std::to_string(k + 1) + "]");
            }
        } else {
            out.push_back(el.dump());
        }
    }
    return out;
}

}  // namespace detail

inline std::vector<VqaRecord> load_vcr_records(const std::string& path, const FeatureSource& features) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_vcr_records: cannot open " + path);

    nlohmann::json sidecar;
    if (features.kind == FeatureSource::Kind::SidecarFile) {
        std::ifstream side(features.sidecar_path);
        if (!side) throw std::runtime_error("load_vcr_records: cannot open sidecar " + features.sidecar_path);
        sidecar = nlohmann::json::parse(side);
    }

    std::vector<VqaRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw VcrParseError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
        }
        auto require = [&](const char* field) -> const nlohmann::json& {
            if (!j.contains(field))
                throw VcrParseError("line " + std::to_string(line_no) + ": missing field '" + field + "'");
            return j.at(field);
        };

        std::vector<std::string> object_types;
        if (j.contains("objects")) object_types = j.at("objects").get<std::vector<std::string>>();

        VqaRecord r;
        r.record_id = require("annot_id").get<std::string>();
        r.question_tokens = detail::flatten_vcr_tokens(require("question"), object_types);

        const auto& answers = require("answer_choices");
        const auto& rationales = require("rationale_choices");
        if (answers.size() != 4 || rationales.size() != 4)
            throw VcrValidationError("line " + std::to_string(line_no) + ": expected 4 answer/rationale choices");
        for (std::size_t i = 0; i < 4; ++i)
            r.options[i] = detail::flatten_vcr_tokens(answers[i], object_types);

        long answer_label = require("answer_label").get<long>();
        long rationale_label = require("rationale_label").get<long>();
        if (answer_label < 0 || answer_label > 3)
            throw VcrValidationError("line " + std::to_string(line_no) + ": answer_label out of 0..3");
        if (rationale_label < 0 || rationale_label > 3)
            throw VcrValidationError("line " + std::to_string(line_no) + ": rationale_label out of 0..3");
        r.gold_answer = std::size_t(answer_label);
        r.gold_rationale_tokens =
            detail::flatten_vcr_tokens(rationales[std::size_t(rationale_label)], object_types);

        if (features.kind == FeatureSource::Kind::SidecarFile) {
            if (!sidecar.contains(r.record_id))
                throw VcrValidationError("sidecar has no features for " + r.record_id);
            r.region_features = sidecar.at(r.record_id).get<std::vector<std::vector<double>>>();
            r.synthetic_features = false;
        } else {
            std::size_t max_ref = 0;
            for (const auto& t : r.question_tokens)
                if (t.size() > 2 && t.front() == '[') max_ref = std::max(max_ref, std::size_t(1));
            std::size_t n_regions = std::max<std::size_t>(object_types.size(), std::max<std::size_t>(max_ref, 1));
            std::uint64_t h = 1469598103934665603ULL;
            for (char c : r.record_id) h = (h ^ std::uint64_t(static_cast<unsigned char>(c))) * 1099511628211ULL;
            std::mt19937_64 rng(h);
            std::uniform_real_distribution<double> dist(0.0, 1.0);
            r.region_features.assign(n_regions, std::vector<double>(kFeatureDim));
            for (auto& v : r.region_features)
                for (double& x : v) x = dist(rng);
            r.synthetic_features = true;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace vqarat
