#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "vqarat/synthdata.hpp"

using namespace vqarat;

namespace {

std::string record_fingerprint(const VqaRecord& r) {
    nlohmann::json j = {{"id", r.record_id},
                        {"rf", r.region_features},
                        {"q", r.question_tokens},
                        {"o", std::vector<std::vector<std::string>>(r.options.begin(), r.options.end())},
                        {"g", r.gold_answer},
                        {"rat", r.gold_rationale_tokens}};
    return j.dump();
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("scene generation is deterministic and well-formed") {
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 987654321ULL}) {
        Scene a = generate_scene(seed);
        Scene b = generate_scene(seed);
        REQUIRE(a.objects.size() == b.objects.size());
        CHECK(a.objects.size() >= 2);
        CHECK(a.objects.size() <= 3);
        std::set<std::pair<int, int>> cells;
        std::set<std::string> ids;
        for (std::size_t i = 0; i < a.objects.size(); ++i) {
            const auto& oa = a.objects[i];
            const auto& ob = b.objects[i];
            CHECK(oa.entity_id == ob.entity_id);
            CHECK(oa.shape == ob.shape);
            CHECK(oa.color == ob.color);
            CHECK(oa.row == ob.row);
            CHECK(oa.col == ob.col);
            CHECK(oa.action == ob.action);
            CHECK(oa.row >= 0);
            CHECK(oa.row < kGridSize);
            CHECK(oa.col >= 0);
            CHECK(oa.col < kGridSize);
            cells.insert({oa.row, oa.col});  // no two objects share a cell
            ids.insert(oa.entity_id);
        }
        CHECK(cells.size() == a.objects.size());
        CHECK(ids.size() == a.objects.size());
    }
}

TEST_CASE("object features: one-hot blocks and identity block") {
    SceneObject o;
    o.shape = 2;
    o.color = 1;
    o.action = 3;
    o.row = 3;
    o.col = 0;
    o.is_person = true;
    o.ordinal = 2;
    auto f = object_features(o);
    REQUIRE(f.size() == kFeatureDim);
    // shape block [0,6)
    CHECK(f[2] == 1.0);
    double shape_sum = 0.0;
    for (int i = 0; i < 6; ++i) shape_sum += f[i];
    CHECK(shape_sum == 1.0);
    // color block [6,12)
    CHECK(f[7] == 1.0);
    double color_sum = 0.0;
    for (int i = 6; i < 12; ++i) color_sum += f[i];
    CHECK(color_sum == 1.0);
    // action block [12,18)
    CHECK(f[15] == 1.0);
    // normalized coordinates
    CHECK(f[18] == 1.0);
    CHECK(f[19] == 0.0);
    // person flag and ordinal one-hot
    CHECK(f[20] == 1.0);
    CHECK(f[22] == 1.0);
    CHECK(f[21] + f[22] + f[23] + f[24] + f[25] == 1.0);
}

TEST_CASE("records: structural invariants over 1000 seeds") {
    for (std::size_t idx = 0; idx < 1000; ++idx) {
        VqaRecord rec = record_for_index(7, idx);
        REQUIRE(rec.region_features.size() >= 2);
        REQUIRE(rec.region_features.size() <= 3);
        for (const auto& f : rec.region_features) CHECK(f.size() == kFeatureDim);
        CHECK_FALSE(rec.question_tokens.empty());
        CHECK(rec.gold_answer < 4);
        // all four options distinct, so exactly one can be correct
        std::set<std::string> opts;
        for (const auto& o : rec.options) {
            CHECK_FALSE(o.empty());
            opts.insert(join_tokens(o));
        }
        CHECK(opts.size() == 4);
        REQUIRE_FALSE(rec.gold_rationale_tokens.empty());
        CHECK(rec.gold_rationale_tokens[0] == "because");
    }
}

TEST_CASE("entailment audit passes for every generated record") {
    int audited = 0;
    for (std::size_t idx = 0; idx < 1000; ++idx) {
        Scene scene = generate_scene(scene_seed_for(7, idx));
        VqaRecord rec = record_for_index(7, idx);
        if (!audit_record(scene, rec)) {
            INFO("record " << rec.record_id << " rationale: " << join_tokens(rec.gold_rationale_tokens));
            REQUIRE(false);
        }
        ++audited;
    }
    CHECK(audited == 1000);
}

TEST_CASE("entailment audit rejects tampered records") {
    Scene scene = generate_scene(scene_seed_for(7, 0));
    VqaRecord rec = record_for_index(7, 0);
    REQUIRE(audit_record(scene, rec));

    // wrong gold answer index
    VqaRecord wrong_answer = rec;
    wrong_answer.gold_answer = (rec.gold_answer + 1) % 4;
    CHECK_FALSE(audit_record(scene, wrong_answer));

    // rationale not starting with "because"
    VqaRecord no_because = rec;
    no_because.gold_rationale_tokens[0] = "since";
    CHECK_FALSE(audit_record(scene, no_because));

    // rationale citing a different scene
    Scene other = generate_scene(scene_seed_for(7, 999));
    bool all_pass_on_wrong_scene = true;
    for (std::size_t idx = 0; idx < 50; ++idx) {
        VqaRecord r = record_for_index(7, idx);
        Scene wrong = generate_scene(scene_seed_for(7, idx + 1));
        if (!audit_record(wrong, r)) all_pass_on_wrong_scene = false;
    }
    CHECK_FALSE(all_pass_on_wrong_scene);
    (void)other;
}

TEST_CASE("make_record: template errors and applicability") {
    CHECK_THROWS_AS(make_record(generate_scene(1), -1, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_record(generate_scene(1), kNumTemplates, 1), std::invalid_argument);
    // action (1) and counting (3) templates apply to every scene
    for (std::uint64_t s = 0; s < 50; ++s) {
        Scene scene = generate_scene(s);
        CHECK_NOTHROW(make_record(scene, 1, s));
        CHECK_NOTHROW(make_record(scene, 3, s));
    }
}

TEST_CASE("dataset build: determinism, sizes, vocabulary closure") {
    DatasetSplit a = build_dataset(30, 10, 123);
    DatasetSplit b = build_dataset(30, 10, 123);
    REQUIRE(a.train.size() == 30);
    REQUIRE(a.val.size() == 10);
    for (std::size_t i = 0; i < a.train.size(); ++i)
        CHECK(record_fingerprint(a.train[i]) == record_fingerprint(b.train[i]));
    for (std::size_t i = 0; i < a.val.size(); ++i)
        CHECK(record_fingerprint(a.val[i]) == record_fingerprint(b.val[i]));

    // different seed gives different data
    DatasetSplit c = build_dataset(30, 10, 124);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.size(); ++i)
        if (record_fingerprint(a.train[i]) != record_fingerprint(c.train[i])) any_diff = true;
    CHECK(any_diff);

    // specials occupy ids 0..3
    CHECK(a.vocabulary.token(Vocabulary::kPad) == "<pad>");
    CHECK(a.vocabulary.token(Vocabulary::kBos) == "<bos>");
    CHECK(a.vocabulary.token(Vocabulary::kEos) == "<eos>");
    CHECK(a.vocabulary.token(Vocabulary::kSep) == "<sep>");

    // closure: every token of every record is encodable
    auto closed = [&](const std::vector<std::string>& toks) {
        for (const auto& t : toks)
            if (!a.vocabulary.contains(t)) return false;
        return true;
    };
    for (const auto* part : {&a.train, &a.val})
        for (const auto& r : *part) {
            CHECK(closed(r.question_tokens));
            for (const auto& o : r.options) CHECK(closed(o));
            CHECK(closed(r.gold_rationale_tokens));
        }

    CHECK_THROWS_AS(build_dataset(0, 10, 1), std::invalid_argument);
    CHECK_THROWS_AS(build_dataset(10, 0, 1), std::invalid_argument);
}

TEST_CASE("canonical vocabulary is identical across datasets") {
    // the synthetic language is closed, so datasets of any size or seed share
    // one vocabulary; this is what lets encoder checkpoints transfer between
    // a large pretraining corpus and a smaller experiment split
    Vocabulary canon = synthetic_vocabulary();
    for (const DatasetSplit& s :
         {build_dataset(30, 10, 1), build_dataset(5, 5, 999), build_dataset(100, 20, 42)}) {
        REQUIRE(s.vocabulary.size() == canon.size());
        for (std::size_t i = 0; i < canon.size(); ++i)
            CHECK(s.vocabulary.token(i) == canon.token(i));
    }
}

TEST_CASE("records JSONL round trip is exact") {
    DatasetSplit split = build_dataset(12, 4, 55);
    auto path = temp_file("vqarat_records_test.jsonl");
    save_records_jsonl(split.train, path.string());
    auto loaded = load_records_jsonl(path.string());
    std::filesystem::remove(path);
    REQUIRE(loaded.size() == split.train.size());
    for (std::size_t i = 0; i < loaded.size(); ++i)
        CHECK(record_fingerprint(loaded[i]) == record_fingerprint(split.train[i]));
}

TEST_CASE("vocabulary JSON round trip preserves ids") {
    DatasetSplit split = build_dataset(12, 4, 55);
    auto path = temp_file("vqarat_vocab_test.json");
    save_vocabulary(split.vocabulary, path.string());
    Vocabulary loaded = load_vocabulary(path.string());
    std::filesystem::remove(path);
    REQUIRE(loaded.size() == split.vocabulary.size());
    for (std::size_t i = 0; i < loaded.size(); ++i)
        CHECK(loaded.token(i) == split.vocabulary.token(i));
}

TEST_CASE("vocabulary basics") {
    Vocabulary v;
    CHECK(v.size() == 4);
    std::size_t id = v.add("cat");
    CHECK(v.add("cat") == id);  // idempotent
    CHECK(v.id("cat") == id);
    CHECK_THROWS_AS(v.id("dog"), std::out_of_range);
    CHECK_THROWS_AS(v.token(99), std::out_of_range);
    CHECK(v.decode(v.encode({"cat", "<sep>"})) == std::vector<std::string>{"cat", "<sep>"});
}

// ---------------------------------------------------------------------------
// VCR-format ingestion
// ---------------------------------------------------------------------------

namespace {

// A 3-line hand fixture mixing plain words and integer reference lists.
const char* kVcrFixture = R"({"annot_id":"vcr-0","objects":["person","person","car"],"question":["What","is",[0],"doing","?"],"answer_choices":[["Walking"],["Running"],["Sitting"],["Jumping"]],"answer_label":1,"rationale_choices":[["Because",[0],"moves"],["No"],["Maybe"],["Unclear"]],"rationale_label":0}
{"annot_id":"vcr-1","objects":["car"],"question":["Whose","car","is",[0],"?"],"answer_choices":[["Mine"],["Yours"],["Hers"],["Theirs"]],"answer_label":0,"rationale_choices":[["It","is","parked"],["B"],["C"],["D"]],"rationale_label":2}
{"annot_id":"vcr-2","question":["Are",[0,1],"friends","?"],"answer_choices":[["Yes"],["No"],["Perhaps"],["Never"]],"answer_label":3,"rationale_choices":[["R1"],["R2"],["R3"],["R4"]],"rationale_label":1}
)";

}  // namespace

TEST_CASE("VCR ingestion: tag flattening and labels") {
    auto path = temp_file("vqarat_vcr_fixture.jsonl");
    std::ofstream(path) << kVcrFixture;
    auto recs = load_vcr_records(path.string(), FeatureSource{});
    std::filesystem::remove(path);

    REQUIRE(recs.size() == 3);
    CHECK(recs[0].record_id == "vcr-0");
    CHECK(recs[0].question_tokens ==
          std::vector<std::string>{"What", "is", "[person1]", "doing", "?"});
    CHECK(recs[0].gold_answer == 1);
    CHECK(recs[0].gold_rationale_tokens ==
          std::vector<std::string>{"Because", "[person1]", "moves"});
    CHECK(recs[0].synthetic_features);
    CHECK(recs[0].region_features.size() == 3);  // one per listed object

    // non-person object type flattens to [objectK]
    CHECK(recs[1].question_tokens ==
          std::vector<std::string>{"Whose", "car", "is", "[object1]", "?"});
    CHECK(recs[1].gold_rationale_tokens == std::vector<std::string>{"C"});

    // no "objects" field: references default to person tags
    CHECK(recs[2].question_tokens ==
          std::vector<std::string>{"Are", "[person1]", "[person2]", "friends", "?"});

    // synthetic features are deterministic per record id
    std::ofstream(path) << kVcrFixture;
    auto again = load_vcr_records(path.string(), FeatureSource{});
    std::filesystem::remove(path);
    CHECK(again[0].region_features == recs[0].region_features);
}

TEST_CASE("VCR ingestion: sidecar features") {
    auto vcr_path = temp_file("vqarat_vcr_side.jsonl");
    auto side_path = temp_file("vqarat_vcr_side_feats.json");
    std::ofstream(vcr_path) << kVcrFixture;
    {
        nlohmann::json side;
        for (const char* id : {"vcr-0", "vcr-1", "vcr-2"})
            side[id] = std::vector<std::vector<double>>{std::vector<double>(kFeatureDim, 0.5)};
        std::ofstream(side_path) << side.dump();
    }
    FeatureSource src;
    src.kind = FeatureSource::Kind::SidecarFile;
    src.sidecar_path = side_path.string();
    auto recs = load_vcr_records(vcr_path.string(), src);
    CHECK_FALSE(recs[0].synthetic_features);
    CHECK(recs[0].region_features.size() == 1);
    CHECK(recs[0].region_features[0][0] == 0.5);

    // sidecar missing an id is a validation error
    {
        nlohmann::json side;
        side["vcr-0"] = std::vector<std::vector<double>>{std::vector<double>(kFeatureDim, 0.5)};
        std::ofstream(side_path) << side.dump();
    }
    CHECK_THROWS_AS(load_vcr_records(vcr_path.string(), src), VcrValidationError);
    std::filesystem::remove(vcr_path);
    std::filesystem::remove(side_path);
}

TEST_CASE("VCR ingestion: errors carry line numbers") {
    auto path = temp_file("vqarat_vcr_bad.jsonl");

    // line 2 missing answer_label
    std::ofstream(path) << R"({"annot_id":"a","question":["q"],"answer_choices":[["a"],["b"],["c"],["d"]],"answer_label":0,"rationale_choices":[["r"],["s"],["t"],["u"]],"rationale_label":0})"
                        << "\n"
                        << R"({"annot_id":"b","question":["q"],"answer_choices":[["a"],["b"],["c"],["d"]],"rationale_choices":[["r"],["s"],["t"],["u"]],"rationale_label":0})"
                        << "\n";
    try {
        load_vcr_records(path.string(), FeatureSource{});
        FAIL("expected VcrParseError");
    } catch (const VcrParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("answer_label") != std::string::npos);
    }

    // malformed JSON
    std::ofstream(path) << "{not json}\n";
    CHECK_THROWS_AS(load_vcr_records(path.string(), FeatureSource{}), VcrParseError);

    // out-of-range label
    std::ofstream(path) << R"({"annot_id":"a","question":["q"],"answer_choices":[["a"],["b"],["c"],["d"]],"answer_label":7,"rationale_choices":[["r"],["s"],["t"],["u"]],"rationale_label":0})"
                        << "\n";
    CHECK_THROWS_AS(load_vcr_records(path.string(), FeatureSource{}), VcrValidationError);
    std::filesystem::remove(path);
}
