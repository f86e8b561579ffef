#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "omnifuse/errors.hpp"
#include "omnifuse/eval.hpp"
#include "omnifuse/trainer.hpp"
#include "oracles.hpp"

using namespace omnifuse;

namespace {

std::string random_string(Rng& rng, std::size_t max_len) {
    const std::string alphabet = "abcdefgh";
    std::string s;
    const std::size_t len = rng.index(max_len + 1);
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.index(alphabet.size())]);
    return s;
}

OmniModel tiny_model(std::uint64_t seed = 5) {
    EncoderConfig enc{"tiny", 8, 16, 2, 8, 2, -1}; // 4 tokens
    DecoderConfig dec;
    dec.layers = 1;
    dec.width = 16;
    dec.heads = 2;
    dec.vocab = Vocabulary::printable_ascii().size();
    dec.max_seq_len = 96;
    return OmniModel({enc}, {AdapterKind::MlpProjector}, dec, Vocabulary::printable_ascii(), {},
                     seed);
}

} // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("ned identity, empty cases, and hand values") {
    CHECK(ned("abc", "abc") == 0.0);
    CHECK(ned("abcd", "abxd") == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(ned("", "ab") == 1.0);
    CHECK(ned("ab", "") == 1.0);
    CHECK(ned("", "") == 0.0);
}

TEST_CASE("ned matches the DP oracle on random pairs and is symmetric in [0,1]") {
    Rng rng(31337);
    for (int i = 0; i < 1000; ++i) {
        std::string a = random_string(rng, 12), b = random_string(rng, 12);
        const std::size_t d = levenshtein(a, b);
        CHECK(d == oracles::levenshtein_full_matrix(a, b));
        if (a.empty() && b.empty()) continue;
        const double v = ned(a, b);
        CHECK(v == ned(b, a));
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK((v == 0.0) == (a == b));
    }
}

TEST_CASE("levenshtein satisfies the triangle inequality") {
    Rng rng(99);
    for (int i = 0; i < 300; ++i) {
        std::string a = random_string(rng, 10), b = random_string(rng, 10), c = random_string(rng, 10);
        CHECK(levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c));
    }
}

TEST_CASE("exact match with and without normalization") {
    CHECK(exact_match("Cat ", "cat", true) == 1);
    CHECK(exact_match("Cat ", "cat", false) == 0);
    CHECK(exact_match("cat", "dog", true) == 0);
    CHECK(exact_match("a  b", "A B", true) == 1);
}

TEST_CASE("evaluate produces deterministic reports with mean aggregates") {
    OmniModel model = tiny_model();
    auto data = synth_dataset(SynthKind::Vqa, 6, 17);
    // shrink images to the tiny encoder's scale for speed (content unused
    // by an untrained model)
    auto records = to_eval_records(data);

    EvalOptions opts;
    opts.max_new = 4;
    EvalReport r1 = evaluate(model, records, opts);
    EvalReport r2 = evaluate(model, records, opts);
    CHECK(r1.n == 6);
    CHECK(r1.skipped == 0);
    REQUIRE(r1.records.size() == r2.records.size());
    for (std::size_t i = 0; i < r1.records.size(); ++i) {
        CHECK(r1.records[i].prediction == r2.records[i].prediction);
    }
    // aggregates equal recomputed means
    for (const auto& metric : {"exact_match", "ned"}) {
        double s = 0.0;
        for (const auto& rec : r1.records) s += rec.scores.at(metric);
        CHECK(std::abs(r1.aggregates.at(metric) - s / 6.0) < 1e-12);
    }
    // records sorted by id
    for (std::size_t i = 1; i < r1.records.size(); ++i)
        CHECK(r1.records[i - 1].id <= r1.records[i].id);

    CHECK_THROWS_AS(evaluate(model, {}, opts), ContractError);
}

TEST_CASE("evaluate is identical under worker fan-out") {
    OmniModel model = tiny_model();
    auto records = to_eval_records(synth_dataset(SynthKind::Vqa, 5, 23));
    EvalOptions opts;
    opts.max_new = 3;
    EvalReport serial = evaluate(model, records, opts);
    setenv("OMNIFUSE_THREADS", "3", 1);
    EvalReport parallel = evaluate(model, records, opts);
    unsetenv("OMNIFUSE_THREADS");
    REQUIRE(serial.records.size() == parallel.records.size());
    for (std::size_t i = 0; i < serial.records.size(); ++i) {
        CHECK(serial.records[i].prediction == parallel.records[i].prediction);
        CHECK(serial.records[i].scores == parallel.records[i].scores);
    }
    CHECK(serial.aggregates == parallel.aggregates);
}

TEST_CASE("evaluate counts budget overflows as skipped") {
    OmniModel model = tiny_model();
    auto data = synth_dataset(SynthKind::Vqa, 3, 18);
    auto records = to_eval_records(data);
    records[1].prompt = std::string(300, 'q'); // cannot fit in max_seq_len 96
    EvalOptions opts;
    opts.max_new = 2;
    EvalReport r = evaluate(model, records, opts);
    CHECK(r.n == 2);
    CHECK(r.skipped == 1);
    bool noted = false;
    for (const auto& n : r.notes)
        if (n.find("skipped") != std::string::npos) noted = true;
    CHECK(noted);
}

TEST_CASE("report json carries the fixed key names") {
    OmniModel model = tiny_model();
    auto records = to_eval_records(synth_dataset(SynthKind::Vqa, 2, 19));
    EvalOptions opts;
    opts.max_new = 2;
    std::string j = report_to_json(evaluate(model, records, opts));
    for (const char* key : {"\"metric\"", "\"value\"", "\"n\"", "\"skipped\"", "\"tiling\""}) {
        CHECK(j.find(key) != std::string::npos);
    }
}

TEST_CASE("records round trip through the jsonl format") {
    auto data = synth_dataset(SynthKind::Caption, 4, 20);
    const std::string path = "test_records_tmp.jsonl";
    save_records(data, path);
    auto back = load_records(path);
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back[i].id == data[i].id);
        CHECK(back[i].prompt == data[i].prompt);
        CHECK(back[i].reference == data[i].reference);
        CHECK(back[i].image.width == data[i].image.width);
        // pixels survive at 8-bit precision
        for (std::size_t p = 0; p < back[i].image.pixels.size(); ++p)
            CHECK(std::abs(back[i].image.pixels[p] - data[i].image.pixels[p]) < 1.0 / 255.0);
    }
    std::remove(path.c_str());
}

TEST_CASE("record files reject unknown fields and missing images") {
    const std::string path = "test_records_bad.jsonl";
    {
        std::ofstream f(path);
        f << R"({"id":"a","prompt":"p","reference":"r","image_b64":"UDYKMSAxCjI1NQoAAAA=","typo":1})"
          << "\n";
    }
    CHECK_THROWS_AS(load_records(path), FormatError);
    {
        std::ofstream f(path);
        f << R"({"id":"a","prompt":"p","reference":"r"})" << "\n";
    }
    CHECK_THROWS_AS(load_records(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("bench_adapters times every variant and reports token counts") {
    std::vector<EncoderConfig> geoms{{"a", 8, 32, 2, 16, 4, -2}, {"b", 4, 24, 2, 12, 3, -1}};
    std::vector<AdapterVariant> variants;
    for (AdapterKind k : all_adapter_kinds()) {
        AdapterVariant v{k};
        v.kv_rows = 16;
        variants.push_back(v);
    }
    auto rows = bench_adapters(geoms, variants, 5, 8, 77);
    REQUIRE(rows.size() == 6);
    for (const auto& r : rows) {
        CHECK(r.median_ms > 0.0);
        CHECK(r.p90_ms >= r.median_ms);
    }
    CHECK(rows[0].out_tokens == 16);      // mlp_projector preserves L
    CHECK(rows[2].out_tokens == 16 + 36); // concat_fuse
    CHECK(rows[4].out_tokens == 16);      // attention pool = kv_rows

    CHECK_THROWS_AS(bench_adapters(geoms, variants, 2, 8, 1), ContractError);
    CHECK(bench_table(rows).find("mlp_projector") != std::string::npos);
}

TEST_SUITE_END();
