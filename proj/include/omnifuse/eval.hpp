#pragma once

#include <map>
#include <string>
#include <vector>

#include "omnifuse/model.hpp"
#include "omnifuse/synth.hpp"

namespace omnifuse {

/// Levenshtein distance, unit costs, character level.
std::size_t levenshtein(const std::string& a, const std::string& b);

/// Normalized edit distance in [0,1]: levenshtein / max(len(pred), len(ref)).
/// Two empty strings count as a perfect match (0).
double ned(const std::string& pred, const std::string& ref);

/// 1 on equality, optionally after lowercasing and whitespace collapse.
int exact_match(const std::string& pred, const std::string& ref, bool normalize = false);

struct EvalRecord {
    std::string id;
    ImageTensor image;
    std::string prompt;
    std::string reference;
};

struct EvalOptions {
    std::vector<std::string> metrics{"exact_match", "ned"};
    bool tiling = false;   // mirrors the with/without grid-splitting contrast
    std::size_t max_new = 32;
    bool normalize_em = true;
};

struct RecordScore {
    std::string id;
    std::string prediction;
    std::map<std::string, double> scores;
    bool skipped = false; // sequence budget overflow
};

struct EvalReport {
    std::map<std::string, double> aggregates; // metric -> mean over scored records
    std::vector<RecordScore> records;         // sorted by id
    std::size_t n = 0;
    std::size_t skipped = 0;
    bool tiling = false;
    double runtime_seconds = 0.0;
    std::vector<std::string> notes;
};

/// Greedy generation per record, metrics, deterministic report.
/// Records fan out across OMNIFUSE_THREADS workers (default 1).
EvalReport evaluate(const OmniModel& model, const std::vector<EvalRecord>& records,
                    const EvalOptions& options);

std::string report_to_json(const EvalReport& report);

// Record files: one JSON object per line with fields
// (id, image_path | image_b64, prompt, reference); pixels travel as
// base64-encoded binary PPM.
std::vector<EvalRecord> load_records(const std::string& path);
void save_records(const std::vector<SynthRecord>& records, const std::string& path);
std::vector<EvalRecord> to_eval_records(const std::vector<SynthRecord>& records);

struct BenchRow {
    std::string variant;
    std::size_t out_tokens = 0;
    double median_ms = 0.0;
    double p90_ms = 0.0;
};

/// Forward latency of every adapter variant on identical synthetic
/// features. repeats must be >= 3.
std::vector<BenchRow> bench_adapters(const std::vector<EncoderConfig>& geometries,
                                     const std::vector<AdapterVariant>& variants,
                                     std::size_t repeats, std::size_t d_lm, std::uint64_t seed);

std::string bench_table(const std::vector<BenchRow>& rows);

/// Worker cap from OMNIFUSE_THREADS (>=1; unset or invalid -> 1).
std::size_t worker_count();

} // namespace omnifuse
