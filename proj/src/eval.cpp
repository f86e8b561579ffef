#include "omnifuse/eval.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "omnifuse/errors.hpp"

namespace omnifuse {

using nlohmann::json;

std::size_t levenshtein(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    if (n == 0) return m;
    if (m == 0) return n;
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double ned(const std::string& pred, const std::string& ref) {
    const std::size_t longest = std::max(pred.size(), ref.size());
    if (longest == 0) {
        std::fprintf(stderr, "ned: both strings empty, scoring 0 (perfect match)\n");
        return 0.0;
    }
    return static_cast<double>(levenshtein(pred, ref)) / static_cast<double>(longest);
}

namespace {

std::string normalize_text(const std::string& s) {
    std::string out;
    bool in_space = true; // drops leading whitespace
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

} // namespace

int exact_match(const std::string& pred, const std::string& ref, bool normalize) {
    if (!normalize) return pred == ref ? 1 : 0;
    return normalize_text(pred) == normalize_text(ref) ? 1 : 0;
}

std::size_t worker_count() {
    const char* env = std::getenv("OMNIFUSE_THREADS");
    if (!env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v > 1 ? static_cast<std::size_t>(v) : 1;
}

EvalReport evaluate(const OmniModel& model, const std::vector<EvalRecord>& records,
                    const EvalOptions& options) {
    if (records.empty()) throw ContractError("evaluate: empty record list");
    for (const auto& m : options.metrics) {
        if (m != "exact_match" && m != "ned") throw ConfigError("evaluate: unknown metric '" + m + "'");
    }
    for (const auto& r : records) {
        if (r.reference.empty()) {
            throw ContractError("evaluate: record '" + r.id + "' has an empty reference");
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<RecordScore> scores(records.size());
    std::vector<std::string> notes;

    auto run_one = [&](std::size_t i) {
        const EvalRecord& rec = records[i];
        RecordScore out;
        out.id = rec.id;
        try {
            Tensor visual = model.visual_tokens(rec.image, options.tiling);
            MultimodalSequence seq = model.build_sequence(rec.prompt, "");
            GenerateResult gen = model.decoder().generate(seq, {visual}, options.max_new);
            out.prediction = model.vocab().decode(gen.ids);
            for (const auto& m : options.metrics) {
                if (m == "exact_match")
                    out.scores[m] = exact_match(out.prediction, rec.reference, options.normalize_em);
                else if (m == "ned")
                    out.scores[m] = ned(out.prediction, rec.reference);
            }
        } catch (const BudgetError&) {
            out.skipped = true;
        }
        scores[i] = std::move(out);
    };

    const std::size_t workers = std::min(worker_count(), records.size());
    if (workers <= 1) {
        for (std::size_t i = 0; i < records.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (std::size_t i = w; i < records.size(); i += workers) run_one(i);
            });
        }
        for (auto& t : pool) t.join();
    }

    EvalReport report;
    report.tiling = options.tiling;
    report.records = std::move(scores);
    std::stable_sort(report.records.begin(), report.records.end(),
                     [](const RecordScore& a, const RecordScore& b) { return a.id < b.id; });
    for (const auto& r : report.records) {
        if (r.skipped) {
            ++report.skipped;
            continue;
        }
        ++report.n;
        for (const auto& [metric, value] : r.scores) report.aggregates[metric] += value;
    }
    if (report.n > 0) {
        for (auto& [metric, value] : report.aggregates) value /= static_cast<double>(report.n);
    }
    if (report.skipped > 0) {
        notes.push_back(std::to_string(report.skipped) + " record(s) skipped: sequence budget");
    }
    report.notes = std::move(notes);
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::string report_to_json(const EvalReport& report) {
    json metrics = json::array();
    for (const auto& [metric, value] : report.aggregates) {
        metrics.push_back({{"metric", metric},
                           {"value", value},
                           {"n", report.n},
                           {"skipped", report.skipped}});
    }
    json recs = json::array();
    for (const auto& r : report.records) {
        json e{{"id", r.id}, {"prediction", r.prediction}, {"skipped", r.skipped}};
        for (const auto& [metric, value] : r.scores) e[metric] = value;
        recs.push_back(e);
    }
    json out{{"metrics", metrics},
             {"tiling", report.tiling ? "on" : "off"},
             {"n", report.n},
             {"skipped", report.skipped},
             {"runtime_seconds", report.runtime_seconds},
             {"records", recs}};
    if (!report.notes.empty()) out["notes"] = report.notes;
    return out.dump(2);
}

std::vector<EvalRecord> load_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("records: cannot open '" + path + "'");
    std::string dir;
    const auto slash = path.find_last_of('/');
    if (slash != std::string::npos) dir = path.substr(0, slash + 1);

    std::vector<EvalRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError("records line " + std::to_string(lineno) + ": " + e.what());
        }
        for (const auto& [key, value] : j.items()) {
            (void)value;
            if (key != "id" && key != "image_path" && key != "image_b64" && key != "prompt" &&
                key != "reference") {
                throw FormatError("records line " + std::to_string(lineno) + ": unknown field '" +
                                  key + "'");
            }
        }
        if (!j.contains("id") || !j.contains("prompt") || !j.contains("reference")) {
            throw FormatError("records line " + std::to_string(lineno) +
                              ": id, prompt and reference are required");
        }
        const bool has_path = j.contains("image_path"), has_b64 = j.contains("image_b64");
        if (has_path == has_b64) {
            throw FormatError("records line " + std::to_string(lineno) +
                              ": exactly one of image_path/image_b64 is required");
        }
        EvalRecord rec;
        rec.id = j["id"].get<std::string>();
        rec.prompt = j["prompt"].get<std::string>();
        rec.reference = j["reference"].get<std::string>();
        if (has_b64) {
            rec.image = decode_ppm(base64_decode(j["image_b64"].get<std::string>()));
        } else {
            std::string p = j["image_path"].get<std::string>();
            if (!p.empty() && p[0] != '/') p = dir + p;
            rec.image = load_ppm(p);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_records(const std::vector<SynthRecord>& records, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("records: cannot open '" + path + "' for writing");
    for (const auto& r : records) {
        json j{{"id", r.id},
               {"image_b64", base64_encode(encode_ppm(r.image))},
               {"prompt", r.prompt},
               {"reference", r.reference}};
        f << j.dump() << "\n";
    }
}

std::vector<EvalRecord> to_eval_records(const std::vector<SynthRecord>& records) {
    std::vector<EvalRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.id, r.image, r.prompt, r.reference});
    return out;
}

std::vector<BenchRow> bench_adapters(const std::vector<EncoderConfig>& geometries,
                                     const std::vector<AdapterVariant>& variants,
                                     std::size_t repeats, std::size_t d_lm, std::uint64_t seed) {
    if (repeats < 3) throw ContractError("bench_adapters: repeats must be >= 3");
    if (geometries.size() < 2) throw ConfigError("bench_adapters: two encoder geometries required");

    // identical synthetic features for every variant
    Rng frng = Rng(seed).fork("bench-features");
    std::vector<LayerFeatures> feats;
    for (const auto& cfg : geometries) {
        LayerFeatures f;
        f.encoder_name = cfg.name;
        for (std::size_t l = 0; l < cfg.num_layers; ++l)
            f.layers.push_back(Tensor::randn({cfg.token_count(), cfg.hidden_dim}, frng));
        feats.push_back(std::move(f));
    }

    std::vector<BenchRow> rows;
    for (const auto& variant : variants) {
        Rng arng = Rng(seed).fork("bench/" + to_string(variant.kind));
        const std::size_t arity = adapter_arity(variant.kind);
        std::vector<EncoderConfig> cfgs(geometries.begin(),
                                        geometries.begin() + static_cast<std::ptrdiff_t>(arity));
        auto adapter = make_adapter(variant, cfgs, d_lm, arng, /*trainable=*/false);
        std::vector<LayerFeatures> in(feats.begin(),
                                      feats.begin() + static_cast<std::ptrdiff_t>(arity));

        Tensor warm = adapter->forward(in);
        std::vector<double> times;
        times.reserve(repeats);
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            Tensor out = adapter->forward(in);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        BenchRow row;
        row.variant = to_string(variant.kind);
        row.out_tokens = warm.dim(0);
        row.median_ms = times[times.size() / 2];
        row.p90_ms = times[std::min(times.size() - 1, (times.size() * 9) / 10)];
        rows.push_back(row);
    }
    return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << "variant                 out_tokens   median_ms     p90_ms\n";
    for (const auto& r : rows) {
        os << r.variant;
        for (std::size_t i = r.variant.size(); i < 24; ++i) os << ' ';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%10zu %11.3f %10.3f\n", r.out_tokens, r.median_ms,
                      r.p90_ms);
        os << buf;
    }
    return os.str();
}

} // namespace omnifuse
