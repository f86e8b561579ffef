#pragma once

#include <string>
#include <vector>

#include "omnifuse/eval.hpp"
#include "omnifuse/model.hpp"
#include "omnifuse/trainer.hpp"

namespace omnifuse {

/// One experiment, fully described: components, data, training stages,
/// evaluation settings. Parsed from versioned JSON; unknown keys are
/// errors so typos in experiment grids cannot pass silently.
struct RunConfig {
    int schema_version = 1;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/out";

    std::vector<EncoderConfig> encoders;
    AdapterVariant adapter;
    DecoderConfig decoder; // vocab derived from charset
    std::string charset;   // empty: printable ASCII
    TilingSettings tiling;

    struct DataSection {
        SynthKind kind = SynthKind::Caption;
        std::size_t n = 64;
        std::uint64_t seed = 0;
    } data;

    struct TrainSection {
        std::vector<Stage> stages{Stage::Pretrain, Stage::Sft};
        TrainConfig pretrain;
        TrainConfig sft;
    } train;

    struct EvalSection {
        std::vector<std::string> metrics{"exact_match", "ned"};
        bool tiling = false;
        std::size_t max_new = 32;
    } eval;

    void validate() const;
    Vocabulary make_vocab() const;
    OmniModel make_model() const;
    std::vector<SynthRecord> make_dataset() const;
    EvalOptions eval_options() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

} // namespace omnifuse
