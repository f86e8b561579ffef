#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "omnifuse/config.hpp"
#include "omnifuse/errors.hpp"
#include "omnifuse/eval.hpp"
#include "omnifuse/gradcheck.hpp"
#include "omnifuse/trainer.hpp"

namespace fs = std::filesystem;
using namespace omnifuse;

// Exit codes, kept distinct per failure class:
//   0 success
//   2 configuration or usage error
//   3 missing or malformed file
//   4 contract/state/budget violation at runtime
//   5 gradient audit reported a failure
//  70 unexpected internal error
namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kFileError = 3;
constexpr int kRuntimeError = 4;
constexpr int kAuditFailed = 5;
constexpr int kInternalError = 70;

struct CommonArgs {
    std::string config_path;
    std::string checkpoint_path;
    std::string records_path;
    std::string out_dir;
    std::int64_t seed = -1; // -1: keep the config's seed
};

RunConfig load_config(const CommonArgs& args) {
    if (args.config_path.empty()) throw ConfigError("--config is required");
    RunConfig cfg = load_run_config(args.config_path);
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

void write_train_log(const fs::path& path, int stage, const TrainResult& result, bool append) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
    for (const auto& note : result.notes) {
        nlohmann::json j{{"stage", stage}, {"note", note}};
        f << j.dump() << "\n";
    }
    for (const auto& e : result.log) {
        nlohmann::json j{{"stage", stage},
                         {"step", e.step},
                         {"loss", e.loss},
                         {"lr", e.lr},
                         {"grad_norm", e.grad_norm}};
        f << j.dump() << "\n";
    }
}

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    fs::create_directories(cfg.out_dir);
    OmniModel model = cfg.make_model();
    auto data = cfg.make_dataset();
    const fs::path log_path = fs::path(cfg.out_dir) / "train_log.jsonl";

    bool log_started = false;
    Checkpoint stage1_ckpt;
    bool have_stage1 = false;
    if (!args.checkpoint_path.empty()) {
        stage1_ckpt = load_checkpoint(args.checkpoint_path);
        have_stage1 = true;
    }

    for (Stage stage : cfg.train.stages) {
        if (stage == Stage::Pretrain) {
            TrainConfig tc = cfg.train.pretrain;
            if (tc.seed == 0) tc.seed = cfg.seed;
            TrainResult r = run_stage1(model, data, tc);
            write_train_log(log_path, 1, r, log_started);
            log_started = true;
            const fs::path out = fs::path(cfg.out_dir) / "stage1.omnf";
            save_checkpoint(r.checkpoint, out.string());
            stage1_ckpt = std::move(r.checkpoint);
            have_stage1 = true;
            std::cout << "stage1: " << tc.steps << " steps, final loss " << r.final_loss << " -> "
                      << out.string() << "\n";
        } else {
            if (!have_stage1) {
                throw ConfigError("stage 2 requires a stage-1 checkpoint: run the pretrain stage "
                                  "first or pass --checkpoint");
            }
            TrainConfig tc = cfg.train.sft;
            if (tc.seed == 0) tc.seed = cfg.seed;
            TrainResult r = run_stage2(model, data, tc, stage1_ckpt);
            write_train_log(log_path, 2, r, log_started);
            log_started = true;
            const fs::path out = fs::path(cfg.out_dir) / "stage2.omnf";
            save_checkpoint(r.checkpoint, out.string());
            std::cout << "stage2: " << tc.steps << " steps, final loss " << r.final_loss << " -> "
                      << out.string() << "\n";
        }
    }
    std::cout << "training log: " << log_path.string() << "\n";
    return kOk;
}

int cmd_eval(const CommonArgs& args) {
    RunConfig cfg = load_config(args);
    if (args.checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
    if (args.records_path.empty()) throw ConfigError("--records is required");

    OmniModel model = cfg.make_model();
    load_model_checkpoint(model, load_checkpoint(args.checkpoint_path));
    auto records = load_records(args.records_path);
    EvalReport report = evaluate(model, records, cfg.eval_options());

    fs::create_directories(cfg.out_dir);
    const fs::path out = fs::path(cfg.out_dir) / "report.json";
    std::ofstream f(out);
    if (!f) throw FormatError("cannot open '" + out.string() + "' for writing");
    f << report_to_json(report) << "\n";

    for (const auto& [metric, value] : report.aggregates) {
        std::cout << "metric=" << metric << " value=" << value << " n=" << report.n
                  << " skipped=" << report.skipped << "\n";
    }
    std::cout << "tiling=" << (report.tiling ? "on" : "off") << "\n";
    std::cout << "report: " << out.string() << "\n";
    return kOk;
}

int cmd_tile_plan(std::int64_t w, std::int64_t h, std::int64_t tile_res, std::int64_t max_tiles) {
    if (tile_res <= 0) throw ConfigError("tile_res must be positive");
    if (w <= 0 || h <= 0 || max_tiles <= 0) {
        std::cerr << "warning: degenerate input clamped to a 1x1 grid\n";
    }
    TileLayout ly = plan_grid(w > 0 ? static_cast<std::size_t>(w) : 0,
                              h > 0 ? static_cast<std::size_t>(h) : 0,
                              static_cast<std::size_t>(tile_res),
                              max_tiles > 0 ? static_cast<std::size_t>(max_tiles) : 0);
    std::cout << ly.grid_rows << "x" << ly.grid_cols << " pad " << ly.pad_right << ","
              << ly.pad_bottom << "\n";
    std::cout << "scaled " << ly.scaled_w << "x" << ly.scaled_h << " tile " << ly.tile_res
              << " tiles " << ly.tile_count() << "\n";
    return kOk;
}

int cmd_bench_adapters(const CommonArgs& args, std::size_t repeats) {
    std::vector<EncoderConfig> geoms;
    std::size_t d_lm = 32;
    std::uint64_t seed = args.seed >= 0 ? static_cast<std::uint64_t>(args.seed) : 0;
    if (!args.config_path.empty()) {
        RunConfig cfg = load_config(args);
        geoms = cfg.encoders;
        if (geoms.size() < 2) geoms.push_back(encoder_preset("dinolike"));
        d_lm = cfg.decoder.width;
        seed = cfg.seed;
    } else {
        geoms = {encoder_preset("cliplike"), encoder_preset("dinolike")};
    }

    std::vector<AdapterVariant> variants;
    for (AdapterKind kind : all_adapter_kinds()) {
        AdapterVariant v{kind};
        v.kv_rows = geoms[0].token_count(); // keep the pooled length comparable
        variants.push_back(v);
    }
    auto rows = bench_adapters(geoms, variants, repeats, d_lm, seed);
    std::cout << bench_table(rows);

    // consistency with the token-count law
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t expect = output_token_count(
            variants[i],
            {geoms.begin(), geoms.begin() + static_cast<std::ptrdiff_t>(
                                                adapter_arity(variants[i].kind))});
        if (rows[i].out_tokens != expect) {
            throw ContractError("bench: " + rows[i].variant + " emitted " +
                                std::to_string(rows[i].out_tokens) + " tokens, law says " +
                                std::to_string(expect));
        }
    }
    // recorded, not asserted: the attention-pool variant tends to be the
    // slowest in practice
    for (const auto& r : rows) {
        if (r.variant == "attention_pool_fuse") {
            std::cout << "note: attention_pool_fuse median " << r.median_ms
                      << " ms (ordering recorded for comparison, not asserted)\n";
        }
    }
    if (!args.out_dir.empty()) {
        fs::create_directories(args.out_dir);
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
            j.push_back({{"variant", r.variant},
                         {"out_tokens", r.out_tokens},
                         {"median_ms", r.median_ms},
                         {"p90_ms", r.p90_ms}});
        }
        const fs::path out = fs::path(args.out_dir) / "bench.json";
        std::ofstream f(out);
        f << j.dump(2) << "\n";
        std::cout << "bench report: " << out.string() << "\n";
    }
    return kOk;
}

int cmd_grad_check(const CommonArgs& args, const std::string& corrupt_group) {
    RunConfig cfg = load_config(args);
    OmniModel model = cfg.make_model();
    GradCheckOptions opts;
    opts.seed = cfg.seed;
    opts.corrupt_group = corrupt_group;
    GradCheckReport report = grad_check(model, opts);
    for (const auto& g : report.groups) {
        std::cout << (g.pass ? "PASS " : "FAIL ") << g.name << " max_rel_err=" << g.max_rel_err
                  << " checked=" << g.checked << "\n";
    }
    std::cout << (report.all_pass ? "all parameter groups pass" : "gradient audit FAILED")
              << " (tolerance " << report.tolerance << ")\n";
    return report.all_pass ? kOk : kAuditFailed;
}

int cmd_make_records(const std::string& kind, std::size_t n, std::uint64_t seed,
                     const std::string& out) {
    if (out.empty()) throw ConfigError("--out is required");
    auto data = synth_dataset(synth_kind_from_string(kind), n, seed);
    save_records(data, out);
    std::cout << "wrote " << data.size() << " " << kind << " records to " << out << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"omnifuse: desk-scale multimodal fusion experiments"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* train = app.add_subcommand("train", "run the training stages from a config");
    train->add_option("--config", args.config_path, "run-config JSON")->required();
    train->add_option("--checkpoint", args.checkpoint_path, "stage-1 checkpoint for an sft-only run");
    train->add_option("--seed", args.seed, "override the config seed");
    train->add_option("--out", args.out_dir, "override the output directory");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over a record file");
    eval_cmd->add_option("--config", args.config_path, "run-config JSON")->required();
    eval_cmd->add_option("--checkpoint", args.checkpoint_path, "model checkpoint")->required();
    eval_cmd->add_option("--records", args.records_path, "JSONL record file")->required();
    eval_cmd->add_option("--seed", args.seed, "override the config seed");
    eval_cmd->add_option("--out", args.out_dir, "override the output directory");

    std::int64_t tp_w = 0, tp_h = 0, tp_res = 336, tp_max = 6;
    auto* tile = app.add_subcommand("tile-plan", "print the grid layout for an image size");
    tile->add_option("width", tp_w, "image width in pixels")->required();
    tile->add_option("height", tp_h, "image height in pixels")->required();
    tile->add_option("tile_res", tp_res, "tile resolution (encoder input size)");
    tile->add_option("max_tiles", tp_max, "tile budget");

    std::size_t repeats = 30;
    auto* bench = app.add_subcommand("bench-adapters", "forward latency across adapter variants");
    bench->add_option("--config", args.config_path, "optional run-config for the geometries");
    bench->add_option("--repeats", repeats, "timing repetitions (>= 3)");
    bench->add_option("--seed", args.seed, "feature seed");
    bench->add_option("--out", args.out_dir, "write bench.json here");

    std::string corrupt_group;
    auto* gc = app.add_subcommand("grad-check", "finite-difference audit of a toy config");
    gc->add_option("--config", args.config_path, "run-config JSON")->required();
    gc->add_option("--seed", args.seed, "override the config seed");
    gc->add_option("--corrupt-group", corrupt_group, "test hook: corrupt one group's gradient")
        ->group(""); // hidden
    gc->add_option("--out", args.out_dir, "unused, accepted for symmetry")->group("");

    std::string mk_kind = "caption", mk_out;
    std::size_t mk_n = 64;
    std::uint64_t mk_seed = 0;
    auto* mk = app.add_subcommand("make-records", "write a synthetic dataset as a record file");
    mk->add_option("--kind", mk_kind, "caption | vqa | formula | glyph");
    mk->add_option("--n", mk_n, "number of records");
    mk->add_option("--seed", mk_seed, "generator seed");
    mk->add_option("--out", mk_out, "output JSONL path")->required();

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(args);
        if (eval_cmd->parsed()) return cmd_eval(args);
        if (tile->parsed()) return cmd_tile_plan(tp_w, tp_h, tp_res, tp_max);
        if (bench->parsed()) return cmd_bench_adapters(args, repeats);
        if (gc->parsed()) return cmd_grad_check(args, corrupt_group);
        if (mk->parsed()) return cmd_make_records(mk_kind, mk_n, mk_seed, mk_out);
        return kConfigError;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const FormatError& e) {
        std::cerr << "file error: " << e.what() << "\n";
        return kFileError;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternalError;
    }
}
