#include "omnifuse/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "omnifuse/errors.hpp"

namespace omnifuse {

namespace {

using json = nlohmann::ordered_json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) {
            throw ConfigError("config: unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + key + "'");
    }
}

EncoderConfig parse_encoder(const json& j, std::size_t index) {
    const std::string where = "encoders[" + std::to_string(index) + "]";
    check_keys(j, {"preset", "name", "patch_size", "input_resolution", "num_layers", "hidden_dim",
                   "num_heads", "feature_layer"},
               where);
    EncoderConfig cfg;
    if (j.contains("preset")) {
        cfg = encoder_preset(j.at("preset").get<std::string>());
    } else {
        for (const char* req : {"name", "patch_size", "input_resolution", "num_layers",
                                "hidden_dim", "num_heads"}) {
            if (!j.contains(req)) {
                throw ConfigError("config: " + where + " needs '" + req + "' (or a preset)");
            }
        }
    }
    cfg.name = get_or<std::string>(j, "name", cfg.name);
    cfg.patch_size = get_or<std::size_t>(j, "patch_size", cfg.patch_size);
    cfg.input_resolution = get_or<std::size_t>(j, "input_resolution", cfg.input_resolution);
    cfg.num_layers = get_or<std::size_t>(j, "num_layers", cfg.num_layers);
    cfg.hidden_dim = get_or<std::size_t>(j, "hidden_dim", cfg.hidden_dim);
    cfg.num_heads = get_or<std::size_t>(j, "num_heads", cfg.num_heads);
    cfg.feature_layer = get_or<int>(j, "feature_layer", cfg.feature_layer);
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_stage(const json& j, Stage stage, const std::string& where) {
    check_keys(j, {"lr", "batch_size", "steps", "weight_decay", "warmup_frac", "clip_norm", "lora",
                   "seed", "freeze", "precision"},
               where);
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.lr = get_or<double>(j, "lr", 0.0);
    cfg.batch_size = get_or<std::size_t>(j, "batch_size", 0);
    cfg.steps = get_or<std::size_t>(j, "steps", 200);
    cfg.weight_decay = get_or<double>(j, "weight_decay", 0.0);
    cfg.warmup_frac = get_or<double>(j, "warmup_frac", 0.03);
    cfg.clip_norm = get_or<double>(j, "clip_norm", 1.0);
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.precision = get_or<std::string>(j, "precision", "f64");
    if (j.contains("lora") && !j.at("lora").is_null()) {
        const json& lj = j.at("lora");
        check_keys(lj, {"rank", "alpha"}, where + ".lora");
        LoraSettings lora;
        lora.rank = get_or<std::size_t>(lj, "rank", 4);
        lora.alpha = get_or<double>(lj, "alpha", 8.0);
        if (lora.rank == 0) throw ConfigError("config: " + where + ".lora.rank must be >= 1");
        cfg.lora = lora;
    }
    if (j.contains("freeze")) {
        const json& fj = j.at("freeze");
        check_keys(fj, {"encoders", "adapter", "special_tokens", "lm"}, where + ".freeze");
        FreezeFlags f;
        f.encoders = get_or<bool>(fj, "encoders", true);
        f.adapter = get_or<bool>(fj, "adapter", false);
        f.special_tokens = get_or<bool>(fj, "special_tokens", false);
        f.lm = get_or<bool>(fj, "lm", stage == Stage::Pretrain);
        cfg.freeze = f;
    }
    return cfg;
}

json dump_train_stage(const TrainConfig& cfg) {
    json j;
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["steps"] = cfg.steps;
    j["weight_decay"] = cfg.weight_decay;
    j["warmup_frac"] = cfg.warmup_frac;
    j["clip_norm"] = cfg.clip_norm;
    j["seed"] = cfg.seed;
    j["precision"] = cfg.precision;
    if (cfg.lora) j["lora"] = {{"rank", cfg.lora->rank}, {"alpha", cfg.lora->alpha}};
    if (cfg.freeze) {
        j["freeze"] = {{"encoders", cfg.freeze->encoders},
                       {"adapter", cfg.freeze->adapter},
                       {"special_tokens", cfg.freeze->special_tokens},
                       {"lm", cfg.freeze->lm}};
    }
    return j;
}

} // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    check_keys(j, {"schema_version", "seed", "out_dir", "encoders", "adapter", "decoder", "tiling",
                   "data", "train", "eval"},
               "the top level");
    RunConfig cfg;
    if (!j.contains("schema_version")) throw ConfigError("config: schema_version is required");
    cfg.schema_version = j.at("schema_version").get<int>();
    if (cfg.schema_version != 1) {
        throw ConfigError("config: unsupported schema_version " +
                          std::to_string(cfg.schema_version));
    }
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.out_dir = get_or<std::string>(j, "out_dir", "runs/out");

    if (!j.contains("encoders") || !j.at("encoders").is_array() || j.at("encoders").empty()) {
        throw ConfigError("config: encoders must be a non-empty array");
    }
    std::size_t ei = 0;
    for (const auto& ej : j.at("encoders")) cfg.encoders.push_back(parse_encoder(ej, ei++));

    if (j.contains("adapter")) {
        const json& aj = j.at("adapter");
        check_keys(aj, {"variant", "hidden_dim", "heads", "kv_rows", "literal_attention_pool"},
                   "adapter");
        if (!aj.contains("variant")) throw ConfigError("config: adapter.variant is required");
        cfg.adapter.kind = adapter_kind_from_string(aj.at("variant").get<std::string>());
        cfg.adapter.hidden_dim = get_or<std::size_t>(aj, "hidden_dim", 0);
        cfg.adapter.heads = get_or<std::size_t>(aj, "heads", 4);
        cfg.adapter.kv_rows = get_or<std::size_t>(aj, "kv_rows", 576);
        cfg.adapter.literal_attention_pool = get_or<bool>(aj, "literal_attention_pool", false);
    }

    if (j.contains("decoder")) {
        const json& dj = j.at("decoder");
        check_keys(dj, {"layers", "width", "heads", "max_seq_len", "charset"}, "decoder");
        cfg.decoder.layers = get_or<std::size_t>(dj, "layers", 2);
        cfg.decoder.width = get_or<std::size_t>(dj, "width", 32);
        cfg.decoder.heads = get_or<std::size_t>(dj, "heads", 4);
        cfg.decoder.max_seq_len = get_or<std::size_t>(dj, "max_seq_len", 2048);
        cfg.charset = get_or<std::string>(dj, "charset", "");
    }

    if (j.contains("tiling")) {
        const json& tj = j.at("tiling");
        check_keys(tj, {"enabled", "tile_res", "max_tiles", "text_reserve"}, "tiling");
        cfg.tiling.enabled = get_or<bool>(tj, "enabled", false);
        cfg.tiling.tile_res = get_or<std::size_t>(tj, "tile_res", 0);
        cfg.tiling.max_tiles = get_or<std::size_t>(tj, "max_tiles", 4);
        cfg.tiling.text_reserve = get_or<std::size_t>(tj, "text_reserve", 64);
    }

    if (j.contains("data")) {
        const json& dj = j.at("data");
        check_keys(dj, {"kind", "n", "seed"}, "data");
        cfg.data.kind = synth_kind_from_string(get_or<std::string>(dj, "kind", "caption"));
        cfg.data.n = get_or<std::size_t>(dj, "n", 64);
        cfg.data.seed = get_or<std::uint64_t>(dj, "seed", 0);
        if (cfg.data.n == 0) throw ConfigError("config: data.n must be >= 1");
    }

    if (j.contains("train")) {
        const json& tj = j.at("train");
        check_keys(tj, {"stages", "pretrain", "sft"}, "train");
        if (tj.contains("stages")) {
            cfg.train.stages.clear();
            for (const auto& sj : tj.at("stages")) {
                const std::string s = sj.get<std::string>();
                if (s == "pretrain")
                    cfg.train.stages.push_back(Stage::Pretrain);
                else if (s == "sft")
                    cfg.train.stages.push_back(Stage::Sft);
                else
                    throw ConfigError("config: unknown stage '" + s + "'");
            }
        }
        cfg.train.pretrain = parse_train_stage(tj.contains("pretrain") ? tj.at("pretrain") : json::object(),
                                               Stage::Pretrain, "train.pretrain");
        cfg.train.sft =
            parse_train_stage(tj.contains("sft") ? tj.at("sft") : json::object(), Stage::Sft,
                              "train.sft");
    } else {
        cfg.train.pretrain.stage = Stage::Pretrain;
        cfg.train.sft.stage = Stage::Sft;
    }

    if (j.contains("eval")) {
        const json& ej = j.at("eval");
        check_keys(ej, {"metrics", "tiling", "max_new"}, "eval");
        if (ej.contains("metrics")) {
            cfg.eval.metrics.clear();
            for (const auto& mj : ej.at("metrics")) cfg.eval.metrics.push_back(mj.get<std::string>());
        }
        const std::string t = get_or<std::string>(ej, "tiling", "off");
        if (t != "on" && t != "off") throw ConfigError("config: eval.tiling must be 'on' or 'off'");
        cfg.eval.tiling = t == "on";
        cfg.eval.max_new = get_or<std::size_t>(ej, "max_new", 32);
    }

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
    json j;
    j["schema_version"] = cfg.schema_version;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["encoders"] = json::array();
    for (const auto& e : cfg.encoders) {
        j["encoders"].push_back({{"name", e.name},
                                 {"patch_size", e.patch_size},
                                 {"input_resolution", e.input_resolution},
                                 {"num_layers", e.num_layers},
                                 {"hidden_dim", e.hidden_dim},
                                 {"num_heads", e.num_heads},
                                 {"feature_layer", e.feature_layer}});
    }
    j["adapter"] = {{"variant", to_string(cfg.adapter.kind)},
                    {"hidden_dim", cfg.adapter.hidden_dim},
                    {"heads", cfg.adapter.heads},
                    {"kv_rows", cfg.adapter.kv_rows},
                    {"literal_attention_pool", cfg.adapter.literal_attention_pool}};
    j["decoder"] = {{"layers", cfg.decoder.layers},
                    {"width", cfg.decoder.width},
                    {"heads", cfg.decoder.heads},
                    {"max_seq_len", cfg.decoder.max_seq_len},
                    {"charset", cfg.charset}};
    j["tiling"] = {{"enabled", cfg.tiling.enabled},
                   {"tile_res", cfg.tiling.tile_res},
                   {"max_tiles", cfg.tiling.max_tiles},
                   {"text_reserve", cfg.tiling.text_reserve}};
    j["data"] = {{"kind", to_string(cfg.data.kind)}, {"n", cfg.data.n}, {"seed", cfg.data.seed}};
    json stages = json::array();
    for (Stage s : cfg.train.stages) stages.push_back(s == Stage::Pretrain ? "pretrain" : "sft");
    j["train"] = {{"stages", stages},
                  {"pretrain", dump_train_stage(cfg.train.pretrain)},
                  {"sft", dump_train_stage(cfg.train.sft)}};
    j["eval"] = {{"metrics", cfg.eval.metrics},
                 {"tiling", cfg.eval.tiling ? "on" : "off"},
                 {"max_new", cfg.eval.max_new}};
    return j.dump(2);
}

void RunConfig::validate() const {
    if (encoders.empty() || encoders.size() > 2) {
        throw ConfigError("config: one or two encoders required");
    }
    for (const auto& e : encoders) e.validate();
    adapter.validate();

    const std::size_t arity = adapter_arity(adapter.kind);
    const bool arity_ok =
        encoders.size() == arity || (adapter.kind == AdapterKind::LayerSumFuse && encoders.size() == 1);
    if (!arity_ok) {
        throw ConfigError("config: adapter '" + to_string(adapter.kind) + "' takes " +
                          std::to_string(arity) + " encoder(s), got " +
                          std::to_string(encoders.size()));
    }

    DecoderConfig dec = decoder;
    dec.vocab = make_vocab().size();
    dec.validate();

    // sequence budget must fit the planned visual block plus reserved text
    const std::size_t per_view = output_token_count(adapter, encoders);
    const std::size_t reserve = tiling.text_reserve;
    if (tiling.enabled) {
        if (tiling.tile_res != 0 && tiling.tile_res != encoders[0].input_resolution) {
            throw ConfigError("config: tiling.tile_res must equal encoder 0's input resolution");
        }
        if (max_tiles_for_budget(dec.max_seq_len, reserve, per_view) == 0) {
            throw ConfigError("config: sequence budget " + std::to_string(dec.max_seq_len) +
                              " cannot fit an overview plus one tile of " +
                              std::to_string(per_view) + " tokens with text_reserve " +
                              std::to_string(reserve));
        }
    } else if (per_view + 2 + reserve > dec.max_seq_len) {
        throw ConfigError("config: visual block (" + std::to_string(per_view) +
                          " tokens + 2 special) plus text_reserve " + std::to_string(reserve) +
                          " exceeds max_seq_len " + std::to_string(dec.max_seq_len));
    }
}

Vocabulary RunConfig::make_vocab() const {
    return charset.empty() ? Vocabulary::printable_ascii() : Vocabulary(charset);
}

OmniModel RunConfig::make_model() const {
    Vocabulary vocab = make_vocab();
    DecoderConfig dec = decoder;
    dec.vocab = vocab.size();
    return OmniModel(encoders, adapter, dec, std::move(vocab), tiling, seed);
}

std::vector<SynthRecord> RunConfig::make_dataset() const {
    return synth_dataset(data.kind, data.n, data.seed);
}

EvalOptions RunConfig::eval_options() const {
    EvalOptions opts;
    opts.metrics = eval.metrics;
    opts.tiling = eval.tiling;
    opts.max_new = eval.max_new;
    return opts;
}

} // namespace omnifuse
