#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "omnifuse/adapters.hpp"
#include "omnifuse/encoder.hpp"
#include "omnifuse/errors.hpp"
#include "omnifuse/eval.hpp"
#include "omnifuse/synth.hpp"
#include "omnifuse/tiler.hpp"

namespace py = pybind11;
using namespace omnifuse;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    Shape shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i)
        shape.push_back(static_cast<std::size_t>(arr.shape(i)));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from_data(shape, std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (std::size_t d : t.shape()) shape.push_back(static_cast<py::ssize_t>(d));
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

// images cross the boundary as (H, W, 3) float arrays in [0, 1]
ImageTensor image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3 || arr.shape(2) != 3) {
        throw ShapeError("image must have shape (H, W, 3)");
    }
    ImageTensor img(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    auto view = arr.unchecked<3>();
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(c, y, x) = view(static_cast<py::ssize_t>(y), static_cast<py::ssize_t>(x),
                                       static_cast<py::ssize_t>(c));
    return img;
}

py::array_t<double> array_from_image(const ImageTensor& img) {
    py::array_t<double> out({static_cast<py::ssize_t>(img.height),
                             static_cast<py::ssize_t>(img.width), py::ssize_t{3}});
    auto view = out.mutable_unchecked<3>();
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                view(static_cast<py::ssize_t>(y), static_cast<py::ssize_t>(x),
                     static_cast<py::ssize_t>(c)) = img.at(c, y, x);
    return out;
}

EncoderConfig config_from_kwargs(const std::string& preset, py::dict overrides) {
    EncoderConfig cfg = encoder_preset(preset);
    for (auto item : overrides) {
        const std::string key = py::cast<std::string>(item.first);
        if (key == "name") cfg.name = py::cast<std::string>(item.second);
        else if (key == "patch_size") cfg.patch_size = py::cast<std::size_t>(item.second);
        else if (key == "input_resolution") cfg.input_resolution = py::cast<std::size_t>(item.second);
        else if (key == "num_layers") cfg.num_layers = py::cast<std::size_t>(item.second);
        else if (key == "hidden_dim") cfg.hidden_dim = py::cast<std::size_t>(item.second);
        else if (key == "num_heads") cfg.num_heads = py::cast<std::size_t>(item.second);
        else if (key == "feature_layer") cfg.feature_layer = py::cast<int>(item.second);
        else throw ConfigError("unknown encoder field '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

AdapterVariant variant_from_args(const std::string& name, std::size_t hidden_dim, std::size_t heads,
                                 std::size_t kv_rows, bool literal_attention_pool) {
    AdapterVariant v;
    v.kind = adapter_kind_from_string(name);
    v.hidden_dim = hidden_dim;
    v.heads = heads;
    v.kv_rows = kv_rows;
    v.literal_attention_pool = literal_attention_pool;
    v.validate();
    return v;
}

/// Thin owner pairing an encoder with its geometry for Python callers.
class PyEncoder {
public:
    PyEncoder(const std::string& preset, py::dict overrides, std::uint64_t seed)
        : enc_(config_from_kwargs(preset, overrides)) {
        enc_.init_random(seed);
    }

    py::list encode(const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
        LayerFeatures f = enc_.encode(enc_.preprocess(image_from_array(image)));
        py::list out;
        for (const auto& layer : f.layers) out.append(array_from_tensor(layer));
        return out;
    }

    std::size_t token_count() const { return enc_.config().token_count(); }
    const EncoderConfig& config() const { return enc_.config(); }

private:
    VisionEncoder enc_;
};

} // namespace

PYBIND11_MODULE(_omnifuse, m) {
    m.doc() = "Multimodal fusion adapters, tiling, and metrics (C++ core)";

    py::register_exception<Error>(m, "OmnifuseError");

    // tensor ops
    m.def("gelu", [](py::array_t<double, py::array::c_style | py::array::forcecast> x) {
        return array_from_tensor(gelu(tensor_from_array(x)));
    }, py::arg("x"), "Exact erf-based GELU, elementwise.");
    m.def("softmax", [](py::array_t<double, py::array::c_style | py::array::forcecast> x, int axis) {
        return array_from_tensor(softmax(tensor_from_array(x), axis));
    }, py::arg("x"), py::arg("axis") = -1);
    m.def("layer_norm",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
             py::array_t<double, py::array::c_style | py::array::forcecast> gain,
             py::array_t<double, py::array::c_style | py::array::forcecast> bias, double eps) {
              return array_from_tensor(layer_norm(tensor_from_array(x), tensor_from_array(gain),
                                                  tensor_from_array(bias), eps));
          },
          py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-5);
    m.def("matmul",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
             py::array_t<double, py::array::c_style | py::array::forcecast> b) {
              return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
          });

    // tiler
    m.def("plan_grid", [](std::size_t w, std::size_t h, std::size_t tile_res, std::size_t max_tiles) {
        TileLayout ly = plan_grid(w, h, tile_res, max_tiles);
        py::dict d;
        d["grid_rows"] = ly.grid_rows;
        d["grid_cols"] = ly.grid_cols;
        d["scaled_w"] = ly.scaled_w;
        d["scaled_h"] = ly.scaled_h;
        d["pad_right"] = ly.pad_right;
        d["pad_bottom"] = ly.pad_bottom;
        d["tile_res"] = ly.tile_res;
        return d;
    }, py::arg("width"), py::arg("height"), py::arg("tile_res"), py::arg("max_tiles"));
    m.def("split", [](py::array_t<double, py::array::c_style | py::array::forcecast> image,
                      std::size_t tile_res, std::size_t max_tiles) {
        ImageTensor img = image_from_array(image);
        TileLayout ly = plan_grid(img.width, img.height, tile_res, max_tiles);
        TileBatch batch = split(img, ly);
        py::list tiles;
        for (const auto& t : batch.tiles) tiles.append(array_from_image(t));
        py::dict d;
        d["overview"] = array_from_image(batch.overview);
        d["tiles"] = tiles;
        d["grid_rows"] = ly.grid_rows;
        d["grid_cols"] = ly.grid_cols;
        return d;
    }, py::arg("image"), py::arg("tile_res"), py::arg("max_tiles"));

    // metrics
    m.def("levenshtein", &levenshtein);
    m.def("ned", &ned, py::arg("pred"), py::arg("ref"));
    m.def("exact_match", &exact_match, py::arg("pred"), py::arg("ref"), py::arg("normalize") = false);

    // encoders & adapters
    m.def("encoder_presets", &encoder_preset_names);
    m.def("encoder_config", [](const std::string& preset, py::kwargs kwargs) {
        EncoderConfig cfg = config_from_kwargs(preset, kwargs);
        py::dict d;
        d["name"] = cfg.name;
        d["patch_size"] = cfg.patch_size;
        d["input_resolution"] = cfg.input_resolution;
        d["num_layers"] = cfg.num_layers;
        d["hidden_dim"] = cfg.hidden_dim;
        d["num_heads"] = cfg.num_heads;
        d["feature_layer"] = cfg.feature_layer;
        d["token_count"] = cfg.token_count();
        return d;
    }, py::arg("preset"));

    py::class_<PyEncoder>(m, "Encoder")
        .def(py::init<const std::string&, py::dict, std::uint64_t>(), py::arg("preset"),
             py::arg("overrides") = py::dict(), py::arg("seed") = 0)
        .def("encode", &PyEncoder::encode, py::arg("image"),
             "Per-layer hidden states for an (H, W, 3) image in [0, 1].")
        .def_property_readonly("token_count", &PyEncoder::token_count);

    m.def("output_token_count",
          [](const std::string& variant, const std::vector<std::string>& encoder_presets,
             std::size_t kv_rows, bool literal_attention_pool) {
              AdapterVariant v = variant_from_args(variant, 0, 4, kv_rows, literal_attention_pool);
              std::vector<EncoderConfig> cfgs;
              for (const auto& p : encoder_presets) cfgs.push_back(encoder_preset(p));
              return output_token_count(v, cfgs);
          },
          py::arg("variant"), py::arg("encoders"), py::arg("kv_rows") = 576,
          py::arg("literal_attention_pool") = false);

    m.def("adapter_forward",
          [](const std::string& variant, const std::vector<std::string>& encoder_presets,
             std::size_t d_lm, std::uint64_t seed,
             const std::vector<std::vector<py::array_t<double, py::array::c_style |
                                                                    py::array::forcecast>>>& features,
             std::size_t hidden_dim, std::size_t heads, std::size_t kv_rows,
             bool literal_attention_pool) {
              AdapterVariant v =
                  variant_from_args(variant, hidden_dim, heads, kv_rows, literal_attention_pool);
              std::vector<EncoderConfig> cfgs;
              for (const auto& p : encoder_presets) cfgs.push_back(encoder_preset(p));
              Rng rng = Rng(seed).fork("py-adapter");
              auto adapter = make_adapter(v, cfgs, d_lm, rng, /*trainable=*/false);
              std::vector<LayerFeatures> stacks;
              for (std::size_t e = 0; e < features.size(); ++e) {
                  LayerFeatures f;
                  f.encoder_name = cfgs.at(e).name;
                  for (const auto& layer : features[e]) f.layers.push_back(tensor_from_array(layer));
                  stacks.push_back(std::move(f));
              }
              return array_from_tensor(adapter->forward(stacks));
          },
          py::arg("variant"), py::arg("encoders"), py::arg("d_lm"), py::arg("seed"),
          py::arg("features"), py::arg("hidden_dim") = 0, py::arg("heads") = 4,
          py::arg("kv_rows") = 576, py::arg("literal_attention_pool") = false,
          "One adapter forward pass over per-encoder layer stacks.");

    // synthetic data
    m.def("synth_dataset", [](const std::string& kind, std::size_t n, std::uint64_t seed) {
        py::list out;
        for (const auto& rec : synth_dataset(synth_kind_from_string(kind), n, seed)) {
            py::dict d;
            d["id"] = rec.id;
            d["image"] = array_from_image(rec.image);
            d["prompt"] = rec.prompt;
            d["reference"] = rec.reference;
            out.append(d);
        }
        return out;
    }, py::arg("kind"), py::arg("n"), py::arg("seed") = 0);

    m.attr("__version__") = "0.1.0";
}
