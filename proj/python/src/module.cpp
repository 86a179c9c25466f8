#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <sstream>

#include "vgkit/attention_analysis.hpp"
#include "vgkit/cli.hpp"
#include "vgkit/dataset_gen.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/grounding_metrics.hpp"
#include "vgkit/tensor_io.hpp"
#include "vgkit/toy_mllm.hpp"
#include "vgkit/vgrefine.hpp"

namespace py = pybind11;
using namespace vgkit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

int square_side(const py::buffer_info& info, const char* what) {
  if (info.ndim != 2 || info.shape[0] != info.shape[1] || info.shape[0] == 0)
    throw ShapeError(std::string(what) + " must be a non-empty square 2-D array");
  return static_cast<int>(info.shape[0]);
}

AttentionMap to_map(const DoubleArray& a) {
  const auto info = a.request();
  const int n = square_side(info, "attention");
  const auto* p = static_cast<const double*>(info.ptr);
  return AttentionMap(n, std::vector<double>(p, p + info.size));
}

PatchMask to_mask(const MaskArray& a) {
  const auto info = a.request();
  const int n = square_side(info, "mask");
  const auto* p = static_cast<const std::uint8_t*>(info.ptr);
  return PatchMask(n, std::vector<std::uint8_t>(p, p + info.size));
}

template <class T>
py::array_t<T> grid_array(int n, std::span<const T> cells) {
  py::array_t<T> out({n, n});
  std::copy(cells.begin(), cells.end(), out.mutable_data());
  return out;
}

py::array_t<float> stack_array(const AttentionStack& s) {
  const auto n = static_cast<py::ssize_t>(s.grid_n());
  py::array_t<float> out({static_cast<py::ssize_t>(s.layers()), static_cast<py::ssize_t>(s.heads()), n, n});
  std::copy(s.values().begin(), s.values().end(), out.mutable_data());
  return out;
}

AttentionStack stack_from_array(const FloatArray& a, SourceKind kind) {
  const auto info = a.request();
  if (info.ndim != 4 || info.shape[2] != info.shape[3])
    throw ShapeError("attention stack must have shape (layers, heads, n, n)");
  const auto* p = static_cast<const float*>(info.ptr);
  return AttentionStack(static_cast<std::uint32_t>(info.shape[0]), static_cast<std::uint32_t>(info.shape[1]),
                        static_cast<std::uint32_t>(info.shape[2]), std::vector<float>(p, p + info.size), kind);
}

py::object to_python(const nlohmann::json& doc) {
  return py::module_::import("json").attr("loads")(doc.dump());
}

std::vector<AnalysisSample> to_samples(const py::sequence& seq) {
  std::vector<AnalysisSample> out;
  for (const auto& item : seq) {
    const auto t = item.cast<py::tuple>();
    if (t.size() != 4) throw ConfigError("a sample is (sample_id, question, reference, mask)");
    out.push_back({t[0].cast<std::string>(), t[1].cast<AttentionStack>(), t[2].cast<AttentionStack>(),
                   to_mask(t[3].cast<MaskArray>())});
  }
  return out;
}

template <class E>
void bind_error(py::module_& m, const char* name, py::handle base) {
  py::register_exception<E>(m, name, base);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Visual grounding diagnostics for attention dumps.";

  auto base = py::register_exception<Error>(m, "VgkitError", PyExc_RuntimeError);
  bind_error<IoError>(m, "IoError", base);
  bind_error<FormatError>(m, "FormatError", base);
  bind_error<TruncationError>(m, "TruncationError", base);
  bind_error<InvariantError>(m, "InvariantError", base);
  auto meta = py::register_exception<MetaError>(m, "MetaError", base);
  bind_error<MissingFieldError>(m, "MissingFieldError", meta);
  bind_error<BboxError>(m, "BboxError", meta);
  bind_error<GridMismatchError>(m, "GridMismatchError", meta);
  bind_error<DegenerateInput>(m, "DegenerateInput", base);
  bind_error<DegenerateMask>(m, "DegenerateMask", base);
  bind_error<ShapeError>(m, "ShapeError", base);
  bind_error<RangeError>(m, "RangeError", base);
  bind_error<AllSuppressedError>(m, "AllSuppressedError", base);
  bind_error<ConfigError>(m, "ConfigError", base);

  m.attr("DEFAULT_EPS") = kDefaultEpsilon;
  m.attr("DEFAULT_K") = kDefaultTopK;
  m.attr("DEFAULT_P") = kDefaultPercentile;
  m.attr("DEFAULT_KNOCKOUT_LAYER") = kDefaultKnockoutLayer;

  py::enum_<SourceKind>(m, "SourceKind")
      .value("question", SourceKind::question)
      .value("reference", SourceKind::reference);

  py::class_<AttentionStack>(m, "AttentionStack")
      .def(py::init([](const FloatArray& a, SourceKind kind) {
             auto s = stack_from_array(a, kind);
             s.validate();
             return s;
           }),
           py::arg("values"), py::arg("source_kind") = SourceKind::question)
      .def_property_readonly("layers", &AttentionStack::layers)
      .def_property_readonly("heads", &AttentionStack::heads)
      .def_property_readonly("grid_n", &AttentionStack::grid_n)
      .def_property_readonly("source_kind", &AttentionStack::source_kind)
      .def("to_numpy", &stack_array)
      .def("head", [](const AttentionStack& s, int l, int h) {
        const auto map = head_map(s, l, h);
        return grid_array<double>(map.n(), map.cells());
      })
      .def("__eq__", [](const AttentionStack& a, const AttentionStack& b) { return a == b; })
      .def("__repr__", [](const AttentionStack& s) {
        std::ostringstream o;
        o << "AttentionStack(layers=" << s.layers() << ", heads=" << s.heads() << ", grid_n=" << s.grid_n()
          << ", source_kind=" << to_string(s.source_kind()) << ")";
        return o.str();
      });

  m.def("load_dump", &load_dump, py::arg("path"));
  m.def("save_dump", &save_dump, py::arg("stack"), py::arg("path"));
  m.def("encode_dump", [](const AttentionStack& s) {
    const auto b = encode_dump(s);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("decode_dump", [](const py::bytes& data) {
    const std::string_view v(data);
    return decode_dump(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size()));
  });
  m.def("load_meta", [](const std::filesystem::path& p) { return to_python(nlohmann::json::parse(meta_to_json(load_meta(p)))); });

  m.def("rasterize_bbox",
        [](std::array<double, 4> box, int w, int h, int n) {
          const auto mask = rasterize_bbox(BBox{box[0], box[1], box[2], box[3]}, w, h, n);
          return grid_array<std::uint8_t>(mask.n(), mask.cells());
        },
        py::arg("bbox"), py::arg("image_width"), py::arg("image_height"), py::arg("grid_n"));
  m.def("attention_ratio", [](const DoubleArray& a, const MaskArray& mask) { return attention_ratio(to_map(a), to_mask(mask)); },
        py::arg("attention"), py::arg("mask"));
  m.def("kl_divergence",
        [](const DoubleArray& a, const MaskArray& mask, double eps) { return kl_divergence(to_mask(mask), to_map(a), eps); },
        py::arg("attention"), py::arg("mask"), py::arg("eps") = kDefaultEpsilon);
  m.def("js_divergence",
        [](const DoubleArray& a, const MaskArray& mask, double eps) { return js_divergence(to_mask(mask), to_map(a), eps); },
        py::arg("attention"), py::arg("mask"), py::arg("eps") = kDefaultEpsilon);
  m.def("score",
        [](const DoubleArray& a, const MaskArray& mask, double eps) {
          return to_python(scores_to_json(score(to_map(a), to_mask(mask), eps)));
        },
        py::arg("attention"), py::arg("mask"), py::arg("eps") = kDefaultEpsilon);

  m.def("sweep",
        [](const py::sequence& samples, double eps, bool normalize, bool per_head) {
          const auto s = to_samples(samples);
          SweepConfig cfg;
          cfg.eps = eps;
          cfg.normalize = normalize;
          cfg.per_head = per_head;
          py::gil_scoped_release release;
          const auto r = sweep(s, cfg);
          py::gil_scoped_acquire acquire;
          return to_python(sweep_to_json(r));
        },
        py::arg("samples"), py::arg("eps") = kDefaultEpsilon, py::arg("normalize") = false,
        py::arg("per_head") = false);

  m.def("rank_heads",
        [](const py::sequence& samples, double eps) {
          const auto s = to_samples(samples);
          std::vector<std::tuple<int, int, double>> out;
          for (const auto& e : rank_heads(s, eps).entries) out.emplace_back(e.layer, e.head, e.mean_kl);
          return out;
        },
        py::arg("samples"), py::arg("eps") = kDefaultEpsilon);
  m.def("percentile_threshold", [](const DoubleArray& v, double p) {
    return percentile_threshold(std::span(v.data(), static_cast<std::size_t>(v.size())), p);
  });
  m.def("suppress_and_binarize",
        [](const DoubleArray& a, double p) {
          const auto mask = suppress_and_binarize(to_map(a), p);
          return grid_array<std::uint8_t>(mask.n(), mask.cells());
        },
        py::arg("aggregate"), py::arg("p") = kDefaultPercentile);

  m.def("synthesize_fixture",
        [](const std::filesystem::path& out_dir, std::uint64_t seed, int n_samples, int grid_n, int layers, int heads,
           std::vector<std::pair<int, int>> plant, double sharpness, std::string split, std::string id_prefix) {
          FixtureSpec spec;
          spec.seed = seed;
          spec.n_samples = n_samples;
          spec.grid_n = grid_n;
          spec.layers = layers;
          spec.heads = heads;
          if (!plant.empty()) spec.plant = PlantSpec{std::move(plant), sharpness};
          spec.split = std::move(split);
          spec.id_prefix = std::move(id_prefix);
          return synthesize_fixture(spec, out_dir);
        },
        py::arg("out_dir"), py::arg("seed") = 0, py::arg("n_samples") = 8, py::arg("grid_n") = 24,
        py::arg("layers") = 4, py::arg("heads") = 4, py::arg("plant") = std::vector<std::pair<int, int>>{},
        py::arg("sharpness") = 10.0, py::arg("split") = "calibration", py::arg("id_prefix") = "s");
  m.def("load_fixture", [](const std::filesystem::path& dir) {
    py::list out;
    for (auto& s : load_fixture(dir)) {
      out.append(py::make_tuple(s.sample.sample_id, s.sample.question, s.sample.reference,
                                grid_array<std::uint8_t>(s.sample.mask.n(), s.sample.mask.cells())));
    }
    return out;
  });

  py::class_<ToyModelState>(m, "ToyModel")
      .def(py::init([](int layers, int heads, int model_dim, int grid_n, int vocab_size, std::uint64_t seed) {
             ToyConfig cfg;
             cfg.layers = layers;
             cfg.heads = heads;
             cfg.model_dim = model_dim;
             cfg.grid_n = grid_n;
             cfg.vocab_size = vocab_size;
             cfg.seed = seed;
             return init_model(cfg);
           }),
           py::arg("layers") = 2, py::arg("heads") = 2, py::arg("model_dim") = 8, py::arg("grid_n") = 2,
           py::arg("vocab_size") = 64, py::arg("seed") = 42)
      .def("tokenize", [](const ToyModelState& s, const std::string& text) { return tokenize(text, s.config.vocab_size); })
      .def("forward",
           [](const ToyModelState& s, std::uint64_t image_seed, const std::vector<int>& tokens,
              std::optional<MaskArray> knockout, std::vector<int> layers) {
             const auto visual = make_visual_features(s.config, image_seed);
             std::optional<RefinePlan> plan;
             if (knockout) {
               const auto m = to_mask(*knockout);
               std::sort(layers.begin(), layers.end());
               layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
               plan = RefinePlan{KnockoutMask(m.n(), std::vector<std::uint8_t>(m.cells().begin(), m.cells().end())),
                                 std::move(layers)};
             }
             const auto t = forward(s, visual, tokens, plan ? &*plan : nullptr);
             return py::make_tuple(py::array_t<double>(static_cast<py::ssize_t>(t.logits.size()), t.logits.data()),
                                   t.attention);
           },
           py::arg("image_seed"), py::arg("tokens"), py::arg("knockout_mask") = py::none(),
           py::arg("layers") = std::vector<int>{kDefaultKnockoutLayer});

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
