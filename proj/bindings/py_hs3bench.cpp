// Python veneer over the hs3 core: dataset access, preprocessing, scoring,
// model building, training and evaluation. Cubes cross the boundary as
// float32 (H, W, C) arrays and label maps as uint16 (H, W) arrays where
// 0xFFFF marks ignored pixels (also accepted as any negative value on input).
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hs3/bench.hpp"
#include "hs3/common.hpp"
#include "hs3/core.hpp"
#include "hs3/dataset.hpp"
#include "hs3/metrics.hpp"
#include "hs3/models.hpp"
#include "hs3/preprocess.hpp"
#include "hs3/train.hpp"

namespace py = pybind11;
using namespace hs3;

namespace {

SpectralCube cube_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3)
        throw py::value_error("cube must be a (height, width, channels) array");
    SpectralCube cube(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                      static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), cube.values.begin());
    return cube;
}

py::array_t<float> cube_to_array(const SpectralCube& cube) {
    py::array_t<float> a({cube.height, cube.width, cube.channels});
    std::copy(cube.values.begin(), cube.values.end(), a.mutable_data());
    return a;
}

LabelMap labels_from_array(
    const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2)
        throw py::value_error("labels must be a (height, width) array");
    LabelMap map(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    const std::int64_t* src = a.data();
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
        const std::int64_t v = src[i];
        if (v < 0 || v == static_cast<std::int64_t>(kIgnore)) {
            map.labels[i] = kIgnore;
        } else if (v >= static_cast<std::int64_t>(kIgnore)) {
            throw py::value_error("label value " + std::to_string(v) +
                                  " does not fit the uint16 label range");
        } else {
            map.labels[i] = static_cast<label_t>(v);
        }
    }
    return map;
}

py::array_t<std::uint16_t> labels_to_array(const LabelMap& map) {
    py::array_t<std::uint16_t> a({map.height, map.width});
    std::copy(map.labels.begin(), map.labels.end(), a.mutable_data());
    return a;
}

py::dict score_dict(const ScoreSet& s) {
    py::dict d;
    d["acc_micro"] = s.acc_micro;
    d["acc_macro"] = s.acc_macro;
    d["f1_macro"] = s.f1_macro;
    d["jaccard_macro"] = s.jaccard_macro;
    d["recall"] = s.recall;
    d["precision"] = s.precision;
    d["f1"] = s.f1;
    d["jaccard"] = s.jaccard;
    return d;
}

py::dict record_dict(const RunRecord& r) {
    py::dict d;
    d["run_id"] = r.run_id;
    d["dataset"] = r.dataset;
    d["variant"] = r.variant;
    d["status"] = r.status;
    d["epochs"] = static_cast<int>(r.trace.size());
    d["best_epoch"] = r.best_epoch;
    d["best_val_jaccard"] = r.best_val_jaccard;
    d["test_slot_consumed"] = r.test_slot_consumed;
    d["wall_clock_seconds"] = r.wall_clock_seconds;
    d["deviations"] = r.deviations;
    if (r.test_scores) d["test_scores"] = score_dict(*r.test_scores);
    return d;
}

// (cube, labels) pairs are the python-side sample representation.
std::vector<Sample> samples_from_pairs(const py::iterable& pairs) {
    std::vector<Sample> out;
    for (const auto& item : pairs) {
        const auto pair = item.cast<py::tuple>();
        if (pair.size() != 2)
            throw py::value_error("each sample must be a (cube, labels) pair");
        Sample s;
        s.cube = cube_from_array(pair[0].cast<py::array_t<float, py::array::c_style | py::array::forcecast>>());
        s.labels = labels_from_array(pair[1].cast<py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>>());
        out.push_back(std::move(s));
    }
    return out;
}

// Owns the model; forwards the operations python needs.
struct PyModel {
    ModelConfig config;
    std::unique_ptr<SegmentationModel> impl;
    RunRecord record;  // filled by train(); carries the test-slot state
    bool has_record = false;
};

PyModel build_py_model(const std::string& architecture, int in_channels, int num_classes,
                       std::uint64_t seed, int base_width, double dropout, bool batchnorm,
                       const std::string& pretrain_mode) {
    PyModel m;
    m.config.architecture = architecture_from_string(architecture);
    m.config.in_channels = in_channels;
    m.config.num_classes = num_classes;
    m.config.base_width = base_width;
    m.config.dropout_p = dropout;
    m.config.batchnorm = batchnorm;
    m.config.pretrain_mode = pretrain_from_string(pretrain_mode);
    m.impl = build_model(m.config, seed);
    return m;
}

TrainConfig config_from_kwargs(const std::string& dataset, double learning_rate,
                               double epsilon, int batch_size, int max_epochs,
                               bool early_stopping, int patience, std::uint64_t seed,
                               double augment_probability) {
    TrainConfig c;
    c.dataset = dataset;
    c.learning_rate = learning_rate;
    c.optimizer_epsilon = epsilon;
    c.batch_size = batch_size;
    c.max_epochs = max_epochs;
    c.early_stopping = early_stopping;
    c.patience = patience;
    c.seed = seed;
    c.augmentation = augment_probability > 0.0 ? AugmentationPolicy::flip(augment_probability)
                                               : AugmentationPolicy::none();
    return c;
}

}  // namespace

PYBIND11_MODULE(_hs3bench, m) {
    m.doc() = "Hyperspectral semantic segmentation benchmark core";
    m.attr("__version__") = "1.0.0";
    m.attr("IGNORE") = static_cast<int>(kIgnore);

    // Library errors surface as ValueError (validation) or RuntimeError.
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::validation)
                PyErr_SetString(PyExc_ValueError, e.what());
            else
                PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    // ------------------------------------------------------------ datasets
    py::class_<DatasetDescriptor>(m, "Descriptor")
        .def_property_readonly("name", [](const DatasetDescriptor& d) { return d.name; })
        .def_property_readonly("expected_channels",
                               [](const DatasetDescriptor& d) { return d.expected_channels; })
        .def_property_readonly(
            "num_evaluated_classes",
            [](const DatasetDescriptor& d) { return d.catalog.evaluated_count(); })
        .def_property_readonly("class_names",
                               [](const DatasetDescriptor& d) {
                                   std::vector<std::string> names;
                                   for (const auto& c : d.catalog.classes) names.push_back(c.name);
                                   return names;
                               })
        .def_property_readonly("evaluated_class_names",
                               [](const DatasetDescriptor& d) { return d.catalog.evaluated_names(); })
        .def_property_readonly("prgb_bands",
                               [](const DatasetDescriptor& d) { return d.prgb_bands; })
        .def_property_readonly("root_path",
                               [](const DatasetDescriptor& d) { return d.root_path; })
        .def("__repr__", [](const DatasetDescriptor& d) {
            return "<Descriptor '" + d.name + "' channels=" +
                   std::to_string(d.expected_channels) + " classes=" +
                   std::to_string(d.catalog.classes.size()) + ">";
        });

    m.def("load_descriptor", &load_descriptor, py::arg("path"),
          "Parse a descriptor.json file.");

    m.def(
        "generate_fixture",
        [](const std::string& out_dir, int n_images, int height, int width, int channels,
           int num_classes, double noise_sigma, std::uint64_t seed, const std::string& name) {
            FixtureSpec spec;
            spec.n_images = n_images;
            spec.height = height;
            spec.width = width;
            spec.channels = channels;
            spec.num_classes = num_classes;
            spec.noise_sigma = noise_sigma;
            spec.seed = seed;
            return generate_fixture(spec, out_dir, name);
        },
        py::arg("out_dir"), py::arg("n_images") = 4, py::arg("height") = 16,
        py::arg("width") = 16, py::arg("channels") = 8, py::arg("num_classes") = 3,
        py::arg("noise_sigma") = 0.0, py::arg("seed") = 0, py::arg("name") = "fixture",
        "Write a synthetic dataset (descriptor + samples) and return its descriptor.");

    m.def("list_samples", &list_samples, py::arg("descriptor"),
          "Deterministic listing of every sample id.");

    m.def(
        "load_sample",
        [](const DatasetDescriptor& d, const std::string& id) {
            const Sample s = load_sample(d, id);
            return py::make_tuple(cube_to_array(s.cube), labels_to_array(s.labels));
        },
        py::arg("descriptor"), py::arg("id"),
        "Load one sample as a (cube, labels) array pair.");

    py::class_<SplitManifest>(m, "SplitManifest")
        .def_property_readonly("dataset", [](const SplitManifest& s) { return s.dataset; })
        .def_property_readonly("seed", [](const SplitManifest& s) { return s.seed; })
        .def_property_readonly("train", [](const SplitManifest& s) { return s.train; })
        .def_property_readonly("val", [](const SplitManifest& s) { return s.val; })
        .def_property_readonly("test", [](const SplitManifest& s) { return s.test; })
        .def("save", &save_manifest, py::arg("path"))
        .def_static("load", &load_manifest, py::arg("path"))
        .def("__repr__", [](const SplitManifest& s) {
            return "<SplitManifest '" + s.dataset + "' train=" + std::to_string(s.train.size()) +
                   " val=" + std::to_string(s.val.size()) +
                   " test=" + std::to_string(s.test.size()) + ">";
        });

    m.def(
        "make_splits",
        [](const DatasetDescriptor& d, std::optional<std::vector<std::string>> ids) {
            return make_splits(d, ids ? *ids : list_samples(d));
        },
        py::arg("descriptor"), py::arg("ids") = py::none(),
        "Seeded shuffle-then-partition split of the given (or all) sample ids.");

    // -------------------------------------------------------- preprocessing
    py::class_<FittedPreproc>(m, "Preproc")
        .def_property_readonly("dataset", [](const FittedPreproc& p) { return p.dataset; })
        .def_property_readonly("variant", [](const FittedPreproc& p) { return p.variant; })
        .def_property_readonly("scope",
                               [](const FittedPreproc& p) { return std::string(to_string(p.scope)); })
        .def_property_readonly("output_channels", &FittedPreproc::output_channels)
        .def(
            "apply",
            [](const FittedPreproc& p,
               const py::array_t<float, py::array::c_style | py::array::forcecast>& cube) {
                return cube_to_array(apply_variant(cube_from_array(cube), p));
            },
            py::arg("cube"), "Apply the fitted variant to one cube.")
        .def("to_json", &preproc_to_json)
        .def("save", &save_preproc, py::arg("path"))
        .def_static("load", &load_preproc, py::arg("path"))
        .def("__repr__", [](const FittedPreproc& p) {
            return "<Preproc " + p.dataset + "/" + p.variant + " -> " +
                   std::to_string(p.output_channels()) + " channel(s)>";
        });

    m.def(
        "fit_preproc",
        [](const DatasetDescriptor& d, const std::string& variant,
           std::optional<std::vector<std::string>> ids, std::optional<std::string> scope,
           std::uint64_t seed) {
            const FitScope fit_scope = scope ? fit_scope_from_string(*scope)
                                      : variant == "pca1" ? FitScope::train_split
                                                          : FitScope::whole_dataset;
            const std::vector<std::string> use = ids ? *ids : list_samples(d);
            const CubeSource source = [&](const std::function<void(const SpectralCube&)>& f) {
                for (const auto& id : use) f(load_sample(d, id).cube);
            };
            return fit_variant(d, variant, source, fit_scope, seed);
        },
        py::arg("descriptor"), py::arg("variant"), py::arg("ids") = py::none(),
        py::arg("scope") = py::none(), py::arg("seed") = 0,
        "Fit 'hsi', 'pca1' or 'prgb' preprocessing over the given sample ids "
        "(default: every sample; pca1 defaults to train_split scope).");

    m.def("normalize_value", &normalize_value, py::arg("p"), py::arg("p_min"),
          py::arg("p_max"), "Min-max normalization; a constant channel maps to 0.");

    // --------------------------------------------------------------- scoring
    m.def(
        "score_labels",
        [](const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& truth,
           const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& pred,
           int num_classes) {
            ConfusionMatrix cm(num_classes);
            cm_update(cm, labels_from_array(truth), labels_from_array(pred));
            return score_dict(scores(cm));
        },
        py::arg("truth"), py::arg("pred"), py::arg("num_classes"),
        "Confusion-matrix scores of one prediction; ignored truth pixels "
        "(negative or 0xFFFF) do not count.");

    // ---------------------------------------------------------------- models
    py::class_<PyModel>(m, "Model")
        .def_property_readonly("architecture",
                               [](const PyModel& p) {
                                   return std::string(to_string(p.config.architecture));
                               })
        .def_property_readonly("in_channels",
                               [](const PyModel& p) { return p.config.in_channels; })
        .def_property_readonly("num_classes",
                               [](const PyModel& p) { return p.config.num_classes; })
        .def_property_readonly(
            "trainable_parameters",
            [](const PyModel& p) { return p.impl->trainable_parameter_count(); })
        .def(
            "predict",
            [](PyModel& p,
               const py::array_t<float, py::array::c_style | py::array::forcecast>& cube) {
                return labels_to_array(predict_labels(*p.impl, cube_from_array(cube)));
            },
            py::arg("cube"), "Per-pixel argmax labels for one cube.")
        .def(
            "save_checkpoint",
            [](PyModel& p, const std::string& path) { save_checkpoint(snapshot(*p.impl), path); },
            py::arg("path"))
        .def("__repr__", [](const PyModel& p) {
            return "<Model " + std::string(to_string(p.config.architecture)) + " in=" +
                   std::to_string(p.config.in_channels) + " classes=" +
                   std::to_string(p.config.num_classes) + ">";
        });

    m.def("build_model", &build_py_model, py::arg("architecture") = "runet",
          py::arg("in_channels") = 3, py::arg("num_classes") = 2, py::arg("seed") = 0,
          py::arg("base_width") = 64, py::arg("dropout") = 0.25, py::arg("batchnorm") = true,
          py::arg("pretrain_mode") = "none", "Construct a segmentation model.");

    m.def(
        "load_model",
        [](const std::string& path) {
            const Checkpoint ckpt = load_checkpoint(path);
            PyModel m;
            m.config = ckpt.config;
            m.impl = build_model(ckpt.config, ckpt.seed);
            load_tensors(*m.impl, ckpt, [](const std::string&) { return true; });
            return m;
        },
        py::arg("path"), "Rebuild a model from a saved checkpoint.");

    // -------------------------------------------------------------- training
    m.def(
        "train_model",
        [](PyModel& model, const py::iterable& train_pairs, const py::iterable& val_pairs,
           const std::string& dataset, double learning_rate, double epsilon, int batch_size,
           int max_epochs, bool early_stopping, int patience, std::uint64_t seed,
           double augment_probability, const std::string& run_dir) {
            const TrainConfig config =
                config_from_kwargs(dataset, learning_rate, epsilon, batch_size, max_epochs,
                                   early_stopping, patience, seed, augment_probability);
            const std::vector<Sample> train_samples = samples_from_pairs(train_pairs);
            const std::vector<Sample> val_samples = samples_from_pairs(val_pairs);
            RunContext ctx;
            ctx.run_dir = run_dir;
            TrainResult result;
            {
                py::gil_scoped_release release;
                result = train(*model.impl, train_samples, val_samples, config, ctx);
            }
            model.record = result.record;
            model.has_record = true;
            load_tensors(*model.impl, result.best, [](const std::string&) { return true; });
            return record_dict(model.record);
        },
        py::arg("model"), py::arg("train"), py::arg("val"), py::arg("dataset") = "inline",
        py::arg("learning_rate") = 1e-3, py::arg("epsilon") = 1e-8, py::arg("batch_size") = 16,
        py::arg("max_epochs") = 500, py::arg("early_stopping") = true, py::arg("patience") = 20,
        py::arg("seed") = 0, py::arg("augment_probability") = 0.1, py::arg("run_dir") = "",
        "Train on (cube, labels) pairs, restore the best checkpoint into the "
        "model, and return the run record.");

    m.def(
        "evaluate_model",
        [](PyModel& model, const py::iterable& test_pairs, bool override_test_reuse) {
            const std::vector<Sample> samples = samples_from_pairs(test_pairs);
            ScoreSet s;
            {
                py::gil_scoped_release release;
                s = evaluate(*model.impl, samples, model.has_record ? &model.record : nullptr,
                             override_test_reuse);
            }
            return score_dict(s);
        },
        py::arg("model"), py::arg("test"), py::arg("override_test_reuse") = false,
        "Evaluate on (cube, labels) pairs. After train_model the test slot is "
        "single-use; a second call needs override_test_reuse=True.");

    m.def(
        "run_record",
        [](const PyModel& model) -> py::object {
            if (!model.has_record) return py::none();
            return record_dict(model.record);
        },
        py::arg("model"), "The model's run record, or None before training.");

    m.def(
        "load_run_record",
        [](const std::string& run_dir) { return record_dict(load_run_record(run_dir)); },
        py::arg("run_dir"), "Read record.json from a persisted run directory.");
}
