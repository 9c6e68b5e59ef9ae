#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "wps/backend.hpp"
#include "wps/baseline.hpp"
#include "wps/cli.hpp"
#include "wps/data.hpp"
#include "wps/evaluation.hpp"
#include "wps/inference.hpp"
#include "wps/matching.hpp"
#include "wps/teacher.hpp"
#include "wps/trainer.hpp"

namespace py = pybind11;
using namespace wps;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

ImageTensor image_from_array(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorCode::kShapeMismatch, "image must be H x W x 3");
  ImageTensor img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray image_to_array(const ImageTensor& img) {
  FloatArray out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

IntArray labels_to_array(const SemanticSegmentation& seg) {
  IntArray out({seg.height, seg.width});
  std::copy(seg.labels.begin(), seg.labels.end(), out.mutable_data());
  return out;
}

SemanticSegmentation labels_from_array(const IntArray& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "label map must be 2-D");
  SemanticSegmentation seg(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 0);
  std::copy(a.data(), a.data() + a.size(), seg.labels.begin());
  return seg;
}

StudentOutput make_output(const Matrix& logits, const Matrix& tokens) {
  StudentOutput out;
  out.class_logits = logits;
  out.prompt_tokens = tokens;
  return out;
}

py::dict breakdown_dict(const LossBreakdown& b) {
  py::dict d;
  d["total"] = b.total;
  d["cls"] = b.cls;
  d["reg"] = b.reg;
  d["per_query"] = b.per_query;
  return d;
}

}  // namespace

PYBIND11_MODULE(_wps_sam, m) {
  m.doc() = "Weakly-supervised part segmentation with a learned prompter";

  static py::exception<Error> wps_error(m, "WpsError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = wps_error;
      py::object inst = exc(e.what());
      inst.attr("code") = static_cast<int>(e.code());
      inst.attr("name") = std::string(error_code_name(e.code()));
      PyErr_SetObject(wps_error.ptr(), inst.ptr());
    }
  });

  py::enum_<LabelKind>(m, "LabelKind").value("BOX", LabelKind::kBox).value("POINT", LabelKind::kPoint);

#define WPS_FIELD(name) .def_readwrite(#name, &Config::name)
  py::class_<Config>(m, "Config")
      .def(py::init<>())
      .def_static("desk_scale", &Config::desk_scale)
      .def_static("paper_scale", &Config::paper_scale)
      .def_static("parse", &parse_config, py::arg("text"))
      .def_static("load", &load_config_file, py::arg("path"))
      WPS_FIELD(image_size) WPS_FIELD(embed_dim) WPS_FIELD(tokens_per_part) WPS_FIELD(num_queries)
      WPS_FIELD(num_categories) WPS_FIELD(encoder_stride) WPS_FIELD(alpha) WPS_FIELD(beta) WPS_FIELD(lambda_cls)
      WPS_FIELD(lambda_reg) WPS_FIELD(eos_weight) WPS_FIELD(encoder_layers) WPS_FIELD(decoder_layers)
      WPS_FIELD(num_heads) WPS_FIELD(ffn_multiplier) WPS_FIELD(class_head_layers) WPS_FIELD(prompt_head_layers)
      WPS_FIELD(dropout) WPS_FIELD(lr) WPS_FIELD(adam_beta1) WPS_FIELD(adam_beta2) WPS_FIELD(adam_eps)
      WPS_FIELD(lr_final_scale) WPS_FIELD(batch_size) WPS_FIELD(epochs) WPS_FIELD(checkpoint_every)
      WPS_FIELD(mask_threshold) WPS_FIELD(decoder_sharpness) WPS_FIELD(point_extent) WPS_FIELD(seed)
      .def_property_readonly("token_dim", &Config::token_dim)
      .def_property_readonly("feature_size", &Config::feature_size)
      .def("validate", [](const Config& c) { return validate_config(c); })
      .def("serialize", [](const Config& c) { return serialize_config(c); })
      .def("hash", [](const Config& c) { return hash_hex(config_hash(c)); })
      .def("set", [](Config& c, const std::string& key, const std::string& value) {
        apply_config_override(c, key, value);
      })
      .def(py::self == py::self)
      .def("__repr__", [](const Config& c) { return "<Config " + hash_hex(config_hash(c)) + ">"; });
#undef WPS_FIELD

  py::class_<Box>(m, "Box")
      .def_readwrite("x_min", &Box::x_min)
      .def_readwrite("y_min", &Box::y_min)
      .def_readwrite("x_max", &Box::x_max)
      .def_readwrite("y_max", &Box::y_max);
  py::class_<Point>(m, "Point").def_readwrite("x", &Point::x).def_readwrite("y", &Point::y);
  py::class_<WeakLabel>(m, "WeakLabel")
      .def_static("box", &WeakLabel::make_box, py::arg("x0"), py::arg("y0"), py::arg("x1"), py::arg("y1"),
                  py::arg("category"))
      .def_static("point", &WeakLabel::make_point, py::arg("x"), py::arg("y"), py::arg("category"))
      .def_readwrite("kind", &WeakLabel::kind)
      .def_readwrite("box_", &WeakLabel::box)
      .def_readwrite("point_", &WeakLabel::point)
      .def_readwrite("category", &WeakLabel::category);

  py::class_<EvaluationScope>(m, "EvaluationScope")
      .def_static("active", &EvaluationScope::active);
  m.def(
      "evaluation_scope",
      [](py::function body) {
        EvaluationScope scope;
        return body();
      },
      py::arg("body"), "Calls body with ground-truth masks readable.");

  py::class_<DatasetRecord>(m, "DatasetRecord")
      .def_readonly("id", &DatasetRecord::id)
      .def_property_readonly("image", [](const DatasetRecord& r) { return image_to_array(r.image); })
      .def_readonly("weak_labels", &DatasetRecord::weak_labels)
      .def_property_readonly("has_mask", [](const DatasetRecord& r) { return r.gt_mask.has_value(); })
      .def("ground_truth", [](const DatasetRecord& r) { return labels_to_array(r.gt_mask.get()); });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("image_size", &Dataset::image_size)
      .def_readonly("category_names", &Dataset::category_names)
      .def_readonly("records", &Dataset::records)
      .def_property_readonly("num_categories", &Dataset::num_categories)
      .def("__len__", [](const Dataset& d) { return d.records.size(); })
      .def("save", [](const Dataset& d, const std::string& dir) { save_dataset(d, dir); });

  m.def("generate_synthetic", py::overload_cast<int, int, int, int, std::uint64_t>(&generate_synthetic),
        py::arg("n_images"), py::arg("n_categories") = 3, py::arg("max_parts") = 4, py::arg("size") = 128,
        py::arg("seed") = 0);
  m.def("split_dataset", &split_dataset, py::arg("dataset"), py::arg("fractions"), py::arg("seed") = 0);
  m.def("load_dataset", &load_dataset, py::arg("directory"));
  m.def("load_coco_parts", &load_coco_parts, py::arg("annotation_path"), py::arg("image_dir"), py::arg("config"));

  py::class_<FeatureMap>(m, "FeatureMap")
      .def_readonly("height", &FeatureMap::height)
      .def_readonly("width", &FeatureMap::width)
      .def_readonly("stride", &FeatureMap::stride)
      .def_readonly("features", &FeatureMap::features);

  py::class_<Backend>(m, "Backend")
      .def_property_readonly("name", &Backend::name)
      .def("encode_image", [](const Backend& b, const FloatArray& img) { return b.encode_image(image_from_array(img)); })
      .def("decode_masks",
           [](const Backend& b, const FeatureMap& f, const Matrix& tokens) { return b.decode_masks(f, tokens).logits; })
      .def("parameter_checksum", &Backend::parameter_checksum);
  py::class_<MockBackend, Backend>(m, "MockBackend")
      .def(py::init<const Config&, std::uint64_t>(), py::arg("config"), py::arg("seed") = kMockBackendSeed);
  m.def("make_backend", &make_backend, py::arg("spec"), py::arg("config"));

  py::class_<TeacherTarget>(m, "TeacherTarget")
      .def(py::init([](int category, const Vector& embedding) { return TeacherTarget{category, embedding}; }),
           py::arg("category"), py::arg("embedding") = Vector())
      .def_readwrite("category", &TeacherTarget::category)
      .def_readwrite("embedding", &TeacherTarget::embedding);
  py::class_<TargetSet>(m, "TargetSet")
      .def(py::init([](std::vector<TeacherTarget> targets, int num_real) { return TargetSet{std::move(targets), num_real}; }),
           py::arg("targets"), py::arg("num_real"))
      .def_readwrite("targets", &TargetSet::targets)
      .def_readwrite("num_real", &TargetSet::num_real)
      .def("__len__", &TargetSet::size);

  py::class_<Teacher>(m, "Teacher")
      .def(py::init<const Config&, std::uint64_t>(), py::arg("config"), py::arg("seed") = kTeacherSeed)
      .def("encode", [](const Teacher& t, const WeakLabel& l, int size) { return t.encode(l, size).vector; },
           py::arg("label"), py::arg("image_size"))
      .def("build_target_set",
           [](const Teacher& t, const std::vector<WeakLabel>& labels, const Config& cfg) {
             return t.build_target_set(labels, cfg);
           })
      .def("parameter_checksum", &Teacher::parameter_checksum);

  m.def(
      "hungarian_assign",
      [](const Matrix& costs) {
        const Assignment a = hungarian_assign(CostMatrix{costs});
        return py::make_tuple(a.target_to_pred, a.total_cost);
      },
      py::arg("costs"), "Returns (target_to_pred, total_cost).");
  m.def(
      "pairwise_cost",
      [](const TargetSet& t, const Matrix& logits, const Matrix& tokens, const Config& cfg) {
        return pairwise_cost(t, make_output(logits, tokens), cfg).costs;
      },
      py::arg("targets"), py::arg("class_logits"), py::arg("prompt_tokens"), py::arg("config"));
  m.def(
      "total_loss",
      [](const TargetSet& t, const Matrix& logits, const Matrix& tokens, const Config& cfg) {
        return breakdown_dict(total_loss(t, make_output(logits, tokens), cfg));
      },
      py::arg("targets"), py::arg("class_logits"), py::arg("prompt_tokens"), py::arg("config"));
  m.def(
      "loss_gradients",
      [](const TargetSet& t, const Matrix& logits, const Matrix& tokens, const Config& cfg) {
        const StudentOutput out = make_output(logits, tokens);
        const LossGradients g = loss_gradients(t, out, match_sets(t, out, cfg), cfg);
        return py::make_tuple(g.class_logits, g.prompt_tokens);
      },
      py::arg("targets"), py::arg("class_logits"), py::arg("prompt_tokens"), py::arg("config"));

  py::class_<TrainingExample>(m, "TrainingExample")
      .def_readonly("id", &TrainingExample::id)
      .def_readonly("features", &TrainingExample::features)
      .def_readonly("targets", &TrainingExample::targets);
  m.def("prepare_examples", &prepare_examples, py::arg("dataset"), py::arg("backend"), py::arg("teacher"),
        py::arg("config"), py::arg("mode") = LabelKind::kBox);

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("total", &EpochRecord::total)
      .def_readonly("cls", &EpochRecord::cls)
      .def_readonly("reg", &EpochRecord::reg);
  py::class_<PrompterParams>(m, "PrompterParams");
  py::class_<TrainState>(m, "TrainState")
      .def_readonly("config", &TrainState::cfg)
      .def_readonly("params", &TrainState::params)
      .def_readonly("epoch", &TrainState::epoch)
      .def_readonly("step", &TrainState::step)
      .def_readonly("history", &TrainState::history)
      .def("save", [](const TrainState& s, const std::string& path) { save_checkpoint(s, path); });
  m.def("init_train_state", &init_train_state, py::arg("config"), py::arg("seed") = 0);
  m.def(
      "fit",
      [](const std::vector<TrainingExample>& examples, const Config& cfg, std::uint64_t seed,
         const std::string& loss_log, const std::string& checkpoint_dir,
         std::function<void(const EpochRecord&)> on_epoch) {
        FitOptions opts;
        opts.loss_log_path = loss_log;
        opts.checkpoint_dir = checkpoint_dir;
        opts.on_epoch = std::move(on_epoch);
        py::gil_scoped_release release;
        if (opts.on_epoch) {
          auto cb = std::move(opts.on_epoch);
          opts.on_epoch = [cb](const EpochRecord& r) {
            py::gil_scoped_acquire acquire;
            cb(r);
          };
        }
        return fit(examples, cfg, seed, opts);
      },
      py::arg("examples"), py::arg("config"), py::arg("seed") = 0, py::arg("loss_log") = "",
      py::arg("checkpoint_dir") = "", py::arg("on_epoch") = nullptr);
  m.def(
      "load_checkpoint", [](const std::string& path) { return load_checkpoint(path); }, py::arg("path"));

  m.def(
      "student_forward",
      [](const FeatureMap& f, const PrompterParams& p) {
        const StudentOutput out = prompter_forward(f, p);
        return py::make_tuple(out.class_logits, out.prompt_tokens);
      },
      py::arg("features"), py::arg("params"));
  m.def(
      "predict",
      [](const FloatArray& image, const PrompterParams& p, const Backend& b, const Config& cfg) {
        return labels_to_array(predict_image(image_from_array(image), p, b, cfg));
      },
      py::arg("image"), py::arg("params"), py::arg("backend"), py::arg("config"));
  m.def(
      "oracle_predict",
      [](const FloatArray& image, const std::vector<WeakLabel>& labels, const Backend& b, const Teacher& t,
         const Config& cfg) { return labels_to_array(oracle_predict(image_from_array(image), labels, b, t, cfg)); },
      py::arg("image"), py::arg("labels"), py::arg("backend"), py::arg("teacher"), py::arg("config"));
  m.def(
      "det_sam_predict",
      [](const DatasetRecord& r, double sigma, double drop, std::uint64_t seed, const Backend& b, const Teacher& t,
         const Config& cfg) { return labels_to_array(det_sam_predict(r, OracleDetector(sigma, drop, seed), b, t, cfg)); },
      py::arg("record"), py::arg("jitter_sigma"), py::arg("drop_prob"), py::arg("seed"), py::arg("backend"),
      py::arg("teacher"), py::arg("config"));

  py::class_<CategoryMetrics>(m, "CategoryMetrics")
      .def_readonly("id", &CategoryMetrics::id)
      .def_readonly("name", &CategoryMetrics::name)
      .def_readonly("iou", &CategoryMetrics::iou)
      .def_readonly("acc", &CategoryMetrics::acc)
      .def_readonly("gt_pixels", &CategoryMetrics::gt_pixels);
  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("per_category", &MetricsReport::per_category)
      .def_readonly("miou", &MetricsReport::miou)
      .def_readonly("macc", &MetricsReport::macc)
      .def_readonly("num_images", &MetricsReport::num_images)
      .def_readonly("config_hash", &MetricsReport::config_hash)
      .def("to_json", &MetricsReport::to_json)
      .def_static("from_json", &MetricsReport::from_json);

  m.def(
      "segmentation_metrics",
      [](const IntArray& gt, const IntArray& pred, int num_categories) {
        ConfusionAccumulator acc(num_categories);
        acc.accumulate(labels_from_array(gt), labels_from_array(pred));
        return py::make_tuple(compute_miou(acc), compute_macc(acc));
      },
      py::arg("gt"), py::arg("pred"), py::arg("num_categories"), "Returns (mIoU, mACC); background is not scored.");
  m.def(
      "evaluate",
      [](const Dataset& d, const std::function<IntArray(const DatasetRecord&)>& predictor, const Config& cfg) {
        return evaluate_dataset(d, [&](const DatasetRecord& r) { return labels_from_array(predictor(r)); }, cfg);
      },
      py::arg("dataset"), py::arg("predictor"), py::arg("config"));
  m.def(
      "evaluate_student",
      [](const Dataset& d, const PrompterParams& p, const Backend& b, const Config& cfg) {
        py::gil_scoped_release release;
        return evaluate_dataset(d, [&](const DatasetRecord& r) { return predict_image(r.image, p, b, cfg); }, cfg);
      },
      py::arg("dataset"), py::arg("params"), py::arg("backend"), py::arg("config"));

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return run_command(args); }, py::arg("args"),
      "Runs a CLI subcommand in-process and returns its exit code.");
}
