#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hyperagg/cli.hpp"
#include "hyperagg/encoder.hpp"
#include "hyperagg/error.hpp"
#include "hyperagg/gradcheck.hpp"
#include "hyperagg/io.hpp"
#include "hyperagg/similarity.hpp"
#include "hyperagg/training.hpp"
#include "hyperagg/types.hpp"

namespace py = pybind11;
using namespace hyperagg;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_array(const SquareMatrix& m) {
  py::array_t<double> out({m.n, m.n});
  if (m.n > 0) std::memcpy(out.mutable_data(), m.values.data(), m.values.size() * sizeof(double));
  return out;
}

SquareMatrix from_array(const F64Array& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1))
    fail(ErrorCode::NonSquare, "predicted RDM must be a square 2-D array");
  SquareMatrix m;
  m.n = static_cast<std::size_t>(a.shape(0));
  m.values.assign(a.data(), a.data() + a.size());
  return m;
}

template <typename T>
py::array_t<T> vector_array(const std::vector<T>& v) {
  py::array_t<T> out(v.size());
  if (!v.empty()) std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(T));
  return out;
}

std::shared_ptr<FeatureSet> make_features(std::vector<std::string> ids,
                                          std::vector<StageSpec> stages, const F32Array& data) {
  std::size_t length = 0;
  for (const auto& s : stages) length += s.size();
  if (data.ndim() != 2 || static_cast<std::size_t>(data.shape(0)) != ids.size() ||
      static_cast<std::size_t>(data.shape(1)) != length)
    fail(ErrorCode::ShapeMismatch, "features must have shape (images, embedding length)");
  std::vector<float> values(data.data(), data.data() + data.size());
  return std::make_shared<FeatureSet>(std::move(ids), std::move(stages), std::move(values));
}

RdmStack make_rdms(std::vector<std::string> ids, Modality modality,
                   const std::vector<std::pair<std::optional<double>, F32Array>>& slices) {
  const auto n = static_cast<py::ssize_t>(ids.size());
  std::vector<RdmSlice> out;
  for (const auto& [time, a] : slices) {
    if (a.ndim() != 3 || a.shape(1) != n || a.shape(2) != n)
      fail(ErrorCode::ShapeMismatch, "each slice must have shape (subjects, images, images)");
    RdmSlice s;
    s.timestamp = time;
    const float* p = a.data();
    for (py::ssize_t k = 0; k < a.shape(0); ++k, p += n * n)
      s.subjects.emplace_back(p, p + n * n);
    out.push_back(std::move(s));
  }
  return RdmStack(std::move(ids), modality, std::move(out));
}

py::array_t<float> rdm_slice_array(const RdmStack& r, std::size_t slice) {
  const std::size_t n = r.image_count();
  py::array_t<float> out({r.subject_count(), n, n});
  float* p = out.mutable_data();
  for (const auto& m : r.slices().at(slice).subjects) p = std::copy(m.begin(), m.end(), p);
  return out;
}

py::bytes as_bytes(const std::vector<std::uint8_t>& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  std::string s = b;
  return {s.begin(), s.end()};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hypercolumn aggregation: masked embeddings, RDM scoring and mask training";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object obj = py::handle(error.ptr())(py::str(e.what()));
      obj.attr("code") = py::str(std::string(to_string(e.code())));
      PyErr_SetObject(error.ptr(), obj.ptr());
    }
  });

  py::enum_<MaskResolution>(m, "MaskResolution")
      .value("PerStage", MaskResolution::PerStage)
      .value("PerChannel", MaskResolution::PerChannel)
      .value("PerFeature", MaskResolution::PerFeature);

  py::enum_<Modality>(m, "Modality")
      .value("FmriEvc", Modality::FmriEvc)
      .value("FmriIt", Modality::FmriIt)
      .value("MegEarly", Modality::MegEarly)
      .value("MegLate", Modality::MegLate)
      .value("Other", Modality::Other);

  py::enum_<LossKind>(m, "LossKind").value("L1", LossKind::L1).value("MSE", LossKind::MSE);

  py::class_<StageSpec>(m, "StageSpec")
      .def(py::init([](std::string name, std::size_t channels, std::size_t spatial) {
             return StageSpec{std::move(name), channels, spatial};
           }),
           py::arg("name"), py::arg("channels"), py::arg("spatial"))
      .def_readwrite("name", &StageSpec::name)
      .def_readwrite("channels", &StageSpec::channels)
      .def_readwrite("spatial", &StageSpec::spatial)
      .def("__repr__", [](const StageSpec& s) {
        return "StageSpec('" + s.name + "', " + std::to_string(s.channels) + ", " +
               std::to_string(s.spatial) + ")";
      });

  py::class_<FeatureSet, std::shared_ptr<FeatureSet>>(m, "FeatureSet")
      .def(py::init(&make_features), py::arg("image_ids"), py::arg("stages"), py::arg("data"),
           "data has shape (images, embedding length), stages concatenated in order")
      .def_property_readonly("image_ids", &FeatureSet::image_ids)
      .def_property_readonly("stages", &FeatureSet::stages)
      .def_property_readonly("image_count", &FeatureSet::image_count)
      .def_property_readonly("embedding_length", &FeatureSet::embedding_length)
      .def_property_readonly("data", [](const FeatureSet& f) {
        py::array_t<float> out({f.image_count(), f.embedding_length()});
        std::memcpy(out.mutable_data(), f.data().data(), f.data().size() * sizeof(float));
        return out;
      });

  py::class_<Mask>(m, "Mask")
      .def(py::init([](MaskResolution r, std::vector<StageSpec> stages, const F32Array& v) {
             return Mask(r, std::move(stages), std::vector<float>(v.data(), v.data() + v.size()));
           }),
           py::arg("resolution"), py::arg("stages"), py::arg("values"))
      .def_static("identity", &Mask::identity, py::arg("resolution"), py::arg("stages"))
      .def_property_readonly("resolution", &Mask::resolution)
      .def_property_readonly("stages", &Mask::stages)
      .def_property_readonly("size", &Mask::size)
      .def_property_readonly("values", [](const Mask& k) {
        auto v = k.values();
        return vector_array(std::vector<float>(v.begin(), v.end()));
      })
      .def("stage_coefficients", [](const Mask& k, std::size_t stage) {
        auto v = k.stage_coefficients(stage);
        return vector_array(std::vector<float>(v.begin(), v.end()));
      })
      .def("__eq__", &Mask::operator==);

  py::class_<RdmStack>(m, "RdmStack")
      .def(py::init(&make_rdms), py::arg("image_ids"), py::arg("modality"), py::arg("slices"),
           "slices is a list of (timestamp or None, array of shape (subjects, N, N))")
      .def_property_readonly("image_ids", &RdmStack::image_ids)
      .def_property_readonly("modality", &RdmStack::modality)
      .def_property_readonly("subject_count", &RdmStack::subject_count)
      .def_property_readonly("slice_count", &RdmStack::slice_count)
      .def_property_readonly("time_resolved", &RdmStack::time_resolved)
      .def("timestamp", [](const RdmStack& r, std::size_t s) {
        return r.slices().at(s).timestamp;
      })
      .def("slice", &rdm_slice_array, py::arg("index"))
      .def("midpoint_slice", &RdmStack::midpoint_slice)
      .def("nearest_slice", &RdmStack::nearest_slice, py::arg("time"));

  m.def("pearson", [](const F64Array& x, const F64Array& y) {
    return pearson({x.data(), static_cast<std::size_t>(x.size())},
                   {y.data(), static_cast<std::size_t>(y.size())});
  }, py::arg("x"), py::arg("y"));
  m.def("spearman", [](const F64Array& x, const F64Array& y) {
    return spearman({x.data(), static_cast<std::size_t>(x.size())},
                    {y.data(), static_cast<std::size_t>(y.size())});
  }, py::arg("x"), py::arg("y"));

  m.def("embed", [](const FeatureSet& f, const Mask& k, std::size_t image) {
    return vector_array(embed(f, k, image));
  }, py::arg("features"), py::arg("mask"), py::arg("image"));
  m.def("pair_dissimilarity", [](const FeatureSet& f, const Mask& k, std::uint32_t i,
                                 std::uint32_t j, double eps) {
    return pair_dissimilarity(f, k, PairIndex{i, j}, eps);
  }, py::arg("features"), py::arg("mask"), py::arg("i"), py::arg("j"),
        py::arg("epsilon") = kTrainingEpsilon);
  m.def("pair_gradient", [](const FeatureSet& f, const Mask& k, std::uint32_t i,
                            std::uint32_t j, double eps) {
    auto g = pair_gradient(f, k, PairIndex{i, j}, eps);
    return py::make_tuple(g.dissimilarity, vector_array(g.gradient));
  }, py::arg("features"), py::arg("mask"), py::arg("i"), py::arg("j"),
        py::arg("epsilon") = kTrainingEpsilon);

  m.def("predicted_rdm", [](const FeatureSet& f, const Mask& k) {
    return to_array(predicted_rdm(f, k));
  }, py::arg("features"), py::arg("mask"));
  m.def("noise_ceiling", &noise_ceiling, py::arg("target"), py::arg("slice") = 0);
  m.def("score", [](const F64Array& predicted, const std::vector<std::string>& ids,
                    const RdmStack& target, std::size_t slice, std::optional<double> ceiling) {
    auto r = score(from_array(predicted), ids, target, slice, ceiling);
    py::dict d;
    d["per_subject_r2"] = r.per_subject_r2;
    d["noise_ceiling"] = r.noise_ceiling;
    d["score"] = r.normalized_score_percent;
    return d;
  }, py::arg("predicted"), py::arg("image_ids"), py::arg("target"), py::arg("slice") = 0,
        py::arg("ceiling") = py::none());

  m.def("reliability_weight", &reliability_weight, py::arg("noise"), py::arg("mean_noise"),
        py::arg("alpha") = 0.25, py::arg("exponent") = 1.0);
  m.def("split_labels", &split_labels, py::arg("total"), py::arg("val_fraction"),
        py::arg("seed"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("use_reliability_weights", &TrainConfig::use_reliability_weights)
      .def_readwrite("resolution", &TrainConfig::resolution)
      .def_readwrite("val_fraction", &TrainConfig::val_fraction)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("meg_gaussian_sampling", &TrainConfig::meg_gaussian_sampling)
      .def("validate", &TrainConfig::validate);

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("step", &EpochRecord::step)
      .def_readonly("train_loss", &EpochRecord::train_loss)
      .def_readonly("val_loss", &EpochRecord::val_loss)
      .def_readonly("wall_time", &EpochRecord::wall_time);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("mask", &TrainResult::mask)
      .def_readonly("final_mask", &TrainResult::final_mask)
      .def_readonly("best_epoch", &TrainResult::best_epoch)
      .def_readonly("best_val_loss", &TrainResult::best_val_loss)
      .def_readonly("log", &TrainResult::log);

  m.def("train", [](const std::vector<std::pair<std::shared_ptr<FeatureSet>, RdmStack>>& data,
                    const TrainConfig& config) {
    TrainingCorpus corpus;
    for (const auto& [f, r] : data) corpus.add(f, r);
    py::gil_scoped_release release;
    return train(corpus, config);
  }, py::arg("datasets"), py::arg("config"),
        "datasets is a list of (FeatureSet, RdmStack); training starts from the identity mask");

  m.def("summarize_stages", [](const Mask& k) {
    py::list out;
    for (const auto& s : cli::summarize_stages(k)) {
      py::dict d;
      d["name"] = s.name;
      d["channels"] = s.channels;
      d["mean"] = s.mean;
      d["ci_low"] = s.ci_low;
      d["ci_high"] = s.ci_high;
      out.append(d);
    }
    return out;
  }, py::arg("mask"));

  m.def("gradcheck", [](std::uint64_t seed, std::size_t instances, double tolerance) {
    auto r = run_gradcheck({seed, instances, tolerance, false});
    return py::make_tuple(r.passed, r.worst_error);
  }, py::arg("seed") = 0, py::arg("instances") = 100, py::arg("tolerance") = 1e-4);

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "hyperagg");
    std::ostringstream out, err;
    int code = cli::run(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "returns (exit code, stdout, stderr)");

  auto io = m.def_submodule("io");
  io.def("read_features", [](const std::filesystem::path& p) {
    return std::make_shared<FeatureSet>(io::read_features(p));
  });
  io.def("write_features", &io::write_features, py::arg("features"), py::arg("path"));
  io.def("encode_features", [](const FeatureSet& f) { return as_bytes(io::encode_features(f)); });
  io.def("decode_features", [](const py::bytes& b) {
    return std::make_shared<FeatureSet>(io::decode_features(from_bytes(b)));
  });
  io.def("read_rdms", &io::read_rdms, py::arg("path"));
  io.def("write_rdms", &io::write_rdms, py::arg("stack"), py::arg("path"));
  io.def("encode_rdms", [](const RdmStack& r) { return as_bytes(io::encode_rdms(r)); });
  io.def("decode_rdms", [](const py::bytes& b) { return io::decode_rdms(from_bytes(b)); });
  io.def("load_mask", [](const std::filesystem::path& p) { return io::load_checkpoint(p).mask; },
         py::arg("path"), "mask stored in a checkpoint");
  io.def("fingerprint_files", [](const std::vector<std::filesystem::path>& paths) {
    return io::fingerprint_files(paths);
  }, py::arg("paths"));
}
