#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <map>
#include <sstream>

#include "mdr/error.hpp"
#include "mdr/gradcheck.hpp"
#include "mdr/rdl.hpp"
#include "mdr/synth.hpp"
#include "mdr/train.hpp"

namespace py = pybind11;
using namespace mdr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Overrides = std::map<std::string, std::string>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

KeyValues to_kv(const Overrides& o) {
  KeyValues kv;
  for (const auto& [k, v] : o) kv.set(k, v);
  return kv;
}

Overrides from_kv(const KeyValues& kv) { return kv.entries(); }

loss::ClassCenters centers_of(const Array& c, double epsilon) {
  return loss::ClassCenters::from_tensor(to_tensor(c), epsilon);
}

loss::RdlConfig rdl_config(std::optional<double> lambda1, std::optional<double> lambda2) {
  loss::RdlConfig cfg;
  cfg.lambda1 = lambda1;
  cfg.lambda2 = lambda2;
  return cfg;
}

py::dict metrics_dict(const train::EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["L_S"] = m.l_s;
  d["L_Ain"] = m.l_a_in;
  d["L_Aout"] = m.l_a_out;
  d["L_l"] = m.l_l;
  d["total"] = m.total;
  d["intra_cos"] = m.intra_cos;
  d["inter_cos"] = m.inter_cos;
  d["beta"] = m.beta;
  d["lr"] = m.lr;
  d["test_accuracy"] = m.test_accuracy;
  return d;
}

py::dict eval_dict(const train::EvalMetrics& m) {
  py::dict d;
  d["count"] = m.count;
  d["accuracy"] = m.accuracy;
  d["per_class_accuracy"] = m.per_class_accuracy;
  d["confusion"] = m.confusion;
  d["intra_cos_centers"] = m.intra_cos_centers;
  d["intra_cos_means"] = m.intra_cos_means;
  d["center_pair_cos"] = m.center_pair_cos;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Skeleton action recognition with attention graph convolutions and angular-radial losses";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::enum_<data::Split>(m, "Split").value("train", data::Split::train).value("test", data::Split::test);

  py::class_<data::SkeletonSample>(m, "Sample")
      .def_property_readonly("x", [](const data::SkeletonSample& s) { return to_array(s.x); })
      .def_readonly("label", &data::SkeletonSample::label)
      .def_readonly("id", &data::SkeletonSample::id)
      .def_readonly("split", &data::SkeletonSample::split);

  py::class_<data::Dataset>(m, "Dataset")
      .def_readonly("num_classes", &data::Dataset::num_classes)
      .def_property_readonly("frames", &data::Dataset::frames)
      .def_property_readonly("joints", &data::Dataset::joints)
      .def_property_readonly("info", [](const data::Dataset& d) { return from_kv(d.info); })
      .def("__len__", [](const data::Dataset& d) { return d.samples.size(); })
      .def("__getitem__",
           [](const data::Dataset& d, std::size_t i) {
             if (i >= d.samples.size()) throw py::index_error();
             return d.samples[i];
           })
      .def("subset", &data::Dataset::subset)
      .def("count", &data::Dataset::count)
      .def("arrays",
           [](const data::Dataset& d) {
             if (d.samples.empty()) throw DegenerateInputError("empty dataset");
             const auto& s0 = d.samples.front().x;
             Array x({static_cast<py::ssize_t>(d.samples.size()), static_cast<py::ssize_t>(s0.dim(0)),
                      static_cast<py::ssize_t>(s0.dim(1)), static_cast<py::ssize_t>(s0.dim(2))});
             py::array_t<std::int64_t> y(static_cast<py::ssize_t>(d.samples.size()));
             double* out = x.mutable_data();
             for (std::size_t i = 0; i < d.samples.size(); ++i) {
               out = std::copy(d.samples[i].x.data().begin(), d.samples[i].x.data().end(), out);
               y.mutable_data()[i] = static_cast<std::int64_t>(d.samples[i].label);
             }
             return py::make_tuple(x, y);
           },
           "All samples stacked as (N, 3, T, V) coordinates and (N,) labels.")
      .def("save", [](const data::Dataset& d, const std::filesystem::path& dir) { data::save_dataset(dir, d); });

  m.def("generate",
        [](const Overrides& overrides) {
          const auto spec = data::SynthSpec::read_from(to_kv(overrides), data::default_spec());
          return data::generate(spec, graph::toy_skeleton());
        },
        py::arg("overrides") = Overrides{}, "Synthetic toy dataset; keys use the synth. prefix.");
  m.def("load_dataset", &data::load_dataset, py::arg("dir"));
  m.def("inject_noise",
        [](const data::Dataset& d, double fraction, std::uint64_t seed, const std::string& mode) {
          return data::inject_noise(d, fraction, seed, data::parse_noise_mode(mode));
        },
        py::arg("dataset"), py::arg("fraction"), py::arg("seed") = 99, py::arg("mode") = "joint");

  m.def("rdl_terms",
        [](const Array& x, const std::vector<std::size_t>& y, const Array& c, double epsilon,
           std::optional<double> lambda1, std::optional<double> lambda2) {
          const auto t = loss::rdl_terms(to_tensor(x), y, centers_of(c, epsilon),
                                         rdl_config(lambda1, lambda2));
          py::dict d;
          d["a_in"] = t.a_in;
          d["a_out"] = t.a_out;
          d["l"] = t.l;
          d["total"] = t.total;
          return d;
        },
        py::arg("x"), py::arg("labels"), py::arg("centers"), py::arg("epsilon") = 0.0,
        py::arg("lambda1") = py::none(), py::arg("lambda2") = py::none());
  m.def("rdl_grads",
        [](const Array& x, const std::vector<std::size_t>& y, const Array& c, double epsilon,
           std::optional<double> lambda1, std::optional<double> lambda2) {
          const Tensor xt = to_tensor(x);
          const auto cc = centers_of(c, epsilon);
          const auto cfg = rdl_config(lambda1, lambda2);
          return py::make_tuple(to_array(loss::rdl_grad_x(xt, y, cc, cfg)), to_array(loss::rdl_grad_c(xt, y, cc, cfg)));
        },
        py::arg("x"), py::arg("labels"), py::arg("centers"), py::arg("epsilon") = 0.0,
        py::arg("lambda1") = py::none(), py::arg("lambda2") = py::none(),
        "Closed-form gradients of the total loss with respect to embeddings and centers.");

  m.def("gradcheck",
        [](const std::string& target, std::size_t trials, std::uint64_t seed, double h, double tol) {
          check::CheckOptions opts;
          opts.h = h;
          opts.tolerance = tol;
          py::list out;
          for (const auto& r : check::check_module(check::parse_target(target), trials, seed, opts)) {
            py::dict d;
            d["op"] = r.op;
            d["coord"] = r.coord;
            d["analytic"] = r.analytic;
            d["numeric"] = r.numeric;
            d["rel_err"] = r.rel_err;
            d["pass"] = r.pass;
            d["h"] = r.h;
            out.append(d);
          }
          return out;
        },
        py::arg("target"), py::arg("trials") = 1, py::arg("seed") = 1, py::arg("h") = 1e-5, py::arg("tol") = 0.0);

  m.def("default_config",
        []() {
          KeyValues kv;
          train::RunConfig::toy().write_to(kv);
          return from_kv(kv);
        },
        "Toy preset as key/value strings.");

  py::class_<nn::Checkpoint>(m, "Checkpoint")
      .def_property_readonly("metadata", [](const nn::Checkpoint& c) { return from_kv(c.metadata); })
      .def_property_readonly("centers",
                             [](const nn::Checkpoint& c) -> py::object {
                               if (!c.centers) return py::none();
                               return to_array(*c.centers);
                             })
      .def("forward",
           [](const nn::Checkpoint& c, const Array& x) {
             if (x.ndim() != 4) throw ShapeError("forward expects (N, 3, T, V)");
             std::vector<Tensor> batch;
             const std::size_t n = static_cast<std::size_t>(x.shape(0));
             const std::size_t per = static_cast<std::size_t>(x.size()) / std::max<std::size_t>(n, 1);
             const Shape shape(x.shape() + 1, x.shape() + 4);
             for (std::size_t i = 0; i < n; ++i)
               batch.emplace_back(shape, std::vector<double>(x.data() + i * per, x.data() + (i + 1) * per));
             const auto out = c.model.forward(batch);
             return py::make_tuple(to_array(out.embeddings), to_array(out.logits));
           },
           py::arg("x"), "Embeddings (N, D) and logits (N, M).")
      .def("evaluate", [](const nn::Checkpoint& c, const data::Dataset& d) { return eval_dict(train::evaluate(c, d)); })
      .def("attention",
           [](const nn::Checkpoint& c, const Array& x, std::size_t layer) {
             const auto maps = train::attention_maps(c.model, to_tensor(x), layer);
             return py::make_tuple(to_array(maps.saliency), to_array(maps.transformed));
           },
           py::arg("x"), py::arg("layer"), "Averaged saliency and transformed maps, each (T_layer, V).");
  m.def("load_checkpoint", &nn::load_checkpoint, py::arg("dir"));

  m.def("train",
        [](const data::Dataset& d, const Overrides& overrides, std::optional<std::filesystem::path> output_dir) {
          auto cfg = train::RunConfig::read_from(to_kv(overrides));
          if (output_dir) cfg.output_dir = *output_dir;
          std::optional<train::TrainResult> result;
          {
            py::gil_scoped_release release;
            result = train::train(cfg, d);
          }
          const auto& r = *result;
          py::list history;
          for (const auto& e : r.history) history.append(metrics_dict(e));
          py::dict out;
          out["history"] = history;
          out["best_accuracy"] = r.best_accuracy;
          out["best_epoch"] = r.best_epoch;
          out["centers"] = to_array(r.centers.c);
          nn::Checkpoint ck{r.model, r.centers.c, {}};
          out["checkpoint"] = ck;
          return out;
        },
        py::arg("dataset"), py::arg("overrides") = Overrides{}, py::arg("output_dir") = py::none(),
        "Trains on the train split; returns the per-epoch history and the best checkpoint.");
}
