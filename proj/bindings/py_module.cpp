// pybind11 bindings for the checkpoint-merging core: archives, merge
// methods, scoring metrics, the small dense SVD kit, the synthetic
// verification suite, and the end-to-end toy protocol.

#include "realmerge/archive.hpp"
#include "realmerge/errors.hpp"
#include "realmerge/linalg.hpp"
#include "realmerge/merge.hpp"
#include "realmerge/metrics.hpp"
#include "realmerge/task_vector.hpp"
#include "realmerge/theory.hpp"
#include "realmerge/toy.hpp"

#include <json.hpp>
#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <stdexcept>
#include <string>
#include <vector>

namespace py = pybind11;
using nlohmann::json;
using namespace realmerge;

namespace {

linalg::Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast> & a) {
    if (a.ndim() != 2) {
        throw Error(errc::shape_mismatch, "expected a 2-D array");
    }
    linalg::Matrix m((size_t) a.shape(0), (size_t) a.shape(1));
    std::copy(a.data(), a.data() + m.numel(), m.data().begin());
    return m;
}

py::array_t<double> from_matrix(const linalg::Matrix & m) {
    py::array_t<double> a({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), a.mutable_data());
    return a;
}

py::object json_to_py(const json & j) {
    switch (j.type()) {
        case json::value_t::null:
            return py::none();
        case json::value_t::boolean:
            return py::bool_(j.get<bool>());
        case json::value_t::number_integer:
            return py::int_(j.get<long long>());
        case json::value_t::number_unsigned:
            return py::int_(j.get<unsigned long long>());
        case json::value_t::number_float:
            return py::float_(j.get<double>());
        case json::value_t::string:
            return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list out;
            for (const auto & v : j) {
                out.append(json_to_py(v));
            }
            return out;
        }
        case json::value_t::object: {
            py::dict out;
            for (const auto & [key, value] : j.items()) {
                out[py::str(key)] = json_to_py(value);
            }
            return out;
        }
        default:
            throw Error(errc::bad_argument, "unsupported JSON value type");
    }
}

json py_to_json(const py::handle & h) {
    if (h.is_none()) {
        return nullptr;
    }
    if (py::isinstance<py::bool_>(h)) {
        return h.cast<bool>();
    }
    if (py::isinstance<py::int_>(h)) {
        return h.cast<long long>();
    }
    if (py::isinstance<py::float_>(h)) {
        return h.cast<double>();
    }
    if (py::isinstance<py::str>(h)) {
        return h.cast<std::string>();
    }
    if (py::isinstance<py::dict>(h)) {
        json out = json::object();
        for (const auto & item : h.cast<py::dict>()) {
            out[item.first.cast<std::string>()] = py_to_json(item.second);
        }
        return out;
    }
    if (py::isinstance<py::list>(h) || py::isinstance<py::tuple>(h)) {
        json out = json::array();
        for (const auto & item : h.cast<py::sequence>()) {
            out.push_back(py_to_json(item));
        }
        return out;
    }
    throw Error(errc::bad_argument, "config values must be JSON-compatible");
}

MergeConfig config_from_dict(const py::dict & d) {
    return MergeConfig::from_json(py_to_json(d));
}

} // namespace

PYBIND11_MODULE(_realmerge, m) {
    m.doc() = "training-free checkpoint merging core";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const Error & e) {
            switch (e.code()) {
                case errc::bad_argument:
                case errc::shape_mismatch:
                case errc::layout_mismatch:
                    PyErr_SetString(PyExc_ValueError, e.what());
                    break;
                default:
                    PyErr_SetString(PyExc_RuntimeError, e.what());
            }
        }
    });

    py::class_<TensorArchive>(m, "Archive")
        .def(py::init<>())
        .def_static("load", &load_archive, py::arg("path"))
        .def("save", [](const TensorArchive & a, const std::string & path) { save_archive(a, path); },
             py::arg("path"))
        .def("set_tensor",
             [](TensorArchive & a, const std::string & name,
                py::array_t<double, py::array::c_style | py::array::forcecast> data,
                const std::string & role) {
                 std::vector<size_t> shape;
                 for (py::ssize_t i = 0; i < data.ndim(); ++i) {
                     shape.push_back((size_t) data.shape(i));
                 }
                 std::vector<double> values(data.data(), data.data() + data.size());
                 a.set_tensor(name, std::move(shape), role_from_name(role), std::move(values));
             },
             py::arg("name"), py::arg("data"), py::arg("role") = "other")
        .def("tensor",
             [](const TensorArchive & a, const std::string & name) {
                 const TensorEntry & e = a.at(name);
                 std::vector<py::ssize_t> shape(e.shape.begin(), e.shape.end());
                 py::array_t<double> out(shape);
                 std::copy(e.data.begin(), e.data.end(), out.mutable_data());
                 return out;
             },
             py::arg("name"))
        .def("role", [](const TensorArchive & a, const std::string & name) {
                 return std::string(role_name(a.at(name).role));
             },
             py::arg("name"))
        .def("names",
             [](const TensorArchive & a) {
                 std::vector<std::string> out;
                 for (const auto & [name, entry] : a.entries()) {
                     out.push_back(name);
                 }
                 return out;
             })
        .def("tensor_count", &TensorArchive::tensor_count)
        .def("get_meta", [](const TensorArchive & a) { return a.meta(); })
        .def("set_meta",
             [](TensorArchive & a, const std::string & key, const std::string & value) {
                 a.meta()[key] = value;
             },
             py::arg("key"), py::arg("value"));

    m.def("encode", [](const TensorArchive & a) {
        std::vector<unsigned char> bytes = encode_archive(a);
        return py::bytes((const char *) bytes.data(), bytes.size());
    });
    m.def("decode", [](const py::bytes & b) {
        std::string s = b;
        return decode_archive(std::vector<unsigned char>(s.begin(), s.end()));
    });

    m.def("merge",
          [](const TensorArchive & base, const std::vector<TensorArchive> & specialists,
             const py::dict & config) {
              std::vector<const TensorArchive *> ptrs;
              for (const TensorArchive & s : specialists) {
                  ptrs.push_back(&s);
              }
              return merge_models(base, ptrs, config_from_dict(config));
          },
          py::arg("base"), py::arg("specialists"), py::arg("config"),
          "merge specialist checkpoints onto the base; config keys mirror the CLI flags");

    m.def("default_merge_config", [] { return json_to_py(MergeConfig().to_json()); });

    m.def("auc",
          [](const std::vector<double> & fake, const std::vector<double> & real) {
              return metrics::auc(fake, real);
          },
          py::arg("fake"), py::arg("real"),
          "P(fake score > real score), ties counted 1/2");
    m.def("drop", &metrics::drop, py::arg("auc_specialist"), py::arg("auc_merged"));
    m.def("drop_max", &metrics::drop_max, py::arg("drops"));
    m.def("gain_unseen", &metrics::gain_unseen, py::arg("auc_merged"), py::arg("auc_specialists"));

    m.def("thin_svd",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast> & a) {
              linalg::SvdResult r = linalg::thin_svd(to_matrix(a));
              py::array_t<double> s((py::ssize_t) r.s.size());
              std::copy(r.s.begin(), r.s.end(), s.mutable_data());
              return py::make_tuple(from_matrix(r.u), s, from_matrix(r.v));
          },
          py::arg("a"), "thin SVD (u, s, v) with a = u @ diag(s) @ v.T");
    m.def("truncate_rank",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast> & a, size_t r) {
              return from_matrix(linalg::truncate_rank(to_matrix(a), r));
          },
          py::arg("a"), py::arg("r"), "best Frobenius rank-r approximation");
    m.def("tail_energy",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast> & a, size_t r) {
              return linalg::tail_energy(to_matrix(a), r);
          },
          py::arg("a"), py::arg("r"));
    m.def("sin_angle", &linalg::sin_angle, py::arg("a"), py::arg("b"));

    m.def("verify_theory",
          [](const py::dict & config) {
              theory::TheorySuiteConfig cfg =
                  config.empty() ? theory::TheorySuiteConfig()
                                 : theory::TheorySuiteConfig::from_json(py_to_json(config));
              return json_to_py(theory::run_theory_suite(cfg).to_json());
          },
          py::arg("config") = py::dict(),
          "run the synthetic verification suite; returns the full report as a dict");

    m.def("run_protocol",
          [](const py::dict & config, const std::string & out_dir) {
              toy::ProtocolConfig cfg = config.empty()
                                            ? toy::ProtocolConfig()
                                            : toy::ProtocolConfig::from_json(py_to_json(config));
              return json_to_py(toy::run_protocol(cfg, out_dir).to_json());
          },
          py::arg("config") = py::dict(), py::arg("out_dir") = std::string(),
          "run the toy pipeline end to end; returns the full result as a dict");

    py::class_<toy::ToyGeneratorFamily>(m, "ToyGeneratorFamily")
        .def_readonly("family_id", &toy::ToyGeneratorFamily::family_id)
        .def_readonly("real_mean", &toy::ToyGeneratorFamily::real_mean)
        .def_readonly("cue_dir", &toy::ToyGeneratorFamily::cue_dir)
        .def_readonly("cue_strength", &toy::ToyGeneratorFamily::cue_strength)
        .def_readonly("noise_scale", &toy::ToyGeneratorFamily::noise_scale)
        .def_readonly("stable_axis", &toy::ToyGeneratorFamily::stable_axis)
        .def_readonly("stable_scale", &toy::ToyGeneratorFamily::stable_scale)
        .def_readonly("seed", &toy::ToyGeneratorFamily::seed);

    m.def("make_families", &toy::make_families, py::arg("count"), py::arg("input_dim"),
          py::arg("cue_strength"), py::arg("noise_scale"), py::arg("seed"),
          py::arg("stable_scale") = 1.0,
          "build a seeded set of generator families with decorrelated cue directions");

    m.def("gen_toy_data",
          [](const toy::ToyGeneratorFamily & family, size_t n_per_class, uint64_t split_seed) {
              const toy::Dataset data = toy::gen_toy_data(family, n_per_class, split_seed);
              const size_t n = data.samples.size();
              const size_t p = data.input_dim;
              py::array_t<double> x({n, p});
              std::vector<int> y(n);
              for (size_t i = 0; i < n; i++) {
                  std::copy(data.samples[i].x.begin(), data.samples[i].x.end(),
                            x.mutable_data() + i * p);
                  y[i] = data.samples[i].label;
              }
              return py::make_tuple(x, py::cast(y));
          },
          py::arg("family"), py::arg("n_per_class"), py::arg("split_seed"),
          "sample a balanced real/fake batch; returns (inputs, labels)");
}
