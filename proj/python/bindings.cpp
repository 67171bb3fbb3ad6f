#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "strep/bench.hpp"
#include "strep/cli.hpp"
#include "strep/downstream.hpp"

namespace py = pybind11;
using namespace strep;
using nlohmann::json;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

F32 to_array(const std::vector<std::size_t>& shape, const float* data) {
    F32 out(std::vector<py::ssize_t>(shape.begin(), shape.end()));
    std::copy_n(data, out.size(), out.mutable_data());
    return out;
}

Eigen::MatrixXd to_matrix(const F64& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
    Eigen::MatrixXd m(a.shape(0), a.shape(1));
    for (py::ssize_t i = 0; i < a.shape(0); ++i)
        for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = a.at(i, j);
    return m;
}

F64 from_matrix(const Eigen::MatrixXd& m) {
    F64 out({m.rows(), m.cols()});
    auto v = out.mutable_unchecked<2>();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) v(i, j) = m(i, j);
    return out;
}

SeriesTensor series_from(const F32& values, int steps_per_day, int start_tod, int start_dow) {
    if (values.ndim() != 2) throw py::value_error("values must be [nodes, steps]");
    SeriesTensor s;
    s.nodes = values.shape(0);
    s.steps = values.shape(1);
    s.steps_per_day = steps_per_day;
    s.start_tod = start_tod;
    s.start_dow = start_dow;
    s.interval_seconds = steps_per_day > 0 ? 86400 / steps_per_day : 0;
    s.values.assign(values.data(), values.data() + values.size());
    s.validate();
    return s;
}

Range split_range(const SeriesTensor& s, const Checkpoint& c, const std::string& name) {
    const auto sp = split_622(s.steps, c.config.model.input_len + c.config.model.horizon);
    if (name == "train") return sp.train;
    if (name == "val") return sp.val;
    if (name == "test") return sp.test;
    throw py::value_error("split must be train, val or test");
}

py::dict history_dict(const TrainHistory& h) {
    py::list epochs;
    for (const auto& e : h.epochs) {
        py::dict d;
        d["epoch"] = e.epoch;
        d["total"] = e.train.total;
        d["recon"] = e.train.recon;
        d["pred"] = e.train.pred;
        d["ms"] = e.train.ms;
        d["val_total"] = e.val_total;
        d["wall_seconds"] = e.wall_seconds;
        epochs.append(d);
    }
    py::dict out;
    out["epochs"] = epochs;
    out["best_epoch"] = h.best_epoch;
    out["best_val"] = h.best_val;
    out["early_stopped"] = h.early_stopped;
    return out;
}

const char* kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Data: return "data";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::State: return "state";
    }
    return "error";
}

struct PyModel {
    Checkpoint checkpoint;
    TrainHistory history;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Spatio-temporal representation learning core";

    static py::exception<Error> error(m, "StrepError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            PyErr_SetString(error.ptr(), (std::string(kind_name(e.kind())) + ": " + e.what()).c_str());
        }
    });

    py::class_<SeriesTensor>(m, "Series")
        .def(py::init(&series_from), py::arg("values"), py::arg("steps_per_day") = 288, py::arg("start_tod") = 0,
             py::arg("start_dow") = 0)
        .def_readonly("nodes", &SeriesTensor::nodes)
        .def_readonly("steps", &SeriesTensor::steps)
        .def_readonly("steps_per_day", &SeriesTensor::steps_per_day)
        .def_readonly("start_tod", &SeriesTensor::start_tod)
        .def_readonly("start_dow", &SeriesTensor::start_dow)
        .def_property_readonly("values",
                               [](const SeriesTensor& s) { return to_array({s.nodes, s.steps}, s.values.data()); })
        .def("save", [](const SeriesTensor& s, const std::string& path) { save_container(s, path); })
        .def_static("load", &load_container)
        .def_static("from_csv", [](const std::string& path, int spd, int tod, int dow) {
            CsvImportOptions o;
            o.steps_per_day = spd;
            o.start_tod = tod;
            o.start_dow = dow;
            return import_csv(path, o);
        }, py::arg("path"), py::arg("steps_per_day") = 288, py::arg("start_tod") = 0, py::arg("start_dow") = 0);

    m.def("_generate", [](const std::string& cfg) {
        return synth_generate(RunConfig::from_json(json{{"data", parse(cfg)}}).data).series;
    });

    py::class_<PyModel>(m, "Model")
        .def_property_readonly("config", [](const PyModel& p) { return p.checkpoint.config.to_json().dump(); })
        .def_property_readonly("history", [](const PyModel& p) { return history_dict(p.history); })
        .def_property_readonly("parameter_count", [](const PyModel& p) { return parameter_formula(p.checkpoint.config.model); })
        .def_property_readonly("parameter_hash", [](const PyModel& p) { return p.checkpoint.parameter_hash(); })
        .def("save", [](const PyModel& p, const std::string& path) { save_checkpoint(p.checkpoint, path); })
        .def_static("load", [](const std::string& path) { return PyModel{load_checkpoint(path), {}}; })
        .def(
            "encode",
            [](const PyModel& p, const SeriesTensor& s, const std::string& split, std::size_t workers) {
                RepresentationStore store;
                {
                    py::gil_scoped_release release;
                    store = encode_dataset(p.checkpoint, s, split_range(s, p.checkpoint, split), 32, workers);
                }
                py::array_t<std::size_t> ends(static_cast<py::ssize_t>(store.size()));
                std::copy(store.window_end.begin(), store.window_end.end(), ends.mutable_data());
                return py::make_tuple(ends, to_array({store.size(), store.nodes, store.width}, store.reps.ptr()));
            },
            py::arg("series"), py::arg("split") = "test", py::arg("workers") = 1)
        .def(
            "evaluate",
            [](const PyModel& p, const SeriesTensor& s, const std::string& cfg) {
                EvalReport r;
                {
                    py::gil_scoped_release release;
                    const auto ec = RunConfig::from_json(json{{"eval", parse(cfg)}}).eval;
                    const auto sp = split_622(s.steps, p.checkpoint.config.model.input_len +
                                                           p.checkpoint.config.model.horizon);
                    r = evaluate_protocol(p.checkpoint, encode_splits(p.checkpoint, s, sp), s, sp, ec);
                }
                return r.to_json().dump();
            },
            py::arg("series"), py::arg("config") = "");

    m.def(
        "_pretrain",
        [](const SeriesTensor& s, const std::string& cfg) {
            py::gil_scoped_release release;
            auto doc = parse(cfg);
            json sections = json::object();
            for (const char* k : {"model", "train", "seed"})
                if (doc.contains(k)) sections[k] = doc[k];
            auto res = pretrain(s, RunConfig::from_json(sections).train);
            return PyModel{std::move(res.checkpoint), std::move(res.history)};
        },
        py::arg("series"), py::arg("config") = "");

    m.def("ridge_fit", [](const F64& X, const F64& Y, double lambda) {
        return from_matrix(ridge_fit(to_matrix(X), to_matrix(Y), lambda).W);
    }, py::arg("X"), py::arg("Y"), py::arg("lam"), "Weights [D+1, H]; the last row is the unregularized bias.");
    m.def("default_lambda_grid", &default_lambda_grid);
    m.def("apply_mask", [](std::size_t rows, std::size_t T, double ratio, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const auto mk = apply_mask(rows, T, ratio, true, rng);
        py::array_t<std::uint8_t> out({rows, T});
        std::copy(mk.begin(), mk.end(), out.mutable_data());
        return out;
    }, py::arg("rows"), py::arg("T"), py::arg("ratio"), py::arg("seed") = 0);
    m.def("loglog_slope", &loglog_slope);
    m.def("parameter_count", [](const std::string& model_cfg, std::size_t nodes, std::size_t steps_per_day) {
        auto c = RunConfig::from_json(json{{"model", parse(model_cfg)}}).train.model;
        c.nodes = nodes;
        if (c.steps_per_day == 0) c.steps_per_day = steps_per_day;
        return parameter_formula(c);
    }, py::arg("model") = "", py::arg("nodes"), py::arg("steps_per_day") = 288);
    m.def("config_schema", [] { return run_config_schema().dump(); });
    m.def("run_cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "strep");
        std::ostringstream out, err;
        int code;
        {
            py::gil_scoped_release release;
            code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    });
}
