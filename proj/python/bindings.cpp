#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "alora/allocator.hpp"
#include "alora/bench.hpp"
#include "alora/checkpoint.hpp"
#include "alora/cli.hpp"
#include "alora/scoring.hpp"
#include "alora/supernet.hpp"
#include "alora/tensor.hpp"
#include "alora/trainer.hpp"

namespace py = pybind11;
using namespace alora;

namespace {

Tensor tensor_from_numpy(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
    if (arr.ndim() != 2) throw DimensionError("expected a 2-D array");
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from_data(std::move(data), static_cast<size_t>(arr.shape(0)),
                             static_cast<size_t>(arr.shape(1)));
}

py::array_t<double> tensor_to_numpy(const Tensor& t) {
    py::array_t<double> out({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

nlohmann::json json_from_py(const py::object& obj) {
    std::string dumped = py::cast<std::string>(py::module_::import("json").attr("dumps")(obj));
    return nlohmann::json::parse(dumped);
}

py::object py_from_json(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

py::dict run_experiment(const py::object& config) {
    RunConfig cfg = parse_run_config(json_from_py(config));
    RunOutputs out = execute_run(cfg);
    write_run_artifacts(cfg, out);

    py::dict res;
    res["out_dir"] = cfg.out_dir;
    res["rounds"] = out.result.plans.size();
    res["total_steps"] = out.result.total_steps;
    res["final_dev_loss"] = out.result.final_dev_loss;
    res["best_dev_loss"] = out.result.best_dev_loss;
    res["stopped_early"] = out.result.stopped_early;
    py::dict alloc;
    for (const auto& [id, n] : active_rank_count(out.net).per_module)
        alloc[py::str(to_string(id))] = n;
    res["final_ranks"] = alloc;
    if (out.has_teacher) {
        res["rank_recovery"] = out.recovery.score;
        res["rank_recovery_degenerate"] = out.recovery.degenerate;
    }
    return res;
}

py::dict checkpoint_summary(const std::string& path) {
    auto tensors = load_tensor_map(path);
    py::dict out;
    for (const auto& [name, t] : tensors)
        out[py::str(name)] = py::make_tuple(t.rows(), t.cols());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Gated low-rank adapter lab: ablation-scored rank allocation on a small transformer";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DimensionError>(m, "DimensionError");

    py::class_<Tensor>(m, "Tensor")
        .def(py::init(&tensor_from_numpy))
        .def_property_readonly("rows", &Tensor::rows)
        .def_property_readonly("cols", &Tensor::cols)
        .def("numpy", &tensor_to_numpy)
        .def("grad",
             [](const Tensor& t) {
                 if (!t.has_grad()) throw StateError("no gradient accumulated");
                 Tensor g = Tensor::from_data(t.grad(), t.rows(), t.cols());
                 return tensor_to_numpy(g);
             });

    m.def("matmul", &matmul);
    m.def("sigmoid", &sigmoid);
    m.def("gelu", &gelu);
    m.def("softmax_cross_entropy", &softmax_cross_entropy);

    py::enum_<ModuleKind>(m, "ModuleKind")
        .value("query", ModuleKind::Query)
        .value("key", ModuleKind::Key)
        .value("value", ModuleKind::Value)
        .value("output", ModuleKind::Output)
        .value("gate", ModuleKind::Gate)
        .value("up", ModuleKind::Up)
        .value("down", ModuleKind::Down);

    m.def("distribute_growth",
          [](const std::vector<std::pair<std::string, double>>& modules_desc, int n) {
              std::vector<std::pair<ModuleId, double>> mods;
              for (const auto& [name, avg] : modules_desc) {
                  auto dot = name.find('.');
                  if (dot == std::string::npos)
                      throw ArgumentError("module name must be '<layer>.<kind>'");
                  ModuleId id{std::stoi(name.substr(0, dot)),
                              module_kind_from_string(name.substr(dot + 1))};
                  mods.emplace_back(id, avg);
              }
              auto grow = distribute_growth(mods, n);
              py::dict out;
              for (const auto& [id, count] : grow) out[py::str(to_string(id))] = count;
              return out;
          },
          py::arg("modules_by_avg_desc"), py::arg("n"),
          "Distribute n new ranks over modules ordered by descending average importance");

    m.def("lr_at", [](int64_t step, int64_t total, double lr_peak, double warmup_frac) {
        TrainConfig cfg;
        cfg.lr_peak = lr_peak;
        cfg.warmup_frac = warmup_frac;
        return lr_at(step, total, cfg);
    });

    m.def("spearman", &spearman, py::arg("a"), py::arg("b"));

    m.def("run_experiment", &run_experiment, py::arg("config"),
          "Run the full allocation workflow from a config dict; writes artifacts and returns a "
          "summary dict");

    m.def("checkpoint_summary", &checkpoint_summary, py::arg("path"),
          "Tensor names and shapes stored in an ALORA1 checkpoint");

    m.def("resolved_config", [](const py::object& config) {
        return py_from_json(resolved_config_json(parse_run_config(json_from_py(config))));
    });
}
