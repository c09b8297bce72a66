#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "egocast/error.hpp"
#include "egocast/evaluation.hpp"
#include "egocast/log.hpp"
#include "egocast/pipeline.hpp"
#include "egocast/roadnet.hpp"

namespace py = pybind11;
using namespace egocast;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> flat(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

gbt::MatrixView matrix(const Array& a) {
    if (a.ndim() != 2) throw ValidationError("expected a 2-D array");
    return {flat(a), static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
}

RunConfig run_config(const std::map<std::string, std::string>& settings) {
    RunConfig c;
    for (const auto& [k, v] : settings) c.set(k, v);
    if (c.data_dir == ".") c.data_dir = c.out_dir;
    return c;
}

Array egohood_array(const Array& points, const Array& features, double radius_m) {
    if (points.ndim() != 2 || points.shape(1) != 2) throw ValidationError("points must be an (n, 2) array in meters");
    const auto f = matrix(features);
    const std::size_t n = static_cast<std::size_t>(points.shape(0));
    std::vector<Vec2> pts(n);
    for (std::size_t i = 0; i < n; ++i) pts[i] = {points.at(i, 0), points.at(i, 1)};
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < f.rows; ++i) ids.push_back(std::to_string(i));
    std::vector<ColumnInfo> cols(f.cols);
    for (std::size_t c = 0; c < f.cols; ++c) cols[c].name = "f" + std::to_string(c);
    FeatureTable table(ids, cols);
    for (std::size_t i = 0; i < f.rows; ++i)
        for (std::size_t c = 0; c < f.cols; ++c) table.at(i, c) = f.at(i, c);
    const auto e = egohood_features(row_normalize(build_contiguity(std::span<const Vec2>(pts), radius_m)), table);
    Array out({f.rows, f.cols});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < f.rows; ++i)
        for (std::size_t c = 0; c < f.cols; ++c) w(i, c) = e.at(i, c);
    return out;
}

std::map<std::string, double> network_distances_py(const std::vector<std::tuple<std::string, std::string, double>>& edges,
                                                   const std::string& source, double cutoff_m) {
    std::vector<RoadEdge> re;
    for (const auto& [a, b, len] : edges) re.push_back({a, b, {}, {}, len});
    const auto g = build_graph(re);
    std::map<std::string, double> out;
    for (const auto& [node, d] : network_distances(g, g.require(source), cutoff_m)) out[g.id(node)] = d;
    return out;
}

}  // namespace

PYBIND11_MODULE(_egocast, m) {
    m.doc() = "Egohood features, spatially cross-validated boosted trees and price explanations";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<StaleArtifactError>(m, "StaleArtifactError", PyExc_RuntimeError);

    m.def("set_log_level", [](const std::string& lvl) {
        static const std::map<std::string, log::Level> levels{
            {"debug", log::Level::Debug}, {"info", log::Level::Info}, {"warn", log::Level::Warn},
            {"error", log::Level::Error}, {"off", log::Level::Off}};
        auto it = levels.find(lvl);
        if (it == levels.end()) throw ValidationError("unknown log level '" + lvl + "'");
        log::set_level(it->second);
    });

    // features
    m.def("decay_score", [](double d, double max_distance_m) {
        WalkParams p;
        p.max_distance_m = max_distance_m;
        return decay_score(d, p);
    }, py::arg("distance_m"), py::arg("max_distance_m") = kMaxWalkingDistanceM);
    m.def("land_use_mix", [](std::array<double, 3> shares) { return land_use_mix(shares); }, py::arg("shares"));

    // egohood and roads
    m.def("egohood", &egohood_array, py::arg("points"), py::arg("features"), py::arg("radius_m") = kEgohoodRadiusM,
          "Row-normalized neighbour average of `features` over points closer than radius_m (NaN = missing).");
    m.def("network_distances", &network_distances_py, py::arg("edges"), py::arg("source"), py::arg("cutoff_m"));

    // metrics
    m.def("mae", [](const Array& y, const Array& p) { return mae(flat(y), flat(p)); });
    m.def("mdape", [](const Array& y, const Array& p) { return mdape(flat(y), flat(p)); });

    // boosting
    m.def("leaf_weight", &gbt::leaf_weight, py::arg("g"), py::arg("h"), py::arg("lam"), py::arg("alpha"));
    m.def("split_gain", &gbt::split_gain, py::arg("gl"), py::arg("hl"), py::arg("gr"), py::arg("hr"), py::arg("lam"),
          py::arg("alpha"), py::arg("gamma"));

    py::class_<gbt::TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &gbt::TrainConfig::learning_rate)
        .def_readwrite("lam", &gbt::TrainConfig::lambda)
        .def_readwrite("alpha", &gbt::TrainConfig::alpha)
        .def_readwrite("min_child_weight", &gbt::TrainConfig::min_child_weight)
        .def_readwrite("max_depth", &gbt::TrainConfig::max_depth)
        .def_readwrite("n_estimators", &gbt::TrainConfig::n_estimators)
        .def_readwrite("early_stopping_rounds", &gbt::TrainConfig::early_stopping_rounds)
        .def_readwrite("gamma", &gbt::TrainConfig::gamma)
        .def_readwrite("base_score", &gbt::TrainConfig::base_score)
        .def_readwrite("threads", &gbt::TrainConfig::threads);

    py::class_<gbt::TreeEnsemble>(m, "Model")
        .def_readonly("base_score", &gbt::TreeEnsemble::base_score)
        .def_readonly("learning_rate", &gbt::TreeEnsemble::learning_rate)
        .def_readonly("feature_names", &gbt::TreeEnsemble::feature_names)
        .def_property_readonly("n_trees", [](const gbt::TreeEnsemble& e) { return e.trees.size(); })
        .def_property_readonly("best_rounds", [](const gbt::TreeEnsemble& e) { return e.metadata.best_rounds; })
        .def_property_readonly("validation_mae", [](const gbt::TreeEnsemble& e) { return e.metadata.validation_mae; })
        .def("predict", [](const gbt::TreeEnsemble& e, const Array& x) {
            if (x.ndim() == 1) return py::cast(e.predict(flat(x)));
            return py::cast(e.predict(matrix(x)));
        })
        .def("contributions", [](const gbt::TreeEnsemble& e, const Array& x) {
            const auto r = path_contributions(e, flat(x));
            return py::make_tuple(r.bias, r.contributions, r.prediction);
        }, "(bias, per-feature contributions, prediction) for one row")
        .def("importance", [](const gbt::TreeEnsemble& e) {
            std::map<std::string, double> out;
            for (const auto& row : feature_importance(e).rows) out[row.feature] = row.gain;
            return out;
        })
        .def("save", [](const gbt::TreeEnsemble& e, const std::filesystem::path& p) { gbt::save_model(e, p); })
        .def("to_json", [](const gbt::TreeEnsemble& e) { return gbt::to_json(e); });

    m.def("train", [](const Array& x, const Array& y, const Array& x_val, const Array& y_val,
                      const gbt::TrainConfig& config, std::vector<std::string> names) {
        py::gil_scoped_release release;
        return gbt::train(matrix(x), flat(y), matrix(x_val), flat(y_val), config, std::move(names));
    }, py::arg("x"), py::arg("y"), py::arg("x_val"), py::arg("y_val"), py::arg("config") = gbt::TrainConfig{},
       py::arg("feature_names") = std::vector<std::string>{});
    m.def("load_model", [](const std::filesystem::path& p) { return gbt::load_model(p); });

    // pipeline stages; settings use the CLI's key=value names
    using Settings = std::map<std::string, std::string>;
    m.def("synth", [](const std::filesystem::path& out, std::size_t blocks, std::size_t listings, std::uint64_t seed,
                      double noise, double neighborhood_share) {
        SynthSpec s;
        s.blocks = blocks;
        s.listings = listings;
        s.seed = seed;
        s.noise_scale = noise;
        s.neighborhood_variance_share = neighborhood_share;
        stage_synth(s, out);
    }, py::arg("out"), py::arg("blocks") = 2000, py::arg("listings") = 10000, py::arg("seed") = 7,
       py::arg("noise") = 0.05, py::arg("neighborhood_share") = 0.7);
    m.def("ingest", [](const Settings& s) { stage_ingest(run_config(s)); });
    m.def("features", [](const Settings& s) { stage_features(run_config(s)); });
    m.def("egohood_stage", [](const Settings& s) { stage_egohood(run_config(s)); });
    m.def("folds", [](const Settings& s) { stage_folds(run_config(s)); });
    m.def("train_stage", [](const Settings& s) { stage_train(run_config(s)); });
    m.def("evaluate", [](const Settings& s) { return stage_evaluate(run_config(s)); });
    m.def("nowcast", [](const Settings& s, const std::filesystem::path& listings, const std::filesystem::path& output) {
        stage_nowcast(run_config(s), listings, output);
    });
    m.def("explain", [](const Settings& s, const std::string& listing) { return stage_explain(run_config(s), listing); });
}
