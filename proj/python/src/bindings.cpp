#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "geosid/eval.hpp"
#include "geosid/geo.hpp"
#include "geosid/pipeline.hpp"
#include "geosid/rqkmeans.hpp"

namespace py = pybind11;

PYBIND11_MODULE(_core, m) {
  m.doc() = "geosid native core";
  py::register_exception<geosid::Error>(m, "GeosidError", PyExc_RuntimeError);

  m.def("haversine_km", [](double lat1, double lon1, double lat2, double lon2) {
    return geosid::haversine_km({lat1, lon1}, {lat2, lon2});
  });
  m.def("geohash_encode", [](double lat, double lon, int precision) {
    return geosid::geohash_encode({lat, lon}, precision);
  }, py::arg("lat"), py::arg("lon"), py::arg("precision") = 9);

  m.def("recall_at_k", [](const std::vector<std::pair<std::string, std::vector<std::string>>>& preds, int k) {
    std::vector<geosid::RankedPrediction> p;
    for (const auto& [t, r] : preds) p.push_back({t, r});
    return geosid::recall_at_k(p, k);
  });
  m.def("ndcg_at_k", [](const std::vector<std::pair<std::string, std::vector<std::string>>>& preds, int k) {
    std::vector<geosid::RankedPrediction> p;
    for (const auto& [t, r] : preds) p.push_back({t, r});
    return geosid::ndcg_at_k(p, k);
  });

  m.def("kmeans", [](const std::vector<std::vector<double>>& pts, int k, int iters, std::uint64_t seed) {
    if (pts.empty()) throw geosid::Error("kmeans: no points");
    geosid::RowMatrix x(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(pts.front().size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].size() != pts.front().size()) throw geosid::Error("kmeans: ragged input");
      for (std::size_t j = 0; j < pts[i].size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pts[i][j];
    }
    const auto r = geosid::kmeans(x, k, iters, 1e-9, seed);
    return py::make_tuple(r.assignments, r.objective);
  }, py::arg("points"), py::arg("k"), py::arg("iters") = 50, py::arg("seed") = 0);

  m.def("run_stage", [](const std::string& stage, const std::string& config, const std::string& workdir, bool force) {
    const auto cfg = geosid::PipelineConfig::load(config);
    const auto r = geosid::run_stage(stage, cfg, workdir, force);
    return r.ran;
  }, py::arg("stage"), py::arg("config"), py::arg("workdir"), py::arg("force") = false);
}
