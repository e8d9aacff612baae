#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dynperc/cli.hpp"
#include "dynperc/evolving.hpp"
#include "dynperc/percolation.hpp"
#include "dynperc/stats.hpp"
#include "dynperc/walker.hpp"

namespace py = pybind11;
using namespace dynperc;

namespace {

py::dict fit_dict(const stats::FitResult& f) {
  py::dict d;
  d["slope"] = f.slope;
  d["intercept"] = f.intercept;
  d["stderr"] = f.stderr_slope;
  d["r2"] = f.r2;
  d["n_points"] = f.n_points;
  return d;
}

}  // namespace

PYBIND11_MODULE(_dynperc, m) {
  m.doc() = "Dynamical percolation simulation core";

  py::class_<Lattice>(m, "Lattice")
      .def_static("hypercubic", &Lattice::hypercubic, py::arg("d"))
      .def_static("triangular", &Lattice::triangular)
      .def("torus", &Lattice::torus, py::arg("side"))
      .def_property_readonly("dim", &Lattice::dim)
      .def_property_readonly("degree", &Lattice::degree)
      .def_property_readonly("is_torus", &Lattice::is_torus)
      .def_property_readonly("is_triangular", &Lattice::is_triangular)
      .def_property_readonly("side", &Lattice::side)
      .def("__eq__", [](const Lattice& a, const Lattice& b) { return a == b; });

  m.def("critical_probability", &critical_probability, py::arg("lattice"));
  m.def("ever_open_density", &ever_open_params, py::arg("p"), py::arg("mu"), py::arg("t"));

  m.def(
      "wilson",
      [](std::int64_t k, std::int64_t n) {
        const auto w = stats::wilson(k, n);
        return py::make_tuple(w.phat, w.lo, w.hi);
      },
      py::arg("successes"), py::arg("trials"));
  m.def(
      "loglog_fit",
      [](const std::vector<double>& x, const std::vector<double>& y, double cutoff) {
        return fit_dict(stats::loglog_fit(x, y, cutoff));
      },
      py::arg("x"), py::arg("y"), py::arg("cutoff") = 0.0);

  m.def(
      "msd",
      [](const Lattice& lattice, double p, double mu, std::vector<double> checkpoints, std::int64_t replicas,
         std::uint64_t seed, int threads) {
        MsdConfig cfg;
        cfg.env.lattice = lattice;
        cfg.env.p = p;
        cfg.env.mu = mu;
        cfg.checkpoints = std::move(checkpoints);
        cfg.replicas = replicas;
        cfg.seed = seed;
        cfg.threads = threads;
        py::gil_scoped_release release;
        const MsdTable table = msd_experiment(cfg);
        py::gil_scoped_acquire acquire;
        py::list rows;
        for (const MsdRow& r : table.rows) {
          py::dict d;
          d["t"] = r.t;
          d["mean_sq_graph_dist"] = r.mean_sq_graph;
          d["stderr"] = r.stderr_graph;
          d["mean_sq_l2"] = r.mean_sq_l2;
          d["stderr_l2"] = r.stderr_l2;
          d["replicas"] = r.replicas;
          rows.append(d);
        }
        return rows;
      },
      py::arg("lattice"), py::arg("p"), py::arg("mu"), py::arg("checkpoints"), py::arg("replicas"),
      py::arg("seed") = 1, py::arg("threads") = 0);

  m.def(
      "one_arm",
      [](const Lattice& lattice, std::vector<std::int64_t> radii, double p, std::int64_t reps, std::uint64_t seed,
         int threads, double fit_cutoff) {
        OneArmConfig cfg;
        cfg.fit_cutoff = fit_cutoff;
        cfg.lattice = lattice;
        cfg.radii = std::move(radii);
        cfg.p = p;
        cfg.reps = reps;
        cfg.seed = seed;
        cfg.threads = threads;
        py::gil_scoped_release release;
        const OneArmResult res = one_arm_sweep(cfg);
        py::gil_scoped_acquire acquire;
        py::list rows;
        for (const OneArmRow& r : res.rows) {
          py::dict d;
          d["r"] = r.r;
          d["successes"] = r.successes;
          d["trials"] = r.trials;
          d["phat"] = r.ci.phat;
          rows.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["fit"] = res.fitted ? py::object(fit_dict(res.fit)) : py::none();
        return out;
      },
      py::arg("lattice"), py::arg("radii"), py::arg("p") = 0.5, py::arg("reps") = 1000, py::arg("seed") = 1,
      py::arg("threads") = 0, py::arg("fit_cutoff") = 8.0);

  m.def(
      "evolving_check",
      [](std::int64_t instances, std::uint64_t seed) {
        EvolvingCheckConfig cfg;
        cfg.instances = instances;
        cfg.seed = seed;
        py::gil_scoped_release release;
        const EvolvingCheckResult res = evolving_check(cfg);
        py::gil_scoped_acquire acquire;
        py::list rows;
        for (const auto& r : res.rows) {
          py::dict d;
          d["side"] = r.side;
          d["mu"] = r.mu;
          d["p"] = r.p;
          d["set_size"] = r.set_size;
          d["drift_pass"] = r.drift_pass;
          d["phi_pass"] = r.phi_pass;
          d["martingale_gap"] = r.martingale_gap;
          rows.append(d);
        }
        return rows;
      },
      py::arg("instances") = 200, py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a command line; returns (exit_code, stdout, stderr).");
  m.def("csv_headers", &cli::csv_headers, py::arg("subcommand"));
  m.def("subcommands", &cli::subcommands);
}
