#include "stdiff/baselines.hpp"
#include "stdiff/checkpoint.hpp"
#include "stdiff/diffusion.hpp"
#include "stdiff/errors.hpp"
#include "stdiff/evaluation.hpp"
#include "stdiff/imputer.hpp"
#include "stdiff/masking.hpp"
#include "stdiff/plant.hpp"
#include "stdiff/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace stdiff;

namespace {

RoleMap role_map(const std::map<std::string, std::string>& roles) {
  RoleMap out;
  for (const auto& [name, role] : roles) out.emplace(name, parse_role(role));
  return out;
}

}  // namespace

PYBIND11_MODULE(_stdiff, m) {
  m.doc() = "State-transition diffusion imputation for control-driven time series";

  static py::exception<Error> error(m, "StdiffError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object instance = py::handle(error.ptr())(e.what());
      instance.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error.ptr(), instance.ptr());
    }
  });

  py::class_<ScheduleConfig>(m, "ScheduleConfig")
      .def(py::init<>())
      .def_readwrite("steps", &ScheduleConfig::steps)
      .def_readwrite("beta_start", &ScheduleConfig::beta_start)
      .def_readwrite("beta_end", &ScheduleConfig::beta_end);

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def(py::init([](int steps, double beta_start, double beta_end) {
             return build_schedule(steps, beta_start, beta_end);
           }),
           py::arg("steps") = 1000, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02)
      .def_property_readonly("steps", &NoiseSchedule::steps)
      .def("beta", &NoiseSchedule::beta, py::arg("tau"))
      .def("alpha", &NoiseSchedule::alpha, py::arg("tau"))
      .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("tau"))
      .def("sigma", &NoiseSchedule::sigma, py::arg("tau"))
      .def("reverse_coefficient", &NoiseSchedule::reverse_coefficient, py::arg("tau"));

  m.def("forward_noise", &forward_noise, py::arg("x0"), py::arg("tau"), py::arg("eps"), py::arg("schedule"));
  m.def("reverse_step", &reverse_step, py::arg("x_tau"), py::arg("eps_hat"), py::arg("tau"), py::arg("schedule"),
        py::arg("z") = std::nullopt);
  m.def("noise_prediction_loss", &noise_prediction_loss, py::arg("eps"), py::arg("eps_hat"));

  py::class_<TimeSeriesTable>(m, "TimeSeriesTable")
      .def(py::init([](std::vector<std::string> timestamps, const std::vector<std::string>& names,
                       const std::vector<std::string>& roles, Eigen::MatrixXd values) {
             if (names.size() != roles.size()) throw Error(ErrorKind::shape, "one role per channel is required");
             std::vector<Channel> channels;
             for (std::size_t i = 0; i < names.size(); ++i) channels.push_back({names[i], parse_role(roles[i])});
             return TimeSeriesTable(std::move(timestamps), std::move(channels), std::move(values));
           }),
           py::arg("timestamps"), py::arg("channels"), py::arg("roles"), py::arg("values"))
      .def_property_readonly("timestamps", &TimeSeriesTable::timestamps)
      .def_property_readonly("values", &TimeSeriesTable::values)
      .def_property_readonly("channels",
                             [](const TimeSeriesTable& t) {
                               std::vector<std::string> out;
                               for (const auto& c : t.channels()) out.push_back(c.name);
                               return out;
                             })
      .def_property_readonly("roles",
                             [](const TimeSeriesTable& t) {
                               std::vector<std::string> out;
                               for (const auto& c : t.channels()) out.emplace_back(to_string(c.role));
                               return out;
                             })
      .def_property_readonly("state_channels", &TimeSeriesTable::state_channels)
      .def("__len__", &TimeSeriesTable::length)
      .def("__eq__", &TimeSeriesTable::operator==);

  m.def(
      "load_csv", [](const std::string& path, const std::map<std::string, std::string>& roles) {
        return load_csv(path, role_map(roles));
      },
      py::arg("path"), py::arg("roles"));
  m.def("save_csv", &save_csv, py::arg("path"), py::arg("table"));
  m.def("missing_rates", &missing_rates, py::arg("table"));

  m.def(
      "simulate_scalar_plant",
      [](double a, double b, double sigma, double c, std::size_t length, std::uint64_t seed) {
        auto cfg = PlantConfig::scalar(a, b, sigma, c);
        cfg.length = length;
        cfg.seed = seed;
        return simulate_plant(cfg).table;
      },
      py::arg("a") = 0.9, py::arg("b") = 1.0, py::arg("sigma") = 0.1, py::arg("c") = 0.5, py::arg("length") = 2000,
      py::arg("seed") = 0);
  m.def(
      "simulate_nonlinear_plant",
      [](std::size_t length, std::uint64_t seed) {
        auto cfg = PlantConfig::nonlinear_default();
        cfg.length = length;
        cfg.seed = seed;
        return simulate_plant(cfg).table;
      },
      py::arg("length") = 2000, py::arg("seed") = 0);

  py::class_<LedgerEntry>(m, "LedgerEntry")
      .def_readonly("row", &LedgerEntry::row)
      .def_readonly("channel", &LedgerEntry::channel)
      .def_readonly("true_value", &LedgerEntry::true_value);

  py::class_<MaskResult>(m, "MaskResult")
      .def_readonly("masked", &MaskResult::masked)
      .def_readonly("ledger", &MaskResult::ledger)
      .def_readonly("realized_rates", &MaskResult::realized_rates)
      .def_property_readonly("state_rate", &MaskResult::state_rate)
      .def_property_readonly("covariate_rate", &MaskResult::covariate_rate);

  m.def(
      "generate_block_masks",
      [](const TimeSeriesTable& table, int level, std::uint64_t seed, double mean_block_length,
         double cofailure_fraction) {
        auto plan = MaskPlan::scenario(level, seed);
        plan.mean_block_length = mean_block_length;
        plan.cofailure_fraction = cofailure_fraction;
        return generate_block_masks(table, plan);
      },
      py::arg("table"), py::arg("level") = 20, py::arg("seed") = 0, py::arg("mean_block_length") = 48.0,
      py::arg("cofailure_fraction") = 0.5);

  m.def("fill_locf", [](const std::vector<double>& s) { return fill_locf(s); }, py::arg("series"));
  m.def("fill_linear", [](const std::vector<double>& s) { return fill_linear(s); }, py::arg("series"));
  m.def("fill_kalman", [](const std::vector<double>& s) { return fill_kalman(s); }, py::arg("series"));
  m.def(
      "apply_baseline",
      [](const std::string& method, const TimeSeriesTable& table) {
        if (method == "locf") return baseline_locf(table);
        if (method == "linear") return baseline_linear_interp(table);
        if (method == "kalman") return baseline_kalman(table);
        throw Error(ErrorKind::config, "baseline must be locf, linear or kalman");
      },
      py::arg("method"), py::arg("table"));

  py::class_<ModelDims>(m, "ModelDims")
      .def(py::init<>())
      .def_readwrite("time_embed_dim", &ModelDims::time_embed_dim)
      .def_readwrite("context_dim", &ModelDims::context_dim)
      .def_readwrite("encoder_width", &ModelDims::encoder_width)
      .def_readwrite("encoder_layers", &ModelDims::encoder_layers)
      .def_readwrite("predictor_width", &ModelDims::predictor_width)
      .def_readwrite("predictor_blocks", &ModelDims::predictor_blocks)
      .def_readonly("state_dim", &ModelDims::state_dim)
      .def_readonly("control_dim", &ModelDims::control_dim)
      .def_readonly("exogenous_dim", &ModelDims::exogenous_dim);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("schedule", &TrainConfig::schedule)
      .def_readwrite("architecture", &TrainConfig::architecture)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("final_lr_fraction", &TrainConfig::final_lr_fraction)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("validation_fraction", &TrainConfig::validation_fraction)
      .def_readwrite("eval_interval", &TrainConfig::eval_interval)
      .def_readwrite("eval_draws", &TrainConfig::eval_draws);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("dims", [](const Checkpoint& c) { return c.params.dims(); })
      .def_property_readonly("weights",
                             [](const Checkpoint& c) {
                               const auto w = c.params.weights();
                               return std::vector<double>(w.begin(), w.end());
                             })
      .def_readonly("schedule", &Checkpoint::schedule)
      .def("__eq__", &Checkpoint::operator==);
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("checkpoint"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("checkpoint", &TrainResult::checkpoint)
      .def_property_readonly("curve",
                             [](const TrainResult& r) {
                               std::vector<std::tuple<int, double, double>> out;
                               for (const auto& p : r.curve) out.emplace_back(p.step, p.train_loss, p.validation_loss);
                               return out;
                             })
      .def_readonly("final_train_loss", &TrainResult::final_train_loss)
      .def_readonly("final_validation_loss", &TrainResult::final_validation_loss);
  m.def("train", &train, py::arg("table"), py::arg("config"), py::call_guard<py::gil_scoped_release>());

  m.def(
      "impute",
      [](const TimeSeriesTable& table, const Checkpoint& checkpoint, int samples, std::uint64_t seed,
         const std::string& mode, const std::string& covariate_fallback, int threads, bool fill_unanchorable) {
        ImputeOptions options;
        options.samples = samples;
        options.seed = seed;
        options.mode = parse_impute_mode(mode);
        options.fallback = parse_covariate_fallback(covariate_fallback);
        options.threads = threads;
        options.fill_unanchorable = fill_unanchorable;
        py::gil_scoped_release release;
        return impute_series(table, checkpoint, options).completed;
      },
      py::arg("table"), py::arg("checkpoint"), py::arg("samples") = 16, py::arg("seed") = 0, py::arg("mode") = "full",
      py::arg("covariate_fallback") = "mask-zero", py::arg("threads") = 1, py::arg("fill_unanchorable") = false);

  m.def(
      "masked_mae_rmse",
      [](const TimeSeriesTable& imputed, const std::vector<LedgerEntry>& ledger) {
        std::vector<py::dict> out;
        for (const auto& c : masked_mae_rmse(imputed, ledger).channels) {
          py::dict d;
          d["channel"] = c.channel;
          d["mae"] = c.mae;
          d["rmse"] = c.rmse;
          d["count"] = c.count;
          out.push_back(d);
        }
        return out;
      },
      py::arg("imputed"), py::arg("ledger"));
}
