#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "kdar/commands.hpp"
#include "kdar/error.hpp"
#include "kdar/gradcheck.hpp"

namespace py = pybind11;
using namespace kdar;

namespace {

std::string stats_repr(const DatasetStats& s) {
  std::ostringstream os;
  os << "DatasetStats(users=" << s.users << ", items=" << s.items
     << ", interactions=" << s.interactions << ", entities=" << s.entities
     << ", relations=" << s.relations << ", triplets=" << s.triplets << ")";
  return os.str();
}

py::dict report_dict(const RankingReport& r) {
  py::dict d;
  for (std::size_t k = 0; k < r.cutoffs.size(); ++k) {
    d[py::str("recall@" + std::to_string(r.cutoffs[k]))] = r.recall[k];
    d[py::str("ndcg@" + std::to_string(r.cutoffs[k]))] = r.ndcg[k];
  }
  d["auc"] = r.auc;
  return d;
}

// Finite-difference check of the full loss of a double-precision model on
// one pass of training triplets from a prepared dataset.
GradCheckReport gradient_check(const std::filesystem::path& dataset, const Hyperparameters& hyper,
                               const AblationFlags& flags, std::size_t samples, double h,
                               double tol, std::uint64_t seed) {
  hyper.validate();
  const auto data = load_processed_dataset(dataset);
  KdarModel<double> model(data.table, data.kg, hyper, flags);
  model.initialize(derive_seed(seed, SeedStream::kInit));
  std::mt19937_64 rng(derive_seed(seed, SeedStream::kSampling));
  const auto batches =
      sample_epoch_batches(data.table, static_cast<Index>(data.table.train_pairs.size()), rng);
  if (batches.empty()) throw DataError("no training triplets to check");
  const TripletBatch& batch = batches.front();
  return finite_difference_check(
      [&](Tape<double>& tape) {
        const auto fwd = model.forward(tape);
        return model.loss(tape, fwd, batch).total;
      },
      model.parameters(), samples, h, tol, seed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Knowledge-enhanced dual-alignment recommender";

  auto base = py::register_exception<Error>(m, "KdarError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", data_error.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", data_error.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  py::enum_<InteractionFormat>(m, "InteractionFormat")
      .value("pair_list", InteractionFormat::kPairList)
      .value("rating_threshold", InteractionFormat::kRatingThreshold);

  py::class_<DataConfig>(m, "DataConfig")
      .def(py::init<>())
      .def_readwrite("dataset", &DataConfig::dataset)
      .def_readwrite("interactions", &DataConfig::interactions)
      .def_readwrite("kg", &DataConfig::kg)
      .def_readwrite("format", &DataConfig::format)
      .def_readwrite("threshold", &DataConfig::threshold)
      .def_readwrite("core_k", &DataConfig::core_k)
      .def_readwrite("split_ratio", &DataConfig::split_ratio)
      .def_readwrite("inverse_triplets", &DataConfig::inverse_triplets);

  py::class_<Hyperparameters>(m, "Hyperparameters")
      .def(py::init<>())
      .def_readwrite("dim", &Hyperparameters::dim)
      .def_readwrite("layers", &Hyperparameters::layers)
      .def_readwrite("temperature", &Hyperparameters::temperature)
      .def_readwrite("lambda_bpr_cf", &Hyperparameters::lambda_bpr_cf)
      .def_readwrite("lambda_cl", &Hyperparameters::lambda_cl)
      .def_readwrite("lambda_reg", &Hyperparameters::lambda_reg)
      .def_readwrite("learning_rate", &Hyperparameters::learning_rate);

  py::class_<AblationFlags>(m, "AblationFlags")
      .def(py::init<>())
      .def_readwrite("no_enhancement", &AblationFlags::no_enhancement)
      .def_readwrite("no_attention", &AblationFlags::no_attention)
      .def_readwrite("no_cl", &AblationFlags::no_cl)
      .def_readwrite("no_cg", &AblationFlags::no_cg);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("eval_every", &TrainConfig::eval_every)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("patience", &TrainConfig::patience)
      .def_readwrite("cutoffs", &TrainConfig::cutoffs)
      .def_readwrite("threads", &TrainConfig::eval_threads)
      .def_readwrite("verbose", &TrainConfig::verbose);

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("data", &RunConfig::data)
      .def_readwrite("model", &RunConfig::model)
      .def_readwrite("ablation", &RunConfig::ablation)
      .def_readwrite("train", &RunConfig::train)
      .def_readwrite("output", &RunConfig::output)
      .def("validate", &RunConfig::validate)
      .def("to_ini", &serialize_config)
      .def_static("from_ini", &parse_config, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"));

  py::class_<DatasetStats>(m, "DatasetStats")
      .def_readonly("users", &DatasetStats::users)
      .def_readonly("items", &DatasetStats::items)
      .def_readonly("interactions", &DatasetStats::interactions)
      .def_readonly("entities", &DatasetStats::entities)
      .def_readonly("relations", &DatasetStats::relations)
      .def_readonly("triplets", &DatasetStats::triplets)
      .def_readonly("train_interactions", &DatasetStats::train_interactions)
      .def_readonly("test_interactions", &DatasetStats::test_interactions)
      .def("__repr__", &stats_repr);

  py::class_<ProcessedDataset>(m, "Dataset")
      .def_readonly("stats", &ProcessedDataset::stats)
      .def_property_readonly("train_pairs", [](const ProcessedDataset& d) { return d.table.train_pairs; })
      .def_property_readonly("test_pairs", [](const ProcessedDataset& d) { return d.table.test_pairs; })
      .def_property_readonly("triplets", [](const ProcessedDataset& d) {
        std::vector<std::tuple<Index, Index, Index>> out;
        out.reserve(d.kg.triplets.size());
        for (const auto& t : d.kg.triplets) out.emplace_back(t.head, t.relation, t.tail);
        return out;
      });

  py::class_<LossBreakdown>(m, "LossBreakdown")
      .def_readonly("bpr", &LossBreakdown::l_bpr)
      .def_readonly("bpr_cf", &LossBreakdown::l_bpr_c)
      .def_readonly("gac", &LossBreakdown::l_gac)
      .def_readonly("pac", &LossBreakdown::l_pac)
      .def_readonly("reg", &LossBreakdown::l_reg)
      .def_readonly("total", &LossBreakdown::total);

  py::class_<HistoryRow>(m, "HistoryRow")
      .def_readonly("epoch", &HistoryRow::epoch)
      .def_readonly("recall20", &HistoryRow::recall20)
      .def_readonly("ndcg20", &HistoryRow::ndcg20)
      .def_readonly("auc", &HistoryRow::auc)
      .def_readonly("losses", &HistoryRow::losses);

  py::class_<RankingReport>(m, "RankingReport")
      .def_readonly("cutoffs", &RankingReport::cutoffs)
      .def_readonly("recall", &RankingReport::recall)
      .def_readonly("ndcg", &RankingReport::ndcg)
      .def_readonly("auc", &RankingReport::auc)
      .def_readonly("num_users", &RankingReport::num_users)
      .def("recall_at", &RankingReport::recall_at, py::arg("k"))
      .def("ndcg_at", &RankingReport::ndcg_at, py::arg("k"))
      .def("as_dict", &report_dict);

  py::class_<UserGroup>(m, "UserGroup")
      .def_readonly("label", &UserGroup::label)
      .def_readonly("lower", &UserGroup::lower)
      .def_readonly("upper", &UserGroup::upper)
      .def_readonly("report", &UserGroup::report);

  py::class_<GroupReport>(m, "GroupReport")
      .def_readonly("boundaries", &GroupReport::boundaries)
      .def_readonly("groups", &GroupReport::groups);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("history", &FitResult::history)
      .def_readonly("best_report", &FitResult::best_report)
      .def_readonly("best_epoch", &FitResult::best_epoch)
      .def_readonly("epochs_run", &FitResult::epochs_run);

  py::class_<TrainOutcome>(m, "TrainOutcome")
      .def_readonly("fit", &TrainOutcome::fit)
      .def_readonly("report", &TrainOutcome::final_report);

  py::class_<EvalOutcome>(m, "EvalOutcome")
      .def_readonly("report", &EvalOutcome::report)
      .def_readonly("groups", &EvalOutcome::groups);

  py::class_<VariantResult>(m, "VariantResult")
      .def_readonly("label", &VariantResult::label)
      .def_readonly("auc", &VariantResult::auc)
      .def_readonly("recall20", &VariantResult::recall20)
      .def_readonly("ndcg20", &VariantResult::ndcg20)
      .def_readonly("best_epoch", &VariantResult::best_epoch)
      .def_readonly("history", &VariantResult::history);

  py::class_<GradCheckReport>(m, "GradCheckReport")
      .def_readonly("checked", &GradCheckReport::checked)
      .def_readonly("max_error", &GradCheckReport::max_error)
      .def_property_readonly("failures",
                             [](const GradCheckReport& r) { return r.failures.size(); })
      .def("passed", &GradCheckReport::passed);

  using release = py::call_guard<py::gil_scoped_release>;

  m.def(
      "prepare",
      [](const RunConfig& c, const std::filesystem::path& out, bool force) {
        return cmd_prepare(c, out, force).processed.stats;
      },
      py::arg("config"), py::arg("out"), py::arg("force") = false, release());
  m.def("load_dataset", &load_processed_dataset, py::arg("path"), release());
  m.def("train", &cmd_train, py::arg("config"), py::arg("out"), release());
  m.def(
      "evaluate",
      [](const RunConfig& c, const std::filesystem::path& checkpoint, std::vector<Index> cutoffs,
         std::optional<std::string> groups) {
        std::optional<GroupMode> mode;
        if (groups) mode = parse_group_mode(*groups);
        py::gil_scoped_release unlock;
        return cmd_eval(c, checkpoint, cutoffs, mode);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("cutoffs") = kDefaultCutoffs,
      py::arg("groups") = std::nullopt);
  m.def("ablate", &cmd_ablate, py::arg("config"), py::arg("out"), release());
  m.def(
      "sweep",
      [](const RunConfig& c, const std::string& param, const std::vector<double>& values,
         const std::filesystem::path& out) {
        const SweepParam p = parse_sweep_param(param);
        py::gil_scoped_release unlock;
        return cmd_sweep(c, p, values, out);
      },
      py::arg("config"), py::arg("param"), py::arg("values"), py::arg("out"));

  m.def(
      "rank_all",
      [](const std::vector<double>& scores, const std::vector<Index>& exclude) {
        return rank_all(scores, exclude);
      },
      py::arg("scores"), py::arg("exclude"));
  m.def(
      "recall_at_k",
      [](const std::vector<Index>& ranking, const std::vector<Index>& test, Index k) {
        return recall_at_k(ranking, test, k);
      },
      py::arg("ranking"), py::arg("test"), py::arg("k"));
  m.def(
      "ndcg_at_k",
      [](const std::vector<Index>& ranking, const std::vector<Index>& test, Index k) {
        return ndcg_at_k(ranking, test, k);
      },
      py::arg("ranking"), py::arg("test"), py::arg("k"));
  m.def(
      "auc",
      [](const std::vector<double>& scores, const std::vector<Index>& exclude,
         const std::vector<Index>& test) { return auc(scores, exclude, test); },
      py::arg("scores"), py::arg("exclude"), py::arg("test"));

  m.def("gradient_check", &gradient_check, py::arg("dataset"), py::arg("hyper"),
        py::arg("ablation") = AblationFlags{}, py::arg("samples") = 256, py::arg("h") = 1e-4,
        py::arg("tol") = 1e-3, py::arg("seed") = 0, release());
}
