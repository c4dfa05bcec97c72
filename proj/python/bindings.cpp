// Python bindings. Structured values cross the boundary as JSON text; the
// package's __init__ turns them into dicts.

#include <algorithm>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ctrm/config.hpp"
#include "ctrm/errors.hpp"
#include "ctrm/gradcheck.hpp"
#include "ctrm/training.hpp"

namespace py = pybind11;
using namespace ctrm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  Tensor t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::dict sample_dict(const VideoSample& s) {
  py::dict d;
  d["frames"] = to_array(s.frames);
  d["caption"] = caption_words(s);
  d["causal_edges"] = s.causal_edges;
  d["event_ids"] = s.event_ids;
  return d;
}

VideoSample sample_from(const py::dict& d) {
  VideoSample s;
  s.frames = to_tensor(d["frames"].cast<Array>());
  s.caption = caption_vocabulary().encode(d["caption"].cast<std::vector<std::string>>());
  if (d.contains("causal_edges")) s.causal_edges = d["causal_edges"].cast<std::vector<CausalEdge>>();
  if (d.contains("event_ids")) s.event_ids = d["event_ids"].cast<std::vector<int>>();
  return s;
}

std::vector<VideoSample> samples_from(const py::list& items) {
  std::vector<VideoSample> out;
  for (const auto& item : items) out.push_back(sample_from(item.cast<py::dict>()));
  return out;
}

metrics::EvalCorpus corpus_from(const py::list& items) {
  metrics::EvalCorpus corpus;
  for (const auto& item : items) {
    const auto d = item.cast<py::dict>();
    corpus.push_back({d["id"].cast<std::string>(), d["hypothesis"].cast<metrics::Tokens>(),
                      d["references"].cast<std::vector<metrics::Tokens>>()});
  }
  return corpus;
}

ExperimentConfig experiment(const std::string& config_json, const std::vector<std::string>& overrides) {
  auto doc = nlohmann::json::parse(config_json);
  auto resolved = to_json(experiment_from_json(doc));
  apply_overrides(resolved, overrides);
  const bool pipeline_overridden = std::any_of(overrides.begin(), overrides.end(),
                                               [](const std::string& o) { return o.rfind("pipeline", 0) == 0; });
  if (!doc.contains("pipeline") && !pipeline_overridden) resolved.erase("pipeline");
  auto c = experiment_from_json(resolved);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Causal-temporal video captioning core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("vocabulary", [] { return caption_vocabulary().tokens(); });

  m.def("resolve_config", [](const std::string& config_json, const std::vector<std::string>& overrides) {
    return to_json(experiment(config_json, overrides)).dump();
  });

  m.def("generate_dataset", [](const std::string& config_json, const std::vector<std::string>& overrides) {
    const auto c = experiment(config_json, overrides);
    py::list out;
    for (const auto& s : generate_dataset(c.data.generator, c.data.n_samples)) out.append(sample_dict(s));
    return out;
  });

  m.def("read_dataset", [](const std::filesystem::path& path) {
    py::list out;
    for (const auto& s : read_dataset(path)) out.append(sample_dict(s));
    return out;
  });
  m.def("write_dataset", [](const py::list& samples, const std::filesystem::path& path) {
    write_dataset(samples_from(samples), path);
  });

  m.def("evaluate_corpus", [](const py::list& corpus, bool per_sample) {
    return metrics::to_json(metrics::evaluate(corpus_from(corpus)), per_sample).dump();
  });
  m.def("rouge_l_pair", &metrics::rougeL_pair);

  m.def("contrastive_loss", [](const Array& video, const Array& text, double tau) {
    LossWeights w;
    w.tau = tau;
    return losses::contrastive(to_tensor(video), to_tensor(text), w);
  });
  m.def("temporal_consistency_loss", [](const Array& h) { return losses::temporal_consistency(to_tensor(h)); });

  m.def(
      "run_pipeline",
      [](const std::string& config_json, const std::vector<std::string>& overrides, py::object train, py::object eval,
         std::optional<std::filesystem::path> checkpoint_dir, std::optional<std::filesystem::path> out) {
        const auto c = experiment(config_json, overrides);
        std::vector<VideoSample> train_set, eval_set;
        if (train.is_none()) {
          auto all = generate_dataset(c.data.generator, c.data.n_samples);
          const auto cut = all.size() - c.data.holdout;
          train_set.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut));
          eval_set.assign(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end());
        } else {
          train_set = samples_from(train.cast<py::list>());
        }
        if (!eval.is_none()) eval_set = samples_from(eval.cast<py::list>());
        if (eval_set.empty()) eval_set = train_set;
        PipelineOptions options;
        options.checkpoint_dir = checkpoint_dir;
        options.decoding = c.decoding;
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(c.pipeline, c.model(), train_set, eval_set, options);
        }
        if (out) r.checkpoint.save(*out);
        return r.report.dump();
      },
      py::arg("config_json"), py::arg("overrides"), py::arg("train") = py::none(), py::arg("eval") = py::none(),
      py::arg("checkpoint_dir") = py::none(), py::arg("out") = py::none());

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &Checkpoint::load)
      .def("save", &Checkpoint::save)
      .def_readonly("step", &Checkpoint::step)
      .def_property_readonly("parameter_names",
                             [](const Checkpoint& c) {
                               std::vector<std::string> names;
                               for (const auto& [k, _] : c.params) names.push_back(k);
                               return names;
                             })
      .def("parameter", [](const Checkpoint& c, const std::string& name) { return to_array(require_param(c.params, name)); })
      .def(
          "caption",
          [](const Checkpoint& c, const Array& frames, bool beam) {
            Ablation ablation;
            if (auto it = c.state.find("ablation"); it != c.state.end())
              ablation = Ablation::from_names(it->get<std::vector<std::string>>());
            const auto memory = encode_frames(to_tensor(frames), c.params, c.model, ablation.encoder());
            const auto hyp = beam ? beam_decode(memory, c.params, c.model.decoder)
                                  : greedy_decode(memory, c.params, c.model.decoder);
            const Vocabulary vocab(std::vector<std::string>(c.vocabulary.begin() + kUnk + 1, c.vocabulary.end()));
            return py::make_tuple(vocab.decode(hyp.tokens), hyp.log_prob);
          },
          py::arg("frames"), py::arg("beam") = false)
      .def(
          "evaluate",
          [](const Checkpoint& c, const py::list& samples, bool beam) {
            return to_json(evaluate(c, samples_from(samples), beam ? Decoding::beam : Decoding::greedy)).dump();
          },
          py::arg("samples"), py::arg("beam") = false);

  m.def(
      "grad_check",
      [](int seeds, const std::vector<std::string>& only) {
        gradcheck::Options options;
        options.seeds = seeds;
        options.only = only;
        py::gil_scoped_release release;
        const auto report = gradcheck::run(options);
        py::gil_scoped_acquire acquire;
        py::list out;
        for (const auto& c : report.cases) {
          py::dict d;
          d["name"] = c.name;
          d["worst_error"] = c.worst_error;
          d["passed"] = c.passed;
          d["kinks_skipped"] = c.kinks_skipped;
          out.append(d);
        }
        return out;
      },
      py::arg("seeds") = 2, py::arg("only") = std::vector<std::string>{});
}
