#include "ctrm/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "ctrm/checkpoint.hpp"
#include "ctrm/layers.hpp"
#include "ctrm/losses.hpp"
#include "ctrm/model.hpp"
#include "ctrm/ops.hpp"
#include "ctrm/training.hpp"

namespace ctrm::gradcheck {
namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape), 0.0);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

// Magnitudes in [0.1, 1] with random sign, so kinks and zero rows are avoided.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = uniform(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (double& x : t.data())
    if (flip(rng)) x = -x;
  return t;
}

// Scalar probe of a non-scalar output: sum(x * w) for a fixed random w.
Var weigh(Var x, const Tensor& w) { return ops::sum(ops::mul(x, x.tape->constant(w))); }

std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

using Unary = Var (*)(Var);

Case unary_case(std::string name, Unary f, bool avoid_zero = false) {
  return {name, true, [f, avoid_zero](Rng& rng) {
            const Shape s{draw(rng, 1, 4), draw(rng, 1, 4)};
            Instance in;
            in.inputs["x"] = avoid_zero ? away_from_zero(s, rng) : uniform(s, rng);
            const Tensor probe_x = in.inputs["x"];
            Tape shape_tape(false);
            const Tensor w = uniform(f(shape_tape.constant(probe_x)).value().shape(), rng);
            in.loss = [f, w](const ParamVars& p) { return weigh(f(p["x"]), w); };
            return in;
          }};
}

Case binary_case(std::string name, Var (*f)(Var, Var)) {
  return {name, true, [f](Rng& rng) {
            const Shape s{draw(rng, 1, 4), draw(rng, 1, 4)};
            Instance in;
            in.inputs["a"] = uniform(s, rng);
            in.inputs["b"] = uniform(s, rng);
            const Tensor w = uniform(s, rng);
            in.loss = [f, w](const ParamVars& p) { return weigh(f(p["a"], p["b"]), w); };
            return in;
          }};
}

// Micro model shared by the composed cases.
ModelConfig micro_model() {
  ModelConfig m;
  m.encoder.d_model = 8;
  m.encoder.n_heads = 2;
  m.encoder.n_trl_layers = 1;
  m.encoder.ffn_dim = 8;
  m.encoder.max_frames = 8;
  m.decoder.d_model = 8;
  m.decoder.n_layers = 1;
  m.decoder.n_heads = 2;
  m.decoder.ffn_dim = 8;
  m.decoder.max_caption_len = 8;
  m.frame_dim = 4;
  m.vocab_size = 10;
  return m;
}

VideoSample micro_sample(const ModelConfig& m, Rng& rng) {
  VideoSample s;
  const auto t = draw(rng, 2, 4);
  s.frames = uniform({t, m.frame_dim}, rng);
  s.caption = {kBos};
  const auto words = draw(rng, 1, 4);
  for (std::size_t i = 0; i < words; ++i) s.caption.push_back(draw(rng, kUnk + 1, m.vocab_size - 1));
  s.caption.push_back(kEos);
  s.causal_edges = {{0, t - 1}};
  if (t > 2) s.causal_edges.emplace_back(0, 1);
  std::sort(s.causal_edges.begin(), s.causal_edges.end());
  s.event_ids.assign(t, 0);
  return s;
}

Case objective_case(std::string name, Stage stage) {
  return {name, false,
          [stage](Rng& rng) {
            const auto m = micro_model();
            Instance in;
            in.inputs = init_parameters(m, rng());
            // Layer-norm gains and biases start at 1 and 0; move them off the symmetric point.
            for (auto& [key, t] : in.inputs)
              if (key.ends_with(".gain") || key.ends_with(".bias"))
                for (double& x : t.data()) x += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
            auto samples = std::make_shared<std::vector<VideoSample>>();
            for (int i = 0; i < 2; ++i) samples->push_back(micro_sample(m, rng));
            TrainConfig config;
            config.stage = stage;
            config.loss_weights = {0.7, 0.3, 0.5};
            in.loss = [m, samples, config](const ParamVars& p) {
              const PositionalTables tables(m);
              std::vector<const VideoSample*> batch;
              for (const auto& s : *samples) batch.push_back(&s);
              return batch_objective(batch, p, m, tables, config).total;
            };
            return in;
          },
          4};
}

std::vector<Case> build_registry() {
  std::vector<Case> cases;

  cases.push_back({"matmul", true, [](Rng& rng) {
                     const auto m = draw(rng, 1, 4), k = draw(rng, 1, 4), n = draw(rng, 1, 4);
                     Instance in;
                     in.inputs["a"] = uniform({m, k}, rng);
                     in.inputs["b"] = uniform({k, n}, rng);
                     const Tensor w = uniform({m, n}, rng);
                     in.loss = [w](const ParamVars& p) { return weigh(ops::matmul(p["a"], p["b"]), w); };
                     return in;
                   }});
  cases.push_back(unary_case("transpose", [](Var x) { return ops::transpose(x); }));
  cases.push_back(binary_case("add", [](Var a, Var b) { return ops::add(a, b); }));
  cases.push_back(binary_case("sub", [](Var a, Var b) { return ops::sub(a, b); }));
  cases.push_back(binary_case("mul", [](Var a, Var b) { return ops::mul(a, b); }));
  cases.push_back(unary_case("scale", [](Var x) { return ops::scale(x, -1.7); }));
  cases.push_back({"add_row", true, [](Rng& rng) {
                     const auto m = draw(rng, 1, 4), d = draw(rng, 1, 4);
                     Instance in;
                     in.inputs["x"] = uniform({m, d}, rng);
                     in.inputs["bias"] = uniform({d}, rng);
                     const Tensor w = uniform({m, d}, rng);
                     in.loss = [w](const ParamVars& p) { return weigh(ops::add_row(p["x"], p["bias"]), w); };
                     return in;
                   }});
  cases.push_back(unary_case("relu", [](Var x) { return ops::relu(x); }, true));
  cases.push_back(unary_case("row_softmax", [](Var x) { return ops::row_softmax(x); }));
  cases.push_back({"row_softmax_masked", true, [](Rng& rng) {
                     const auto t = draw(rng, 1, 5);
                     Instance in;
                     in.inputs["x"] = uniform({t, t}, rng, -2.0, 2.0);
                     const Tensor w = uniform({t, t}, rng);
                     in.loss = [w](const ParamVars& p) {
                       return weigh(ops::row_softmax(p["x"], ops::Mask::lower_triangular), w);
                     };
                     return in;
                   }});
  cases.push_back({"layer_norm", true, [](Rng& rng) {
                     const auto m = draw(rng, 1, 4), d = draw(rng, 2, 5);
                     Instance in;
                     in.inputs["x"] = uniform({m, d}, rng, -2.0, 2.0);
                     in.inputs["gain"] = uniform({d}, rng, 0.5, 1.5);
                     in.inputs["bias"] = uniform({d}, rng);
                     const Tensor w = uniform({m, d}, rng);
                     in.loss = [w](const ParamVars& p) {
                       return weigh(ops::layer_norm(p["x"], p["gain"], p["bias"]), w);
                     };
                     return in;
                   }});
  cases.push_back({"embedding", true, [](Rng& rng) {
                     const auto v = draw(rng, 2, 6), d = draw(rng, 1, 4), n = draw(rng, 1, 6);
                     Instance in;
                     in.inputs["table"] = uniform({v, d}, rng);
                     std::vector<std::size_t> ids(n);
                     for (auto& id : ids) id = draw(rng, 0, v - 1);
                     const Tensor w = uniform({n, d}, rng);
                     in.loss = [w, ids](const ParamVars& p) { return weigh(ops::embedding(p["table"], ids), w); };
                     return in;
                   }});
  cases.push_back({"concat_cols", true, [](Rng& rng) {
                     const auto m = draw(rng, 1, 4), c1 = draw(rng, 1, 3), c2 = draw(rng, 1, 3);
                     Instance in;
                     in.inputs["a"] = uniform({m, c1}, rng);
                     in.inputs["b"] = uniform({m, c2}, rng);
                     const Tensor w = uniform({m, c1 + c2}, rng);
                     in.loss = [w](const ParamVars& p) {
                       const std::vector<Var> parts{p["a"], p["b"]};
                       return weigh(ops::concat_cols(parts), w);
                     };
                     return in;
                   }});
  cases.push_back({"concat_rows", true, [](Rng& rng) {
                     const auto d = draw(rng, 1, 4), r1 = draw(rng, 1, 3), r2 = draw(rng, 1, 3);
                     Instance in;
                     in.inputs["a"] = uniform({r1, d}, rng);
                     in.inputs["b"] = uniform({r2, d}, rng);
                     const Tensor w = uniform({r1 + r2, d}, rng);
                     in.loss = [w](const ParamVars& p) {
                       const std::vector<Var> parts{p["a"], p["b"]};
                       return weigh(ops::concat_rows(parts), w);
                     };
                     return in;
                   }});
  cases.push_back({"add_all", true, [](Rng& rng) {
                     const Shape s{draw(rng, 1, 3), draw(rng, 1, 3)};
                     Instance in;
                     in.inputs["a"] = uniform(s, rng);
                     in.inputs["b"] = uniform(s, rng);
                     in.inputs["c"] = uniform(s, rng);
                     const Tensor w = uniform(s, rng);
                     in.loss = [w](const ParamVars& p) {
                       const std::vector<Var> parts{p["a"], p["b"], p["c"], p["a"]};
                       return weigh(ops::add_all(parts), w);
                     };
                     return in;
                   }});
  cases.push_back(unary_case("sum", [](Var x) { return ops::scale(ops::sum(x), 1.3); }));
  cases.push_back(unary_case("mean", [](Var x) { return ops::mean(x); }));
  cases.push_back(unary_case("mean_rows", [](Var x) { return ops::mean_rows(x); }));
  cases.push_back({"consecutive_diff", true, [](Rng& rng) {
                     const auto t = draw(rng, 2, 5), d = draw(rng, 1, 4);
                     Instance in;
                     in.inputs["x"] = uniform({t, d}, rng);
                     const Tensor w = uniform({t - 1, d}, rng);
                     in.loss = [w](const ParamVars& p) { return weigh(ops::consecutive_diff(p["x"]), w); };
                     return in;
                   }});
  cases.push_back(unary_case("row_l2_normalize", [](Var x) { return ops::row_l2_normalize(x); }, true));
  cases.push_back({"cross_entropy", true, [](Rng& rng) {
                     const auto n = draw(rng, 1, 5), v = draw(rng, 2, 6);
                     Instance in;
                     in.inputs["logits"] = uniform({n, v}, rng, -3.0, 3.0);
                     std::vector<std::size_t> targets(n);
                     for (auto& t : targets) t = draw(rng, 0, v - 1);
                     // Position 0 is always scored; later positions may be ignored.
                     const std::size_t ignore = v;
                     for (std::size_t i = 1; i < n; ++i)
                       if (draw(rng, 0, 3) == 0) targets[i] = ignore;
                     in.loss = [targets, ignore](const ParamVars& p) {
                       return ops::cross_entropy(p["logits"], targets, ignore);
                     };
                     return in;
                   }});
  cases.push_back({"kl_rows", true, [](Rng& rng) {
                     const auto t = draw(rng, 1, 5);
                     Instance in;
                     in.inputs["probs"] = uniform({t, t}, rng, 0.05, 1.0);
                     Tensor target({t, t}, 0.0);
                     for (double& x : target.data())
                       if (draw(rng, 0, 2) == 0) x = 1.0;
                     target(0, 0) = 1.0;
                     in.loss = [target](const ParamVars& p) { return ops::kl_rows(target, p["probs"]); };
                     return in;
                   }});

  cases.push_back({"attention", false, [](Rng& rng) {
                     const auto t = draw(rng, 1, 4), s = draw(rng, 1, 4);
                     Instance in;
                     layers::init_attention(in.inputs, "attn", 6, 2, rng);
                     in.inputs["q"] = uniform({t, 6}, rng);
                     in.inputs["kv"] = uniform({s, 6}, rng);
                     const Tensor w = uniform({t, 6}, rng);
                     in.loss = [w](const ParamVars& p) {
                       return weigh(layers::attention(p["q"], p["kv"], p, "attn", 2, ops::Mask::none).output, w);
                     };
                     return in;
                   }});
  cases.push_back({"causal_dynamics", false, [](Rng& rng) {
                     const auto m = micro_model();
                     const auto t = draw(rng, 1, 5);
                     Instance in;
                     init_encoder(in.inputs, m.encoder, m.frame_dim, rng);
                     in.inputs["frames"] = uniform({t, m.frame_dim}, rng);
                     const Tensor w = uniform({t, m.encoder.d_model}, rng);
                     const Tensor wa = uniform({t, t}, rng);
                     in.loss = [m, w, wa](const ParamVars& p) {
                       EncoderVars out;
                       causal_dynamics(p["frames"], p, m.encoder, out);
                       return ops::add(weigh(out.causal, w), weigh(out.attention.back(), wa));
                     };
                     return in;
                   },
                   6});
  cases.push_back({"temporal_relations", false, [](Rng& rng) {
                     const auto m = micro_model();
                     const auto t = draw(rng, 1, 5);
                     Instance in;
                     init_encoder(in.inputs, m.encoder, m.frame_dim, rng);
                     for (auto& [key, x] : in.inputs)
                       if (key.ends_with(".gain")) x = uniform(x.shape(), rng, 0.5, 1.5);
                     in.inputs["causal"] = uniform({t, m.encoder.d_model}, rng);
                     const Tensor w = uniform({t, m.encoder.d_model}, rng);
                     in.loss = [m, w](const ParamVars& p) {
                       const PositionalEncoding pe(m.encoder.max_frames, m.encoder.d_model);
                       return weigh(temporal_relations(p["causal"], p, m.encoder, pe), w);
                     };
                     return in;
                   },
                   6});
  cases.push_back({"decoder_logits", false, [](Rng& rng) {
                     const auto m = micro_model();
                     const auto t = draw(rng, 1, 4), n = draw(rng, 1, 5);
                     Instance in;
                     init_decoder(in.inputs, m.decoder, m.vocab_size, rng);
                     for (auto& [key, x] : in.inputs)
                       if (key.ends_with(".gain")) x = uniform(x.shape(), rng, 0.5, 1.5);
                     in.inputs["memory"] = uniform({t, m.decoder.d_model}, rng);
                     std::vector<TokenId> tokens{kBos};
                     for (std::size_t i = 1; i < n; ++i) tokens.push_back(draw(rng, 0, m.vocab_size - 1));
                     const Tensor w = uniform({n, m.vocab_size}, rng);
                     in.loss = [m, w, tokens](const ParamVars& p) {
                       const PositionalEncoding pe(m.decoder.max_caption_len, m.decoder.d_model);
                       return weigh(decoder_logits(tokens, p["memory"], p, m.decoder, pe), w);
                     };
                     return in;
                   },
                   6});
  cases.push_back({"causal_alignment", false, [](Rng& rng) {
                     const auto t = draw(rng, 2, 5);
                     Instance in;
                     in.inputs["scores0"] = uniform({t, t}, rng, -2.0, 2.0);
                     in.inputs["scores1"] = uniform({t, t}, rng, -2.0, 2.0);
                     std::vector<std::pair<std::size_t, std::size_t>> edges{{0, t - 1}};
                     for (std::size_t j = 1; j < t; ++j)
                       for (std::size_t i = 0; i < j; ++i)
                         if (draw(rng, 0, 1) == 0) edges.emplace_back(i, j);
                     std::sort(edges.begin(), edges.end());
                     edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
                     const auto annotation = CausalAnnotation::from_edges(t, edges);
                     in.loss = [annotation](const ParamVars& p) {
                       const std::vector<Var> heads{ops::row_softmax(p["scores0"], ops::Mask::lower_triangular),
                                                    ops::row_softmax(p["scores1"], ops::Mask::lower_triangular)};
                       return losses::causal_alignment(heads, annotation);
                     };
                     return in;
                   }});
  cases.push_back({"temporal_consistency", false, [](Rng& rng) {
                     Instance in;
                     in.inputs["h"] = uniform({draw(rng, 2, 5), draw(rng, 1, 4)}, rng);
                     in.loss = [](const ParamVars& p) { return losses::temporal_consistency(p["h"]); };
                     return in;
                   }});
  cases.push_back({"contrastive", false, [](Rng& rng) {
                     const auto b = draw(rng, 1, 4), d = draw(rng, 2, 4);
                     Instance in;
                     in.inputs["video"] = away_from_zero({b, d}, rng);
                     in.inputs["text"] = away_from_zero({b, d}, rng);
                     in.loss = [](const ParamVars& p) { return losses::contrastive(p["video"], p["text"], 0.5); };
                     return in;
                   }});
  cases.push_back(objective_case("pretrain_objective", Stage::pretrain));
  cases.push_back(objective_case("finetune_objective", Stage::finetune));
  cases.push_back(objective_case("contrastive_objective", Stage::contrastive));
  cases.push_back(objective_case("joint_objective", Stage::joint));
  return cases;
}

}  // namespace

const std::vector<Case>& registry() {
  static const std::vector<Case> cases = build_registry();
  return cases;
}

std::vector<std::string> primitive_names() {
  return {"matmul",      "transpose",   "add",         "sub",           "mul",
          "scale",       "add_row",     "relu",        "row_softmax",   "row_softmax_masked",
          "layer_norm",  "embedding",   "concat_cols", "concat_rows",   "add_all",
          "sum",         "mean",        "mean_rows",   "consecutive_diff", "row_l2_normalize",
          "cross_entropy", "kl_rows"};
}

double check_instance(const Instance& instance, double step, std::size_t max_coords, Rng& coord_rng,
                      std::string* worst_input, std::size_t* coordinates, bool corrupt, std::size_t* kinks) {
  Tape tape;
  const ParamVars vars(tape, instance.inputs);
  auto grads = tape.gradient(instance.loss(vars));
  if (corrupt)
    for (auto& [_, g] : grads)
      for (double& x : g.data()) x = 1.1 * x + 1e-2;

  // Loss value plus the sign pattern of every relu input; a probe whose pattern
  // differs from the unperturbed one straddles a kink and is skipped.
  auto value_at = [&](const ParameterSet& inputs, std::vector<bool>& pattern) {
    Tape t(false);
    const ParamVars v(t, inputs);
    const double value = instance.loss(v).value().item();
    pattern.clear();
    for (const auto& e : t.entries())
      if (e.op == "relu")
        for (double y : t.value(Var{&t, e.output}).data()) pattern.push_back(y > 0.0);
    return value;
  };

  std::vector<bool> base_pattern, up_pattern, down_pattern;
  value_at(instance.inputs, base_pattern);

  double worst = 0.0;
  ParameterSet probe = instance.inputs;
  for (const auto& [name, tensor] : instance.inputs) {
    std::vector<std::size_t> coords(tensor.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), coord_rng);
      coords.resize(max_coords);
    }
    auto slot = probe.at(name).data();
    const auto g = grads.at(name).data();
    for (auto i : coords) {
      const double x = slot[i];
      slot[i] = x + step;
      const double up = value_at(probe, up_pattern);
      slot[i] = x - step;
      const double down = value_at(probe, down_pattern);
      slot[i] = x;
      if (up_pattern != base_pattern || down_pattern != base_pattern) {
        if (kinks) ++*kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (coordinates) ++*coordinates;
      if (!(err <= worst)) {
        worst = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        if (worst_input) *worst_input = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return worst;
}

Report run(const Options& options) {
  const auto start = std::chrono::steady_clock::now();
  Report report;
  report.passed = true;
  for (const auto& c : registry()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), c.name) == options.only.end())
      continue;
    CaseResult r;
    r.name = c.name;
    r.primitive = c.primitive;
    for (int seed = 0; seed < options.seeds; ++seed) {
      Rng rng(static_cast<std::uint64_t>(seed) * 7919 + fnv1a(c.name));
      const auto instance = c.make(rng);
      std::string where;
      const double err = check_instance(instance, options.step, c.max_coords, rng, &where, &r.coordinates,
                                        c.name == options.corrupt_case, &r.kinks_skipped);
      if (seed == 0 || err > r.worst_error) {
        r.worst_error = err;
        r.worst_input = "seed " + std::to_string(seed) + " " + where;
      }
    }
    r.passed = r.worst_error <= options.tolerance;
    report.passed = report.passed && r.passed;
    report.cases.push_back(std::move(r));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace ctrm::gradcheck
