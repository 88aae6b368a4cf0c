// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

#include "doctest.h"
#include "mlff/trainer.hpp"

using namespace mlff;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_config(Variant v = Variant::full, int steps = 3) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.steps = steps;
  cfg.batch = 2;
  cfg.lr = 1e-3;
  cfg.seed = 5;
  return cfg;
}

std::vector<Scalar> trainable_values(const TrainState& s) {
  std::vector<Scalar> out;
  for (const ParamEntry& e : s.model.params().entries()) {
    if (e.trainable) {
      out.insert(out.end(), e.value.begin(), e.value.end());
    }
  }
  return out;
}

void zero_heads(ParamStore& store) {
  for (ParamEntry& e : store.entries()) {
    if (e.name.rfind("decoder.head", 0) == 0) {
      std::fill(e.value.begin(), e.value.end(), Scalar(0));
    }
  }
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("mlff_tr_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.steps = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.grad_clip = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.grad_clip.reset();
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("zero learning rate and decay leave parameters unchanged") {
  const auto data = io::synth_generate(1, 3, 32, 32);
  TrainConfig cfg = quick_config(Variant::full, 4);
  cfg.lr = 0;
  cfg.weight_decay = 0;
  TrainState s = init_state(cfg);
  const auto before = trainable_values(s);
  const TrainLog log = train(s, cfg, data);
  CHECK(trainable_values(s) == before);
  CHECK(log.steps.size() == 4);
  CHECK(s.step == 4);
}

TEST_CASE("training is deterministic and logs every step") {
  const auto data = io::synth_generate(2, 3, 32, 32);
  const TrainConfig cfg = quick_config(Variant::mam_hfem, 3);
  TrainState a = init_state(cfg);
  TrainState b = init_state(cfg);
  const TrainLog la = train(a, cfg, data);
  const TrainLog lb = train(b, cfg, data);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  CHECK(la.csv() == lb.csv());
  const std::string csv = la.csv();
  CHECK(csv.rfind("step,total,lb_p1,lb_p2,lb_p3\n1,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  TrainConfig other = cfg;
  other.seed = 6;
  TrainState c = init_state(other);
  train(c, other, data);
  CHECK(serialize_checkpoint(c) != serialize_checkpoint(a));
}

TEST_CASE("checkpoint round trip is bitwise exact") {
  const auto data = io::synth_generate(3, 2, 32, 32);
  const TrainConfig cfg = quick_config(Variant::full, 2);
  TrainState s = init_state(cfg);
  train(s, cfg, data);
  const std::vector<char> bytes = serialize_checkpoint(s);
  const TrainState r = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(r) == bytes);
  CHECK(r.step == s.step);
  CHECK(r.train_h == 32);
  CHECK(r.model.variant() == Variant::full);
  for (std::size_t k = 0; k < s.adam_m.size(); ++k) {
    CHECK(r.adam_m[k] == s.adam_m[k]);
    CHECK(r.adam_v[k] == s.adam_v[k]);
    CHECK(r.model.params().entries()[k].value == s.model.params().entries()[k].value);
  }

  const fs::path path = temp_file("ck.bin");
  save_checkpoint(s, path);
  CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
  fs::remove(path);

  // Training continues from a loaded checkpoint.
  TrainState resumed = deserialize_checkpoint(bytes);
  train(resumed, cfg, data);
  CHECK(resumed.step == 4);
}

TEST_CASE("malformed checkpoints are rejected") {
  TrainState s = init_state(quick_config(Variant::bas));
  std::vector<char> bytes = serialize_checkpoint(s);
  std::vector<char> version = bytes;
  version[4] = 2;
  CHECK_THROWS_AS(deserialize_checkpoint(version), IoError);
  std::vector<char> magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), IoError);
  std::vector<char> cut(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  CHECK_THROWS_AS(deserialize_checkpoint(cut), IoError);
  std::vector<char> extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(extra), IoError);
  CHECK_THROWS_AS(load_checkpoint(temp_file("absent.bin")), IoError);
}

TEST_CASE("gradient clipping bounds the applied norm") {
  const auto data = io::synth_generate(4, 2, 32, 32);
  TrainState s = init_state(quick_config());
  const auto [images, masks] = io::stack_batch(data, {0, 1});
  for (const double c : {1e-3, 0.05, 1.0}) {
    GradientResult g = compute_gradients(s.model, images, masks, false);
    const double before = global_norm(g.grads);
    const double after = clip_gradients(g.grads, c);
    CHECK(after <= c + 1e-9);
    CHECK(after == global_norm(g.grads));
    if (before <= c) {
      CHECK(after == before);
    }
  }
  std::vector<std::vector<Scalar>> small{{0.1, 0.2}};
  CHECK(clip_gradients(small, 1.0) == doctest::Approx(std::sqrt(0.05)).epsilon(1e-15));
  CHECK(small[0] == std::vector<Scalar>{0.1, 0.2});

  TrainConfig cfg = quick_config(Variant::mam, 3);
  cfg.grad_clip = 0.01;
  TrainState t = init_state(cfg);
  for (const StepRecord& r : train(t, cfg, data).steps) {
    CHECK(r.applied_norm <= 0.01 + 1e-9);
  }
}

TEST_CASE("weight decay is decoupled from the gradient") {
  const auto data = io::synth_generate(5, 2, 32, 32);
  const auto [images, masks] = io::stack_batch(data, {0, 1});
  TrainState a = init_state(quick_config());
  TrainState b = init_state(quick_config());
  const GradientResult ga = compute_gradients(a.model, images, masks, false);
  const GradientResult gb = compute_gradients(b.model, images, masks, false);
  CHECK(ga.grads == gb.grads);

  const auto p0 = trainable_values(a);
  adamw_step(a, ga.grads, 1e-3, 0);
  adamw_step(b, gb.grads, 1e-3, 0.1);
  const auto pa = trainable_values(a);
  const auto pb = trainable_values(b);
  for (std::size_t i = 0; i < p0.size(); ++i) {
    CHECK(pa[i] - pb[i] == doctest::Approx(1e-3 * 0.1 * p0[i]).epsilon(1e-6).scale(1e-12));
  }

  // Gradients after a decayed step equal gradients after the same plain step
  // applied to the same parameters.
  TrainState c = init_state(quick_config());
  TrainState d = init_state(quick_config());
  adamw_step(c, ga.grads, 1e-3, 0.5);
  auto& ce = c.model.params().entries();
  auto& de = d.model.params().entries();
  for (std::size_t k = 0; k < ce.size(); ++k) {
    de[k].value = ce[k].value;
  }
  CHECK(compute_gradients(c.model, images, masks, false).grads ==
        compute_gradients(d.model, images, masks, false).grads);
}

TEST_CASE("first adam step matches the closed form") {
  TrainState s = init_state(quick_config(Variant::bas));
  std::vector<std::vector<Scalar>> grads;
  Rng rng(9);
  for (const ParamEntry& e : s.model.params().entries()) {
    std::vector<Scalar> g(e.trainable ? e.value.size() : 0);
    for (Scalar& v : g) {
      v = static_cast<Scalar>(rng.uniform(-1, 1));
    }
    grads.push_back(g);
  }
  const auto before = s.model.params().entries();
  adamw_step(s, grads, 0.01, 0.2);
  const auto& after = s.model.params().entries();
  for (std::size_t k = 0; k < after.size(); ++k) {
    if (!after[k].trainable) {
      CHECK(after[k].value == before[k].value);
      continue;
    }
    for (std::size_t i = 0; i < after[k].value.size(); ++i) {
      const double g = grads[k][i];
      const double p = before[k].value[i];
      const double expect = p - 0.01 * (g / (std::abs(g) + 1e-8) + 0.2 * p);
      CHECK(after[k].value[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("non-finite loss aborts with the step number") {
  const auto data = io::synth_generate(6, 2, 32, 32);
  const TrainConfig cfg = quick_config(Variant::bas, 5);
  TrainState s = init_state(cfg);
  int seen = 0;
  train(s, quick_config(Variant::bas, 2), data, [&](const StepRecord&) { ++seen; });
  CHECK(seen == 2);
  ParamEntry& w = s.model.params().get("decoder.head1.weight");
  w.value[0] = std::numeric_limits<Scalar>::quiet_NaN();
  try {
    train(s, cfg, data);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 3") != std::string::npos);
    CHECK(msg.find("last finite loss") != std::string::npos);
  }
}

TEST_CASE("resolution is fixed by the first training run") {
  const TrainConfig cfg = quick_config(Variant::bas, 1);
  TrainState s = init_state(cfg);
  train(s, cfg, io::synth_generate(7, 2, 32, 32));
  CHECK_THROWS_AS(train(s, cfg, io::synth_generate(7, 2, 64, 64)), ContractError);
  CHECK_THROWS_AS(evaluate(s, io::synth_generate(7, 2, 64, 32)), ContractError);
  auto mixed = io::synth_generate(7, 1, 32, 32);
  mixed.push_back(io::synth_generate(8, 1, 64, 64)[0]);
  TrainState fresh = init_state(cfg);
  CHECK_THROWS_AS(train(fresh, cfg, mixed), ContractError);
  CHECK_THROWS_AS(train(fresh, cfg, {}), ContractError);
}

TEST_CASE("zero heads give a stationary loss") {
  const auto data = io::synth_generate(8, 2, 32, 32);
  const auto [images, masks] = io::stack_batch(data, {0, 1});
  for (const Variant v : kAllVariants) {
    TrainState s = init_state(quick_config(v));
    zero_heads(s.model.params());
    const GradientResult g = compute_gradients(s.model, images, masks, false);
    const auto& entries = s.model.params().entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      if (entries[k].name.rfind("decoder.head", 0) == 0) {
        continue;
      }
      for (const Scalar x : g.grads[k]) {
        CHECK(x == 0);
      }
    }
    const Evaluation ev = evaluate(s, data);
    CHECK(ev.report.mae == doctest::Approx(0.5).epsilon(1e-6));
  }
}

TEST_CASE("evaluation is deterministic and uses P1") {
  const auto data = io::synth_generate(9, 2, 32, 32);
  const TrainConfig cfg = quick_config(Variant::full, 2);
  TrainState s = init_state(cfg);
  train(s, cfg, data);
  const Evaluation a = evaluate(s, data);
  const Evaluation b = evaluate(s, data);
  CHECK(metrics::csv_row("d", "m", a.report) == metrics::csv_row("d", "m", b.report));
  REQUIRE(a.p1.size() == 2);
  const PredictionSet p = predict(s.model, data[1].image);
  CHECK(a.p1[1].to_vector() == p.p1.to_vector());
  const metrics::MetricReport direct = metrics::evaluate_dataset(
      {{a.p1[0], data[0].mask}, {a.p1[1], data[1].mask}});
  CHECK(direct.m_dice == a.report.m_dice);
  CHECK(direct.mae == a.report.mae);
}

TEST_CASE("parameter groups") {
  CHECK(parameter_group("encoder.s1.b0.weight") == "encoder");
  CHECK(parameter_group("mam.k3.tall.weight") == "mam");
  CHECK(parameter_group("hfem.align2.weight") == "hfem");
  CHECK(parameter_group("decoder.d2.gam.key.weight") == "gam");
  CHECK(parameter_group("decoder.d1.block.weight") == "decoder");
  CHECK(parameter_group("decoder.head3.bias") == "head");
}

TEST_CASE("gradcheck covers every module group") {
  GradcheckOptions opt;
  opt.samples_per_group = 10;
  for (const Variant v : {Variant::bas, Variant::full}) {
    const GradcheckReport r = gradcheck(v, 3, opt);
    CHECK_MESSAGE(r.passed, r.worst);
    CHECK(r.max_rel_error <= 1e-4);
    CHECK(r.failures(1e-4).empty());
    std::map<std::string, int> per_group;
    for (const GradcheckEntry& e : r.entries) {
      ++per_group[e.group];
    }
    const std::vector<std::string> expect =
        v == Variant::bas ? std::vector<std::string>{"decoder", "encoder", "head"}
                          : std::vector<std::string>{"decoder", "encoder", "gam", "head", "hfem",
                                                     "mam"};
    CHECK(per_group.size() == expect.size());
    for (const std::string& g : expect) {
      CHECK(per_group[g] >= 10);
    }
  }
}

TEST_CASE("ablation structure") {
  const auto train_data = io::synth_generate(10, 2, 32, 32);
  std::vector<NamedDataset> evals{{"A", io::synth_generate(11, 2, 32, 32)},
                                  {"B", io::synth_generate(12, 1, 32, 32)}};
  TrainConfig cfg = quick_config(Variant::full, 3);
  cfg.lr = 1e-2;
  const AblationTable t = ablate(cfg, train_data, evals);
  REQUIRE(t.rows.size() == 4);
  std::size_t prev = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.rows[i].variant == kAllVariants[i]);
    CHECK(t.rows[i].params > prev);
    prev = t.rows[i].params;
    CHECK(t.rows[i].scores.size() == 2);
    CHECK(std::isfinite(t.rows[i].initial_loss));
    CHECK(std::isfinite(t.rows[i].final_loss));
    CHECK(t.rows[i].final_loss < t.rows[i].initial_loss);
  }
  const std::string csv = t.csv();
  CHECK(csv.rfind("model,params,initial_loss,final_loss,A_mDice,A_mIoU,B_mDice,B_mIoU\n", 0) == 0);
  CHECK(csv.find("\nBas.,") != std::string::npos);
  CHECK(csv.find("\n+MAM,") != std::string::npos);
  CHECK(csv.find("\n+MAM+HFEM,") != std::string::npos);
  CHECK(csv.find("\nOurs,") != std::string::npos);
}

}  // TEST_SUITE
