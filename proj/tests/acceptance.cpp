// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Usage: mlff_acceptance <path-to-mlffnet-cli> [work-dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metric_oracles.hpp"
#include "mlff/loss.hpp"
#include "mlff/model.hpp"
#include "mlff/trainer.hpp"

namespace fs = std::filesystem;
using namespace mlff;
using namespace mlff::test;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------ criterion 1

Outcome gradient_correctness() {
  Outcome out{true, ""};
  for (const Variant v : kAllVariants) {
    const GradcheckReport r = gradcheck(v, 1);
    const bool ok = r.passed && r.max_rel_error <= 1e-4 && !r.entries.empty();
    out.pass = out.pass && ok;
    out.detail += std::string(variant_name(v)) + " " + fmt("%.2e", r.max_rel_error) + " (" +
                  std::to_string(r.entries.size()) + " coords)" + (ok ? "" : " FAILED") + "; ";
  }
  return out;
}

// ------------------------------------------------------------ criterion 2

Outcome overfit() {
  TrainConfig cfg;
  cfg.variant = Variant::full;
  cfg.model.encoder.channels = {8, 16, 24, 32};
  cfg.steps = 300;
  cfg.batch = 4;
  cfg.lr = 1e-2;
  cfg.seed = 0;
  const std::vector<io::Sample> data = io::synth_generate(0, 4, 64, 64);
  TrainState state = init_state(cfg);
  const TrainLog log = train(state, cfg, data);
  const double first = log.steps.front().loss.total;
  const double last = log.steps.back().loss.total;
  const double ratio = first / last;
  const metrics::MetricReport r = evaluate(state, data).report;
  const bool ok = r.m_dice >= 0.95 && r.mae <= 0.05 && ratio >= 10;
  return {ok, "mDice " + fmt("%.4f", r.m_dice) + ", MAE " + fmt("%.4f", r.mae) +
                  ", loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (" +
                  fmt("%.1f", ratio) + "x)"};
}

// ------------------------------------------------------------ criterion 3

Tensor binary_mask(int n, int h, int w, std::mt19937_64& gen) {
  std::bernoulli_distribution d(0.4);
  std::vector<Scalar> v(static_cast<std::size_t>(n) * h * w);
  for (Scalar& x : v) {
    x = d(gen) ? 1 : 0;
  }
  return Tensor(Shape{n, 1, h, w}, v);
}

Outcome loss_identities() {
  std::mt19937_64 gen(3);
  int bitwise = 0;
  double worst_perfect = 0;
  double worst_scale = 0;
  const int trials = 20;
  for (int i = 0; i < trials; ++i) {
    const Tensor g = binary_mask(2, 16, 16, gen);
    const Shape s = g.shape();
    const PredictionSet p{random_tensor(s, gen, 0.02, 0.98), random_tensor(s, gen, 0.02, 0.98),
                          random_tensor(s, gen, 0.02, 0.98)};
    const LossBreakdown lb = total_loss(p, g);
    const Scalar a = basic_loss(p.p1, g).item();
    const Scalar b = basic_loss(p.p2, g).item();
    const Scalar c = basic_loss(p.p3, g).item();
    if (lb.total == a + b + Scalar(0.5) * c) {
      ++bitwise;
    }
    const Tensor perfect = ops::clamp(g, kPredictionEps, 1 - kPredictionEps);
    worst_perfect = std::max(worst_perfect, total_loss({perfect, perfect, perfect}, g).total);

    const Tensor w = pixel_weights(g);
    const double base = weighted_bce(p.p1, g, w).item();
    for (const double k : {0.5, 3.0, 17.0}) {
      const double scaled = weighted_bce(p.p1, g, ops::affine(w, k, 0)).item();
      worst_scale = std::max(worst_scale, std::abs(scaled - base) / std::abs(base));
    }
  }
  const bool ok = bitwise == trials && worst_perfect <= 5e-6 && worst_scale <= 1e-12;
  return {ok, std::to_string(bitwise) + "/" + std::to_string(trials) +
                  " bitwise sums, perfect total " + fmt("%.2e", worst_perfect) +
                  ", BCE scale rel err " + fmt("%.2e", worst_scale)};
}

// ------------------------------------------------------------ criterion 4

Outcome metric_oracles() {
  std::mt19937_64 gen(2024);
  double worst = 0;
  int order_violations = 0;
  for (int i = 0; i < 25; ++i) {
    const Instance in = random_instance(gen, 8, 8, i % 2 == 1);
    const Grid p = grid(in.p);
    const Grid g = grid(in.g);
    const metrics::Overlap o = metrics::dice_iou(in.p, in.g);
    const metrics::Overlap oo = overlap_oracle(p, g);
    const metrics::EMeasure e = metrics::e_measure(in.p, in.g);
    const auto [em, ex] = e_oracle(p, g);
    for (const double d :
         {o.dice - oo.dice, o.iou - oo.iou,
          metrics::weighted_fmeasure(in.p, in.g).value - wfm_oracle(p, g),
          metrics::s_measure(in.p, in.g) - s_oracle(p, g), e.mean - em, e.max - ex,
          metrics::mae(in.p, in.g) - mae_oracle(p, g)}) {
      worst = std::max(worst, std::abs(d));
    }
    if (o.iou > o.dice || e.max < e.mean) {
      ++order_violations;
    }
  }
  double perfect_dev = 0;
  std::mt19937_64 pg(5);
  for (int i = 0; i < 10; ++i) {
    const Tensor g = random_instance(pg).g;
    const metrics::MetricReport r = metrics::evaluate_image(g, g);
    for (const double v : {r.m_dice, r.m_iou, r.wfm, r.s_measure, r.mean_e, r.max_e}) {
      perfect_dev = std::max(perfect_dev, std::abs(v - 1));
    }
    perfect_dev = std::max(perfect_dev, std::abs(r.mae));
  }
  const bool ok = worst <= 1e-6 && order_violations == 0 && perfect_dev <= 1e-6;
  return {ok, "max oracle diff " + fmt("%.2e", worst) + ", ordering violations " +
                  std::to_string(order_violations) + ", perfect deviation " +
                  fmt("%.2e", perfect_dev)};
}

// ------------------------------------------------------------ criterion 5

Outcome gam_mean() {
  double worst = 0;
  for (const std::uint64_t seed : {20u, 21u, 22u}) {
    ParamStore store;
    Rng rng(seed);
    declare_gam(store, rng, 8, 12, 4, Norm::batch, "g");
    for (ParamEntry& e : store.entries()) {
      if (e.name.rfind("g.query", 0) == 0 || e.name.rfind("g.key", 0) == 0) {
        std::fill(e.value.begin(), e.value.end(), Scalar(0));
      }
    }
    std::mt19937_64 gen(seed);
    const Tensor dec = random_tensor(Shape{2, 8, 4, 6}, gen);
    const Tensor enc = random_tensor(Shape{2, 12, 4, 6}, gen);
    ForwardContext ctx(store, Mode::train, false);
    GamTrace trace;
    gam_forward(dec, enc, bind_gam(ctx, Norm::batch, "g"), &trace);
    const Shape vs = trace.values.shape();
    for (int n = 0; n < vs.n; ++n) {
      for (int c = 0; c < vs.c; ++c) {
        double mean = 0;
        for (int y = 0; y < vs.h; ++y) {
          for (int x = 0; x < vs.w; ++x) {
            mean += trace.values.at(n, c, y, x);
          }
        }
        mean /= vs.h * vs.w;
        for (int y = 0; y < vs.h; ++y) {
          for (int x = 0; x < vs.w; ++x) {
            worst = std::max(worst, std::abs(trace.attended.at(n, c, y, x) - mean));
          }
        }
      }
    }
  }
  return {worst <= 1e-9, "max |AV - mean(V)| " + fmt("%.2e", worst)};
}

// ------------------------------------------------------------ criterion 6

std::string show(const Shape& s) {
  return "[" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) +
         "," + std::to_string(s.w) + "]";
}

Outcome shape_contracts() {
  int checked = 0;
  std::vector<std::string> bad;
  auto expect = [&](const std::string& what, const Shape& got, const Shape& want) {
    ++checked;
    if (got != want) {
      bad.push_back(what + " " + show(got) + " != " + show(want));
    }
  };
  const ModelConfig cfg;
  const auto& ch = cfg.encoder.channels;
  const std::pair<int, int> sizes[] = {{32, 32}, {64, 64}, {96, 64}, {32, 128}};
  for (const Variant v : kAllVariants) {
    Model m = build_model(v, cfg, 7);
    for (const auto& [h, w] : sizes) {
      const int n = 2;
      std::mt19937_64 gen(static_cast<std::uint64_t>(h * 1000 + w));
      ForwardContext ctx(m.params(), Mode::train, false);
      ForwardTrace tr;
      const PredictionSet p = m.forward(ctx, random_tensor(Shape{n, 3, h, w}, gen, 0, 1), &tr);
      const std::string tag = std::string(variant_name(v)) + " " + std::to_string(h) + "x" +
                              std::to_string(w) + " ";
      for (int i = 0; i < 4; ++i) {
        const int s = FeaturePyramid::kStrides[static_cast<std::size_t>(i)];
        expect(tag + "X" + std::to_string(i + 1), tr.pyramid.level(i + 1).shape(),
               Shape{n, ch[static_cast<std::size_t>(i)], h / s, w / s});
      }
      expect(tag + "T1", tr.fused.t1.shape(), Shape{n, ch[0], h / 4, w / 4});
      const bool hf = has_hfem(v);
      expect(tag + "T2", tr.fused.t2.shape(), Shape{n, hf ? cfg.hfem_width : ch[1], h / 8, w / 8});
      expect(tag + "T3", tr.fused.t3.shape(),
             Shape{n, hf ? cfg.hfem_width : ch[2], h / 16, w / 16});
      expect(tag + "T4", tr.fused.t4.shape(),
             Shape{n, hf ? cfg.hfem_width : ch[3], h / 32, w / 32});
      for (int i = 0; i < 3; ++i) {
        const int s = FeaturePyramid::kStrides[static_cast<std::size_t>(i)];
        expect(tag + "D" + std::to_string(i + 1), tr.decoder.d[static_cast<std::size_t>(i)].shape(),
               Shape{n, cfg.decoder_width, h / s, w / s});
      }
      for (const Tensor* t : {&p.p1, &p.p2, &p.p3}) {
        expect(tag + "P", t->shape(), Shape{n, 1, h, w});
      }
    }
  }

  // Standalone modules.
  std::mt19937_64 gen(9);
  {
    ParamStore store;
    Rng rng(1);
    declare_mam(store, rng, 12, Norm::batch);
    ForwardContext ctx(store, Mode::train, false);
    MamTrace mt;
    const Tensor x1 = random_tensor(Shape{1, 12, 6, 10}, gen);
    expect("mam T1", mam_forward(x1, bind_mam(ctx, Norm::batch), &mt).shape(), x1.shape());
    expect("mam gate", mt.gate.shape(), Shape{1, 1, 6, 10});
  }
  {
    ParamStore store;
    Rng rng(2);
    declare_gam(store, rng, 10, 6, 4, Norm::batch, "g");
    ForwardContext ctx(store, Mode::train, false);
    GamTrace gt;
    const Tensor dec = random_tensor(Shape{2, 10, 3, 5}, gen);
    const Tensor enc = random_tensor(Shape{2, 6, 3, 5}, gen);
    expect("gam out", gam_forward(dec, enc, bind_gam(ctx, Norm::batch, "g"), &gt).shape(),
           dec.shape());
    expect("gam attention", gt.attention.shape(), Shape{2, 1, 15, 15});
  }
  std::string detail = std::to_string(checked) + " shapes checked";
  for (const std::string& b : bad) {
    detail += "; " + b;
  }
  return {bad.empty(), detail};
}

// ------------------------------------------------------------ criterion 7

Outcome ablation_structure() {
  TrainConfig base;
  base.steps = 20;
  base.batch = 4;
  base.lr = 1e-2;
  base.seed = 0;
  const std::vector<io::Sample> train_data = io::synth_generate(11, 4, 32, 32);
  const std::vector<NamedDataset> evals{{"synthA", io::synth_generate(12, 3, 32, 32)},
                                        {"synthB", io::synth_generate(13, 3, 32, 32)}};
  const AblationTable t = ablate(base, train_data, evals);
  bool ok = t.rows.size() == 4;
  std::string counts;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const AblationRow& r = t.rows[i];
    ok = ok && r.variant == kAllVariants[i] && r.scores.size() == 2 &&
         std::isfinite(r.final_loss) && r.final_loss < r.initial_loss;
    if (i > 0) {
      ok = ok && r.params > t.rows[i - 1].params;
    }
    counts += (i > 0 ? " < " : "") + std::to_string(r.params);
  }
  std::istringstream csv(t.csv());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) {
    lines.push_back(line);
  }
  ok = ok && lines.size() == 5 &&
       lines[0] == "model,params,initial_loss,final_loss,synthA_mDice,synthA_mIoU,synthB_mDice,"
                   "synthB_mIoU";
  const char* labels[] = {"Bas.", "+MAM", "+MAM+HFEM", "Ours"};
  for (std::size_t i = 1; i < lines.size() && i <= 4; ++i) {
    ok = ok && lines[i].rfind(std::string(labels[i - 1]) + ",", 0) == 0;
  }
  return {ok, std::to_string(t.rows.size()) + " rows, params " + counts};
}

// ------------------------------------------------------------ criterion 8

int run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str());
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

bool cli_session(const fs::path& cli, const fs::path& dir, std::string& err) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string c = quote(cli);
  const std::string d = dir.string() + "/";
  const std::vector<std::string> cmds = {
      c + " synth --seed 3 --count 4 --size 32 --out " + quote(d + "data"),
      c + " train --manifest " + quote(d + "data/manifest.tsv") + " --out " +
          quote(d + "model.ckpt") + " --steps 6 --batch 2 --lr 1e-3 --seed 4 --csv " +
          quote(d + "loss.csv"),
      c + " eval --ckpt " + quote(d + "model.ckpt") + " --manifest " +
          quote(d + "data/manifest.tsv") + " --csv " + quote(d + "eval.csv"),
      c + " predict --all-heads --ckpt " + quote(d + "model.ckpt") + " --manifest " +
          quote(d + "data/manifest.tsv") + " --out " + quote(d + "pred"),
      c + " ablate --steps 2 --batch 2 --manifest " + quote(d + "data/manifest.tsv") +
          " --csv " + quote(d + "ablation.csv"),
  };
  for (const std::string& cmd : cmds) {
    if (run(cmd) != 0) {
      err = "command failed: " + cmd;
      return false;
    }
  }
  return true;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      files[fs::relative(e.path(), dir).string()] =
          std::string(std::istreambuf_iterator<char>(in), {});
    }
  }
  return files;
}

Outcome reproducibility(const fs::path& cli, const fs::path& work) {
  std::string err;
  if (!cli_session(cli, work / "run_a", err) || !cli_session(cli, work / "run_b", err)) {
    return {false, err};
  }
  const auto a = snapshot(work / "run_a");
  const auto b = snapshot(work / "run_b");
  int ckpt = 0;
  int csv = 0;
  int masks = 0;
  for (const auto& [name, bytes] : a) {
    const std::string ext = fs::path(name).extension().string();
    ckpt += ext == ".ckpt";
    csv += ext == ".csv";
    masks += name.rfind("pred/", 0) == 0;
  }
  const bool ok = a == b && ckpt == 1 && csv == 3 && masks == 12;
  std::string detail = std::to_string(a.size()) + " files compared (" + std::to_string(ckpt) +
                       " checkpoint, " + std::to_string(csv) + " CSV, " + std::to_string(masks) +
                       " masks)";
  if (a != b) {
    for (const auto& [name, bytes] : a) {
      const auto it = b.find(name);
      if (it == b.end() || it->second != bytes) {
        detail += "; differs: " + name;
      }
    }
  }
  fs::remove_all(work);
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <mlffnet-cli> [work-dir]\n", argv[0]);
    return 2;
  }
  const fs::path cli = fs::absolute(argv[1]);
  const fs::path work = argc > 2 ? fs::path(argv[2]) : fs::temp_directory_path() / "mlff_acceptance";

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 gradient correctness (gradcheck, 4 variants, 32x32, <= 1e-4)", gradient_correctness},
      {"2 overfit (full, 4 x 64x64, 300 steps)", overfit},
      {"3 loss identities", loss_identities},
      {"4 metric oracle equivalence", metric_oracles},
      {"5 GAM global-mean oracle", gam_mean},
      {"6 shape contracts", shape_contracts},
      {"7 ablation harness structure", ablation_structure},
      {"8 CLI reproducibility", [&] { return reproducibility(cli, work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::printf("%s criterion %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
