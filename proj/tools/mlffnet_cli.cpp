// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver over the mlffnet C interface.
// Exit codes: 0 success, 1 contract violation, 2 I/O error, 3 failed check.

#include <cstdio>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlff/mlffnet.h"

namespace {

constexpr int kExitContract = 1;
constexpr int kExitIo = 2;
constexpr int kExitCheck = 3;

struct Failure {
  int code;
};

int exit_code(mlff_status s) {
  switch (s) {
    case MLFF_OK: return 0;
    case MLFF_ERR_IO: return kExitIo;
    case MLFF_ERR_CHECK_FAILED:
    case MLFF_ERR_NUMERIC: return kExitCheck;
    case MLFF_ERR_CONTRACT:
    case MLFF_ERR_INTERNAL: return kExitContract;
  }
  return kExitContract;
}

void check(mlff_status s, const std::string& context) {
  if (s != MLFF_OK) {
    std::fprintf(stderr, "error: %s: %s\n", context.c_str(), mlff_last_error());
    throw Failure{exit_code(s)};
  }
}

[[noreturn]] void usage_error(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  throw Failure{kExitContract};
}

struct DatasetDeleter {
  void operator()(mlff_dataset* d) const { mlff_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(mlff_model* m) const { mlff_model_free(m); }
};
using DatasetPtr = std::unique_ptr<mlff_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<mlff_model, ModelDeleter>;

DatasetPtr load_dataset(const std::string& manifest, int h, int w) {
  mlff_dataset* d = nullptr;
  check(mlff_dataset_load(manifest.c_str(), h, w, &d), "--manifest " + manifest);
  return DatasetPtr(d);
}

ModelPtr load_model(const std::string& path) {
  mlff_model* m = nullptr;
  check(mlff_model_load(path.c_str(), &m), "--ckpt " + path);
  return ModelPtr(m);
}

mlff_model_info info_of(const mlff_model* m) {
  mlff_model_info info{};
  check(mlff_model_info_get(m, &info), "model");
  return info;
}

// "64" or "64x48" (height x width).
std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    std::size_t used = 0;
    if (x == std::string::npos) {
      const int v = std::stoi(s, &used);
      if (used == s.size()) {
        return {v, v};
      }
    } else {
      const int h = std::stoi(s.substr(0, x), &used);
      if (used == x) {
        std::size_t used_w = 0;
        const std::string ws = s.substr(x + 1);
        const int w = std::stoi(ws, &used_w);
        if (used_w == ws.size()) {
          return {h, w};
        }
      }
    }
  } catch (const std::exception&) {
  }
  usage_error("--size: expected N or HxW, got '" + s + "'");
}

void parse_widths(const std::string& s, int out[4]) {
  std::stringstream ss(s);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 4) {
      usage_error("--widths: expected four comma-separated integers");
    }
    try {
      std::size_t used = 0;
      out[i] = std::stoi(item, &used);
      if (used != item.size()) {
        throw std::invalid_argument(item);
      }
    } catch (const std::exception&) {
      usage_error("--widths: bad value '" + item + "'");
    }
    ++i;
  }
  if (i != 4) {
    usage_error("--widths: expected four comma-separated integers");
  }
}

struct TrainFlags {
  std::string variant = "full";
  std::string widths = "8,16,24,32";
  int steps = 300;
  int batch = 4;
  double lr = 1e-4;
  double wd = 1e-4;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::string size;

  void add_to(CLI::App* app, bool with_variant) {
    if (with_variant) {
      app->add_option("--variant", variant, "Ablation variant")
          ->check(CLI::IsMember({"bas", "mam", "mam_hfem", "full"}))
          ->capture_default_str();
    }
    app->add_option("--widths", widths, "Encoder stage widths c1,c2,c3,c4")->capture_default_str();
    app->add_option("--steps", steps, "Optimizer steps")->capture_default_str();
    app->add_option("--batch", batch, "Batch size")->capture_default_str();
    app->add_option("--lr", lr, "Learning rate")->capture_default_str();
    app->add_option("--wd", wd, "Decoupled weight decay")->capture_default_str();
    app->add_option("--grad-clip", grad_clip, "Global gradient-norm clip (<= 0 disables)")
        ->capture_default_str();
    app->add_option("--seed", seed, "Seed for weights and batch order")->capture_default_str();
    app->add_option("--size", size, "Training resolution N or HxW (default: file size)");
  }

  mlff_train_config config() const {
    mlff_train_config c;
    mlff_train_config_default(&c);
    c.variant = variant.c_str();
    parse_widths(widths, c.widths);
    c.steps = steps;
    c.batch = batch;
    c.lr = lr;
    c.weight_decay = wd;
    c.grad_clip = grad_clip;
    c.seed = seed;
    return c;
  }

  std::pair<int, int> resolution() const { return size.empty() ? std::pair{0, 0} : parse_size(size); }
};

void print_metrics(const char* dataset, const char* model, const mlff_metrics& m) {
  std::printf("dataset,model,mDic,mIoU,wFm,Smeasure,meanE,maxE,MAE\n");
  std::printf("%s,%s,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f\n", dataset, model, m.m_dice, m.m_iou,
              m.wfm, m.s_measure, m.mean_e, m.max_e, m.mae);
}

int run(int argc, char** argv) {
  CLI::App app{"mlffnet: multi-level feature fusion segmentation network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mlff_version()));

  // synth
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic polyp dataset");
  std::uint64_t synth_seed = 0;
  int synth_count = 8;
  std::string synth_size = "64";
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--count", synth_count, "Number of samples")->capture_default_str();
  synth->add_option("--size", synth_size, "Image size N or HxW, multiples of 32")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  CLI::App* train = app.add_subcommand("train", "Train a model on a manifest");
  TrainFlags train_flags;
  std::string train_manifest;
  std::string train_out;
  std::string train_ckpt;
  std::string train_csv;
  train_flags.add_to(train, true);
  train->add_option("--manifest", train_manifest, "Training manifest")->required();
  train->add_option("--out", train_out, "Checkpoint to write")->required();
  train->add_option("--ckpt", train_ckpt, "Resume from this checkpoint");
  train->add_option("--csv", train_csv, "Per-step loss log");

  // eval
  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a manifest");
  std::string eval_ckpt;
  std::string eval_manifest;
  std::string eval_csv;
  std::string eval_name;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "Evaluation manifest")->required();
  eval->add_option("--csv", eval_csv, "Metrics CSV to write");
  eval->add_option("--name", eval_name, "Dataset label (default: manifest name)");

  // predict
  CLI::App* predict = app.add_subcommand("predict", "Write predicted probability maps");
  std::string pred_ckpt;
  std::string pred_manifest;
  std::string pred_out;
  bool all_heads = false;
  predict->add_option("--ckpt", pred_ckpt, "Checkpoint")->required();
  predict->add_option("--manifest", pred_manifest, "Input manifest")->required();
  predict->add_option("--out", pred_out, "Output directory")->required();
  predict->add_flag("--all-heads", all_heads, "Also write the P2 and P3 maps");

  // gradcheck
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::string gc_variant = "full";
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--variant", gc_variant, "Variant, or 'all'")
      ->check(CLI::IsMember({"bas", "mam", "mam_hfem", "full", "all"}))
      ->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Seed for weights and data")->capture_default_str();

  // ablate
  CLI::App* ablate = app.add_subcommand("ablate", "Train and score the four-variant ladder");
  TrainFlags abl_flags;
  std::string abl_manifest;
  std::vector<std::string> abl_evals;
  std::string abl_csv;
  abl_flags.add_to(ablate, false);
  ablate->add_option("--manifest", abl_manifest, "Training manifest")->required();
  ablate->add_option("--eval-manifest", abl_evals,
                     "Evaluation manifest, repeatable (default: the training manifest)");
  ablate->add_option("--csv", abl_csv, "Ablation table to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitContract;
  }

  if (synth->parsed()) {
    const auto [h, w] = parse_size(synth_size);
    mlff_dataset* d = nullptr;
    check(mlff_dataset_synth(synth_seed, synth_count, h, w, &d), "synth");
    const DatasetPtr ds(d);
    check(mlff_dataset_save(ds.get(), synth_out.c_str(), "synth"), "--out " + synth_out);
    std::printf("wrote %d samples and %s/manifest.tsv\n", mlff_dataset_size(ds.get()),
                synth_out.c_str());
    return 0;
  }

  if (train->parsed()) {
    const mlff_train_config cfg = train_flags.config();
    ModelPtr model;
    if (!train_ckpt.empty()) {
      model = load_model(train_ckpt);
    } else {
      mlff_model* m = nullptr;
      check(mlff_model_create(&cfg, &m), "model");
      model.reset(m);
    }
    auto [h, w] = train_flags.resolution();
    const mlff_model_info before = info_of(model.get());
    if (h == 0 && before.train_height != 0) {
      h = before.train_height;
      w = before.train_width;
    }
    const DatasetPtr ds = load_dataset(train_manifest, h, w);
    mlff_train_result r{};
    check(mlff_train(model.get(), &cfg, ds.get(), train_csv.empty() ? nullptr : train_csv.c_str(),
                     nullptr, nullptr, &r),
          "train");
    check(mlff_model_save(model.get(), train_out.c_str()), "--out " + train_out);
    const mlff_model_info info = info_of(model.get());
    std::printf("variant %s params %zu steps %d initial_loss %.6f final_loss %.6f\n", info.variant,
                info.param_count, r.steps, r.initial_loss, r.final_loss);
    return 0;
  }

  if (eval->parsed()) {
    const ModelPtr model = load_model(eval_ckpt);
    const mlff_model_info info = info_of(model.get());
    const DatasetPtr ds = load_dataset(eval_manifest, info.train_height, info.train_width);
    const char* name = eval_name.empty() ? mlff_dataset_name(ds.get()) : eval_name.c_str();
    mlff_metrics m{};
    check(mlff_evaluate(model.get(), ds.get(), name, eval_csv.empty() ? nullptr : eval_csv.c_str(),
                        &m),
          "eval");
    print_metrics(name, info.variant, m);
    return 0;
  }

  if (predict->parsed()) {
    const ModelPtr model = load_model(pred_ckpt);
    const mlff_model_info info = info_of(model.get());
    const DatasetPtr ds = load_dataset(pred_manifest, info.train_height, info.train_width);
    check(mlff_predict(model.get(), ds.get(), pred_out.c_str(), all_heads ? 1 : 0),
          "--out " + pred_out);
    std::printf("wrote %d prediction%s to %s\n", mlff_dataset_size(ds.get()),
                all_heads ? " triples" : "s", pred_out.c_str());
    return 0;
  }

  if (gradcheck->parsed()) {
    const std::vector<std::string> variants =
        gc_variant == "all" ? std::vector<std::string>{"bas", "mam", "mam_hfem", "full"}
                            : std::vector<std::string>{gc_variant};
    int rc = 0;
    for (const std::string& v : variants) {
      mlff_gradcheck_result r{};
      const mlff_status s = mlff_gradcheck(v.c_str(), gc_seed, &r);
      if (s != MLFF_OK && s != MLFF_ERR_CHECK_FAILED) {
        check(s, "gradcheck");
      }
      std::printf("gradcheck %s seed %llu checked %d max_rel_error %.3e worst %s %s\n", v.c_str(),
                  static_cast<unsigned long long>(gc_seed), r.checked, r.max_rel_error, r.worst,
                  s == MLFF_OK ? "PASS" : "FAIL");
      if (s == MLFF_ERR_CHECK_FAILED) {
        std::fprintf(stderr, "error: %s\n", mlff_last_error());
        rc = kExitCheck;
      }
    }
    return rc;
  }

  if (ablate->parsed()) {
    const mlff_train_config cfg = abl_flags.config();
    const auto [h, w] = abl_flags.resolution();
    const DatasetPtr train_ds = load_dataset(abl_manifest, h, w);
    // Evaluation data is resized to the training resolution.
    int th = 0;
    int tw = 0;
    check(mlff_dataset_shape(train_ds.get(), &th, &tw), "--manifest " + abl_manifest);
    std::vector<DatasetPtr> evals;
    if (abl_evals.empty()) {
      abl_evals.push_back(abl_manifest);
    }
    for (const std::string& e : abl_evals) {
      evals.push_back(load_dataset(e, th, tw));
    }
    std::vector<const mlff_dataset*> eval_ptrs;
    for (const DatasetPtr& e : evals) {
      eval_ptrs.push_back(e.get());
    }
    mlff_ablation_row rows[4];
    check(mlff_ablate(&cfg, train_ds.get(), eval_ptrs.data(), static_cast<int>(eval_ptrs.size()),
                      abl_csv.empty() ? nullptr : abl_csv.c_str(), rows),
          "ablate");
    std::printf("model,params,initial_loss,final_loss\n");
    for (const mlff_ablation_row& r : rows) {
      std::printf("%s,%zu,%.6f,%.6f\n", r.label, r.param_count, r.initial_loss, r.final_loss);
    }
    return 0;
  }
  return kExitContract;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Failure& f) {
    return f.code;
  }
}
