// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/mlffnet.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "mlff/trainer.hpp"

struct mlff_dataset {
  std::string name;
  std::vector<mlff::io::Sample> samples;
};

struct mlff_model {
  mlff::TrainState state;
};

namespace {

thread_local std::string g_last_error;

mlff_status fail(mlff_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
mlff_status guarded(F&& body) {
  try {
    body();
    return MLFF_OK;
  } catch (const mlff::ContractError& e) {
    return fail(MLFF_ERR_CONTRACT, e.what());
  } catch (const mlff::IoError& e) {
    return fail(MLFF_ERR_IO, e.what());
  } catch (const mlff::NumericError& e) {
    return fail(MLFF_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MLFF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MLFF_ERR_INTERNAL, e.what());
  }
}

void require(bool ok, const char* what) {
  if (!ok) {
    throw mlff::ContractError(what);
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw mlff::IoError("cannot write '" + path + "'");
  }
  out << text;
  if (!out) {
    throw mlff::IoError("write failed for '" + path + "'");
  }
}

void copy_str(char* dst, std::size_t cap, const std::string& src) {
  const std::size_t n = std::min(cap - 1, src.size());
  std::memcpy(dst, src.data(), n);
  dst[n] = '\0';
}

mlff::ModelConfig model_config(const mlff_train_config& c) {
  mlff::ModelConfig m;
  for (int i = 0; i < 4; ++i) {
    m.encoder.channels[static_cast<std::size_t>(i)] = c.widths[i];
  }
  m.encoder.blocks_per_stage = c.blocks_per_stage;
  m.hfem_width = c.hfem_width;
  m.attn_width = c.attn_width;
  m.decoder_width = c.decoder_width;
  return m;
}

mlff::TrainConfig train_config(const mlff_train_config& c, const mlff::Model* model) {
  mlff::TrainConfig t;
  if (model != nullptr) {
    t.variant = model->variant();
    t.model = model->config();
  } else {
    require(c.variant != nullptr, "variant must not be NULL");
    t.variant = mlff::parse_variant(c.variant);
    t.model = model_config(c);
  }
  t.lr = c.lr;
  t.weight_decay = c.weight_decay;
  t.steps = c.steps;
  t.batch = c.batch;
  t.seed = c.seed;
  if (c.grad_clip > 0) {
    t.grad_clip = c.grad_clip;
  } else {
    t.grad_clip.reset();
  }
  t.validate();
  return t;
}

}  // namespace

extern "C" {

const char* mlff_last_error(void) { return g_last_error.c_str(); }

const char* mlff_version(void) { return "0.1.0"; }

int mlff_png_supported(void) { return mlff::io::png_supported() ? 1 : 0; }

mlff_status mlff_dataset_synth(uint64_t seed, int count, int height, int width,
                               mlff_dataset** out) {
  return guarded([&] {
    require(out != nullptr, "output handle must not be NULL");
    auto ds = std::make_unique<mlff_dataset>();
    ds->name = "synth";
    ds->samples = mlff::io::synth_generate(seed, count, height, width);
    *out = ds.release();
  });
}

mlff_status mlff_dataset_load(const char* manifest_path, int height, int width,
                              mlff_dataset** out) {
  return guarded([&] {
    require(out != nullptr && manifest_path != nullptr, "arguments must not be NULL");
    require(height >= 0 && width >= 0, "target size must be >= 0");
    auto ds = std::make_unique<mlff_dataset>();
    ds->name = mlff::io::read_manifest(manifest_path).name;
    ds->samples = mlff::io::load_manifest(manifest_path, height, width);
    *out = ds.release();
  });
}

mlff_status mlff_dataset_save(const mlff_dataset* ds, const char* dir, const char* name) {
  return guarded([&] {
    require(ds != nullptr && dir != nullptr, "arguments must not be NULL");
    mlff::io::save_dataset(ds->samples, dir, name != nullptr ? name : ds->name);
  });
}

int mlff_dataset_size(const mlff_dataset* ds) {
  return ds == nullptr ? 0 : static_cast<int>(ds->samples.size());
}

const char* mlff_dataset_name(const mlff_dataset* ds) {
  return ds == nullptr ? nullptr : ds->name.c_str();
}

mlff_status mlff_dataset_shape(const mlff_dataset* ds, int* height, int* width) {
  return guarded([&] {
    require(ds != nullptr && height != nullptr && width != nullptr, "arguments must not be NULL");
    require(!ds->samples.empty(), "dataset is empty");
    *height = ds->samples.front().image.shape().h;
    *width = ds->samples.front().image.shape().w;
  });
}

const char* mlff_dataset_id(const mlff_dataset* ds, int index) {
  if (ds == nullptr || index < 0 || index >= static_cast<int>(ds->samples.size())) {
    return nullptr;
  }
  return ds->samples[static_cast<std::size_t>(index)].id.c_str();
}

void mlff_dataset_free(mlff_dataset* ds) { delete ds; }

void mlff_train_config_default(mlff_train_config* cfg) {
  if (cfg == nullptr) {
    return;
  }
  const mlff::TrainConfig t;
  cfg->variant = "full";
  for (int i = 0; i < 4; ++i) {
    cfg->widths[i] = t.model.encoder.channels[static_cast<std::size_t>(i)];
  }
  cfg->blocks_per_stage = t.model.encoder.blocks_per_stage;
  cfg->hfem_width = t.model.hfem_width;
  cfg->attn_width = t.model.attn_width;
  cfg->decoder_width = t.model.decoder_width;
  cfg->lr = t.lr;
  cfg->weight_decay = t.weight_decay;
  cfg->grad_clip = t.grad_clip.value_or(0);
  cfg->steps = t.steps;
  cfg->batch = t.batch;
  cfg->seed = t.seed;
}

mlff_status mlff_model_create(const mlff_train_config* cfg, mlff_model** out) {
  return guarded([&] {
    require(cfg != nullptr && out != nullptr, "arguments must not be NULL");
    const mlff::TrainConfig t = train_config(*cfg, nullptr);
    *out = new mlff_model{mlff::init_state(t)};
  });
}

mlff_status mlff_model_load(const char* path, mlff_model** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "arguments must not be NULL");
    *out = new mlff_model{mlff::load_checkpoint(path)};
  });
}

mlff_status mlff_model_save(const mlff_model* model, const char* path) {
  return guarded([&] {
    require(model != nullptr && path != nullptr, "arguments must not be NULL");
    mlff::save_checkpoint(model->state, path);
  });
}

mlff_status mlff_model_info_get(const mlff_model* model, mlff_model_info* out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "arguments must not be NULL");
    copy_str(out->variant, sizeof out->variant,
             std::string(mlff::variant_name(model->state.model.variant())));
    out->param_count = model->state.model.parameter_count();
    out->step = model->state.step;
    out->train_height = model->state.train_h;
    out->train_width = model->state.train_w;
  });
}

void mlff_model_free(mlff_model* model) { delete model; }

mlff_status mlff_train(mlff_model* model, const mlff_train_config* cfg, const mlff_dataset* data,
                       const char* log_csv, mlff_step_callback callback, void* user,
                       mlff_train_result* result) {
  return guarded([&] {
    require(model != nullptr && cfg != nullptr && data != nullptr, "arguments must not be NULL");
    const mlff::TrainConfig t = train_config(*cfg, &model->state.model);
    mlff::TrainLog log;
    const auto on_step = [&](const mlff::StepRecord& r) {
      log.steps.push_back(r);
      if (callback != nullptr) {
        callback(r.step, static_cast<double>(r.loss.total), user);
      }
    };
    try {
      mlff::train(model->state, t, data->samples, on_step);
    } catch (const mlff::NumericError&) {
      if (log_csv != nullptr) {
        log.write_csv(log_csv);
      }
      throw;
    }
    if (log_csv != nullptr) {
      log.write_csv(log_csv);
    }
    if (result != nullptr) {
      result->initial_loss = static_cast<double>(log.steps.front().loss.total);
      result->final_loss = static_cast<double>(log.steps.back().loss.total);
      result->steps = static_cast<int>(log.steps.size());
    }
  });
}

mlff_status mlff_evaluate(mlff_model* model, const mlff_dataset* data, const char* dataset_name,
                          const char* csv_path, mlff_metrics* out) {
  return guarded([&] {
    require(model != nullptr && data != nullptr, "arguments must not be NULL");
    const mlff::metrics::MetricReport r = mlff::evaluate(model->state, data->samples).report;
    if (csv_path != nullptr) {
      const std::string name = dataset_name != nullptr ? dataset_name : data->name;
      write_text(csv_path, mlff::metrics::csv_header() + "\n" +
                               mlff::metrics::csv_row(
                                   name, std::string(mlff::variant_name(
                                             model->state.model.variant())),
                                   r) +
                               "\n");
    }
    if (out != nullptr) {
      *out = {r.m_dice, r.m_iou, r.wfm, r.s_measure, r.mean_e, r.max_e, r.mae, r.images,
              r.degenerate};
    }
  });
}

mlff_status mlff_predict(mlff_model* model, const mlff_dataset* data, const char* out_dir,
                         int all_heads) {
  return guarded([&] {
    require(model != nullptr && data != nullptr && out_dir != nullptr,
            "arguments must not be NULL");
    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
      throw mlff::IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    }
    for (const mlff::io::Sample& s : data->samples) {
      const mlff::PredictionSet p = mlff::predict(model->state.model, s.image);
      mlff::io::write_mask(p.p1, dir / (s.id + "_p1.pgm"));
      if (all_heads != 0) {
        mlff::io::write_mask(p.p2, dir / (s.id + "_p2.pgm"));
        mlff::io::write_mask(p.p3, dir / (s.id + "_p3.pgm"));
      }
    }
  });
}

mlff_status mlff_predict_map(mlff_model* model, const mlff_dataset* data, int index, int head,
                             double* out, size_t capacity) {
  return guarded([&] {
    require(model != nullptr && data != nullptr && out != nullptr, "arguments must not be NULL");
    require(index >= 0 && index < static_cast<int>(data->samples.size()),
            "sample index out of range");
    require(head >= 1 && head <= 3, "head must be 1, 2 or 3");
    const mlff::PredictionSet p =
        mlff::predict(model->state.model, data->samples[static_cast<std::size_t>(index)].image);
    const mlff::Tensor& t = head == 1 ? p.p1 : head == 2 ? p.p2 : p.p3;
    require(capacity >= t.numel(), "output buffer too small");
    const auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      out[i] = static_cast<double>(d[i]);
    }
  });
}

mlff_status mlff_gradcheck(const char* variant, uint64_t seed, mlff_gradcheck_result* out) {
  bool passed = true;
  const mlff_status s = guarded([&] {
    require(variant != nullptr && out != nullptr, "arguments must not be NULL");
    const mlff::GradcheckOptions opt;
    const mlff::GradcheckReport r = mlff::gradcheck(mlff::parse_variant(variant), seed, opt);
    const auto failures = r.failures(opt.tolerance);
    out->max_rel_error = r.max_rel_error;
    out->checked = static_cast<int>(r.entries.size());
    out->failed = static_cast<int>(failures.size());
    copy_str(out->worst, sizeof out->worst, r.worst);
    passed = r.passed;
    if (!passed) {
      std::string msg = "gradient check failed for";
      for (const auto& f : failures) {
        msg += " " + f.name + "[" + std::to_string(f.index) + "]";
      }
      g_last_error = msg;
    }
  });
  if (s == MLFF_OK && !passed) {
    return MLFF_ERR_CHECK_FAILED;
  }
  return s;
}

mlff_status mlff_ablate(const mlff_train_config* cfg, const mlff_dataset* train,
                        const mlff_dataset* const* eval_sets, int eval_count,
                        const char* csv_path, mlff_ablation_row* rows) {
  return guarded([&] {
    require(cfg != nullptr && train != nullptr, "arguments must not be NULL");
    require(eval_count >= 0 && (eval_count == 0 || eval_sets != nullptr),
            "evaluation sets must not be NULL");
    const mlff::TrainConfig t = train_config(*cfg, nullptr);
    std::vector<mlff::NamedDataset> evals;
    for (int i = 0; i < eval_count; ++i) {
      require(eval_sets[i] != nullptr, "evaluation set must not be NULL");
      evals.push_back({eval_sets[i]->name, eval_sets[i]->samples});
    }
    const mlff::AblationTable table = mlff::ablate(t, train->samples, evals);
    if (csv_path != nullptr) {
      write_text(csv_path, table.csv());
    }
    if (rows != nullptr) {
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const mlff::AblationRow& r = table.rows[i];
        copy_str(rows[i].label, sizeof rows[i].label, std::string(mlff::variant_label(r.variant)));
        rows[i].param_count = r.params;
        rows[i].initial_loss = r.initial_loss;
        rows[i].final_loss = r.final_loss;
      }
    }
  });
}

}  // extern "C"
