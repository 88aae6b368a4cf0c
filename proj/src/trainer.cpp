// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0

#include "mlff/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mlff {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void check_dataset(const std::vector<io::Sample>& data, const char* op) {
  if (data.empty()) {
    throw ContractError(std::string(op) + ": dataset is empty");
  }
  const Shape first = data.front().image.shape();
  for (const io::Sample& s : data) {
    if (s.image.shape() != first) {
      throw ContractError(std::string(op) + ": sample '" + s.id + "' is " + s.image.shape().str() +
                          ", expected " + first.str());
    }
  }
}

// Fisher-Yates with the portable integer draw.
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

// Little-endian writer / reader for the checkpoint format.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char>& data() { return out_; }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) {
      throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    }
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<char>& in_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'M', 'L', 'F', 'F'};
constexpr std::uint32_t kConfigInts = 11;

void write_tensor(Writer& w, const std::string& name, const Shape& s,
                  const std::vector<Scalar>& v) {
  w.str(name);
  w.i32(s.n);
  w.i32(s.c);
  w.i32(s.h);
  w.i32(s.w);
  for (const Scalar x : v) {
    w.f64(static_cast<double>(x));
  }
}

struct ProbedLoss {
  double value;
  std::uint64_t branches;
};

ProbedLoss probed_loss(Model& model, const Tensor& images, const Tensor& masks) {
  ops::BranchProbe probe;
  ForwardContext ctx(model.params(), Mode::train, false, false);
  const double v = static_cast<double>(total_loss(model.forward(ctx, images), masks).total);
  return {v, probe.signature()};
}

}  // namespace

void TrainConfig::validate() const {
  model.validate(variant);
  if (!(lr >= 0) || !std::isfinite(lr)) {
    throw ConfigError("lr must be a finite value >= 0");
  }
  if (!std::isfinite(weight_decay) || weight_decay < 0) {
    throw ConfigError("weight decay must be a finite value >= 0");
  }
  if (steps < 1) {
    throw ConfigError("steps must be >= 1");
  }
  if (batch < 1) {
    throw ConfigError("batch must be >= 1");
  }
  if (grad_clip && !(*grad_clip > 0)) {
    throw ConfigError("grad clip must be > 0");
  }
}

TrainState::TrainState(Model m) : model(std::move(m)) {
  for (const ParamEntry& e : model.params().entries()) {
    const std::size_t n = e.trainable ? e.value.size() : 0;
    adam_m.emplace_back(n, Scalar(0));
    adam_v.emplace_back(n, Scalar(0));
  }
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  return TrainState(Model(cfg.variant, cfg.model, cfg.seed));
}

GradientResult compute_gradients(Model& model, const Tensor& images, const Tensor& masks,
                                 bool update_running) {
  ForwardContext ctx(model.params(), Mode::train, update_running, true);
  const PredictionSet preds = model.forward(ctx, images);
  GradientResult out;
  out.loss = total_loss(preds, masks);
  ctx.tape().backward(out.loss.total_tensor);
  for (const ParamEntry& e : model.params().entries()) {
    if (!e.trainable) {
      out.grads.emplace_back();
      continue;
    }
    const auto it = ctx.bound().find(e.name);
    out.grads.push_back(it == ctx.bound().end() ? std::vector<Scalar>(e.value.size(), Scalar(0))
                                                : ctx.tape().grad(it->second));
  }
  return out;
}

double global_norm(const std::vector<std::vector<Scalar>>& grads) {
  double sq = 0;
  for (const auto& g : grads) {
    for (const Scalar v : g) {
      sq += static_cast<double>(v) * v;
    }
  }
  return std::sqrt(sq);
}

double clip_gradients(std::vector<std::vector<Scalar>>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm <= max_norm) {
    return norm;
  }
  const double scale = max_norm / norm;
  for (auto& g : grads) {
    for (Scalar& v : g) {
      v = static_cast<Scalar>(v * scale);
    }
  }
  return global_norm(grads);
}

void adamw_step(TrainState& state, const std::vector<std::vector<Scalar>>& grads, double lr,
                double weight_decay) {
  auto& entries = state.model.params().entries();
  if (grads.size() != entries.size()) {
    throw ContractError("adamw_step: gradient list does not match the parameters");
  }
  const std::uint64_t t = state.step + 1;
  const double c1 = 1 - std::pow(kAdamBeta1, static_cast<double>(t));
  const double c2 = 1 - std::pow(kAdamBeta2, static_cast<double>(t));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    ParamEntry& e = entries[k];
    if (!e.trainable) {
      continue;
    }
    auto& m = state.adam_m[k];
    auto& v = state.adam_v[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      m[i] = static_cast<Scalar>(kAdamBeta1 * m[i] + (1 - kAdamBeta1) * g[i]);
      v[i] = static_cast<Scalar>(kAdamBeta2 * v[i] + (1 - kAdamBeta2) * g[i] * g[i]);
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      const double p = e.value[i];
      e.value[i] = static_cast<Scalar>(p - lr * (m_hat / (std::sqrt(v_hat) + kAdamEps) +
                                                 weight_decay * p));
    }
  }
  state.step = t;
}

std::string TrainLog::csv() const {
  std::string out = "step,total,lb_p1,lb_p2,lb_p3\n";
  for (const StepRecord& r : steps) {
    out += std::to_string(r.step) + "," + r.loss.csv_fields() + "\n";
  }
  return out;
}

void TrainLog::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write '" + path.string() + "'");
  }
  out << csv();
  if (!out) {
    throw IoError("write failed for '" + path.string() + "'");
  }
}

TrainLog train(TrainState& state, const TrainConfig& cfg, const std::vector<io::Sample>& data,
               const StepCallback& on_step) {
  cfg.validate();
  check_dataset(data, "train");
  const Shape s = data.front().image.shape();
  if (state.train_h == 0) {
    state.train_h = s.h;
    state.train_w = s.w;
  } else if (state.train_h != s.h || state.train_w != s.w) {
    throw ContractError("train: data is " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " but the model was trained at " + std::to_string(state.train_h) + "x" +
                        std::to_string(state.train_w));
  }

  // Batch order depends only on the seed and the step counter.
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  const auto batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), data.size());

  TrainLog log;
  double last_finite = std::nan("");
  for (int i = 0; i < cfg.steps; ++i) {
    std::vector<std::size_t> pick;
    while (pick.size() < batch) {
      if (cursor == order.size()) {
        shuffle(order, rng);
        cursor = 0;
      }
      pick.push_back(order[cursor++]);
    }
    const auto [images, masks] = io::stack_batch(data, pick);
    GradientResult g = compute_gradients(state.model, images, masks);
    const double total = static_cast<double>(g.loss.total);
    StepRecord rec;
    rec.step = state.step + 1;
    rec.loss = g.loss;
    rec.loss.total_tensor = Tensor();  // releases this step's tape
    rec.grad_norm = global_norm(g.grads);
    if (!std::isfinite(total) || !std::isfinite(rec.grad_norm)) {
      throw NumericError("non-finite loss at step " + std::to_string(rec.step) +
                         "; last finite loss " + fmt("%.17g", last_finite));
    }
    last_finite = total;
    rec.applied_norm = cfg.grad_clip ? clip_gradients(g.grads, *cfg.grad_clip) : rec.grad_norm;
    adamw_step(state, g.grads, cfg.lr, cfg.weight_decay);
    log.steps.push_back(rec);
    if (on_step) {
      on_step(rec);
    }
  }
  return log;
}

std::vector<char> serialize_checkpoint(const TrainState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(std::string(variant_name(state.model.variant())));
  const ModelConfig& c = state.model.config();
  w.u32(kConfigInts);
  for (const int ch : c.encoder.channels) {
    w.i32(ch);
  }
  w.i32(c.encoder.blocks_per_stage);
  w.i32(c.encoder.norm == Norm::batch ? 1 : 0);
  w.i32(c.hfem_width);
  w.i32(c.attn_width);
  w.i32(c.decoder_width);
  w.i32(state.train_h);
  w.i32(state.train_w);
  w.u64(state.step);

  const auto& entries = state.model.params().entries();
  std::uint32_t count = 0;
  for (const ParamEntry& e : entries) {
    count += e.trainable ? 3 : 1;
  }
  w.u32(count);
  for (const ParamEntry& e : entries) {
    write_tensor(w, e.name, e.shape, e.value);
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].trainable) {
      write_tensor(w, "adam.m/" + entries[k].name, entries[k].shape, state.adam_m[k]);
      write_tensor(w, "adam.v/" + entries[k].name, entries[k].shape, state.adam_v[k]);
    }
  }
  return std::move(w.data());
}

TrainState deserialize_checkpoint(const std::vector<char>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw IoError("not a checkpoint (bad magic)");
  }
  r.uint(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const Variant variant = parse_variant(r.str());
  if (r.u32() != kConfigInts) {
    throw IoError("checkpoint config block has an unexpected size");
  }
  ModelConfig c;
  for (int& ch : c.encoder.channels) {
    ch = r.i32();
  }
  c.encoder.blocks_per_stage = r.i32();
  c.encoder.norm = r.i32() != 0 ? Norm::batch : Norm::none;
  c.hfem_width = r.i32();
  c.attn_width = r.i32();
  c.decoder_width = r.i32();
  const int train_h = r.i32();
  const int train_w = r.i32();
  const std::uint64_t step = r.u64();

  TrainState state(Model(variant, c, 0));
  state.train_h = train_h;
  state.train_w = train_w;
  state.step = step;
  auto& entries = state.model.params().entries();
  std::vector<bool> seen(entries.size() * 3, false);
  const std::uint32_t count = r.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = r.str();
    Shape s;
    s.n = r.i32();
    s.c = r.i32();
    s.h = r.i32();
    s.w = r.i32();
    int slot = 0;
    std::string base = name;
    if (name.rfind("adam.m/", 0) == 0) {
      slot = 1;
      base = name.substr(7);
    } else if (name.rfind("adam.v/", 0) == 0) {
      slot = 2;
      base = name.substr(7);
    }
    if (!state.model.params().contains(base)) {
      throw IoError("checkpoint tensor '" + name + "' does not belong to this model");
    }
    const auto k = static_cast<std::size_t>(
        &state.model.params().get(base) - entries.data());
    ParamEntry& e = entries[k];
    if (s != e.shape || (slot != 0 && !e.trainable)) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + s.str() + ", expected " +
                    e.shape.str());
    }
    std::vector<Scalar>& dst = slot == 0 ? e.value : slot == 1 ? state.adam_m[k] : state.adam_v[k];
    for (Scalar& v : dst) {
      v = static_cast<Scalar>(r.f64());
    }
    seen[k * 3 + static_cast<std::size_t>(slot)] = true;
  }
  if (!r.done()) {
    throw IoError("trailing bytes after the checkpoint tensor table");
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const int slots = entries[k].trainable ? 3 : 1;
    for (int slot = 0; slot < slots; ++slot) {
      if (!seen[k * 3 + static_cast<std::size_t>(slot)]) {
        throw IoError("checkpoint is missing tensor '" + entries[k].name + "'");
      }
    }
  }
  return state;
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
  const std::vector<char> bytes = serialize_checkpoint(state);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write checkpoint '" + path.string() + "'");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for '" + path.string() + "'");
  }
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint '" + path.string() + "'");
  }
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>()};
  try {
    return deserialize_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

PredictionSet predict(Model& model, const Tensor& image) {
  ForwardContext ctx(model.params(), Mode::eval, false, false);
  return model.forward(ctx, image);
}

Evaluation evaluate(TrainState& state, const std::vector<io::Sample>& data) {
  check_dataset(data, "evaluate");
  const Shape s = data.front().image.shape();
  if (state.train_h != 0 && (s.h != state.train_h || s.w != state.train_w)) {
    throw ContractError("evaluate: data is " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " but the checkpoint was trained at " + std::to_string(state.train_h) +
                        "x" + std::to_string(state.train_w));
  }
  Evaluation out;
  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (const io::Sample& sample : data) {
    Tensor p1 = predict(state.model, sample.image).p1;
    pairs.emplace_back(p1, sample.mask);
    out.p1.push_back(std::move(p1));
  }
  out.report = metrics::evaluate_dataset(pairs);
  return out;
}

std::vector<GradcheckEntry> GradcheckReport::failures(double tolerance) const {
  std::vector<GradcheckEntry> out;
  for (const GradcheckEntry& e : entries) {
    if (!(e.rel_error <= tolerance)) {
      out.push_back(e);
    }
  }
  return out;
}

std::string parameter_group(const std::string& name) {
  const auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("encoder.")) {
    return "encoder";
  }
  if (starts("mam.")) {
    return "mam";
  }
  if (starts("hfem.")) {
    return "hfem";
  }
  if (starts("decoder.head")) {
    return "head";
  }
  if (name.find(".gam.") != std::string::npos) {
    return "gam";
  }
  return "decoder";
}

GradcheckReport gradcheck(Variant variant, std::uint64_t seed, const GradcheckOptions& opt) {
  Model model(variant, opt.model, seed);
  const std::vector<io::Sample> data = io::synth_generate(seed, opt.batch, opt.size, opt.size);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto [images, masks] = io::stack_batch(data, all);

  const GradientResult g = compute_gradients(model, images, masks, false);
  auto& entries = model.params().entries();

  // Coordinates drawn uniformly over the scalars of each group.
  std::vector<std::string> groups;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> coords;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!entries[k].trainable) {
      continue;
    }
    const std::string grp = parameter_group(entries[k].name);
    auto it = std::find(groups.begin(), groups.end(), grp);
    if (it == groups.end()) {
      groups.push_back(grp);
      coords.emplace_back();
      it = groups.end() - 1;
    }
    auto& list = coords[static_cast<std::size_t>(it - groups.begin())];
    for (std::size_t i = 0; i < entries[k].value.size(); ++i) {
      list.emplace_back(k, i);
    }
  }

  // A coordinate whose +-step evaluations switch any relu or clamp branch
  // straddles a kink, where a central difference is no oracle; it is replaced
  // by the next draw.
  const std::uint64_t base = probed_loss(model, images, masks).branches;
  Rng rng(seed ^ 0x5bd1e995ULL);
  GradcheckReport report;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    auto& list = coords[gi];
    const auto want = static_cast<std::size_t>(opt.samples_per_group);
    std::size_t taken = 0;
    for (std::size_t s = 0; s < list.size() && taken < want; ++s) {
      const auto j = s + static_cast<std::size_t>(
                             rng.uniform_int(0, static_cast<int>(list.size() - s) - 1));
      std::swap(list[s], list[j]);
      const auto [k, i] = list[s];
      Scalar& p = entries[k].value[i];
      const Scalar saved = p;
      p = saved + static_cast<Scalar>(opt.step);
      const ProbedLoss up = probed_loss(model, images, masks);
      p = saved - static_cast<Scalar>(opt.step);
      const ProbedLoss down = probed_loss(model, images, masks);
      p = saved;
      if (up.branches != base || down.branches != base) {
        ++report.kinks_skipped;
        continue;
      }
      ++taken;

      GradcheckEntry e;
      e.name = entries[k].name;
      e.group = groups[gi];
      e.index = i;
      e.analytic = static_cast<double>(g.grads[k][i]);
      e.numeric = (up.value - down.value) / (2 * opt.step);
      const double denom =
          std::max({std::abs(e.analytic), std::abs(e.numeric), opt.denominator_floor});
      e.rel_error = std::abs(e.analytic - e.numeric) / denom;
      if (e.rel_error > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        report.worst = e.name + "[" + std::to_string(i) + "]";
      }
      report.entries.push_back(std::move(e));
    }
  }
  report.passed = report.failures(opt.tolerance).empty();
  return report;
}

std::string AblationTable::csv() const {
  std::string out = "model,params,initial_loss,final_loss";
  for (const std::string& s : eval_sets) {
    out += "," + s + "_mDice," + s + "_mIoU";
  }
  out += "\n";
  for (const AblationRow& r : rows) {
    out += std::string(variant_label(r.variant)) + "," + std::to_string(r.params) + "," +
           fmt("%.6f", r.initial_loss) + "," + fmt("%.6f", r.final_loss);
    for (const metrics::Overlap& o : r.scores) {
      out += "," + fmt("%.3f", o.dice) + "," + fmt("%.3f", o.iou);
    }
    out += "\n";
  }
  return out;
}

AblationTable ablate(const TrainConfig& base, const std::vector<io::Sample>& train_data,
                     const std::vector<NamedDataset>& eval_sets) {
  AblationTable table;
  for (const NamedDataset& d : eval_sets) {
    table.eval_sets.push_back(d.name);
  }
  for (const Variant v : kAllVariants) {
    TrainConfig cfg = base;
    cfg.variant = v;
    TrainState state = init_state(cfg);
    const TrainLog log = train(state, cfg, train_data);
    AblationRow row;
    row.variant = v;
    row.params = state.model.parameter_count();
    row.initial_loss = static_cast<double>(log.steps.front().loss.total);
    row.final_loss = static_cast<double>(log.steps.back().loss.total);
    for (const NamedDataset& d : eval_sets) {
      const metrics::MetricReport r = evaluate(state, d.samples).report;
      row.scores.push_back({r.m_dice, r.m_iou});
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mlff
