#pragma once

// Loss, optimizer, and the training loop. The loss is the mean over valid
// pixels of |u-u*|^2 + |v-v*|^2 + beta |A-A*|^2; masked pixels contribute
// nothing to the value or the gradient. Optimization is plain bias-corrected
// Adam. Everything is deterministic in (seed, config): epoch shuffles are
// derived from (seed, absolute epoch), so a resumed run replays the exact
// trajectory of an uninterrupted one.

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "floe/checkpoint.hpp"
#include "floe/pipeline.hpp"

namespace floe {

enum class Precision { Single, Double };

inline Precision precision_from_name(const std::string& s) {
  if (s == "single" || s == "float32") return Precision::Single;
  if (s == "double" || s == "float64") return Precision::Double;
  throw ConfigError("unknown precision: " + s);
}

inline const char* precision_name(Precision p) {
  return p == Precision::Single ? "single" : "double";
}

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  double beta = 0.5;  // SIC term weight in the loss
  int batch = 4;
  uint64_t seed = 0;
  Precision precision = Precision::Single;
  int ckpt_every = 0;       // epochs between periodic checkpoint writes; 0 = off
  std::string out;          // final checkpoint path; best goes to out + ".best"
  std::string history;      // history table path ("" = out + ".history")

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(lr > 0) && lr != 0.0) throw ConfigError("learning rate must be non-negative");
    if (!(beta > 0)) throw ConfigError("loss weight beta must be positive");
    if (batch < 1) throw ConfigError("batch size must be at least 1");
  }
};

// ---------------------------------------------------------------------------
// masked loss (the training objective)
// ---------------------------------------------------------------------------
template <class T>
Tensor<T> masked_loss(const Tensor<T>& pred, const Tensor<T>& target,
                      const Tensor<T>& mask, double beta) {
  const Shape ps = pred.shape();
  if (ps != target.shape())
    throw ShapeError("masked_loss: prediction " + shape_str(ps) + " vs target " +
                     shape_str(target.shape()));
  if (ps[1] != 3)
    throw ShapeError(strprintf("masked_loss: expected 3 channels (u, v, A), got %d", ps[1]));
  if (mask.shape() != Shape{ps[0], 1, ps[2], ps[3]})
    throw ShapeError("masked_loss: mask " + shape_str(mask.shape()) +
                     " does not match predictions " + shape_str(ps));
  const int B = ps[0], H = ps[2], W = ps[3];
  const long N = static_cast<long>(H) * W;

  double n_valid = 0;
  for (long i = 0; i < mask.numel(); ++i) n_valid += static_cast<double>(mask.data()[i]);
  if (n_valid <= 0) throw DataError("masked_loss: mask has no valid pixels");

  auto pn = pred.node();
  auto tn = target.node();
  auto mn = mask.node();
  const double wch[3] = {1.0, 1.0, beta};

  Tensor<T> out = detail::make_op<T>(
      {1, 1, 1, 1}, {pred, target, mask},
      [pn, tn, mn, wch, B, N, n_valid](typename Tensor<T>::Node& self) {
        const double g = static_cast<double>(self.grad[0]) / n_valid;
        const bool ndp = pn->requires_grad, ndt = tn->requires_grad;
        if (ndp) pn->ensure_grad();
        if (ndt) tn->ensure_grad();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < 3; ++c) {
            const long off = (static_cast<long>(b) * 3 + c) * N;
            const T* m = mn->value.data() + static_cast<long>(b) * N;
            for (long i = 0; i < N; ++i) {
              if (m[i] == T(0)) continue;  // masked pixels carry no gradient
              const double d = static_cast<double>(pn->value[off + i]) -
                               static_cast<double>(tn->value[off + i]);
              const T upd = static_cast<T>(g * 2.0 * wch[c] * d);
              if (ndp) pn->grad[off + i] += upd;
              if (ndt) tn->grad[off + i] -= upd;
            }
          }
      });

  double acc = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < 3; ++c) {
      const long off = (static_cast<long>(b) * 3 + c) * N;
      const T* m = mask.data() + static_cast<long>(b) * N;
      for (long i = 0; i < N; ++i) {
        if (m[i] == T(0)) continue;
        const double d = static_cast<double>(pred.data()[off + i]) -
                         static_cast<double>(target.data()[off + i]);
        acc += wch[c] * d * d;
      }
    }
  out.data()[0] = static_cast<T>(acc / n_valid);
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------
template <class T>
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  long step = 0;
  std::vector<std::vector<T>> m, v;  // aligned with the parameter store

  static AdamState init(const ParamStore<T>& params) {
    AdamState st;
    st.m.reserve(params.items.size());
    st.v.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
      st.m.emplace_back(t.numel(), T(0));
      st.v.emplace_back(t.numel(), T(0));
    }
    return st;
  }
};

template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& st, double lr) {
  if (st.m.size() != params.items.size())
    throw DataError("adam_step: optimizer state does not match the parameter store");
  ++st.step;
  const double c1 = 1.0 - std::pow(AdamState<T>::kBeta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(AdamState<T>::kBeta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.items.size(); ++i) {
    Tensor<T>& p = params.items[i].second;
    const bool has_grad = p.has_grad();
    const AVec<T>* grad = has_grad ? &p.grad() : nullptr;
    std::vector<T>& m = st.m[i];
    std::vector<T>& v = st.v[i];
    for (long j = 0; j < p.numel(); ++j) {
      const double g = grad ? static_cast<double>((*grad)[j]) : 0.0;
      const double mj = AdamState<T>::kBeta1 * static_cast<double>(m[j]) +
                        (1.0 - AdamState<T>::kBeta1) * g;
      const double vj = AdamState<T>::kBeta2 * static_cast<double>(v[j]) +
                        (1.0 - AdamState<T>::kBeta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      p.data()[j] = static_cast<T>(static_cast<double>(p.data()[j]) -
                                   lr * mhat / (std::sqrt(vhat) + AdamState<T>::kEps));
    }
  }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------
struct EpochRow {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, wall_seconds = 0;
};

template <class T>
struct TrainerState {
  AdamState<T> adam;
  int epochs_done = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<T>> best_params;  // snapshot at the best epoch
};

inline void write_history(const std::string& path, const std::vector<EpochRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write history: " + path);
  os << "# epoch train_loss val_loss wall_seconds\n";
  for (const EpochRow& r : rows)
    os << strprintf("%d %.17g %.17g %.3f\n", r.epoch, r.train_loss, r.val_loss,
                    r.wall_seconds);
}

inline std::vector<EpochRow> read_history(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read history: " + path);
  std::vector<EpochRow> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    EpochRow r;
    if (std::sscanf(line.c_str(), "%d %lg %lg %lg", &r.epoch, &r.train_loss, &r.val_loss,
                    &r.wall_seconds) != 4)
      throw IoError("malformed history row: " + line);
    rows.push_back(r);
  }
  return rows;
}

// Checkpoint with optimizer state, best-epoch snapshot, and counters, so a
// resumed run continues the exact trajectory.
template <class T>
void save_train_checkpoint(const std::string& path, const ModelState<T>& model,
                           const TrainerState<T>& tr) {
  std::vector<std::pair<std::string, RawTensor>> extra;
  for (size_t i = 0; i < model.params.items.size(); ++i) {
    const auto& [name, t] = model.params.items[i];
    RawTensor m, v;
    m.shape = v.shape = t.shape();
    m.values.assign(tr.adam.m[i].begin(), tr.adam.m[i].end());
    v.values.assign(tr.adam.v[i].begin(), tr.adam.v[i].end());
    extra.emplace_back("adam.m." + name, std::move(m));
    extra.emplace_back("adam.v." + name, std::move(v));
  }
  if (!tr.best_params.empty()) {
    for (size_t i = 0; i < model.params.items.size(); ++i) {
      RawTensor b;
      b.shape = model.params.items[i].second.shape();
      b.values.assign(tr.best_params[i].begin(), tr.best_params[i].end());
      extra.emplace_back("best." + model.params.items[i].first, std::move(b));
    }
  }
  auto scalar = [](double v) {
    RawTensor t;
    t.shape = {1, 1, 1, 1};
    t.values = {v};
    return t;
  };
  extra.emplace_back("trainer.step", scalar(static_cast<double>(tr.adam.step)));
  extra.emplace_back("trainer.epochs_done", scalar(static_cast<double>(tr.epochs_done)));
  extra.emplace_back("trainer.best_val", scalar(tr.best_val));
  save_model(path, model, extra);
}

template <class T>
TrainerState<T> load_trainer_state(const RawCheckpoint& ck, const ModelState<T>& model) {
  TrainerState<T> tr;
  tr.adam = AdamState<T>::init(model.params);
  for (size_t i = 0; i < model.params.items.size(); ++i) {
    const auto& name = model.params.items[i].first;
    const RawTensor* m = ck.find("adam.m." + name);
    const RawTensor* v = ck.find("adam.v." + name);
    if (!m || !v) throw IoError("checkpoint has no optimizer state for " + name);
    for (size_t j = 0; j < m->values.size(); ++j) {
      tr.adam.m[i][j] = static_cast<T>(m->values[j]);
      tr.adam.v[i][j] = static_cast<T>(v->values[j]);
    }
  }
  if (const RawTensor* t = ck.find("trainer.step")) tr.adam.step = static_cast<long>(t->values[0]);
  if (const RawTensor* t = ck.find("trainer.epochs_done"))
    tr.epochs_done = static_cast<int>(t->values[0]);
  if (const RawTensor* t = ck.find("trainer.best_val")) tr.best_val = t->values[0];
  if (ck.find("best." + model.params.items[0].first)) {
    tr.best_params.resize(model.params.items.size());
    for (size_t i = 0; i < model.params.items.size(); ++i) {
      const RawTensor* b = ck.find("best." + model.params.items[i].first);
      if (!b) throw IoError("checkpoint best snapshot is incomplete");
      tr.best_params[i].assign(b->values.begin(), b->values.end());
    }
  }
  return tr;
}

template <class T>
struct TrainResult {
  std::vector<EpochRow> history;
  TrainerState<T> trainer;
};

// Runs cfg.epochs additional epochs (starting after tr.epochs_done). Returns
// the per-epoch history of this leg; writes final/best checkpoints and the
// history table when cfg.out is set.
template <class T>
TrainResult<T> train(ModelState<T>& model, const std::vector<Sample>& samples,
                     const Split& split, const TrainConfig& cfg,
                     TrainerState<T> tr = {}) {
  cfg.validate();
  if (split.train.empty() || split.val.empty())
    throw DataError("train: both the train and validation splits must be non-empty");
  if (tr.adam.m.empty()) tr.adam = AdamState<T>::init(model.params);

  const Rng shuffle_root(cfg.seed);
  std::vector<EpochRow> history;
  const auto t0 = std::chrono::steady_clock::now();

  auto snapshot = [&model]() {
    std::vector<std::vector<T>> snap;
    snap.reserve(model.params.items.size());
    for (const auto& [name, t] : model.params.items)
      snap.emplace_back(t.values().begin(), t.values().end());
    return snap;
  };

  for (int e = tr.epochs_done; e < tr.epochs_done + cfg.epochs; ++e) {
    std::vector<size_t> order = split.train;
    Rng erng = shuffle_root.derive(0xe90c4 + static_cast<uint64_t>(e));
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[erng.below(i)]);

    double train_acc = 0, train_n = 0;
    for (size_t first = 0; first < order.size(); first += cfg.batch) {
      const size_t count = std::min<size_t>(cfg.batch, order.size() - first);
      Batch<T> b = assemble_batch<T>(samples, order, first, count);
      model.params.zero_grads();
      Tensor<T> pred = model.forward(b.input);
      Tensor<T> loss = masked_loss(pred, b.target, b.mask, cfg.beta);
      const double lv = static_cast<double>(loss.scalar());
      if (!std::isfinite(lv))
        throw DataError(strprintf("training diverged: non-finite loss at epoch %d, batch %zu",
                                  e + 1, first / cfg.batch + 1));
      double nb = 0;
      for (long i = 0; i < b.mask.numel(); ++i) nb += static_cast<double>(b.mask.data()[i]);
      train_acc += lv * nb;
      train_n += nb;
      loss.backward();
      adam_step(model.params, tr.adam, cfg.lr);
    }

    // validation under no-grad
    model.params.set_requires_grad(false);
    double val_acc = 0, val_n = 0;
    for (size_t first = 0; first < split.val.size(); first += cfg.batch) {
      const size_t count = std::min<size_t>(cfg.batch, split.val.size() - first);
      Batch<T> b = assemble_batch<T>(samples, split.val, first, count);
      Tensor<T> loss = masked_loss(model.forward(b.input), b.target, b.mask, cfg.beta);
      double nb = 0;
      for (long i = 0; i < b.mask.numel(); ++i) nb += static_cast<double>(b.mask.data()[i]);
      val_acc += static_cast<double>(loss.scalar()) * nb;
      val_n += nb;
    }
    model.params.set_requires_grad(true);

    EpochRow row;
    row.epoch = e + 1;
    row.train_loss = train_acc / train_n;
    row.val_loss = val_acc / val_n;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.push_back(row);

    if (row.val_loss < tr.best_val) {
      tr.best_val = row.val_loss;
      tr.best_params = snapshot();
    }
    const int epochs_now = e + 1 - tr.epochs_done;
    if (!cfg.out.empty() && cfg.ckpt_every > 0 && epochs_now % cfg.ckpt_every == 0) {
      TrainerState<T> mid = tr;
      mid.epochs_done = e + 1;
      save_train_checkpoint(cfg.out, model, mid);
    }
  }

  tr.epochs_done += cfg.epochs;
  if (!cfg.out.empty()) {
    save_train_checkpoint(cfg.out, model, tr);
    if (!tr.best_params.empty()) {
      ModelState<T> best = ModelState<T>::build(model.spec);
      for (size_t i = 0; i < best.params.items.size(); ++i)
        best.params.items[i].second.values().assign(tr.best_params[i].begin(),
                                                    tr.best_params[i].end());
      save_model(cfg.out + ".best", best);
    }
    write_history(cfg.history.empty() ? cfg.out + ".history" : cfg.history, history);
  }
  return {std::move(history), std::move(tr)};
}

}  // namespace floe
