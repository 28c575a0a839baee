#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rsknet/backbone.hpp"
#include "rsknet/config.hpp"
#include "rsknet/container.hpp"
#include "rsknet/dataset.hpp"
#include "rsknet/scoring.hpp"

namespace rsknet {

// ---------------------------------------------------------------------------
// Learning-rate schedule.

/// Divides the rate by `factor` once `patience` consecutive epochs fail to
/// improve on the best validation loss seen so far.
struct PlateauScheduler {
  double lr = 0.01;
  double factor = 10.0;
  int patience = 3;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int decays = 0;

  /// Records one epoch's validation loss; returns true when the rate decayed.
  bool step(double val_loss) {
    if (val_loss < best) {
      best = val_loss;
      bad_epochs = 0;
      return false;
    }
    if (++bad_epochs < patience) return false;
    lr /= factor;
    bad_epochs = 0;
    ++decays;
    return true;
  }
};

/// True once the rate has dropped below the floor (relative slack absorbs
/// rounding from repeated division).
inline bool below_floor(double lr, double floor) { return lr < floor * (1.0 - 1e-9); }

// ---------------------------------------------------------------------------
// SGD with momentum: v <- mu v - lr g, w <- w + v.

template <typename T>
void sgd_momentum_step(ParamStore<T>& params, GradStore<T>& velocity, const GradStore<T>& grads, double lr,
                       double mu) {
  for (int id = 0; id < static_cast<int>(params.size()); ++id) {
    if (!params.entry(id).learnable()) continue;
    auto w = params.value(id);
    auto v = velocity[id];
    const auto g = grads[id];
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = static_cast<T>(mu * v[i] - lr * g[i]);
      w[i] += v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints.

struct TrainerState {
  int epoch = 0;  // completed epochs
  PlateauScheduler schedule{};
  std::vector<double> loss_history;
  std::vector<double> val_history;
  std::vector<double> lr_history;  // rate used during each epoch
};

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

inline std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::istringstream is(s);
  for (std::string tok; std::getline(is, tok, ',');) out.push_back(SectionReader::parse_number<double>(detail::trim(tok)));
  return out;
}

inline std::string state_ini(const TrainerState& st) {
  std::ostringstream o;
  o << "[state]\n"
    << "epoch = " << st.epoch << "\n"
    << "lr = " << format_double(st.schedule.lr) << "\n"
    << "best_val = " << format_double(st.schedule.best) << "\n"
    << "bad_epochs = " << st.schedule.bad_epochs << "\n"
    << "decays = " << st.schedule.decays << "\n"
    << "loss_history = " << join_doubles(st.loss_history) << "\n"
    << "val_history = " << join_doubles(st.val_history) << "\n"
    << "lr_history = " << join_doubles(st.lr_history) << "\n";
  return o.str();
}

}  // namespace detail

struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  FrontendOptions features;
  TrainerState state;
  std::optional<Model<float>> model;
  std::optional<GradStore<float>> velocity;
};

inline void save_checkpoint(const std::string& path, const Model<float>& model, const TrainConfig& tc,
                            const TrainerState& st, const GradStore<float>* velocity,
                            const FrontendOptions& features = {}) {
  Container c;
  c.header = to_ini(model.config) + "\n" + to_ini(features) + "\n" + to_ini(tc) + "\n" + detail::state_ini(st);
  auto shape_of = [](const std::vector<int>& s) {
    std::vector<std::uint32_t> out;
    for (int d : s) out.push_back(static_cast<std::uint32_t>(d));
    return out;
  };
  for (const auto& e : model.params) c.records.push_back({e.path, shape_of(e.shape), e.value});
  if (velocity) {
    int id = 0;
    for (const auto& e : model.params) {
      if (e.learnable()) {
        const auto v = (*velocity)[id];
        c.records.push_back({"opt/" + e.path, shape_of(e.shape), std::vector<float>(v.begin(), v.end())});
      }
      ++id;
    }
  }
  write_container(path, c);
}

/// Loads model weights, configuration, trainer state and optimizer velocity.
inline Checkpoint load_checkpoint(const std::string& path) {
  const Container c = read_container(path);
  const IniDocument doc = parse_ini_string(c.header, path + "[header]");
  Checkpoint ck;
  read_model_section(doc, ck.model_config);
  read_features_section(doc, ck.features);
  read_train_section(doc, ck.train_config);
  {
    SectionReader r(doc, "state");
    r.integer("epoch", ck.state.epoch);
    r.real("lr", ck.state.schedule.lr);
    r.field("best_val", [&](const std::string& v) {
      ck.state.schedule.best = v == "inf" ? std::numeric_limits<double>::infinity()
                                          : SectionReader::parse_number<double>(v);
    });
    r.integer("bad_epochs", ck.state.schedule.bad_epochs);
    r.integer("decays", ck.state.schedule.decays);
    r.field("loss_history", [&](const std::string& v) { ck.state.loss_history = detail::split_doubles(v); });
    r.field("val_history", [&](const std::string& v) { ck.state.val_history = detail::split_doubles(v); });
    r.field("lr_history", [&](const std::string& v) { ck.state.lr_history = detail::split_doubles(v); });
    r.finish();
  }
  ck.state.schedule.factor = ck.train_config.lr_decay_factor;
  ck.state.schedule.patience = ck.train_config.patience;

  ck.model.emplace(ck.model_config, 0);
  auto& params = ck.model->params;
  bool have_velocity = false;
  GradStore<float> vel(params);
  for (const auto& r : c.records) {
    const bool opt = r.key.rfind("opt/", 0) == 0;
    const std::string key = opt ? r.key.substr(4) : r.key;
    const int id = params.find(key);
    if (id < 0) throw DataError(path + ": record '" + r.key + "' does not match any model parameter");
    const auto& e = params.entry(id);
    std::vector<std::uint32_t> shape(e.shape.begin(), e.shape.end());
    if (shape != r.shape) throw DataError(path + ": record '" + r.key + "' has the wrong shape");
    if (opt) {
      std::copy(r.data.begin(), r.data.end(), vel[id].begin());
      have_velocity = true;
    } else {
      std::copy(r.data.begin(), r.data.end(), params.value(id).begin());
    }
  }
  for (const auto& e : params)
    if (!c.find(e.path)) throw DataError(path + ": missing parameter record '" + e.path + "'");
  if (have_velocity) ck.velocity = std::move(vel);
  return ck;
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<double> loss_history;
  std::vector<double> val_history;
  std::vector<double> lr_history;
  std::string stop_reason;
};

inline std::string history_csv(const TrainerState& st) {
  std::ostringstream o;
  o << "epoch,train_loss,val_loss,lr\n";
  for (std::size_t e = 0; e < st.loss_history.size(); ++e)
    o << e + 1 << ',' << format_double(st.loss_history[e]) << ',' << format_double(st.val_history[e]) << ','
      << format_double(st.lr_history[e]) << '\n';
  return o.str();
}

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochLog&)>;

  Trainer(Model<float>& model, const TrainConfig& cfg, const std::vector<Utterance>& data,
          std::vector<std::size_t> train_idx, std::vector<std::size_t> val_idx, FrontendOptions features = {})
      : model_(model), cfg_(cfg), features_(features), data_(data), train_(std::move(train_idx)),
        val_(std::move(val_idx)), velocity_(model.params) {
    cfg.validate();
    if (train_.empty()) throw DataError("trainer: empty training split");
    for (const auto& u : data_)
      if (u.label < 0 || u.label >= model.config.num_classes)
        throw DataError("trainer: label of '" + u.id + "' outside the model's " +
                        std::to_string(model.config.num_classes) + " classes");
    state_.schedule = PlateauScheduler{cfg.lr_init, cfg.lr_decay_factor, cfg.patience};
  }

  /// Continue from a checkpoint's state and optimizer velocity.
  void resume(const TrainerState& st, const GradStore<float>& velocity) {
    state_ = st;
    velocity_ = velocity;
  }

  const TrainerState& state() const { return state_; }
  const GradStore<float>& velocity() const { return velocity_; }

  /// Runs until max_epochs or until the rate falls below the floor. A
  /// checkpoint is written after every epoch when `checkpoint_dir` is set.
  TrainResult run(const std::string& checkpoint_dir = {}, const EpochCallback& on_epoch = {}) {
    TrainResult res;
    res.stop_reason = "max_epochs";
    while (state_.epoch < cfg_.max_epochs) {
      if (below_floor(state_.schedule.lr, cfg_.lr_floor)) {
        res.stop_reason = "lr_floor";
        break;
      }
      const EpochLog log = run_epoch();
      if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.ckpt", log.epoch);
        const std::string p = (std::filesystem::path(checkpoint_dir) / name).string();
        save_checkpoint(p, model_, cfg_, state_, &velocity_, features_);
        std::filesystem::copy_file(p, std::filesystem::path(checkpoint_dir) / "last.ckpt",
                                   std::filesystem::copy_options::overwrite_existing);
      }
      if (on_epoch) on_epoch(log);
    }
    if (res.stop_reason == "max_epochs" && below_floor(state_.schedule.lr, cfg_.lr_floor))
      res.stop_reason = "lr_floor";
    res.loss_history = state_.loss_history;
    res.val_history = state_.val_history;
    res.lr_history = state_.lr_history;
    return res;
  }

  /// One epoch: shuffle, crop, forward/backward, momentum updates, then the
  /// validation loss drives the schedule.
  EpochLog run_epoch() {
    const int epoch = state_.epoch + 1;
    Rng rng(detail::mix_seed(cfg_.seed, std::uint64_t(epoch)));
    std::vector<std::size_t> order = train_;
    rng.shuffle(order.begin(), order.end());
    const double lr = state_.schedule.lr;
    GradStore<float> grads(model_.params);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    const std::size_t B = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B);
      if (end - start < 2 && seen > 0) break;  // a lone trailing item would give degenerate BN statistics
      Batch<float> xs;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        const Utterance& u = data_[order[k]];
        xs.push_back(crop_segment(u.feats, cfg_.crop_frames, rng).as_tensor<float>());
        labels.push_back(u.label);
      }
      grads.zero();
      const double loss = model_.loss(xs, labels, Mode::train, &grads, true);
      if (!std::isfinite(loss))
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / B + 1));
      sgd_momentum_step(model_.params, velocity_, grads, lr, cfg_.momentum);
      loss_sum += loss * double(end - start);
      seen += end - start;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / double(seen);
    log.val_loss = validation_loss();
    log.lr = lr;
    state_.loss_history.push_back(log.train_loss);
    state_.val_history.push_back(log.val_loss);
    state_.lr_history.push_back(lr);
    state_.schedule.step(val_.empty() ? log.train_loss : log.val_loss);
    state_.epoch = epoch;
    return log;
  }

  /// Mean AM-Softmax loss over the validation split, inference mode, with
  /// crops fixed across epochs.
  double validation_loss() {
    if (val_.empty()) return std::numeric_limits<double>::quiet_NaN();
    Rng rng(detail::mix_seed(cfg_.seed, 0xFA11));
    double sum = 0.0;
    const std::size_t B = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < val_.size(); start += B) {
      const std::size_t end = std::min(val_.size(), start + B);
      Batch<float> xs;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        const Utterance& u = data_[val_[k]];
        xs.push_back(crop_segment(u.feats, cfg_.crop_frames, rng).as_tensor<float>());
        labels.push_back(u.label);
      }
      sum += model_.loss(xs, labels, Mode::infer, nullptr, false) * double(end - start);
    }
    return sum / double(val_.size());
  }

 private:
  Model<float>& model_;
  TrainConfig cfg_;
  FrontendOptions features_;
  const std::vector<Utterance>& data_;
  std::vector<std::size_t> train_, val_;
  GradStore<float> velocity_;
  TrainerState state_;
};

// ---------------------------------------------------------------------------
// Embedding extraction.

/// Embedding of a whole (VAD-filtered) utterance. Inputs shorter than the
/// 16-frame minimum are tiled up to it.
inline std::vector<float> extract_embedding(const Model<float>& model, const FeatureMatrix& feats) {
  FeatureMatrix f = feats;
  if (f.frames < 16) {
    Rng unused(0);
    f = crop_segment(feats, 16, unused);
  }
  const Batch<float> out = model.embed(model.context(), Batch<float>{f.as_tensor<float>()}, nullptr);
  return out.front().data;
}

/// Embeddings for every utterance, optionally spread over `workers` threads.
/// Results do not depend on the worker count.
inline std::vector<std::vector<float>> extract_embeddings(const Model<float>& model,
                                                          const std::vector<Utterance>& utts, int workers = 1) {
  std::vector<std::vector<float>> out(utts.size());
  workers = std::max(1, workers);
  auto job = [&](int w) {
    for (std::size_t i = std::size_t(w); i < utts.size(); i += std::size_t(workers))
      out[i] = extract_embedding(model, utts[i].feats);
  };
  if (workers == 1) {
    job(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          job(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

/// Embedding archive: one record per utterance id.
inline void write_embedding_archive(const std::string& path, const std::vector<std::string>& ids,
                                    const std::vector<std::vector<float>>& embs) {
  if (ids.size() != embs.size()) throw ShapeError("embedding archive: id/embedding count mismatch");
  Container c;
  c.header = "[archive]\ndim = " + std::to_string(embs.empty() ? 0 : embs.front().size()) + "\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    c.records.push_back({ids[i], {std::uint32_t(embs[i].size())}, embs[i]});
  write_container(path, c);
}

inline std::map<std::string, std::vector<float>> read_embedding_archive(const std::string& path) {
  std::map<std::string, std::vector<float>> out;
  for (auto& r : read_container(path).records) {
    if (r.shape.size() != 1) throw DataError(path + ": embedding '" + r.key + "' is not a vector");
    out[r.key] = std::move(r.data);
  }
  return out;
}

/// Cosine scores for every trial after centering with `mean` and length
/// normalization.
inline TrialSet score_trials(TrialSet trials, const std::map<std::string, std::vector<float>>& embs,
                             const std::vector<double>& mean) {
  const std::vector<float> mf(mean.begin(), mean.end());
  std::map<std::string, std::vector<float>> cache;
  auto get = [&](const std::string& id) -> const std::vector<float>& {
    auto c = cache.find(id);
    if (c != cache.end()) return c->second;
    auto it = embs.find(id);
    if (it == embs.end()) throw DataError("no embedding for utterance '" + id + "'");
    return cache[id] = mean.empty() ? it->second : postprocess<float>(it->second, mf);
  };
  for (auto& t : trials) t.score = cosine_score<float>(get(t.enroll), get(t.test));
  return trials;
}

/// Deterministic trial list over labelled utterances: up to half target
/// pairs, the remainder nontarget pairs.
inline TrialSet make_trials(const std::vector<std::pair<std::string, std::string>>& utt_speaker, std::size_t n,
                            std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> tgt, non;
  for (std::size_t i = 0; i < utt_speaker.size(); ++i)
    for (std::size_t j = i + 1; j < utt_speaker.size(); ++j)
      (utt_speaker[i].second == utt_speaker[j].second ? tgt : non).push_back({i, j});
  Rng rng(seed);
  rng.shuffle(tgt.begin(), tgt.end());
  rng.shuffle(non.begin(), non.end());
  const std::size_t nt = std::min(tgt.size(), n / 2);
  const std::size_t nn = std::min(non.size(), n - nt);
  TrialSet ts;
  for (std::size_t k = 0; k < nt; ++k) ts.push_back({utt_speaker[tgt[k].first].first, utt_speaker[tgt[k].second].first, true});
  for (std::size_t k = 0; k < nn; ++k) ts.push_back({utt_speaker[non[k].first].first, utt_speaker[non[k].second].first, false});
  return ts;
}

}  // namespace rsknet
