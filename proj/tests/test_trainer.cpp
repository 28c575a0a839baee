#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rsknet/toy_corpus.hpp"
#include "rsknet/trainer.hpp"

namespace {

using namespace rsknet;
namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "rsknet_trainer_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ModelConfig tiny_model(int classes) {
  ModelConfig c;
  c.depths = {1, 1, 1, 1};
  c.widths = {2, 4, 8, 16};
  c.n_mels = 8;
  c.embed_dim = 6;
  c.num_classes = classes;
  return c;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.batch_size = 4;
  t.max_epochs = epochs;
  t.crop_frames = 16;
  t.seed = 3;
  return t;
}

// Two speakers whose energy sits in disjoint halves of the mel axis.
std::vector<Utterance> separable_corpus(int per_speaker, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Utterance> out;
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < per_speaker; ++i) {
      Utterance u;
      u.id = "s" + std::to_string(s) + "u" + std::to_string(i);
      u.speaker = "s" + std::to_string(s);
      u.label = s;
      u.feats = FeatureMatrix(18 + int(rng.index(12)), 8);
      for (int t = 0; t < u.feats.frames; ++t)
        for (int k = 0; k < 8; ++k) u.feats(t, k) = float(((k < 4) == (s == 0) ? 1.5 : -1.5) + 0.5 * rng.normal());
      out.push_back(std::move(u));
    }
  return out;
}

void expect_same_params(const Model<float>& a, const Model<float>& b) {
  ASSERT_EQ(a.params.size(), b.params.size());
  for (int id = 0; id < int(a.params.size()); ++id) {
    const auto x = a.params.value(id), y = b.params.value(id);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(x[i], y[i]) << a.params.entry(id).path << "[" << i << "]";
  }
}

TEST(PlateauScheduler, DecaysAfterPatienceFlatEpochs) {
  PlateauScheduler s{0.01, 10.0, 2};
  EXPECT_FALSE(s.step(1.0));
  EXPECT_FALSE(s.step(1.0));
  EXPECT_DOUBLE_EQ(s.lr, 0.01);
  EXPECT_TRUE(s.step(1.0));
  EXPECT_DOUBLE_EQ(s.lr, 0.001);
  EXPECT_EQ(s.decays, 1);
  EXPECT_FALSE(s.step(0.5));  // improvement resets the counter
  EXPECT_EQ(s.bad_epochs, 0);
}

TEST(PlateauScheduler, FloorIsCrossedOnlyBelowTheFloorValue) {
  PlateauScheduler s{0.01, 10.0, 1};
  s.step(1.0);
  int steps = 0;
  while (!below_floor(s.lr, 1e-6) && steps < 10) {
    s.step(1.0);
    ++steps;
  }
  EXPECT_EQ(s.decays, 5);
  EXPECT_FALSE(below_floor(1e-6, 1e-6));
  EXPECT_FALSE(below_floor(0.01 / 10 / 10 / 10 / 10, 1e-6));
  EXPECT_TRUE(below_floor(1e-7, 1e-6));
}

TEST(SgdMomentum, MatchesClosedFormUnderConstantGradient) {
  ParamStore<double> p;
  const int id = p.add("w", {1}, ParamKind::linear, 2.0);
  p.add("running", {1}, ParamKind::buffer, 5.0);
  GradStore<double> vel(p), g(p);
  g[id][0] = 0.5;
  g[1][0] = 100.0;
  const double lr = 0.1, mu = 0.9;
  double w = 2.0;
  for (int k = 1; k <= 6; ++k) {
    sgd_momentum_step(p, vel, g, lr, mu);
    w += -lr * 0.5 * (1.0 - std::pow(mu, k)) / (1.0 - mu);
    EXPECT_NEAR(p.value(id)[0], w, 1e-14);
  }
  EXPECT_EQ(p.value(1)[0], 5.0);  // buffers are never updated
}

TEST(Trainer, SeededRunsAreBitIdentical) {
  const auto data = separable_corpus(6, 1);
  std::vector<std::size_t> tr, va;
  split_per_speaker(data, 0.2, 1, tr, va);
  Model<float> a(tiny_model(2), 5), b(tiny_model(2), 5);
  Trainer ta(a, tiny_train(3), data, tr, va), tb(b, tiny_train(3), data, tr, va);
  const auto ra = ta.run(), rb = tb.run();
  EXPECT_EQ(ra.loss_history, rb.loss_history);
  EXPECT_EQ(ra.val_history, rb.val_history);
  expect_same_params(a, b);
}

TEST(Trainer, ResumeFromCheckpointIsBitExact) {
  const auto data = separable_corpus(6, 2);
  std::vector<std::size_t> tr, va;
  split_per_speaker(data, 0.2, 1, tr, va);
  const fs::path dir = scratch("resume");
  Model<float> full(tiny_model(2), 7);
  Trainer tf(full, tiny_train(3), data, tr, va);
  const auto rf = tf.run(dir.string());
  ASSERT_TRUE(fs::exists(dir / "epoch_001.ckpt"));
  ASSERT_EQ(slurp(dir / "epoch_003.ckpt"), slurp(dir / "last.ckpt"));

  Checkpoint ck = load_checkpoint((dir / "epoch_001.ckpt").string());
  ASSERT_TRUE(ck.velocity.has_value());
  EXPECT_EQ(ck.state.epoch, 1);
  Trainer tr2(*ck.model, ck.train_config, data, tr, va);
  tr2.resume(ck.state, *ck.velocity);
  const auto rr = tr2.run();
  EXPECT_EQ(rr.loss_history, rf.loss_history);
  EXPECT_EQ(rr.lr_history, rf.lr_history);
  expect_same_params(*ck.model, full);
}

TEST(Trainer, CheckpointRoundTripIsBitExact) {
  const auto data = separable_corpus(4, 3);
  std::vector<std::size_t> tr, va;
  split_per_speaker(data, 0.25, 1, tr, va);
  Model<float> m(tiny_model(2), 9);
  Trainer t(m, tiny_train(1), data, tr, va);
  t.run();
  const fs::path dir = scratch("roundtrip");
  save_checkpoint((dir / "a.ckpt").string(), m, tiny_train(1), t.state(), &t.velocity());
  const Checkpoint ck = load_checkpoint((dir / "a.ckpt").string());
  expect_same_params(m, *ck.model);
  EXPECT_EQ(ck.state.loss_history, t.state().loss_history);
  EXPECT_EQ(ck.state.val_history, t.state().val_history);
  EXPECT_EQ(ck.state.schedule.best, t.state().schedule.best);
  for (int id = 0; id < int(m.params.size()); ++id)
    for (std::size_t i = 0; i < t.velocity()[id].size(); ++i) ASSERT_EQ(ck.velocity->operator[](id)[i], t.velocity()[id][i]);
  save_checkpoint((dir / "b.ckpt").string(), *ck.model, ck.train_config, ck.state, &*ck.velocity, ck.features);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST(Trainer, CorruptCheckpointIsReported) {
  const fs::path dir = scratch("corrupt");
  Model<float> m(tiny_model(2), 1);
  save_checkpoint((dir / "ok.ckpt").string(), m, tiny_train(1), TrainerState{}, nullptr);
  std::string bytes = slurp(dir / "ok.ckpt");
  std::ofstream((dir / "short.ckpt").string(), std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint((dir / "short.ckpt").string()), DataError);
  EXPECT_THROW(load_checkpoint((dir / "absent.ckpt").string()), DataError);
  EXPECT_FALSE(load_checkpoint((dir / "ok.ckpt").string()).velocity.has_value());
}

TEST(Trainer, NonFiniteLossRaisesNumericalError) {
  auto data = separable_corpus(4, 4);
  for (auto& u : data)
    for (float& v : u.feats.data) v = std::numeric_limits<float>::quiet_NaN();
  std::vector<std::size_t> tr, va;
  split_per_speaker(data, 0.25, 1, tr, va);
  Model<float> m(tiny_model(2), 1);
  Trainer t(m, tiny_train(2), data, tr, va);
  EXPECT_THROW(t.run(), NumericalError);
}

TEST(Trainer, RejectsLabelsOutsideTheClassifier) {
  const auto data = separable_corpus(3, 5);
  Model<float> m(tiny_model(1), 1);
  EXPECT_THROW(Trainer(m, tiny_train(1), data, {0, 1, 3, 4}, {2, 5}), DataError);
  TrainConfig bad = tiny_train(1);
  bad.batch_size = 1;
  Model<float> ok(tiny_model(2), 1);
  EXPECT_THROW(Trainer(ok, bad, data, {0, 1, 3, 4}, {2, 5}), DataError);
}

TEST(Trainer, TwoSpeakerLossFallsBelowTenPercent) {
  const auto data = separable_corpus(10, 6);
  std::vector<std::size_t> tr, va;
  split_per_speaker(data, 0.2, 1, tr, va);
  Model<float> m(tiny_model(2), 11);
  const auto r = Trainer(m, tiny_train(30), data, tr, va).run();
  ASSERT_FALSE(r.loss_history.empty());
  EXPECT_LT(r.loss_history.back(), 0.1 * r.loss_history.front());
  for (std::size_t i = 1; i < r.lr_history.size(); ++i) {
    EXPECT_LE(r.lr_history[i], r.lr_history[i - 1]);
    if (r.lr_history[i] != r.lr_history[i - 1]) {
      EXPECT_NEAR(r.lr_history[i - 1] / r.lr_history[i], 10.0, 1e-9);
    }
  }
}

TEST(Trainer, HistoryCsvHasOneRowPerEpoch) {
  TrainerState st;
  st.epoch = 2;
  st.loss_history = {2.5, 1.25};
  st.val_history = {3.0, 2.0};
  st.lr_history = {0.01, 0.001};
  const std::string csv = history_csv(st);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,lr");
  EXPECT_NE(csv.find("2,1.25,2,0.001"), std::string::npos);
}

TEST(Extraction, ShortInputsAreTiledAndWorkersDoNotMatter) {
  const auto data = separable_corpus(3, 7);
  Model<float> m(tiny_model(2), 1);
  FeatureMatrix shortf(5, 8);
  for (float& v : shortf.data) v = 0.3f;
  EXPECT_EQ(extract_embedding(m, shortf).size(), 6u);
  const auto one = extract_embeddings(m, data, 1), three = extract_embeddings(m, data, 3);
  EXPECT_EQ(one, three);
}

TEST(Extraction, ArchiveRoundTripAndScoring) {
  const fs::path dir = scratch("archive");
  const std::vector<std::string> ids{"a", "b", "c"};
  const std::vector<std::vector<float>> embs{{1, 0}, {0.5f, 0.5f}, {0, 2}};
  write_embedding_archive((dir / "e.ark").string(), ids, embs);
  const auto back = read_embedding_archive((dir / "e.ark").string());
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.at("c"), embs[2]);
  TrialSet ts{{"a", "b", true}, {"a", "c", false}};
  const auto raw = score_trials(ts, back, {});
  EXPECT_NEAR(raw[0].score, std::sqrt(0.5), 1e-6);
  EXPECT_NEAR(raw[1].score, 0.0, 1e-7);
  const auto centered = score_trials(ts, back, {0.5, 0.0});
  EXPECT_NEAR(centered[1].score, -0.5 / std::sqrt(0.25 + 4.0), 1e-6);
  EXPECT_THROW(score_trials({{"a", "zz", true}}, back, {}), DataError);
}

TEST(MakeTrials, BalancedAndDeterministic) {
  std::vector<std::pair<std::string, std::string>> us;
  for (int s = 0; s < 4; ++s)
    for (int i = 0; i < 5; ++i) us.push_back({"u" + std::to_string(s) + std::to_string(i), "s" + std::to_string(s)});
  const auto a = make_trials(us, 60, 1), b = make_trials(us, 60, 1);
  ASSERT_EQ(a.size(), 60u);
  int nt = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].enroll, b[i].enroll);
    nt += a[i].target;
    EXPECT_EQ(a[i].target, a[i].enroll.substr(0, 2) == a[i].test.substr(0, 2));
  }
  EXPECT_EQ(nt, 30);
}

TEST(ToyCorpus, SizeAndByteIdenticalRegeneration) {
  ToyOptions big;
  EXPECT_EQ(ToyCorpus(big).size(), 1000u);
  ToyOptions o;
  o.n_speakers = 2;
  o.utts_per_speaker = 2;
  o.seed = 4;
  o.max_seconds = 1.2;
  const auto a = ToyCorpus(o).write(scratch("toy_a").string());
  const auto b = ToyCorpus(o).write(scratch("toy_b").string());
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(slurp(a[i].path), slurp(b[i].path));
  EXPECT_THROW(ToyCorpus(ToyOptions{1, 5}), DataError);
}

TEST(ToyCorpus, NoiselessSpeakersAreSeparatedInFeatureSpace) {
  ToyOptions o;
  o.n_speakers = 2;
  o.utts_per_speaker = 3;
  o.noise = 0.0;
  o.seed = 8;
  ToyCorpus corpus(o);
  std::vector<std::vector<double>> means;
  std::vector<int> spk;
  for (const auto& u : corpus.utterances()) {
    // Speech frames only: silence gaps sit at the log floor and would swamp the means.
    const Waveform w = corpus.synthesize(u);
    const auto le = frame_log_energy(w);
    const FeatureMatrix f = select_frames(fbank(w), energy_vad(le));
    std::vector<double> m(f.bins, 0.0);
    for (int t = 0; t < f.frames; ++t)
      for (int k = 0; k < f.bins; ++k) m[k] += f(t, k) / f.frames;
    // Peak normalization shifts the overall level per utterance; compare spectral shape.
    const double level = std::accumulate(m.begin(), m.end(), 0.0) / double(m.size());
    for (double& v : m) v -= level;
    means.push_back(m);
    spk.push_back(u.speaker);
  }
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d);
  };
  double within = 0, between = 1e300;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j)
      (spk[i] == spk[j] ? within = std::max(within, dist(means[i], means[j]))
                        : between = std::min(between, dist(means[i], means[j])));
  EXPECT_LT(within, between);
}

}  // namespace
