#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "rsknet/rsknet.hpp"

namespace rsknet::cli {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

namespace detail {

inline std::array<int, 4> parse_ints4(const std::string& s, const char* what) {
  IniDocument doc;
  doc.sections["x"]["v"] = {s};
  std::array<int, 4> out{};
  SectionReader r(doc, "x");
  try {
    r.ints4("v", out);
  } catch (const DataError&) {
    throw DataError(std::string("--") + what + ": expected 4 comma-separated integers, got '" + s + "'");
  }
  return out;
}

/// Model options shared by param-report and train. Unset flags leave the
/// configuration untouched.
struct ModelFlags {
  std::optional<std::string> arch, conv, pooling, head, widths, depths;
  std::optional<int> groups, low_rank, embed_dim, num_classes, n_mels;
  bool lite = false;

  void add(CLI::App* app) {
    app->add_option("--arch", arch, "rsknet | resnet34 | dresnet34_1 | dresnet34_2");
    app->add_option("--conv", conv, "standard | dsc | grouped");
    app->add_option("--groups", groups, "group count for --conv grouped");
    app->add_option("--pooling", pooling, "mtsp | sp | gap");
    app->add_option("--head", head, "full | low_rank");
    app->add_option("--low-rank", low_rank, "rank p of the low-rank head");
    app->add_option("--widths", widths, "stage widths, e.g. 32,64,128,256");
    app->add_option("--depths", depths, "blocks per stage, e.g. 3,4,6,3");
    app->add_option("--embed-dim", embed_dim, "embedding dimension");
    app->add_option("--num-classes", num_classes, "classifier rows (training speakers)");
    app->add_option("--n-mels", n_mels, "input mel bins");
    app->add_flag("--lite", lite, "halve every stage width");
  }

  void apply(ModelConfig& m) const {
    if (arch) m.arch = parse_arch(*arch);
    if (conv) m.conv.kind = parse_conv_kind(*conv);
    if (groups) m.conv.groups = *groups;
    if (pooling) m.pooling = parse_pooling(*pooling);
    if (head) m.head = parse_head(*head);
    if (low_rank) m.low_rank = *low_rank;
    if (widths) m.widths = parse_ints4(*widths, "widths");
    if (depths) m.depths = parse_ints4(*depths, "depths");
    if (embed_dim) m.embed_dim = *embed_dim;
    if (num_classes) m.num_classes = *num_classes;
    if (n_mels) m.n_mels = *n_mels;
    if (lite) m = m.lite();
  }
};

struct TrainFlags {
  std::optional<int> epochs, batch_size, patience, crop;
  std::optional<double> lr, momentum, val_fraction;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs, "maximum epochs");
    app->add_option("--batch-size", batch_size, "utterances per SGD step");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--momentum", momentum, "SGD momentum");
    app->add_option("--patience", patience, "epochs without validation improvement before lr/10");
    app->add_option("--crop", crop, "training crop length in frames");
    app->add_option("--val-fraction", val_fraction, "per-speaker validation fraction");
    app->add_option("--seed", seed, "training seed");
  }

  void apply(TrainConfig& t) const {
    if (epochs) t.max_epochs = *epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (lr) t.lr_init = *lr;
    if (momentum) t.momentum = *momentum;
    if (patience) t.patience = *patience;
    if (crop) t.crop_frames = *crop;
    if (val_fraction) t.val_fraction = *val_fraction;
    if (seed) t.seed = *seed;
  }
};

inline EngineConfig load_config(const std::string& path) {
  return path.empty() ? EngineConfig{} : load_engine_config(read_ini(path));
}

inline std::string percent(double v, int digits) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

inline TrialSet scored_trials(const std::string& trials, const std::string& scores) {
  return attach_scores(read_trials(trials), read_scores(scores));
}

template <typename F>
void parallel_for(std::size_t n, int workers, F&& body) {
  workers = std::max(1, workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = std::size_t(w); i < n; i += std::size_t(workers)) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands.

struct ParamReportArgs {
  std::string config;
  detail::ModelFlags model;
  bool per_layer = false;
  bool references = false;
  std::string csv;
};

inline int param_report(const ParamReportArgs& a, std::ostream& out) {
  ModelConfig cfg = detail::load_config(a.config).model;
  a.model.apply(cfg);
  cfg.validate();
  const ParamReport rep = count_params(cfg);
  out << "model: arch=" << to_string(cfg.arch) << " conv=" << to_string(cfg.conv.kind)
      << " pooling=" << to_string(cfg.pooling) << " head=" << to_string(cfg.head);
  if (cfg.head == HeadKind::low_rank) out << " p=" << cfg.low_rank;
  out << " widths=" << join4(cfg.widths) << " pooled_dim=" << cfg.pooled_dim() << "\n\n";
  out << report_text(rep, a.per_layer);
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw DataError("cannot write " + a.csv);
    f << report_csv(rep);
  }
  if (a.references) {
    out << "\nreference sizes (+-5% band per convention):\n";
    out << std::left << std::setw(30) << "model" << std::right << std::setw(9) << "table" << std::setw(12)
        << "core" << std::setw(12) << "core+bn" << std::setw(12) << "+classifier" << "\n";
    for (const auto& m : reference_models()) {
      const ParamReport r = count_params(m.config);
      out << std::left << std::setw(30) << m.name << std::right << std::setw(8) << detail::percent(m.millions, 1)
          << "M";
      for (auto c : {CountConvention::core, CountConvention::core_bn, CountConvention::core_bn_classifier}) {
        const std::size_t n = r.total(c);
        out << std::setw(11) << format_millions(n) << (within_band(n, m.millions) ? "*" : " ");
      }
      out << "\n";
    }
    out << "(* = within band)\n";
  }
  return kOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
};

inline int gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradCheckOptions opt;
  opt.seed = a.seed;
  opt.step = a.step;
  int failed = 0, total = 0;
  for (const auto& c : gradient_suite()) {
    const GradCheckResult r = c.run(opt);
    const bool ok = r.max_rel_error < a.tolerance;
    failed += !ok;
    ++total;
    char line[256];
    std::snprintf(line, sizeof line, "%-22s max_rel_err=%.3e probes=%-5zu worst=%-40s %s\n", c.name.c_str(),
                  r.max_rel_error, r.checked, r.worst.c_str(), ok ? "ok" : "FAIL");
    out << line;
  }
  out << "gradcheck: " << (total - failed) << "/" << total << " layer types within " << a.tolerance << "\n";
  return failed ? kNumerical : kOk;
}

struct GenToyArgs {
  std::string out_dir;
  int speakers = 20;
  int utts = 50;
  int eval_utts = 0;
  int trials = 0;
  std::uint64_t seed = 0;
  double noise = 1.0;
};

/// Writes wav/, manifest.txt (the first `utts` per speaker) and, with
/// eval_utts > 0, eval_manifest.txt plus trials.txt over the extra ones.
inline int gen_toy(const GenToyArgs& a, std::ostream& out) {
  namespace fs = std::filesystem;
  if (a.trials > 0 && a.eval_utts < 2) throw DataError("--trials needs --eval-utts >= 2");
  ToyOptions opt;
  opt.n_speakers = a.speakers;
  opt.utts_per_speaker = a.utts + a.eval_utts;
  opt.seed = a.seed;
  opt.noise = a.noise;
  const ToyCorpus corpus(opt);
  fs::create_directories(fs::path(a.out_dir) / "wav");
  std::vector<ManifestEntry> train, eval;
  for (const auto& u : corpus.utterances()) {
    const std::string path = (fs::path(a.out_dir) / "wav" / (u.id + ".wav")).string();
    write_wav(path, corpus.synthesize(u));
    (u.index < a.utts ? train : eval).push_back({u.id, ToyCorpus::speaker_id(u.speaker), path});
  }
  write_manifest((fs::path(a.out_dir) / "manifest.txt").string(), train);
  out << "wrote " << train.size() << " training utterances of " << a.speakers << " speakers to "
      << (fs::path(a.out_dir) / "manifest.txt").string() << "\n";
  if (!eval.empty()) {
    write_manifest((fs::path(a.out_dir) / "eval_manifest.txt").string(), eval);
    out << "wrote " << eval.size() << " evaluation utterances to "
        << (fs::path(a.out_dir) / "eval_manifest.txt").string() << "\n";
  }
  if (a.trials > 0) {
    std::vector<std::pair<std::string, std::string>> us;
    for (const auto& e : eval) us.push_back({e.utt, e.speaker});
    const TrialSet ts = make_trials(us, std::size_t(a.trials), a.seed ^ 0x7121A15ull);
    write_trials((fs::path(a.out_dir) / "trials.txt").string(), ts);
    out << "wrote " << ts.size() << " trials to " << (fs::path(a.out_dir) / "trials.txt").string() << "\n";
  }
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string out_dir;
  std::string resume;
  std::string history;
  detail::ModelFlags model;
  detail::TrainFlags train;
  std::uint64_t model_seed = 0;
  bool quiet = false;
};

inline int train(const TrainArgs& a, std::ostream& out) {
  EngineConfig cfg = detail::load_config(a.config);
  const std::string manifest = !a.manifest.empty() ? a.manifest : cfg.paths.manifest;
  const std::string out_dir = !a.out_dir.empty() ? a.out_dir : cfg.paths.checkpoint_dir;
  if (manifest.empty()) throw DataError("train: no manifest (--manifest or [paths] manifest)");

  std::optional<Checkpoint> ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    cfg.model = ck->model_config;
    cfg.features = ck->features;
    cfg.train = ck->train_config;
  } else {
    a.model.apply(cfg.model);
  }
  a.train.apply(cfg.train);
  cfg.train.validate();

  const auto entries = read_manifest(manifest);
  const auto speakers = speaker_list(entries);
  if (speakers.size() < 2) throw DataError(manifest + ": training needs at least 2 speakers");
  if (ck && ck->model_config.num_classes != int(speakers.size()))
    throw DataError("checkpoint has " + std::to_string(ck->model_config.num_classes) + " classes but " + manifest +
                    " lists " + std::to_string(speakers.size()) + " speakers");
  cfg.model.num_classes = static_cast<int>(speakers.size());
  cfg.model.n_mels = cfg.features.fbank.n_mels;
  cfg.model.validate();

  const auto data = load_utterances(entries, cfg.features);
  std::vector<std::size_t> tr, va;
  split_per_speaker(data, cfg.train.val_fraction, cfg.train.seed, tr, va);
  if (!a.quiet)
    out << "training on " << tr.size() << " utterances, validating on " << va.size() << ", " << speakers.size()
        << " speakers\n";

  Model<float> model = ck ? std::move(*ck->model) : Model<float>(cfg.model, a.model_seed);
  Trainer trainer(model, cfg.train, data, tr, va, cfg.features);
  if (ck) trainer.resume(ck->state, ck->velocity ? *ck->velocity : GradStore<float>(model.params));
  const TrainResult res = trainer.run(out_dir, [&](const EpochLog& l) {
    if (a.quiet) return;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %3d  train_loss %.6f  val_loss %.6f  lr %.3g\n", l.epoch, l.train_loss,
                  l.val_loss, l.lr);
    out << line << std::flush;
  });
  const std::string history =
      !a.history.empty() ? a.history : (std::filesystem::path(out_dir) / "history.csv").string();
  std::filesystem::create_directories(std::filesystem::path(history).parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : std::filesystem::path(history).parent_path());
  std::ofstream h(history);
  if (!h) throw DataError("cannot write " + history);
  h << history_csv(trainer.state());
  if (!a.quiet) out << "stopped: " << res.stop_reason << " after " << trainer.state().epoch << " epochs\n";
  return kOk;
}

struct ExtractArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  int workers = 1;
};

inline int extract(const ExtractArgs& a, std::ostream& out) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto entries = read_manifest(a.manifest);
  std::vector<FeatureMatrix> feats(entries.size());
  detail::parallel_for(entries.size(), a.workers,
                       [&](std::size_t i) { feats[i] = extract_features(read_wav(entries[i].path), ck.features); });
  std::vector<std::vector<float>> embs(entries.size());
  detail::parallel_for(entries.size(), a.workers, [&](std::size_t i) {
    if (feats[i].frames == 0) throw DataError(entries[i].path + ": no voiced frames after VAD");
    embs[i] = extract_embedding(*ck.model, feats[i]);
  });
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.utt);
  write_embedding_archive(a.out, ids, embs);
  out << "wrote " << ids.size() << " embeddings to " << a.out << "\n";
  return kOk;
}

struct ScoreArgs {
  std::string trials;
  std::string embeddings;
  std::string center;
  std::string out;
  int workers = 1;
};

inline int score(const ScoreArgs& a, std::ostream& out) {
  const auto embs = read_embedding_archive(a.embeddings);
  std::vector<double> mean;
  if (!a.center.empty()) {
    std::vector<std::vector<float>> train;
    for (auto& [k, v] : read_embedding_archive(a.center)) train.push_back(v);
    mean = mean_embedding<float>(train);
  }
  TrialSet ts = read_trials(a.trials);
  // Post-process each referenced embedding once, then score trials in parallel.
  std::map<std::string, std::vector<float>> ready;
  for (const auto& t : ts)
    for (const auto* id : {&t.enroll, &t.test}) {
      auto it = embs.find(*id);
      if (it == embs.end()) throw DataError(a.trials + ": no embedding for utterance '" + *id + "'");
      ready.emplace(*id, it->second);
    }
  std::vector<std::vector<float>*> slots;
  for (auto& [k, v] : ready) slots.push_back(&v);
  const std::vector<float> mf(mean.begin(), mean.end());
  detail::parallel_for(slots.size(), a.workers, [&](std::size_t i) {
    if (!mf.empty()) *slots[i] = postprocess<float>(*slots[i], mf);
  });
  detail::parallel_for(ts.size(), a.workers,
                       [&](std::size_t i) { ts[i].score = cosine_score<float>(ready.at(ts[i].enroll), ready.at(ts[i].test)); });
  write_scores(a.out, ts);
  out << "wrote " << ts.size() << " scores to " << a.out << "\n";
  return kOk;
}

struct EvalArgs {
  std::string trials;
  std::string scores;
  DcfParams dcf{};
};

inline int eval(const EvalArgs& a, std::ostream& out) {
  const TrialSet ts = detail::scored_trials(a.trials, a.scores);
  const EvalReport r = evaluate(ts, a.dcf);
  std::size_t nt = 0;
  for (const auto& t : ts) nt += t.target;
  out << "trials " << ts.size() << " (target " << nt << ", nontarget " << ts.size() - nt << ")\n";
  out << "EER " << detail::percent(r.eer, 2) << "%\n";
  out << "MinDCF " << detail::percent(r.min_dcf, 3) << " (p_target=" << a.dcf.p_target << ", c_fr=" << a.dcf.c_fr
      << ", c_fa=" << a.dcf.c_fa << ")\n";
  return kOk;
}

struct DetArgs {
  std::string trials;
  std::string scores;
  std::string out;
};

inline int det(const DetArgs& a, std::ostream& out) {
  const auto pts = det_points(detail::scored_trials(a.trials, a.scores));
  write_det_csv(a.out, pts);
  out << "wrote " << pts.size() << " DET points to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point.

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"RSKNet-MTSP speaker-embedding engine"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand all subcommand help");

  ParamReportArgs pr;
  auto* c_pr = app.add_subcommand("param-report", "parameter counts under three counting conventions");
  c_pr->add_option("--config", pr.config, "INI configuration file");
  pr.model.add(c_pr);
  c_pr->add_flag("--per-layer", pr.per_layer, "list every parameter tensor");
  c_pr->add_flag("--references", pr.references, "compare every reference model against the published sizes");
  c_pr->add_option("--csv", pr.csv, "also write the report as CSV");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient suite over every layer type");
  c_gc->add_option("--seed", gc.seed, "seed for inputs and parameters");
  c_gc->add_option("--tolerance", gc.tolerance, "maximum relative error");
  c_gc->add_option("--step", gc.step, "central-difference step");

  GenToyArgs gt;
  auto* c_gt = app.add_subcommand("gen-toy", "write a synthetic speaker corpus and manifest");
  c_gt->add_option("--out", gt.out_dir, "output directory")->required();
  c_gt->add_option("--speakers", gt.speakers, "number of speakers");
  c_gt->add_option("--utts", gt.utts, "training utterances per speaker");
  c_gt->add_option("--eval-utts", gt.eval_utts, "additional held-out utterances per speaker");
  c_gt->add_option("--trials", gt.trials, "trials to draw over the held-out utterances");
  c_gt->add_option("--seed", gt.seed, "corpus seed");
  c_gt->add_option("--noise", gt.noise, "within-speaker variation scale (0 = none)");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train on a manifest; writes checkpoints and history.csv");
  c_tr->add_option("--config", tr.config, "INI configuration file");
  c_tr->add_option("--manifest", tr.manifest, "training manifest");
  c_tr->add_option("--out", tr.out_dir, "checkpoint directory");
  c_tr->add_option("--resume", tr.resume, "continue from a checkpoint");
  c_tr->add_option("--history", tr.history, "loss/lr history CSV (default <out>/history.csv)");
  c_tr->add_option("--init-seed", tr.model_seed, "parameter initialization seed");
  c_tr->add_flag("--quiet", tr.quiet, "no per-epoch output");
  tr.model.add(c_tr);
  tr.train.add(c_tr);

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract", "embed every utterance of a manifest");
  c_ex->add_option("--checkpoint", ex.checkpoint, "model checkpoint")->required();
  c_ex->add_option("--manifest", ex.manifest, "utterance manifest")->required();
  c_ex->add_option("--out", ex.out, "embedding archive")->required();
  c_ex->add_option("--workers", ex.workers, "worker threads")->check(CLI::PositiveNumber);

  ScoreArgs sc;
  auto* c_sc = app.add_subcommand("score", "cosine-score a trial list");
  c_sc->add_option("--trials", sc.trials, "trial list")->required();
  c_sc->add_option("--embeddings", sc.embeddings, "embedding archive")->required();
  c_sc->add_option("--center", sc.center, "archive whose mean is subtracted before length normalization");
  c_sc->add_option("--out", sc.out, "score file")->required();
  c_sc->add_option("--workers", sc.workers, "worker threads")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "EER and MinDCF of a scored trial list");
  c_ev->add_option("--trials", ev.trials, "trial list")->required();
  c_ev->add_option("--scores", ev.scores, "score file")->required();
  c_ev->add_option("--p-target", ev.dcf.p_target, "target prior");
  c_ev->add_option("--c-fr", ev.dcf.c_fr, "false-reject cost");
  c_ev->add_option("--c-fa", ev.dcf.c_fa, "false-accept cost");

  DetArgs dt;
  auto* c_dt = app.add_subcommand("det", "write DET operating points as CSV");
  c_dt->add_option("--trials", dt.trials, "trial list")->required();
  c_dt->add_option("--scores", dt.scores, "score file")->required();
  c_dt->add_option("--out", dt.out, "CSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_pr) return param_report(pr, out);
    if (*c_gc) return gradcheck(gc, out);
    if (*c_gt) return gen_toy(gt, out);
    if (*c_tr) return train(tr, out);
    if (*c_ex) return extract(ex, out);
    if (*c_sc) return score(sc, out);
    if (*c_ev) return eval(ev, out);
    if (*c_dt) return det(dt, out);
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace rsknet::cli
