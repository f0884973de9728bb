#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>

#include "CLI11.hpp"
#include "jsfusion/evaluation.hpp"
#include "jsfusion/synthdata.hpp"
#include "jsfusion/training.hpp"

namespace jsfusion::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string task;
  std::string checkpoint;
  unsigned threads = 1;
  double tolerance = 1e-4;
  std::optional<Index> example;
};

RunConfig effective_config(const Options& o) {
  RunConfig rc;
  if (!o.config_path.empty()) rc.merge_file(o.config_path);
  for (const auto& kv : o.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) {
    rc.train.seed = *o.seed;
    rc.model.init_seed = *o.seed;
    rc.data.synth.seed = *o.seed;
  }
  return rc;
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void echo_config(const RunConfig& rc, const std::string& out_dir, std::ostream& out) {
  fs::create_directories(out_dir);
  std::string path = in_dir(out_dir, "effective_config.ini");
  write_text_file(path, rc.to_text());
  out << "effective config: " << path << "\n";
}

Vocabulary training_vocabulary(const RunConfig& rc, std::ostream& out) {
  const DataConfig& d = rc.data;
  if (!d.vocab.empty()) return read_vocabulary(in_dir(d.dir, d.vocab));
  std::vector<std::vector<std::string>> corpus;
  for (const auto& rec : read_corpus(in_dir(d.dir, d.corpus))) corpus.push_back(tokenize(rec.sentence));
  Vocabulary v = build_vocabulary(corpus, d.min_count);
  out << "vocabulary: " << v.size() << " entries (min_count " << d.min_count << ")\n";
  return v;
}

/// Vocabulary for a trained checkpoint: data.vocab if set, else the
/// vocab.txt written next to the checkpoint.
Vocabulary checkpoint_vocabulary(const RunConfig& rc, const std::string& checkpoint) {
  if (!rc.data.vocab.empty()) return read_vocabulary(in_dir(rc.data.dir, rc.data.vocab));
  return read_vocabulary((fs::path(checkpoint).parent_path() / "vocab.txt").string());
}

void check_vocabulary(const ModelConfig& m, const Vocabulary& vocab) {
  if (m.variant == Variant::fib && m.d_d8 != vocab.size()) {
    throw DimensionError("checkpoint output width d_D8 = " + std::to_string(m.d_d8) + " does not match the vocabulary size |V| = " +
                         std::to_string(vocab.size()));
  }
  if (m.vocab_size != vocab.size()) {
    throw DimensionError("checkpoint vocab_size = " + std::to_string(m.vocab_size) + " does not match the vocabulary size |V| = " +
                         std::to_string(vocab.size()) + " (d_D8 = " + std::to_string(m.d_d8) + ")");
  }
}

std::string checkpoint_path(const Options& o, const RunConfig& rc) {
  std::string p = !o.checkpoint.empty() ? o.checkpoint : rc.data.checkpoint;
  if (p.empty()) throw ConfigError("no checkpoint given: pass --checkpoint or set data.checkpoint");
  return p;
}

Task parse_task(const std::string& s) {
  if (s == "retrieval") return Task::retrieval;
  if (s == "mc") return Task::mc;
  if (s == "fib") return Task::fib;
  throw ConfigError("unknown task '" + s + "' (expected retrieval, mc or fib)");
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o, std::ostream& out) {
  RunConfig rc = effective_config(o);
  std::string dir = o.out.empty() ? rc.data.dir : o.out;
  rc.data.synth.validate();
  echo_config(rc, dir, out);
  SynthCorpus corpus = generate_corpus(rc.data.synth);
  Rng rng = Rng(rc.data.synth.seed).derive(17);
  auto mc = make_multiple_choice(corpus.data, rng, rc.data.mc_items);
  FibSet fib = make_fib(corpus.data, rng, rc.data.fib_per_sentence);
  SynthFiles files = write_synthetic_corpus(dir, rc.data, corpus, mc, fib);
  out << "wrote " << corpus.data.size() << " pairs, " << mc.size() << " multiple-choice items, " << fib.items.size()
      << " fill-in-the-blank items (" << fib.skipped << " sentences skipped) to " << dir << "\n";
  out << "manifest: " << files.manifest << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig rc = effective_config(o);
  if (!o.task.empty()) rc.train.task = parse_task(o.task);
  std::string dir = o.out.empty() ? "run" : o.out;
  Vocabulary vocab = training_vocabulary(rc, out);
  rc.model.vocab_size = vocab.size();
  if (rc.model.variant == Variant::fib) rc.model.d_d8 = vocab.size();
  rc.model.validate();
  rc.train.validate();
  echo_config(rc, dir, out);

  std::string emb = in_dir(rc.data.dir, rc.data.embeddings);
  Rng emb_rng = Rng(rc.model.init_seed).derive(3);
  if (!rc.data.embeddings.empty() && fs::exists(emb)) {
    auto report = load_embeddings(emb, vocab, rc.model.d_word, emb_rng);
    out << "embeddings: " << report.matched << " matched, " << report.randomly_initialized << " random\n";
  } else {
    vocab.init_embeddings(rc.model.d_word, emb_rng);
    out << "embeddings: random initialisation\n";
  }

  Dataset data = load_dataset(in_dir(rc.data.dir, rc.data.corpus), vocab, rc.model.m_max, rc.model.n_max);
  data.validate(rc.model.n_max, rc.model.m_max, rc.model.d_video, vocab.size());
  std::vector<McItem> mc;
  std::vector<FibItem> fib;
  TrainData td{&data, nullptr, nullptr};
  if (rc.train.task == Task::mc) {
    mc = load_mc_items(in_dir(rc.data.dir, rc.data.mc), data, vocab, rc.model.m_max);
    td.mc = &mc;
  } else if (rc.train.task == Task::fib) {
    fib = load_fib_items(in_dir(rc.data.dir, rc.data.fib), data, vocab, rc.model.m_max);
    td.fib = &fib;
  }

  JsFusion<double> model(rc.model);
  model.set_embeddings(vocab.embeddings());
  write_vocabulary(in_dir(dir, "vocab.txt"), vocab);
  out << "training " << to_string(rc.train.task) << " on " << data.size() << " pairs, " << model.parameter_count()
      << " parameters\n";
  auto trace = train(model, td, rc.train, [&](Index epoch) {
    if (rc.train.checkpoint_every > 0 && (epoch + 1) % rc.train.checkpoint_every == 0) {
      save_checkpoint(in_dir(dir, "checkpoint_epoch" + std::to_string(epoch + 1) + ".jsfm"), model);
    }
  });
  write_text_file(in_dir(dir, "loss.csv"), loss_trace_csv(trace));
  save_checkpoint(in_dir(dir, "checkpoint.jsfm"), model);
  if (!trace.empty()) {
    double sum = 0;
    Index n = 0;
    for (const auto& r : trace) {
      if (r.epoch == trace.back().epoch) {
        sum += r.loss;
        ++n;
      }
    }
    char buf[96];
    std::snprintf(buf, sizeof buf, "final epoch mean loss %.6g over %lld steps\n", sum / static_cast<double>(n),
                  static_cast<long long>(n));
    out << buf;
  }
  out << "checkpoint: " << in_dir(dir, "checkpoint.jsfm") << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  RunConfig rc = effective_config(o);
  std::string ckpt = checkpoint_path(o, rc);
  std::string dir = o.out.empty() ? fs::path(ckpt).parent_path().string() : o.out;
  if (dir.empty()) dir = ".";
  JsFusion<double> model = load_checkpoint<double>(ckpt);
  rc.model = model.config();
  Task task = o.task.empty() ? rc.train.task : parse_task(o.task);
  Vocabulary vocab = checkpoint_vocabulary(rc, ckpt);
  check_vocabulary(rc.model, vocab);
  if ((task == Task::fib) != (rc.model.variant == Variant::fib)) {
    throw ConfigError("task " + to_string(task) + " cannot be evaluated with a " + to_string(rc.model.variant) +
                      " checkpoint");
  }
  echo_config(rc, dir, out);
  Dataset data = load_dataset(in_dir(rc.data.dir, rc.data.corpus), vocab, rc.model.m_max, rc.model.n_max);
  data.validate(rc.model.n_max, rc.model.m_max, rc.model.d_video, vocab.size());

  std::string json, table;
  if (task == Task::retrieval) {
    std::vector<Index> pool;
    for (Index i = 0; i < std::min(data.size(), rc.data.pool_size); ++i) pool.push_back(i);
    auto m = evaluate_retrieval(model, data, pool, o.threads);
    json = metrics_json(m);
    table = metrics_table(m);
  } else if (task == Task::mc) {
    auto items = load_mc_items(in_dir(rc.data.dir, rc.data.mc), data, vocab, rc.model.m_max);
    auto r = evaluate_multiple_choice(model, data, items, o.threads);
    json = metrics_json(r);
    table = metrics_table(r);
  } else {
    auto items = load_fib_items(in_dir(rc.data.dir, rc.data.fib), data, vocab, rc.model.m_max);
    auto r = evaluate_fib(model, data, items, o.threads);
    json = metrics_json(r);
    table = metrics_table(r);
  }
  std::string stem = "metrics_" + to_string(task);
  write_text_file(in_dir(dir, stem + ".json"), json);
  write_text_file(in_dir(dir, stem + ".txt"), table);
  out << table;
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  RunConfig rc = effective_config(o);
  std::string dir = o.out.empty() ? "run" : o.out;
  echo_config(rc, dir, out);
  std::string report;
  double worst = 0.0;
  for (Variant v : {Variant::match, Variant::fib}) {
    ModelConfig c = ModelConfig::tiny(v);
    c.gating = rc.model.gating;
    c.fib_skip_embedding_only = rc.model.fib_skip_embedding_only;
    c.init_seed = rc.model.init_seed;
    report += "# " + to_string(v) + " objective\n";
    for (const auto& e : training_gradient_check<double>(c, rc.train.seed)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-28s %6ld  %.3e%s\n", e.group.c_str(), e.coordinates, e.relative_error,
                    e.relative_error > o.tolerance ? "  FAIL" : "");
      report += buf;
      worst = std::max(worst, e.relative_error);
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.1e)\n", worst, o.tolerance);
  report += buf;
  write_text_file(in_dir(dir, "gradcheck.txt"), report);
  out << report;
  return worst <= o.tolerance ? 0 : 1;
}

int cmd_dump_attention(const Options& o, std::ostream& out) {
  RunConfig rc = effective_config(o);
  std::string ckpt = checkpoint_path(o, rc);
  std::string dir = o.out.empty() ? "run" : o.out;
  JsFusion<double> model = load_checkpoint<double>(ckpt);
  rc.model = model.config();
  if (!rc.model.gating) throw ConfigError("the checkpoint was trained without gating (model.gating = false); nothing to dump");
  Vocabulary vocab = checkpoint_vocabulary(rc, ckpt);
  check_vocabulary(rc.model, vocab);
  echo_config(rc, dir, out);
  Dataset data = load_dataset(in_dir(rc.data.dir, rc.data.corpus), vocab, rc.model.m_max, rc.model.n_max);
  Index ex = o.example.value_or(rc.data.example);
  if (ex < 0 || ex >= data.size()) {
    throw InputError("example " + std::to_string(ex) + " outside the corpus of " + std::to_string(data.size()));
  }
  ForwardTrace<double> trace;
  {
    NoGradScope no_grad;
    model.forward({&data.videos[static_cast<std::size_t>(ex)]}, {&data.sentences[static_cast<std::size_t>(ex)]},
                  Mode::infer, &trace);
  }
  auto schedule = rc.model.stage_schedule();
  auto as_matrix = [](const Tensor<double>& t, Index rows, Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) m(r, c) = t.value()[r * cols + c];
    }
    return m;
  };
  Index frames = data.videos[static_cast<std::size_t>(ex)].length();
  Index words = data.sentences[static_cast<std::size_t>(ex)].length();
  Eigen::MatrixXd alpha = as_matrix(*trace.alpha, rc.model.n_max, rc.model.m_max);
  write_pgm(in_dir(dir, "attention.pgm"), alpha);
  out << "attention " << rc.model.n_max << "x" << rc.model.m_max << " (" << frames << " frames x " << words
      << " words valid): " << in_dir(dir, "attention.pgm") << "\n";
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& g = trace.decoder.gates[k];
    if (!g) continue;
    std::string name = "gate_stage" + std::to_string(k + 1) + ".pgm";
    write_pgm(in_dir(dir, name), as_matrix(*g, schedule[k + 1].rows, schedule[k + 1].cols));
    out << "gate stage " << k + 1 << " " << schedule[k + 1].rows << "x" << schedule[k + 1].cols << ": "
        << in_dir(dir, name) << "\n";
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint sequence fusion for video-language matching, multiple choice and fill-in-the-blank", "jsfusion"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "configuration file ([model], [train], [data] sections)");
  app.add_option("--set", o.overrides, "override one key, section.key=value (repeatable)");
  app.add_option("--seed", o.seed, "seed for data generation, initialisation and training");
  app.add_option("--out", o.out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus with planted alignment");
  auto* tr = app.add_subcommand("train", "train a model and write checkpoints and the loss trace");
  tr->add_option("--task", o.task, "retrieval, mc or fib (default: train.task)");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--task", o.task, "retrieval, mc or fib (default: train.task)");
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint file (default: data.checkpoint)");
  ev->add_option("--threads", o.threads, "scoring threads, 0 = all cores");
  auto* gc = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients on the tiny config");
  gc->add_option("--tolerance", o.tolerance, "maximum relative error per parameter group");
  auto* da = app.add_subcommand("dump-attention", "write attention and gate maps of one example as PGM images");
  da->add_option("--checkpoint", o.checkpoint, "checkpoint file (default: data.checkpoint)");
  da->add_option("--example", o.example, "corpus index (default: data.example)");
  for (auto* s : {gen, tr, ev, gc, da}) s->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
    return cmd_dump_attention(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.is_validation() ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace jsfusion::cli
