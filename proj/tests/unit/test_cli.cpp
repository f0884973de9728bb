#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "commands.hpp"
#include "json.hpp"
#include "jsfusion/preprocess.hpp"

namespace fs = std::filesystem;
using jsfusion::read_text_file;

namespace {

const std::string kToy = JSFUSION_SOURCE_DIR "/configs/toy.ini";

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = jsfusion::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("jsfusion_cli_" + name);
  fs::remove_all(p);
  return p;
}

// narrow widths keep these runs to well under a second
std::vector<std::string> small(const fs::path& data) {
  return {"--config", kToy, "--set", "data.dir=" + data.string(), "--set", "model.lstm_hidden=4", "--set",
          "model.d_cnn=4", "--set", "model.d_d1=4", "--set", "model.d_d2=4", "--set", "model.d_d3=4", "--set",
          "model.d_d4=4", "--set", "model.conv_channels=4,4,4", "--set", "model.d_d5=4", "--set", "model.d_d6=4",
          "--set", "model.d_d7=4", "--set", "train.epochs=2"};
}

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("gen-data is deterministic and echoes its configuration") {
  auto a = scratch("gen_a"), b = scratch("gen_b");
  REQUIRE(run({"--config", kToy, "--out", a.string(), "gen-data"}).code == 0);
  REQUIRE(run({"--config", kToy, "--out", b.string(), "gen-data"}).code == 0);
  for (const char* f : {"corpus.jsonl", "embeddings.txt", "vocab.txt", "mc.jsonl", "fib.jsonl", "manifest.json",
                        "features/ex01.jsfv"}) {
    CHECK(read_text_file((a / f).string()) == read_text_file((b / f).string()));
  }
  auto manifest = nlohmann::json::parse(read_text_file((a / "manifest.json").string()));
  CHECK(manifest["corpus_size"] == 20);
  CHECK(manifest["mc_items"] == 20);
  CHECK(manifest["fib_items"] == 40);
  std::string echoed = read_text_file((a / "effective_config.ini").string());
  CHECK(echoed.find("synth_corpus_size = 20") != std::string::npos);

  auto c = scratch("gen_c");
  REQUIRE(run({"--config", kToy, "--seed", "2", "--out", c.string(), "gen-data"}).code == 0);
  CHECK(read_text_file((a / "corpus.jsonl").string()) != read_text_file((c / "corpus.jsonl").string()));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("invalid configuration exits with status 2") {
  auto d = scratch("bad");
  auto r = run({"--config", kToy, "--set", "data.synth_noise=-0.5", "--out", d.string(), "gen-data"});
  CHECK(r.code == 2);
  CHECK(r.err.find("synth_noise") != std::string::npos);
  CHECK(run({"--set", "model.nonexistent=3", "gradcheck"}).code == 2);
  CHECK(run({"--set", "novalue", "gradcheck"}).code == 2);
  CHECK(run({"gen-data", "--no-such-flag"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--config", (d / "missing.ini").string(), "gradcheck"}).code == 1);
  fs::remove_all(d);
}

TEST_CASE("train, eval and dump-attention on a small corpus") {
  auto data = scratch("pipe_data"), out = scratch("pipe_run");
  REQUIRE(run({"--config", kToy, "--out", data.string(), "gen-data"}).code == 0);
  auto base = small(data);

  auto t = run(base + std::vector<std::string>{"--set", "train.checkpoint_every=1", "--out", out.string(), "train"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  for (const char* f : {"checkpoint.jsfm", "checkpoint_epoch1.jsfm", "checkpoint_epoch2.jsfm", "loss.csv", "vocab.txt",
                        "effective_config.ini"}) {
    CHECK(fs::exists(out / f));
  }
  CHECK(read_text_file((out / "checkpoint.jsfm").string()) == read_text_file((out / "checkpoint_epoch2.jsfm").string()));
  std::string trace = read_text_file((out / "loss.csv").string());
  CHECK(trace.rfind("epoch,batch,loss\n", 0) == 0);
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 1 + 2 * 20);

  std::string ckpt = (out / "checkpoint.jsfm").string();
  auto e = run(base + std::vector<std::string>{"eval", "--checkpoint", ckpt, "--task", "retrieval"});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  auto metrics = nlohmann::json::parse(read_text_file((out / "metrics_retrieval.json").string()));
  CHECK(metrics["queries"] == 20);
  CHECK(metrics.contains("recall@10"));
  CHECK(e.out.find("MedR") != std::string::npos);

  CHECK(run(base + std::vector<std::string>{"eval", "--checkpoint", ckpt, "--task", "mc"}).code == 0);
  CHECK(fs::exists(out / "metrics_mc.json"));
  // a matching checkpoint cannot answer blanks
  CHECK(run(base + std::vector<std::string>{"eval", "--checkpoint", ckpt, "--task", "fib"}).code == 2);
  CHECK(run(base + std::vector<std::string>{"eval", "--checkpoint", ckpt, "--task", "nope"}).code == 2);
  CHECK(run(base + std::vector<std::string>{"eval"}).code == 2);

  auto att = out / "att";
  auto d = run(base + std::vector<std::string>{"--out", att.string(), "dump-attention", "--checkpoint", ckpt,
                                               "--example", "2"});
  REQUIRE_MESSAGE(d.code == 0, d.err);
  std::string pgm = read_text_file((att / "attention.pgm").string());
  CHECK(pgm.rfind("P2\n8 16\n", 0) == 0);
  CHECK(fs::exists(att / "gate_stage3.pgm"));
  CHECK(run(base + std::vector<std::string>{"--out", att.string(), "dump-attention", "--checkpoint", ckpt, "--example",
                                          "20"})
            .code == 2);

  auto ungated = out / "ungated";
  REQUIRE(run(base + std::vector<std::string>{"--set", "model.gating=false", "--set", "train.epochs=1", "--out",
                                              ungated.string(), "train"})
              .code == 0);
  CHECK(run(base + std::vector<std::string>{"--out", att.string(), "dump-attention", "--checkpoint",
                                            (ungated / "checkpoint.jsfm").string()})
            .code == 2);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("fill-in-the-blank output width must match the vocabulary") {
  auto data = scratch("fib_data"), out = scratch("fib_run");
  REQUIRE(run({"--config", kToy, "--out", data.string(), "gen-data"}).code == 0);
  auto base = small(data) + std::vector<std::string>{"--set", "model.variant=fib", "--set", "train.task=fib"};
  auto t = run(base + std::vector<std::string>{"--set", "train.batch_size=32", "--out", out.string(), "train"});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  std::string ckpt = (out / "checkpoint.jsfm").string();
  CHECK(run(base + std::vector<std::string>{"eval", "--checkpoint", ckpt}).code == 0);
  CHECK(fs::exists(out / "metrics_fib.json"));

  // the generator's full vocabulary has words the corpus never uses, so its size differs
  auto r = run(base + std::vector<std::string>{"--set", "data.vocab=vocab.txt", "eval", "--checkpoint", ckpt});
  CHECK(r.code == 2);
  CHECK(r.err.find("d_D8") != std::string::npos);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("gradcheck passes on the tiny configuration") {
  auto out = scratch("gc");
  auto r = run({"--out", out.string(), "gradcheck"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max relative error") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(fs::exists(out / "gradcheck.txt"));
  // an impossible tolerance fails with status 1
  CHECK(run({"--out", out.string(), "gradcheck", "--tolerance", "0"}).code == 1);
  fs::remove_all(out);
}
