#include <doctest.h>

#include "jsfusion/config.hpp"
#include "jsfusion/errors.hpp"

using namespace jsfusion;

TEST_CASE("default extent schedule is 40 -> 38 -> 36 -> 17") {
  auto s = ModelConfig{}.stage_schedule();
  CHECK(s[0].rows == 40);
  CHECK(s[1].rows == 38);
  CHECK(s[2].rows == 36);
  CHECK(s[3].rows == 17);
  CHECK(s[3].cols == 17);
  CHECK(s[0].channels == 512);
  CHECK(s[3].channels == 256);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("validation rejects underflowing stage extents") {
  ModelConfig c;
  c.n_max = c.m_max = 6;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("stage 3") != std::string::npos);
  }
  c.conv_kernel = 2;
  auto s = c.stage_schedule();
  CHECK(s[1].rows == 5);
  CHECK(s[2].rows == 4);
  CHECK(s[3].rows == 2);
}

TEST_CASE("fill-in-the-blank preset widths") {
  auto c = ModelConfig::fill_in_blank(1000);
  CHECK(c.variant == Variant::fib);
  CHECK(c.d_d1 == 1024);
  CHECK(c.d_d4 == 2048);
  CHECK(c.d_d7 == 1024);
  CHECK(c.d_d8 == 1000);
  CHECK(c.dropout == 0.2);
  CHECK_NOTHROW(c.validate());
  c.d_d8 = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("validation names offending dimensions") {
  ModelConfig c;
  c.d_d8 = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("d_d8"), ConfigError);
  c = ModelConfig{};
  c.lstm_hidden = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("lstm_hidden"), ConfigError);
  c = ModelConfig{};
  c.cnn_kernel = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig t;
  t.batch_size = 1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("run config parses sections, overrides and rejects unknown keys") {
  RunConfig rc;
  rc.merge_text(
      "# comment\n"
      "[model]\n"
      "d_d1 = 16\n"
      "conv_strides = 1, 2, 2\n"
      "gating = false\n"
      "[train]\n"
      "task = mc\n"
      "learning_rate = 0.003\n"
      "[data]\n"
      "synth_vocab_size = 20\n");
  CHECK(rc.model.d_d1 == 16);
  CHECK(rc.model.conv_strides == std::array<Index, 3>{1, 2, 2});
  CHECK_FALSE(rc.model.gating);
  CHECK(rc.train.task == Task::mc);
  CHECK(rc.train.learning_rate == 0.003);
  CHECK(rc.data.synth.vocab_size == 20);

  rc.set("model.d_d1", "32");
  CHECK(rc.model.d_d1 == 32);
  CHECK_THROWS_AS(rc.set("model.nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(rc.set("d_d1", "1"), ConfigError);
  CHECK_THROWS_AS(rc.set("model.d_d1", "1.5"), ConfigError);
  CHECK_THROWS_AS(rc.set("model.variant", "other"), ConfigError);
  CHECK_THROWS_AS(rc.merge_text("[model]\nfoo\n"), ConfigError);
}

TEST_CASE("run config text round-trips") {
  RunConfig rc;
  rc.set("train.learning_rate", "0.1");
  rc.set("model.bn_eps", "1.2345678901234567e-7");
  rc.set("data.dir", "some/where");
  RunConfig back;
  back.merge_text(rc.to_text());
  CHECK(back.to_text() == rc.to_text());
  CHECK(back.train.learning_rate == 0.1);
  CHECK(back.model.bn_eps == 1.2345678901234567e-7);
  CHECK(back.data.dir == "some/where");

  auto m = ModelConfig::fill_in_blank(7);
  CHECK(model_config_to_text(model_config_from_text(model_config_to_text(m))) == model_config_to_text(m));
}
