#include "jsfusion/config.hpp"

#include "jsfusion/ops.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <type_traits>

namespace jsfusion {

std::string to_string(Variant v) { return v == Variant::match ? "match" : "fib"; }

std::string to_string(Task t) {
  switch (t) {
    case Task::retrieval: return "retrieval";
    case Task::mc: return "mc";
    case Task::fib: return "fib";
  }
  return "?";
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

void parse_value(const std::string& key, const std::string& text, Index& out) {
  long long v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) bad_value(key, text, "an integer");
  out = static_cast<Index>(v);
}

void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || p != text.data() + text.size()) bad_value(key, text, "an unsigned integer");
}

void parse_value(const std::string& key, const std::string& text, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(text, &used);
    if (used != text.size()) bad_value(key, text, "a real number");
  } catch (const std::logic_error&) {
    bad_value(key, text, "a real number");
  }
}

void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "yes") {
    out = true;
  } else if (text == "false" || text == "0" || text == "no") {
    out = false;
  } else {
    bad_value(key, text, "a boolean");
  }
}

void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }

void parse_value(const std::string& key, const std::string& text, Variant& out) {
  if (text == "match") {
    out = Variant::match;
  } else if (text == "fib") {
    out = Variant::fib;
  } else {
    bad_value(key, text, "one of match|fib");
  }
}

void parse_value(const std::string& key, const std::string& text, Task& out) {
  if (text == "retrieval") {
    out = Task::retrieval;
  } else if (text == "mc") {
    out = Task::mc;
  } else if (text == "fib") {
    out = Task::fib;
  } else {
    bad_value(key, text, "one of retrieval|mc|fib");
  }
}

void parse_value(const std::string& key, const std::string& text, std::array<Index, 3>& out) {
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) bad_value(key, text, "three comma-separated integers");
    parse_value(key, trim(part), out[i++]);
  }
  if (i != 3) bad_value(key, text, "three comma-separated integers");
}

std::string format_value(Index v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(Variant v) { return to_string(v); }
std::string format_value(Task t) { return to_string(t); }
std::string format_value(const std::array<Index, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
}
std::string format_value(double v) {
  // %.17g round-trips every double exactly.
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Config>
bool set_field(Config& config, const std::string& key, const std::string& value, const std::string& full_key) {
  bool found = false;
  Config::visit(config, [&](const char* name, auto& field) {
    if (!found && key == name) {
      parse_value(full_key, value, field);
      found = true;
    }
  });
  return found;
}

template <typename Config>
void append_fields(const Config& config, std::ostringstream& os) {
  Config::visit(config, [&](const char* name, const auto& field) { os << name << " = " << format_value(field) << '\n'; });
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

ModelConfig ModelConfig::matching() { return ModelConfig{}; }

ModelConfig ModelConfig::fill_in_blank(Index vocab_size) {
  ModelConfig c;
  c.variant = Variant::fib;
  c.vocab_size = vocab_size;
  c.d_d1 = c.d_d5 = c.d_d6 = c.d_d7 = 1024;
  c.d_d2 = c.d_d3 = c.d_d4 = 2048;
  c.d_d8 = vocab_size;
  c.conv_channels = {1024, 1024, 1024};
  c.dropout = 0.2;
  return c;
}

ModelConfig ModelConfig::tiny(Variant variant, Index vocab_size) {
  ModelConfig c;
  c.variant = variant;
  c.n_max = c.m_max = 6;
  c.vocab_size = vocab_size;
  c.d_word = 6;
  c.d_video = 8;
  c.lstm_hidden = 4;
  c.d_cnn = 6;
  c.d_d1 = c.d_d2 = c.d_d3 = c.d_d4 = 8;
  c.conv_kernel = 2;
  c.conv_channels = {6, 6, 6};
  c.d_d5 = c.d_d6 = c.d_d7 = 8;
  c.d_d8 = variant == Variant::fib ? vocab_size : 1;
  c.dropout = variant == Variant::fib ? 0.2 : 0.0;
  return c;
}

std::array<ModelConfig::Extent, 4> ModelConfig::stage_schedule() const {
  std::array<Extent, 4> s;
  s[0] = {n_max, m_max, d_d4};
  for (std::size_t k = 0; k < 3; ++k) {
    const Extent& in = s[k];
    if (in.rows < conv_kernel || in.cols < conv_kernel) {
      throw ConfigError("stage " + std::to_string(k + 1) + " input extent " + std::to_string(in.rows) + "x" +
                        std::to_string(in.cols) + " is smaller than the " + std::to_string(conv_kernel) + "x" +
                        std::to_string(conv_kernel) + " kernel (check n_max/m_max/conv_kernel/conv_strides)");
    }
    s[k + 1] = {conv_output_extent(in.rows, conv_kernel, conv_strides[k]),
                conv_output_extent(in.cols, conv_kernel, conv_strides[k]), conv_channels[k]};
  }
  return s;
}

void ModelConfig::validate() const {
  visit(*this, [](const char* name, const auto& field) {
    using F = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<F, Index>) {
      if (field <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
    } else if constexpr (std::is_same_v<F, std::array<Index, 3>>) {
      for (Index x : field) {
        if (x <= 0) throw ConfigError(std::string("model.") + name + " entries must be positive");
      }
    }
  });
  require(cnn_kernel % 2 == 1, "model.cnn_kernel must be odd for same-length temporal padding");
  require(dropout >= 0.0 && dropout < 1.0, "model.dropout must lie in [0, 1)");
  require(bn_momentum >= 0.0 && bn_momentum < 1.0, "model.bn_momentum must lie in [0, 1)");
  require(bn_eps > 0.0, "model.bn_eps must be positive");
  if (variant == Variant::match) {
    require(d_d8 == 1, "model.d_d8 must be 1 for the matching variant, got " + std::to_string(d_d8));
  } else {
    require(d_d8 == vocab_size, "model.d_d8 (" + std::to_string(d_d8) + ") must equal model.vocab_size (" +
                                    std::to_string(vocab_size) + ") for the fib variant");
    require(d_d1 == d_d7, "model.d_d1 (" + std::to_string(d_d1) + ") must equal model.d_d7 (" +
                              std::to_string(d_d7) + ") so the blank skip connection can be added");
  }
  (void)stage_schedule();
}

void TrainConfig::validate() const {
  require(batch_size >= 2, "train.batch_size must be at least 2");
  require(margin > 0.0, "train.margin must be positive");
  require(weight_decay >= 0.0, "train.weight_decay must be non-negative");
  require(learning_rate > 0.0, "train.learning_rate must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "train.adam_eps must be positive");
  require(epochs >= 0, "train.epochs must be non-negative");
  require(clip_norm >= 0.0, "train.clip_norm must be non-negative");
  require(batches_per_epoch >= 0, "train.batches_per_epoch must be non-negative");
  require(checkpoint_every >= 0, "train.checkpoint_every must be non-negative");
  require(mixed_negatives >= 0.0 && mixed_negatives <= 1.0, "train.mixed_negatives must lie in [0, 1]");
  require(anchors_per_step >= 1, "train.anchors_per_step must be at least 1");
}

void SynthConfig::validate() const {
  require(vocab_size >= 1, "data.synth_vocab_size must be at least 1");
  require(min_length >= 1 && min_length <= max_length, "data.synth_min_length must lie in [1, synth_max_length]");
  require(max_length <= m_max, "data.synth_max_length (" + std::to_string(max_length) + ") exceeds m_max (" +
                                   std::to_string(m_max) + ")");
  require(min_frames_per_word >= 1 && min_frames_per_word <= max_frames_per_word,
          "data.synth_min_frames_per_word must lie in [1, synth_max_frames_per_word]");
  require(max_length * max_frames_per_word <= n_max,
          "data.synth_max_length * synth_max_frames_per_word (" + std::to_string(max_length * max_frames_per_word) +
              ") exceeds n_max (" + std::to_string(n_max) + ")");
  require(d_word >= 1 && d_video >= 1, "data.synth_d_word and synth_d_video must be positive");
  require(noise >= 0.0, "data.synth_noise must be non-negative");
  require(corpus_size >= 1, "data.synth_corpus_size must be at least 1");
}

void RunConfig::set(const std::string& dotted_key, const std::string& raw_value) {
  auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("config key '" + dotted_key + "' must be section.key");
  std::string section = dotted_key.substr(0, dot);
  std::string key = dotted_key.substr(dot + 1);
  std::string value = trim(raw_value);
  bool found = false;
  if (section == "model") {
    found = set_field(model, key, value, dotted_key);
  } else if (section == "train") {
    found = set_field(train, key, value, dotted_key);
  } else if (section == "data") {
    found = set_field(data, key, value, dotted_key);
  }
  if (!found) throw ConfigError("unknown config key '" + dotted_key + "'");
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    if (section.empty() && key.find('.') == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key + "' outside a section");
    }
    set(section.empty() ? key : section + "." + key, s.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "[model]\n";
  append_fields(model, os);
  os << "\n[train]\n";
  append_fields(train, os);
  os << "\n[data]\n";
  append_fields(data, os);
  return os.str();
}

std::string model_config_to_text(const ModelConfig& config) {
  std::ostringstream os;
  append_fields(config, os);
  return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
  RunConfig rc;
  rc.merge_text("[model]\n" + text, "<checkpoint>");
  return rc.model;
}

}  // namespace jsfusion
