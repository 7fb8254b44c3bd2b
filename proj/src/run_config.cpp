#include "ziqe/run_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ziqe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") return out = true, true;
  if (v == "false" || v == "0" || v == "no") return out = false, true;
  return false;
}

bool valid_value(RunConfig::Type type, const std::string& v) {
  try {
    std::size_t used = 0;
    switch (type) {
      case RunConfig::Type::Integer:
        std::stoll(v, &used);
        return used == v.size();
      case RunConfig::Type::Real:
        std::stod(v, &used);
        return used == v.size();
      case RunConfig::Type::Boolean: {
        bool b;
        return parse_bool(v, b);
      }
      case RunConfig::Type::Text:
        return true;
    }
  } catch (const std::exception&) {
  }
  return false;
}

}  // namespace

RunConfig::RunConfig() {
  using T = Type;
  const std::vector<std::pair<std::string, Entry>> defaults = {
      {"seed", {T::Integer, "1"}},
      // model
      {"vocab_size", {T::Integer, "50"}},
      {"d_model", {T::Integer, "64"}},
      {"heads", {T::Integer, "4"}},
      {"encoder_layers", {T::Integer, "2"}},
      {"memory_layers", {T::Integer, "2"}},
      {"feedforward_dim", {T::Integer, "128"}},
      {"max_seq_len", {T::Integer, "256"}},
      {"lambda_st", {T::Real, "0.15"}},
      // corpus
      {"num_utterances", {T::Integer, "5000"}},
      {"min_len", {T::Integer, "4"}},
      {"max_len", {T::Integer, "12"}},
      {"raw_dim", {T::Integer, "80"}},
      {"frames_per_token", {T::Integer, "4"}},
      {"stack_window", {T::Integer, "4"}},
      {"stack_stride", {T::Integer, "4"}},
      {"noise_scale", {T::Real, "0.5"}},
      {"p_clean", {T::Real, "0.4"}},
      {"p_sub", {T::Real, "0.15"}},
      {"p_del", {T::Real, "0.05"}},
      {"p_ins", {T::Real, "0.05"}},
      {"corruption_seed", {T::Integer, "2"}},
      {"dev_fraction", {T::Real, "0.1"}},
      {"test_fraction", {T::Real, "0.1"}},
      // pre-training
      {"mask_target_prob", {T::Real, "0.15"}},
      {"mask_mask_prob", {T::Real, "0.8"}},
      {"mask_substitute_prob", {T::Real, "0.1"}},
      {"pretrain_epochs", {T::Integer, "4"}},
      {"pretrain_lr", {T::Real, "0.001"}},
      // fine-tuning
      {"head", {T::Text, "zi_beta"}},
      {"categorical_masses", {T::Text, "0"}},
      {"zi_expected_prediction", {T::Boolean, "true"}},
      {"lstm_hidden", {T::Integer, "32"}},
      {"phi_mode", {T::Text, "mle"}},
      {"phi", {T::Real, "5"}},
      {"freeze_backbone", {T::Boolean, "false"}},
      {"finetune_epochs", {T::Integer, "8"}},
      {"finetune_lr", {T::Real, "0.001"}},
      {"patience", {T::Integer, "3"}},
      {"batch_size", {T::Integer, "16"}},
      {"grad_clip", {T::Real, "1"}},
  };
  for (const auto& [k, e] : defaults) entries_.emplace(k, e);
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  RunConfig c;
  c.parse(ss.str(), path.string());
  return c;
}

void RunConfig::parse(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(n) + ": expected key=value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  if (!valid_value(it->second.type, value)) {
    throw std::invalid_argument("bad value '" + value + "' for key '" + key + "'");
  }
  it->second.value = value;
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

const std::string& RunConfig::get(const std::string& key) const { return entry(key).value; }

std::int64_t RunConfig::get_int(const std::string& key) const {
  return std::stoll(entry(key).value);
}

std::size_t RunConfig::get_count(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw std::invalid_argument("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

double RunConfig::get_real(const std::string& key) const { return std::stod(entry(key).value); }

bool RunConfig::get_bool(const std::string& key) const {
  bool b = false;
  parse_bool(entry(key).value, b);
  return b;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, e] : entries_) out += k + "=" + e.value + "\n";
  return out;
}

void RunConfig::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  os << to_text();
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

bert::ModelConfig RunConfig::model_config() const {
  bert::ModelConfig m;
  m.vocab_size = get_count("vocab_size");
  m.d_model = get_count("d_model");
  m.heads = get_count("heads");
  m.encoder_layers = get_count("encoder_layers");
  m.memory_layers = get_count("memory_layers");
  m.feedforward_dim = get_count("feedforward_dim");
  m.max_seq_len = get_count("max_seq_len");
  m.feature_dim = get_count("raw_dim") * get_count("stack_window");
  m.lambda_st = get_real("lambda_st");
  m.validate();
  return m;
}

bert::MaskingConfig RunConfig::masking_config() const {
  bert::MaskingConfig m;
  m.target_prob = get_real("mask_target_prob");
  m.mask_prob = get_real("mask_mask_prob");
  m.substitute_prob = get_real("mask_substitute_prob");
  m.validate();
  return m;
}

data::CorpusConfig RunConfig::corpus_config() const {
  data::CorpusConfig c;
  c.synth.vocab_size = get_count("vocab_size");
  c.synth.min_len = get_count("min_len");
  c.synth.max_len = get_count("max_len");
  c.synth.raw_dim = get_count("raw_dim");
  c.synth.frames_per_token = get_count("frames_per_token");
  c.synth.noise_scale = get_real("noise_scale");
  c.corruption.p_clean = get_real("p_clean");
  c.corruption.p_sub = get_real("p_sub");
  c.corruption.p_del = get_real("p_del");
  c.corruption.p_ins = get_real("p_ins");
  c.corruption.seed = static_cast<std::uint64_t>(get_int("corruption_seed"));
  c.count = get_count("num_utterances");
  c.stack_window = get_count("stack_window");
  c.stack_stride = get_count("stack_stride");
  c.seed = static_cast<std::uint64_t>(get_int("seed"));
  c.synth.validate();
  c.corruption.validate();
  return c;
}

qe::HeadSpec RunConfig::head_spec() const {
  qe::HeadSpec h;
  h.kind = qe::parse_head_kind(get("head"));
  h.masses.clear();
  std::string masses = get("categorical_masses");
  for (char& c : masses) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(masses);
  std::string item;
  while (is >> item) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw std::invalid_argument("bad categorical mass '" + item + "'");
    h.masses.push_back(v);
  }
  h.expected_prediction = get_bool("zi_expected_prediction");
  h.lstm_hidden = get_count("lstm_hidden");
  h.validate();
  return h;
}

qe::FinetuneOptions RunConfig::finetune_options() const {
  qe::FinetuneOptions o;
  o.adam.lr = get_real("finetune_lr");
  o.grad_clip = get_real("grad_clip");
  o.freeze_backbone = get_bool("freeze_backbone");
  return o;
}

}  // namespace ziqe
