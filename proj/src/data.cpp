#include "ziqe/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ziqe/masking.hpp"
#include "ziqe/metrics.hpp"
#include "ziqe/nn/checkpoint.hpp"

namespace ziqe::data {

namespace {

constexpr TokenId kFirstRegular = bert::SpecialTokens::kFirstRegular;

void check_rate(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument(std::string("CorruptionConfig: ") + name + " must be in [0, 1]");
  }
}

TokenId random_regular(SplitMix64& rng, std::size_t vocab_size) {
  return kFirstRegular + static_cast<TokenId>(rng.below(vocab_size - kFirstRegular));
}

}  // namespace

void CorruptionConfig::validate() const {
  check_rate(p_clean, "p_clean");
  check_rate(p_sub, "p_sub");
  check_rate(p_del, "p_del");
  check_rate(p_ins, "p_ins");
  if (p_sub + p_del > 1.0) throw std::invalid_argument("CorruptionConfig: p_sub + p_del > 1");
  if (p_ins >= 1.0) throw std::invalid_argument("CorruptionConfig: p_ins must be < 1");
}

void SynthConfig::validate() const {
  if (vocab_size < static_cast<std::size_t>(kFirstRegular) + 2) {
    throw std::invalid_argument("SynthConfig: vocab_size must leave at least 2 regular tokens");
  }
  if (min_len == 0 || min_len > max_len) throw std::invalid_argument("SynthConfig: bad length range");
  if (raw_dim == 0 || frames_per_token == 0) throw std::invalid_argument("SynthConfig: zero dims");
  if (!(noise_scale >= 0.0)) throw std::invalid_argument("SynthConfig: negative noise");
}

FeatureMatrix stack_frames(const FeatureMatrix& raw, std::size_t window, std::size_t stride) {
  if (window < 1) throw std::invalid_argument("stack_frames: window must be >= 1");
  if (raw.values.rank() != 2 || raw.frames() == 0) {
    throw std::invalid_argument("stack_frames: empty input");
  }
  if (stride == 0) stride = window;
  const std::size_t n = raw.frames(), d = raw.dims();
  const std::size_t out_frames = n <= window ? 1 : (n - window + stride - 1) / stride + 1;
  FeatureMatrix out;
  out.raw_dim = raw.raw_dim ? raw.raw_dim : d;
  out.stack_window = raw.stack_window * window;
  out.values = nn::Tensor<float>::matrix(out_frames, d * window);
  for (std::size_t f = 0; f < out_frames; ++f) {
    for (std::size_t w = 0; w < window; ++w) {
      const std::size_t src = std::min(f * stride + w, n - 1);
      std::copy_n(raw.values.data() + src * d, d, out.values.data() + f * d * window + w * d);
    }
  }
  return out;
}

TokenTemplates::TokenTemplates(std::size_t vocab_size, std::size_t raw_dim, std::uint64_t seed)
    : vocab_(vocab_size), dim_(raw_dim), table_(vocab_size * raw_dim) {
  SplitMix64 rng(seed);
  for (float& v : table_) v = static_cast<float>(rng.gaussian());
}

std::span<const float> TokenTemplates::row(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_) {
    throw std::out_of_range("TokenTemplates: id " + std::to_string(id) + " outside vocabulary");
  }
  return {table_.data() + static_cast<std::size_t>(id) * dim_, dim_};
}

Utterance synth_utterance(const TokenTemplates& templates, const SynthConfig& config,
                          std::uint64_t seed, std::string id) {
  config.validate();
  if (templates.vocab_size() < config.vocab_size || templates.raw_dim() != config.raw_dim) {
    throw std::invalid_argument("synth_utterance: templates do not match the config");
  }
  SplitMix64 rng(seed);
  Utterance u;
  u.id = std::move(id);
  const std::size_t len = config.min_len + rng.below(config.max_len - config.min_len + 1);
  for (std::size_t i = 0; i < len; ++i) u.tokens.push_back(random_regular(rng, config.vocab_size));
  const std::size_t d = config.raw_dim;
  u.features.raw_dim = d;
  u.features.values = nn::Tensor<float>::matrix(len * config.frames_per_token, d);
  std::size_t frame = 0;
  for (TokenId t : u.tokens) {
    const auto tpl = templates.row(t);
    for (std::size_t k = 0; k < config.frames_per_token; ++k, ++frame) {
      float* row = u.features.values.data() + frame * d;
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = tpl[j] + static_cast<float>(config.noise_scale * rng.gaussian());
      }
    }
  }
  return u;
}

Corruption corrupt_hypothesis(std::span<const TokenId> reference, const CorruptionConfig& config,
                              SplitMix64& rng, std::size_t vocab_size) {
  if (reference.empty()) throw std::invalid_argument("corrupt_hypothesis: empty reference");
  config.validate();
  if (vocab_size < static_cast<std::size_t>(kFirstRegular) + 2) {
    throw std::invalid_argument("corrupt_hypothesis: vocabulary too small");
  }
  Corruption out;
  if (rng.bernoulli(config.p_clean)) {
    out.hypothesis.assign(reference.begin(), reference.end());
    return out;
  }
  auto insertions = [&] {
    while (rng.bernoulli(config.p_ins)) out.hypothesis.push_back(random_regular(rng, vocab_size));
  };
  for (TokenId t : reference) {
    insertions();
    const double u = rng.uniform();
    if (u < config.p_sub) {
      // Shift by 1..V_regular-1 so the substitute always differs.
      const auto regular = static_cast<TokenId>(vocab_size) - kFirstRegular;
      const auto shift = 1 + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(regular - 1)));
      const TokenId base = t >= kFirstRegular ? t - kFirstRegular : 0;
      out.hypothesis.push_back(kFirstRegular + (base + shift) % regular);
    } else if (u >= config.p_sub + config.p_del) {
      out.hypothesis.push_back(t);
    }
  }
  insertions();
  out.wer = metrics::word_error_rate(reference, out.hypothesis);
  return out;
}

Corruption corrupt_hypothesis(std::span<const TokenId> reference, const CorruptionConfig& config,
                              std::size_t vocab_size) {
  SplitMix64 rng(config.seed);
  return corrupt_hypothesis(reference, config, rng, vocab_size);
}

std::vector<QESample> synth_corpus(const CorpusConfig& config) {
  config.synth.validate();
  config.corruption.validate();
  const TokenTemplates templates(config.synth.vocab_size, config.synth.raw_dim,
                                 derive_seed(config.seed, std::uint64_t{1} << 40));
  std::vector<QESample> out;
  out.reserve(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%06zu", i);
    QESample s;
    s.utterance = synth_utterance(templates, config.synth, derive_seed(config.seed, i), id);
    s.utterance.features =
        stack_frames(s.utterance.features, config.stack_window, config.stack_stride);
    SplitMix64 rng(derive_seed(config.corruption.seed, i));
    auto c = corrupt_hypothesis(s.utterance.tokens, config.corruption, rng, config.synth.vocab_size);
    s.hypothesis = std::move(c.hypothesis);
    s.wer_label = c.wer;
    out.push_back(std::move(s));
  }
  return out;
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  nn::write_records(path, {{"features", features.values},
                           nn::scalar_record("meta/raw_dim", static_cast<double>(features.raw_dim)),
                           nn::scalar_record("meta/stack_window",
                                             static_cast<double>(features.stack_window))});
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  const auto records = nn::read_records(path);
  FeatureMatrix f;
  bool found = false;
  for (const auto& r : records) {
    if (r.name == "features") {
      if (r.tensor.rank() != 2) throw FormatError("features record must be rank 2", 0);
      f.values = r.tensor;
      found = true;
    }
  }
  if (!found) throw FormatError(path.string() + ": no features record", 0);
  f.raw_dim = static_cast<std::size_t>(nn::find_scalar(records, "meta/raw_dim"));
  f.stack_window = static_cast<std::size_t>(nn::find_scalar(records, "meta/stack_window"));
  return f;
}

std::string format_tokens(std::span<const TokenId> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(tokens[i]);
  }
  return s;
}

std::vector<TokenId> parse_tokens(const std::string& s) {
  std::vector<TokenId> out;
  std::istringstream is(s);
  std::string word;
  while (is >> word) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size() || v < 0) throw std::invalid_argument("bad token id '" + word + "'");
    out.push_back(static_cast<TokenId>(v));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const QESample> samples) {
  const auto dir = path.parent_path();
  std::filesystem::create_directories(dir / "features");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << kDatasetHeader << "\n";
  for (const auto& s : samples) {
    const std::string feat = "features/" + s.utterance.id + ".feat";
    write_features(dir / feat, s.utterance.features);
    char wer[64];
    std::snprintf(wer, sizeof wer, "%.6f", s.wer_label);
    os << s.utterance.id << '\t' << format_tokens(s.utterance.tokens) << '\t'
       << format_tokens(s.hypothesis) << '\t' << wer << '\t' << feat << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<QESample> read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || line != kDatasetHeader) {
    throw FormatError(path.string() + ":1: missing header '" + kDatasetHeader + "'", 1);
  }
  std::vector<QESample> out;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return FormatError(path.string() + ":" + std::to_string(line_no) + ": " + why, line_no);
    };
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) throw fail("expected 5 tab-separated fields");
    QESample s;
    s.utterance.id = fields[0];
    try {
      s.utterance.tokens = parse_tokens(fields[1]);
      s.hypothesis = parse_tokens(fields[2]);
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
    if (s.utterance.tokens.empty()) throw fail("empty reference");
    double stored = 0.0;
    try {
      std::size_t used = 0;
      stored = std::stod(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw fail("bad wer '" + fields[3] + "'");
    }
    s.wer_label = metrics::word_error_rate(s.utterance.tokens, s.hypothesis);
    if (std::abs(s.wer_label - stored) > 5.1e-7) {
      throw fail("stored wer " + fields[3] + " disagrees with recomputed " +
                 std::to_string(s.wer_label));
    }
    s.utterance.features = read_features(path.parent_path() / fields[4]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ziqe::data
