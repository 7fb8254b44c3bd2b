#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ziqe/data.hpp"
#include "ziqe/finetune.hpp"
#include "ziqe/masking.hpp"
#include "ziqe/qe_model.hpp"
#include "ziqe/speech_bert.hpp"

namespace ziqe {

/// Flat key=value run configuration. Every key has a default and a type;
/// unknown keys and unparsable values are rejected with
/// std::invalid_argument. Lines starting with '#' are comments.
class RunConfig {
 public:
  enum class Type { Integer, Real, Boolean, Text };

  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);
  void parse(const std::string& text, const std::string& source = "<config>");
  /// Sets one key, checking that the value parses as the key's type.
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// All keys in sorted order as "key=value" lines.
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;

  bert::ModelConfig model_config() const;
  bert::MaskingConfig masking_config() const;
  data::CorpusConfig corpus_config() const;
  qe::HeadSpec head_spec() const;
  qe::FinetuneOptions finetune_options() const;

 private:
  struct Entry {
    Type type;
    std::string value;
  };
  const Entry& entry(const std::string& key) const;
  std::map<std::string, Entry> entries_;
};

}  // namespace ziqe
