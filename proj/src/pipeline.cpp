#include "ziqe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "ziqe/gradcheck_suite.hpp"
#include "ziqe/nn/checkpoint.hpp"

namespace ziqe::pipeline {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> shuffled(std::span<const std::size_t> idx, std::uint64_t seed) {
  std::vector<std::size_t> v(idx.begin(), idx.end());
  SplitMix64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void prepare_out(const RunConfig& config, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  config.write(out / "config.txt");
}

double dev_pearson(const QeModelF& model, const std::vector<data::QESample>& samples,
                   std::span<const std::size_t> dev,
                   const std::vector<nn::Tensor<float>>* cached_states) {
  std::vector<double> pred, truth;
  for (std::size_t k = 0; k < dev.size(); ++k) {
    const auto& s = samples[dev[k]];
    const auto p = cached_states
                       ? model.predict_states((*cached_states)[k])
                       : model.predict(s.utterance.features.values, model_input(s.hypothesis));
    pred.push_back(p.expected_wer);
    truth.push_back(s.wer_label);
  }
  try {
    return metrics::pearson(pred, truth);
  } catch (const std::exception&) {
    return kNaN;
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

}  // namespace

Splits split_indices(std::size_t n, double dev_fraction, double test_fraction,
                     std::uint64_t seed) {
  if (dev_fraction < 0 || test_fraction < 0 || dev_fraction + test_fraction >= 1.0) {
    throw std::invalid_argument("split fractions must be >= 0 and sum below 1");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  all = shuffled(all, derive_seed(seed, 0x5EED));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  const auto n_dev = static_cast<std::size_t>(std::llround(dev_fraction * n));
  Splits s;
  s.test.assign(all.begin(), all.begin() + n_test);
  s.dev.assign(all.begin() + n_test, all.begin() + n_test + n_dev);
  s.train.assign(all.begin() + n_test + n_dev, all.end());
  for (auto* v : {&s.train, &s.dev, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

Splits split_indices(std::size_t n, const RunConfig& config) {
  return split_indices(n, config.get_real("dev_fraction"), config.get_real("test_fraction"),
                       static_cast<std::uint64_t>(config.get_int("seed")));
}

std::vector<std::size_t> select_split(const Splits& splits, const std::string& name,
                                      std::size_t n) {
  if (name == "train") return splits.train;
  if (name == "dev") return splits.dev;
  if (name == "test") return splits.test;
  if (name == "all") {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
  }
  throw std::invalid_argument("unknown split '" + name + "' (train, dev, test, all)");
}

std::vector<TokenId> model_input(std::span<const TokenId> hypothesis,
                                 const bert::SpecialTokens& specials) {
  if (hypothesis.empty()) return {specials.eos_id};
  return {hypothesis.begin(), hypothesis.end()};
}

TokenId majority_token(const std::vector<data::QESample>& samples,
                       std::span<const std::size_t> indices) {
  std::map<TokenId, std::size_t> counts;
  for (std::size_t i : indices) {
    for (TokenId t : samples[i].utterance.tokens) ++counts[t];
  }
  TokenId best = 0;
  std::size_t best_count = 0;
  for (const auto& [t, c] : counts) {
    if (c > best_count) best = t, best_count = c;
  }
  return best;
}

MaskedAccuracy masked_accuracy(const Backbone& model, const std::vector<data::QESample>& samples,
                               std::span<const std::size_t> indices, TokenId majority,
                               const bert::MaskingConfig& masking, std::uint64_t seed) {
  MaskedAccuracy acc;
  for (std::size_t i : indices) {
    const auto& s = samples[i];
    const auto m = bert::apply_masking(s.utterance.tokens, derive_seed(seed, i),
                                       model.config().vocab_size, masking,
                                       model.config().specials);
    acc.correct += model.masked_correct(s.utterance.features.values, m);
    acc.targets += m.target_positions.size();
    for (TokenId t : m.target_labels) acc.majority_correct += t == majority;
  }
  return acc;
}

PretrainReport pretrain(Backbone& model, const std::vector<data::QESample>& samples,
                        const Splits& splits, const PretrainOptions& options, std::ostream* log) {
  if (splits.train.empty()) throw std::invalid_argument("pretrain: empty training split");
  if (options.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be > 0");
  std::vector<std::size_t> heldout = splits.dev;
  heldout.insert(heldout.end(), splits.test.begin(), splits.test.end());
  const TokenId majority = majority_token(samples, splits.train);
  const std::uint64_t eval_seed = derive_seed(options.seed, 0xE7A1);
  nn::Adam<float> opt(options.adam);
  auto& params = model.params();
  PretrainReport report;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(options.seed, epoch);
    const auto order = shuffled(splits.train, epoch_seed);
    PretrainEpoch e;
    e.epoch = epoch + 1;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = samples[order[k]];
        const auto m = bert::apply_masking(s.utterance.tokens, derive_seed(epoch_seed, order[k]),
                                           model.config().vocab_size, options.masking,
                                           model.config().specials);
        const auto l = model.joint_loss(s.utterance.features.values, s.utterance.tokens, m, scale);
        if (!std::isfinite(l.total)) throw std::domain_error("pretrain: non-finite loss");
        e.masked_lm += l.masked_lm;
        e.asr += l.asr;
        e.total += l.total;
      }
      nn::clip_grad_norm(params, options.grad_clip);
      opt.step(params);
    }
    const double n = static_cast<double>(order.size());
    e.masked_lm /= n;
    e.asr /= n;
    e.total /= n;
    report.heldout = masked_accuracy(model, samples, heldout, majority, options.masking, eval_seed);
    e.heldout_accuracy = report.heldout.accuracy();
    report.epochs.push_back(e);
    if (log) {
      *log << "pretrain epoch " << e.epoch << " mlm " << fmt(e.masked_lm) << " asr "
           << fmt(e.asr) << " total " << fmt(e.total) << " heldout_acc "
           << fmt(e.heldout_accuracy) << " majority " << fmt(report.heldout.majority()) << "\n";
    }
  }
  if (options.epochs == 0) {
    report.heldout = masked_accuracy(model, samples, heldout, majority, options.masking, eval_seed);
  }
  return report;
}

dist::PhiFit estimate_phi(const std::vector<data::QESample>& samples,
                          std::span<const std::size_t> indices) {
  std::vector<double> ys;
  for (std::size_t i : indices) {
    if (samples[i].wer_label > 0.0) ys.push_back(qe::cap_wer(samples[i].wer_label));
  }
  return dist::fit_beta_mle(ys);
}

FinetuneResult finetune(const Backbone& backbone, const std::vector<data::QESample>& samples,
                        const Splits& splits, double phi, const FinetuneRunOptions& options,
                        std::ostream* log) {
  if (splits.train.empty()) throw std::invalid_argument("finetune: empty training split");
  if (options.batch_size == 0) throw std::invalid_argument("finetune: batch_size must be > 0");
  FinetuneResult result{QeModelF(backbone, options.head, phi, derive_seed(options.seed, 7)), {},
                        0, kNaN};
  QeModelF model = result.model;
  qe::QeTrainer<float> trainer(model, options.optim);
  const bool frozen = options.optim.freeze_backbone;

  // A frozen backbone makes the token features constant; compute them once.
  std::vector<nn::Tensor<float>> train_states, dev_states;
  std::vector<std::vector<TokenId>> inputs(samples.size());
  for (std::size_t i : splits.train) inputs[i] = model_input(samples[i].hypothesis);
  if (frozen) {
    std::vector<nn::Tensor<float>> all(samples.size());
    for (std::size_t i : splits.train) {
      all[i] = backbone.extract_features(samples[i].utterance.features.values, inputs[i]);
    }
    train_states = std::move(all);
    for (std::size_t i : splits.dev) {
      dev_states.push_back(backbone.extract_features(samples[i].utterance.features.values,
                                                     model_input(samples[i].hypothesis)));
    }
  }

  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled(splits.train, derive_seed(options.seed, 100 + epoch));
    FinetuneEpoch e;
    e.epoch = epoch + 1;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      double loss = 0.0;
      if (frozen) {
        std::vector<const nn::Tensor<float>*> states;
        std::vector<double> wers;
        for (std::size_t k = start; k < end; ++k) {
          states.push_back(&train_states[order[k]]);
          wers.push_back(samples[order[k]].wer_label);
        }
        loss = trainer.step_states(states, wers);
      } else {
        std::vector<qe::QeExample<float>> batch;
        for (std::size_t k = start; k < end; ++k) {
          const auto& s = samples[order[k]];
          batch.push_back({&s.utterance.features.values, inputs[order[k]], s.wer_label});
        }
        loss = trainer.step(batch);
      }
      e.train_loss += loss * static_cast<double>(end - start);
    }
    e.train_loss /= static_cast<double>(order.size());
    e.dev_pearson =
        splits.dev.empty() ? kNaN
                           : dev_pearson(model, samples, splits.dev, frozen ? &dev_states : nullptr);
    result.epochs.push_back(e);
    if (log) {
      *log << "finetune " << qe::to_string(options.head.kind) << " epoch " << e.epoch
           << " loss " << fmt(e.train_loss) << " dev_pearson " << fmt(e.dev_pearson) << "\n";
    }
    const bool improved = !std::isnan(e.dev_pearson) &&
                          (std::isnan(result.best_dev_pearson) ||
                           e.dev_pearson > result.best_dev_pearson);
    if (improved || splits.dev.empty() || result.best_epoch == 0) {
      if (improved) result.best_dev_pearson = e.dev_pearson;
      result.best_epoch = e.epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  return result;
}

std::vector<qe::ZeroInflatedPrediction> predict(const QeModelF& model,
                                                const std::vector<data::QESample>& samples,
                                                std::span<const std::size_t> indices) {
  std::vector<qe::ZeroInflatedPrediction> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    out.push_back(
        model.predict(samples[i].utterance.features.values, model_input(samples[i].hypothesis)));
  }
  return out;
}

metrics::EvalReport evaluate_model(const QeModelF& model,
                                   const std::vector<data::QESample>& samples,
                                   std::span<const std::size_t> indices) {
  std::vector<double> pred, truth;
  for (const auto& p : predict(model, samples, indices)) pred.push_back(p.expected_wer);
  for (std::size_t i : indices) truth.push_back(samples[i].wer_label);
  return metrics::evaluate(pred, truth);
}

FinetuneRunOptions finetune_options(const RunConfig& config) {
  FinetuneRunOptions o;
  o.head = config.head_spec();
  o.optim = config.finetune_options();
  o.epochs = config.get_count("finetune_epochs");
  o.batch_size = config.get_count("batch_size");
  o.patience = config.get_count("patience");
  o.seed = static_cast<std::uint64_t>(config.get_int("seed"));
  return o;
}

PretrainOptions pretrain_options(const RunConfig& config) {
  PretrainOptions o;
  o.epochs = config.get_count("pretrain_epochs");
  o.batch_size = config.get_count("batch_size");
  o.adam.lr = config.get_real("pretrain_lr");
  o.grad_clip = config.get_real("grad_clip");
  o.masking = config.masking_config();
  o.seed = static_cast<std::uint64_t>(config.get_int("seed"));
  return o;
}

void cmd_synth(const RunConfig& config, const std::filesystem::path& out, std::ostream& log) {
  prepare_out(config, out);
  const auto corpus = data::synth_corpus(config.corpus_config());
  data::write_dataset(out / "dataset.tsv", corpus);
  std::size_t zeros = 0;
  double mean = 0.0, max = 0.0;
  for (const auto& s : corpus) {
    zeros += s.wer_label == 0.0;
    mean += s.wer_label;
    max = std::max(max, s.wer_label);
  }
  log << "wrote " << corpus.size() << " samples to " << (out / "dataset.tsv").string() << "\n"
      << "zero_wer_fraction " << fmt(corpus.empty() ? 0.0 : double(zeros) / corpus.size())
      << " mean_wer " << fmt(corpus.empty() ? 0.0 : mean / corpus.size()) << " max_wer "
      << fmt(max) << "\n";
}

void cmd_pretrain(const RunConfig& config, const std::filesystem::path& dataset,
                  const std::filesystem::path& out, std::ostream& log) {
  prepare_out(config, out);
  const auto samples = data::read_dataset(dataset);
  const auto splits = split_indices(samples.size(), config);
  Backbone model(config.model_config(),
                 derive_seed(static_cast<std::uint64_t>(config.get_int("seed")), 11));
  const auto report = pretrain(model, samples, splits, pretrain_options(config), &log);
  nn::write_records(out / "pretrain.ckpt", bert::to_records(model));
  auto os = open_out(out / "pretrain_loss.tsv");
  os << "epoch\tmasked_lm\tasr\ttotal\theldout_accuracy\n";
  for (const auto& e : report.epochs) {
    os << e.epoch << '\t' << fmt(e.masked_lm) << '\t' << fmt(e.asr) << '\t' << fmt(e.total)
       << '\t' << fmt(e.heldout_accuracy) << '\n';
  }
  log << "heldout masked accuracy " << fmt(report.heldout.accuracy()) << " majority baseline "
      << fmt(report.heldout.majority()) << "\n";
}

double cmd_fitphi(const RunConfig& config, const std::filesystem::path& dataset,
                  const std::filesystem::path& out, std::ostream& log) {
  prepare_out(config, out);
  const auto samples = data::read_dataset(dataset);
  const auto splits = split_indices(samples.size(), config);
  const auto fit = estimate_phi(samples, splits.train);
  auto os = open_out(out / "phi.txt");
  os << "phi " << fmt(fit.phi) << "\na " << fmt(fit.shape.a) << "\nb " << fmt(fit.shape.b)
     << "\niterations " << fit.iterations << "\n";
  log << "phi " << fmt(fit.phi) << " (a " << fmt(fit.shape.a) << ", b " << fmt(fit.shape.b)
      << ")\n";
  return fit.phi;
}

void cmd_finetune(const RunConfig& config, const std::filesystem::path& dataset,
                  const std::filesystem::path& checkpoint, const std::filesystem::path& out,
                  std::ostream& log) {
  prepare_out(config, out);
  const auto samples = data::read_dataset(dataset);
  const auto splits = split_indices(samples.size(), config);
  const auto backbone = bert::from_records<float>(nn::read_records(checkpoint));
  double phi = config.get_real("phi");
  const std::string mode = config.get("phi_mode");
  if (mode == "mle") {
    phi = estimate_phi(samples, splits.train).phi;
  } else if (mode != "fixed") {
    throw std::invalid_argument("phi_mode must be 'mle' or 'fixed'");
  }
  log << "phi " << fmt(phi) << " (" << mode << ")\n";
  const auto result = finetune(backbone, samples, splits, phi, finetune_options(config), &log);
  nn::write_records(out / "qe.ckpt", qe::to_records(result.model));
  auto os = open_out(out / "finetune_log.tsv");
  os << "epoch\ttrain_loss\tdev_pearson\n";
  for (const auto& e : result.epochs) {
    os << e.epoch << '\t' << fmt(e.train_loss) << '\t' << fmt(e.dev_pearson) << '\n';
  }
  log << "best epoch " << result.best_epoch << " dev pearson " << fmt(result.best_dev_pearson)
      << "\n";
}

void cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint,
                 const std::filesystem::path& dataset, const std::filesystem::path& out,
                 const std::string& split, std::ostream& log) {
  const auto model = qe::qe_from_records<float>(nn::read_records(checkpoint));
  const auto samples = data::read_dataset(dataset);
  const auto idx = select_split(split_indices(samples.size(), config), split, samples.size());
  const auto preds = predict(model, samples, idx);
  auto os = open_out(out);
  os << "#id\tlambda_zero\tmu\texpected_wer\n";
  for (std::size_t k = 0; k < idx.size(); ++k) {
    os << samples[idx[k]].utterance.id << '\t' << fmt(preds[k].lambda_zero) << '\t'
       << fmt(preds[k].mu) << '\t' << fmt(preds[k].expected_wer) << '\n';
  }
  log << "wrote " << idx.size() << " predictions to " << out.string() << "\n";
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open predictions " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    PredictionRecord r;
    if (!(ls >> r.id >> r.lambda_zero >> r.mu >> r.expected_wer)) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": malformed prediction", n);
    }
    out.push_back(r);
  }
  return out;
}

metrics::EvalReport cmd_evaluate(const RunConfig& config,
                                 const std::filesystem::path& predictions,
                                 const std::filesystem::path& dataset,
                                 const std::filesystem::path& out, const std::string& split,
                                 std::ostream& log) {
  prepare_out(config, out);
  const auto samples = data::read_dataset(dataset);
  std::map<std::string, double> by_id;
  for (const auto& r : read_predictions(predictions)) by_id[r.id] = r.expected_wer;
  const auto idx = select_split(split_indices(samples.size(), config), split, samples.size());
  std::vector<double> pred, truth;
  std::vector<std::size_t> lengths;
  for (std::size_t i : idx) {
    const auto it = by_id.find(samples[i].utterance.id);
    if (it == by_id.end()) {
      throw std::runtime_error("no prediction for sample " + samples[i].utterance.id);
    }
    pred.push_back(it->second);
    truth.push_back(samples[i].wer_label);
    lengths.push_back(samples[i].utterance.tokens.size());
  }
  const auto report = metrics::evaluate(pred, truth);
  {
    auto os = open_out(out / "report.txt");
    os << metrics::to_text(report);
  }
  {
    auto os = open_out(out / "report.json");
    os << metrics::to_json(report) << "\n";
  }
  {
    auto os = open_out(out / "pearson_by_length.tsv");
    os << "min_length\tmax_length\tcount\tpearson\n";
    for (const auto& b : metrics::pearson_by_length(pred, truth, lengths)) {
      os << b.min_length << '\t' << b.max_length << '\t' << b.count << '\t' << fmt(b.pearson)
         << '\n';
    }
  }
  log << metrics::to_text(report);
  return report;
}

bool cmd_gradcheck(const std::filesystem::path& out, std::ostream& log) {
  const auto rows = run_gradcheck_suite();
  const std::string table = format_gradcheck_table(rows);
  log << table;
  if (!out.empty()) {
    auto os = open_out(out / "gradcheck.txt");
    os << table;
  }
  return std::all_of(rows.begin(), rows.end(), [](const GradCheckRow& r) { return r.pass; });
}

void cmd_dump_attention(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& dataset, const std::string& sample_id,
                        const std::filesystem::path& out, std::ostream& log) {
  const auto model = bert::from_records<float>(nn::read_records(checkpoint));
  const auto samples = data::read_dataset(dataset);
  const auto it = std::find_if(samples.begin(), samples.end(),
                               [&](const data::QESample& s) { return s.utterance.id == sample_id; });
  if (it == samples.end()) throw std::runtime_error("no sample with id " + sample_id);
  const auto input = model_input(it->hypothesis);
  const auto maps = model.dump_attention(it->utterance.features.values, input);
  auto os = open_out(out);
  os << "# sample " << sample_id << " hypothesis " << data::format_tokens(input) << "\n";
  for (std::size_t l = 0; l < maps.size(); ++l) {
    os << "# layer " << l << " rows=tokens " << maps[l].rows() << " cols=frames "
       << maps[l].cols() << "\n";
    for (std::size_t r = 0; r < maps[l].rows(); ++r) {
      for (std::size_t c = 0; c < maps[l].cols(); ++c) {
        os << (c ? "\t" : "") << fmt(maps[l](r, c));
      }
      os << "\n";
    }
  }
  log << "wrote " << maps.size() << " attention maps to " << out.string() << "\n";
}

}  // namespace ziqe::pipeline
