#include "ziqe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ziqe::metrics {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double word_error_rate(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
  if (reference.empty()) throw std::invalid_argument("word_error_rate: empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

double mae(std::span<const double> predictions, std::span<const double> labels,
           bool scale_percent) {
  require_same_length(predictions.size(), labels.size(), "mae");
  if (predictions.empty()) throw std::invalid_argument("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(predictions[i] - labels[i]);
  const double m = s / static_cast<double>(predictions.size());
  return scale_percent ? 100.0 * m : m;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_same_length(x.size(), y.size(), "pearson");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 items");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::domain_error("undefined correlation");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double ndcg(std::span<const double> predicted_wer, std::span<const double> true_wer,
            std::size_t k) {
  require_same_length(predicted_wer.size(), true_wer.size(), "ndcg");
  const std::size_t n = predicted_wer.size();
  if (k == 0) k = n;
  if (k > n) throw std::invalid_argument("ndcg: k exceeds the number of items");
  std::vector<double> gain(n);
  for (std::size_t i = 0; i < n; ++i) {
    gain[i] = std::exp2(1.0 - std::min(true_wer[i], 1.0)) - 1.0;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predicted_wer[a] < predicted_wer[b];
  });
  std::vector<double> ideal = gain;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const double discount = 1.0 / std::log2(static_cast<double>(r) + 2.0);
    dcg += gain[order[r]] * discount;
    idcg += ideal[r] * discount;
  }
  if (idcg == 0.0) return 1.0;
  return dcg / idcg;
}

double f1_at_threshold(std::span<const double> predicted_wer, std::span<const double> true_wer,
                       double tau) {
  require_same_length(predicted_wer.size(), true_wer.size(), "f1_at_threshold");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_wer.size(); ++i) {
    const bool p = predicted_wer[i] <= tau;
    const bool t = true_wer[i] <= tau;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

EvalReport evaluate(std::span<const double> predicted_wer, std::span<const double> true_wer) {
  EvalReport r;
  r.count = predicted_wer.size();
  r.mae = mae(predicted_wer, true_wer, true);
  r.pearson = pearson(predicted_wer, true_wer);
  r.ndcg = ndcg(predicted_wer, true_wer);
  r.f1 = f1_at_threshold(predicted_wer, true_wer);
  return r;
}

std::string to_text(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "# ndcg: rank by ascending predicted wer, relevance 1-min(wer,1), gain 2^r-1, "
        "discount 1/log2(rank+1), k=all\n"
     << "# f1: acceptable class, wer <= " << kAcceptableWer << " on predictions and labels\n"
     << "count " << r.count << "\n"
     << "mae " << r.mae << "\n"
     << "pearson " << r.pearson << "\n"
     << "ndcg " << r.ndcg << "\n"
     << "f1 " << r.f1 << "\n";
  return os.str();
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["mae"] = r.mae;
  j["pearson"] = r.pearson;
  j["ndcg"] = r.ndcg;
  j["f1"] = r.f1;
  return j.dump();
}

std::vector<LengthBucket> pearson_by_length(std::span<const double> predicted_wer,
                                            std::span<const double> true_wer,
                                            std::span<const std::size_t> lengths,
                                            std::size_t buckets) {
  require_same_length(predicted_wer.size(), true_wer.size(), "pearson_by_length");
  require_same_length(predicted_wer.size(), lengths.size(), "pearson_by_length");
  if (buckets == 0) throw std::invalid_argument("pearson_by_length: zero buckets");
  const std::size_t n = lengths.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<LengthBucket> out;
  std::size_t start = 0;
  for (std::size_t b = 1; b <= buckets && start < n; ++b) {
    std::size_t end = std::max(start + 1, b * n / buckets);
    if (b == buckets) end = n;
    while (end < n && lengths[order[end]] == lengths[order[end - 1]]) ++end;
    if (end <= start) continue;
    std::vector<double> p, t;
    for (std::size_t i = start; i < end; ++i) {
      p.push_back(predicted_wer[order[i]]);
      t.push_back(true_wer[order[i]]);
    }
    LengthBucket bucket{lengths[order[start]], lengths[order[end - 1]], end - start,
                        std::numeric_limits<double>::quiet_NaN()};
    if (p.size() >= 2) {
      try {
        bucket.pearson = pearson(p, t);
      } catch (const std::domain_error&) {
      }
    }
    out.push_back(bucket);
    start = end;
  }
  return out;
}

}  // namespace ziqe::metrics
