#include "phonotrack/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/trf.hpp"

namespace phonotrack::stats {

namespace {

// Exact two-sided p from the distribution of W+ over all 2^n sign patterns.
// Ranks are doubled so mid-ranks become integers.
double exact_p(const std::vector<double>& ranks, double w_plus) {
  std::vector<long> r2(ranks.size());
  long total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    r2[i] = std::lround(2.0 * ranks[i]);
    total += r2[i];
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : r2) {
    for (long s = reach; s >= 0; --s)
      if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    reach += r;
  }
  const long w2 = std::lround(2.0 * w_plus);
  double below = 0.0, above = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (s <= w2) below += counts[static_cast<std::size_t>(s)];
    if (s >= w2) above += counts[static_cast<std::size_t>(s)];
  }
  const double all = std::ldexp(1.0, static_cast<int>(ranks.size()));
  return std::min(1.0, 2.0 * std::min(below, above) / all);
}

double normal_p(const std::vector<double>& abs_diff, const std::vector<double>& ranks, double w_plus) {
  const double n = static_cast<double>(ranks.size());
  const double mean = n * (n + 1.0) / 4.0;
  double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
  std::vector<double> sorted = abs_diff;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    var -= (t * t * t - t) / 48.0;
    i = j;
  }
  const double dev = std::max(0.0, std::abs(w_plus - mean) - 0.5);
  if (var <= 0.0) return 1.0;
  const double z = dev / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> nz;
  for (double d : differences) {
    if (!std::isfinite(d)) throw ValidationError("wilcoxon: non-finite difference");
    if (d != 0.0) nz.push_back(d);
  }
  if (nz.empty()) throw ValidationError("wilcoxon: all differences are zero");
  std::vector<double> abs_diff(nz.size());
  std::transform(nz.begin(), nz.end(), abs_diff.begin(), [](double d) { return std::abs(d); });
  const auto ranks = trf::midranks(abs_diff);

  WilcoxonResult res;
  res.n = nz.size();
  for (std::size_t i = 0; i < nz.size(); ++i)
    if (nz[i] > 0.0) res.w_plus += ranks[i];
  res.exact = res.n <= kExactLimit;
  res.p = res.exact ? exact_p(ranks, res.w_plus) : normal_p(abs_diff, ranks, res.w_plus);
  return res;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("wilcoxon: paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return wilcoxon_signed_rank(d);
}

std::vector<double> holm_bonferroni(std::span<const double> pvals) {
  const std::size_t m = pvals.size();
  for (double p : pvals)
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("holm: p-value outside [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  std::vector<double> adj(m);
  double running = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double v = std::min(1.0, static_cast<double>(m - i) * pvals[order[i]]);
    running = std::max(running, v);
    adj[order[i]] = running;
  }
  return adj;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ComparisonTable compare_schemes(const std::map<std::string, std::map<std::string, double>>& metrics,
                                const std::vector<std::pair<std::string, std::string>>& pairs) {
  ComparisonTable table;
  std::vector<double> raw;
  for (const auto& [a, b] : pairs) {
    auto ia = metrics.find(a), ib = metrics.find(b);
    if (ia == metrics.end()) throw ValidationError("no metrics for condition '" + a + "'");
    if (ib == metrics.end()) throw ValidationError("no metrics for condition '" + b + "'");
    std::vector<double> diff;
    for (const auto& [subject, va] : ia->second) {
      auto it = ib->second.find(subject);
      if (it == ib->second.end()) throw ValidationError("subject '" + subject + "' missing for condition '" + b + "'");
      diff.push_back(va - it->second);
    }
    if (ia->second.size() != ib->second.size())
      throw ValidationError("conditions '" + a + "' and '" + b + "' have different subject sets");

    ComparisonRow row;
    row.pair = a + "_vs_" + b;
    row.condition_a = a;
    row.condition_b = b;
    row.n = diff.size();
    row.median_diff = median(diff);
    const bool all_zero = std::all_of(diff.begin(), diff.end(), [](double d) { return d == 0.0; });
    row.raw_p = all_zero ? 1.0 : wilcoxon_signed_rank(diff).p;
    raw.push_back(row.raw_p);
    table.push_back(std::move(row));
  }
  const auto adj = holm_bonferroni(raw);
  for (std::size_t i = 0; i < table.size(); ++i) table[i].adjusted_p = adj[i];
  return table;
}

std::string comparison_csv(const ComparisonTable& table) {
  std::string out = "pair,raw_p,adjusted_p,median_diff,n\n";
  for (const auto& r : table)
    out += r.pair + ',' + io::fmt_double(r.raw_p) + ',' + io::fmt_double(r.adjusted_p) + ',' +
           io::fmt_double(r.median_diff) + ',' + std::to_string(r.n) + '\n';
  return out;
}

}  // namespace phonotrack::stats
