#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace phonotrack::stats {

// Sample sizes (after dropping zero differences) up to this use the exact
// null distribution; larger ones the tie-corrected normal approximation.
inline constexpr std::size_t kExactLimit = 25;

struct WilcoxonResult {
  double p = 1.0;          // two-sided
  double w_plus = 0.0;     // sum of positive ranks
  std::size_t n = 0;       // nonzero differences
  bool exact = true;
};

// Signed-rank test on paired differences a[i] - b[i]. Zeros are dropped and
// tied |differences| receive mid-ranks. Throws ValidationError when every
// difference is zero or the inputs differ in length.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);

// Holm step-down adjustment, returned in the input order.
std::vector<double> holm_bonferroni(std::span<const double> pvals);

double median(std::vector<double> v);

struct ComparisonRow {
  std::string pair;  // "a_vs_b"
  std::string condition_a;
  std::string condition_b;
  double raw_p = 1.0;
  double adjusted_p = 1.0;
  double median_diff = 0.0;
  std::size_t n = 0;
};

using ComparisonTable = std::vector<ComparisonRow>;

// metrics[scheme][subject] -> scalar. One row per requested pair with the
// paired difference a - b; identical columns report p = 1.
ComparisonTable compare_schemes(const std::map<std::string, std::map<std::string, double>>& metrics,
                                const std::vector<std::pair<std::string, std::string>>& pairs);

std::string comparison_csv(const ComparisonTable& table);

}  // namespace phonotrack::stats
