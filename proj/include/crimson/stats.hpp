/**
 * @file stats.hpp
 * @brief Rank correlations, Pearson r, percentile bootstrap, MAE and
 *        confusion matrices used by the benchmark protocols.
 *
 * Tau conventions, pinned:
 *   tau_a = (C - D) / (n(n-1)/2), ties counting as neither.
 *   tau_b = (C - D) / sqrt((n0 - n1)(n0 - n2)) with n0 = n(n-1)/2,
 *           n1 = sum over x-tie groups of t(t-1)/2, n2 likewise for y.
 * Pair counting runs in O(n log n) (merge-sort inversion count); tests hold
 * it against an independent O(n^2) enumeration.
 *
 * The bootstrap is a case-level percentile bootstrap driven by the
 * counter-based generator in rng.hpp: resample r, attempt a draws index k
 * from counter (a * resamples + r) * n + k, so results are independent of
 * evaluation order. Quantile q of R sorted statistics is element
 * clamp(ceil(q * R) - 1, 0, R - 1). See docs/rng.md.
 */
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace crimson::stats {

class StatsError : public std::runtime_error {
public:
    enum class Kind {
        DegenerateInput,
        ConstantMarginal,
        UnknownCategory,
        TooManyDegenerateResamples,
    };

    StatsError(Kind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Equal-length finite paired samples, |x| = |y| >= 2.
/// Construction throws StatsError on violation.
struct PairedSamples {
    std::vector<double> x;
    std::vector<double> y;

    PairedSamples(std::vector<double> x_in, std::vector<double> y_in);

    std::size_t size() const { return x.size(); }
};

enum class CorrelationStatistic { TauA, TauB, Pearson };

std::string_view to_string(CorrelationStatistic s);

double kendall_tau_a(const PairedSamples& s);
double kendall_tau_b(const PairedSamples& s);  ///< throws ConstantMarginal on a constant side
double pearson_r(const PairedSamples& s);      ///< two-pass; throws ConstantMarginal

struct ConfidenceInterval {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.0;
    int resamples = 0;
    std::uint64_t seed = 0;
};

inline constexpr int kDefaultBootstrapResamples = 10000;
inline constexpr double kDefaultBootstrapLevel = 0.95;
inline constexpr std::uint64_t kDefaultBootstrapSeed = 20240601;

/// Case-level percentile bootstrap; deterministic given (inputs, seed,
/// resamples, level). Degenerate resamples are redrawn (at most 10 attempts
/// per slot) so the resample count stays fixed.
ConfidenceInterval bootstrap_ci(const PairedSamples& s, CorrelationStatistic statistic,
                                double level = kDefaultBootstrapLevel,
                                int resamples = kDefaultBootstrapResamples,
                                std::uint64_t seed = kDefaultBootstrapSeed);

double mean_absolute_error(const std::vector<double>& pred,
                           const std::vector<double>& truth);

struct ConfusionMatrix {
    std::vector<std::string> categories;
    std::vector<std::vector<long long>> counts;      ///< counts[i][j]: a = cat i, b = cat j
    std::vector<std::vector<double>> row_percent;    ///< row-normalized, 0 for empty rows
    double agreement = 0.0;                          ///< trace / total
    long long total = 0;
};

ConfusionMatrix confusion_matrix(const std::vector<std::string>& labels_a,
                                 const std::vector<std::string>& labels_b,
                                 const std::vector<std::string>& categories);

}  // namespace crimson::stats
