#include "crimson/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "crimson/rng.hpp"

namespace crimson::stats {

PairedSamples::PairedSamples(std::vector<double> x_in, std::vector<double> y_in)
    : x(std::move(x_in)), y(std::move(y_in)) {
    if (x.size() != y.size())
        throw StatsError(StatsError::Kind::DegenerateInput,
                         "paired samples must have equal length");
    if (x.size() < 2)
        throw StatsError(StatsError::Kind::DegenerateInput,
                         "paired samples need at least 2 observations");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
            throw StatsError(StatsError::Kind::DegenerateInput,
                             "paired samples must be finite");
}

std::string_view to_string(CorrelationStatistic s) {
    switch (s) {
        case CorrelationStatistic::TauA: return "tau_a";
        case CorrelationStatistic::TauB: return "tau_b";
        case CorrelationStatistic::Pearson: return "pearson";
    }
    return "unknown";
}

namespace {

// Merge sort counting strict inversions; `work` is scratch of equal size.
long long count_inversions(std::vector<double>& v, std::vector<double>& work,
                           std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    std::size_t mid = lo + (hi - lo) / 2;
    long long inv = count_inversions(v, work, lo, mid) + count_inversions(v, work, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            inv += static_cast<long long>(mid - i);
            work[k++] = v[j++];
        } else {
            work[k++] = v[i++];
        }
    }
    while (i < mid) work[k++] = v[i++];
    while (j < hi) work[k++] = v[j++];
    std::copy(work.begin() + static_cast<std::ptrdiff_t>(lo),
              work.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

long long tie_pair_count(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    long long pairs = 0;
    std::size_t i = 0;
    while (i < v.size()) {
        std::size_t j = i;
        while (j < v.size() && v[j] == v[i]) ++j;
        long long t = static_cast<long long>(j - i);
        pairs += t * (t - 1) / 2;
        i = j;
    }
    return pairs;
}

struct TauTerms {
    long long n0;  // all pairs
    long long n1;  // pairs tied in x
    long long n2;  // pairs tied in y
    long long concordant;
    long long discordant;
};

// Concordant/discordant counts via sort by (x, y asc) + inversion count on y.
// Within x-tie groups y is ascending, so no within-group pair registers as an
// inversion, and y-ties never count (strict comparison); inversions are
// exactly the discordant pairs.
TauTerms tau_terms(const PairedSamples& s) {
    const std::size_t n = s.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (s.x[a] != s.x[b]) return s.x[a] < s.x[b];
        return s.y[a] < s.y[b];
    });

    std::vector<double> y_sorted(n);
    for (std::size_t i = 0; i < n; ++i) y_sorted[i] = s.y[order[i]];
    std::vector<double> work(n);
    long long discordant = count_inversions(y_sorted, work, 0, n);

    TauTerms t{};
    t.n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;
    t.n1 = tie_pair_count(s.x);
    t.n2 = tie_pair_count(s.y);

    // pairs tied in both x and y
    std::vector<std::pair<double, double>> xy(n);
    for (std::size_t i = 0; i < n; ++i) xy[i] = {s.x[i], s.y[i]};
    std::sort(xy.begin(), xy.end());
    long long n3 = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && xy[j] == xy[i]) ++j;
        long long g = static_cast<long long>(j - i);
        n3 += g * (g - 1) / 2;
        i = j;
    }

    t.discordant = discordant;
    t.concordant = t.n0 - t.n1 - t.n2 + n3 - discordant;
    return t;
}

}  // namespace

double kendall_tau_a(const PairedSamples& s) {
    TauTerms t = tau_terms(s);
    return static_cast<double>(t.concordant - t.discordant) / static_cast<double>(t.n0);
}

double kendall_tau_b(const PairedSamples& s) {
    TauTerms t = tau_terms(s);
    if (t.n1 == t.n0 || t.n2 == t.n0)
        throw StatsError(StatsError::Kind::ConstantMarginal,
                         "tau_b undefined: a marginal is constant");
    double denom = std::sqrt(static_cast<double>(t.n0 - t.n1) *
                             static_cast<double>(t.n0 - t.n2));
    return static_cast<double>(t.concordant - t.discordant) / denom;
}

double pearson_r(const PairedSamples& s) {
    const std::size_t n = s.size();
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_x += s.x[i];
        mean_y += s.y[i];
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double dx = s.x[i] - mean_x;
        double dy = s.y[i] - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        throw StatsError(StatsError::Kind::ConstantMarginal,
                         "pearson_r undefined: a marginal is constant");
    double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

namespace {

double evaluate_statistic(CorrelationStatistic which, const PairedSamples& s) {
    switch (which) {
        case CorrelationStatistic::TauA: return kendall_tau_a(s);
        case CorrelationStatistic::TauB: return kendall_tau_b(s);
        case CorrelationStatistic::Pearson: return pearson_r(s);
    }
    throw StatsError(StatsError::Kind::DegenerateInput, "unknown statistic");
}

// Quantile q of an ascending-sorted sample: element ceil(q*R)-1, clamped.
double sorted_quantile(const std::vector<double>& sorted, double q) {
    auto r = static_cast<double>(sorted.size());
    auto k = static_cast<long long>(std::ceil(q * r)) - 1;
    k = std::max<long long>(0, std::min<long long>(k, static_cast<long long>(sorted.size()) - 1));
    return sorted[static_cast<std::size_t>(k)];
}

}  // namespace

ConfidenceInterval bootstrap_ci(const PairedSamples& s, CorrelationStatistic statistic,
                                double level, int resamples, std::uint64_t seed) {
    if (resamples < 100)
        throw StatsError(StatsError::Kind::DegenerateInput,
                         "bootstrap needs at least 100 resamples");
    if (!(level > 0.0 && level < 1.0))
        throw StatsError(StatsError::Kind::DegenerateInput,
                         "bootstrap level must be in (0, 1)");

    const std::size_t n = s.size();
    const auto big_r = static_cast<std::uint64_t>(resamples);

    ConfidenceInterval ci;
    ci.point = evaluate_statistic(statistic, s);
    ci.level = level;
    ci.resamples = resamples;
    ci.seed = seed;

    constexpr int kMaxAttemptsPerSlot = 10;
    std::vector<double> stats_values(static_cast<std::size_t>(resamples));
    std::vector<double> rx(n), ry(n);
    for (std::uint64_t r = 0; r < big_r; ++r) {
        bool filled = false;
        for (int attempt = 0; attempt < kMaxAttemptsPerSlot && !filled; ++attempt) {
            std::uint64_t base = (static_cast<std::uint64_t>(attempt) * big_r + r) * n;
            for (std::size_t k = 0; k < n; ++k) {
                auto idx = static_cast<std::size_t>(rng_pick(seed, base + k, n));
                rx[k] = s.x[idx];
                ry[k] = s.y[idx];
            }
            try {
                PairedSamples resample(rx, ry);
                stats_values[static_cast<std::size_t>(r)] =
                    evaluate_statistic(statistic, resample);
                filled = true;
            } catch (const StatsError& e) {
                if (e.kind() != StatsError::Kind::ConstantMarginal) throw;
            }
        }
        if (!filled)
            throw StatsError(StatsError::Kind::TooManyDegenerateResamples,
                             "resample slot " + std::to_string(r) + " stayed degenerate after " +
                                 std::to_string(kMaxAttemptsPerSlot) + " attempts");
    }

    std::sort(stats_values.begin(), stats_values.end());
    ci.lower = sorted_quantile(stats_values, (1.0 - level) / 2.0);
    ci.upper = sorted_quantile(stats_values, (1.0 + level) / 2.0);

    if (!(ci.lower <= ci.point && ci.point <= ci.upper))
        std::cerr << "warning: bootstrap point estimate " << ci.point
                  << " outside percentile interval [" << ci.lower << ", " << ci.upper
                  << "]\n";
    return ci;
}

double mean_absolute_error(const std::vector<double>& pred,
                           const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw StatsError(StatsError::Kind::DegenerateInput,
                         "mean_absolute_error needs equal-length non-empty inputs");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

ConfusionMatrix confusion_matrix(const std::vector<std::string>& labels_a,
                                 const std::vector<std::string>& labels_b,
                                 const std::vector<std::string>& categories) {
    if (labels_a.size() != labels_b.size() || labels_a.empty())
        throw StatsError(StatsError::Kind::DegenerateInput,
                         "confusion_matrix needs equal-length non-empty label lists");

    auto index_of = [&](const std::string& label) -> std::size_t {
        for (std::size_t i = 0; i < categories.size(); ++i)
            if (categories[i] == label) return i;
        throw StatsError(StatsError::Kind::UnknownCategory,
                         "label \"" + label + "\" not in category list");
    };

    ConfusionMatrix m;
    m.categories = categories;
    m.counts.assign(categories.size(), std::vector<long long>(categories.size(), 0));
    for (std::size_t k = 0; k < labels_a.size(); ++k)
        m.counts[index_of(labels_a[k])][index_of(labels_b[k])] += 1;

    m.total = static_cast<long long>(labels_a.size());
    long long trace = 0;
    m.row_percent.assign(categories.size(), std::vector<double>(categories.size(), 0.0));
    for (std::size_t i = 0; i < categories.size(); ++i) {
        long long row_sum = 0;
        for (auto c : m.counts[i]) row_sum += c;
        trace += m.counts[i][i];
        if (row_sum == 0) continue;
        for (std::size_t j = 0; j < categories.size(); ++j)
            m.row_percent[i][j] =
                100.0 * static_cast<double>(m.counts[i][j]) / static_cast<double>(row_sum);
    }
    m.agreement = static_cast<double>(trace) / static_cast<double>(m.total);
    return m;
}

}  // namespace crimson::stats
