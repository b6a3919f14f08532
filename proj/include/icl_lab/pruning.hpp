#pragma once

// Magnitude pruning of MLP neurons: rank neurons by ||r_i|| with
// r = W_O W_V and zero the W_O rows of the selected fraction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/probes.hpp"
#include "icl_lab/rng.hpp"

namespace icl {

enum class PruneStrategy { smallest, largest, random };

inline const char* to_string(PruneStrategy s) {
    switch (s) {
        case PruneStrategy::smallest: return "smallest";
        case PruneStrategy::largest: return "largest";
        case PruneStrategy::random: return "random";
    }
    return "?";
}

inline PruneStrategy prune_strategy_from_string(const std::string& s) {
    if (s == "smallest") return PruneStrategy::smallest;
    if (s == "largest") return PruneStrategy::largest;
    if (s == "random") return PruneStrategy::random;
    throw InvalidArgument("unknown pruning strategy: " + s);
}

struct PruneSpec {
    PruneStrategy strategy = PruneStrategy::smallest;
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

inline std::vector<double> neuron_norms(const ModelParams& params) {
    const Mat r = matmul(params.w_o, params.w_v);
    std::vector<double> out(r.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = norm(r.row(i));
    return out;
}

/// Neurons to drop, in selection order. Norm ties break by index ascending.
inline std::vector<std::size_t> select_pruned(const std::vector<double>& norms, const PruneSpec& spec) {
    if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0))
        throw InvalidArgument("prune: ratio must lie in [0, 1]");
    const std::size_t m = norms.size();
    // Small epsilon guards R*m landing a hair under an integer.
    const auto count = std::min(m, static_cast<std::size_t>(std::floor(spec.ratio * m + 1e-9)));
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    switch (spec.strategy) {
        case PruneStrategy::smallest:
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
            break;
        case PruneStrategy::largest:
            std::stable_sort(idx.begin(), idx.end(),
                             [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });
            break;
        case PruneStrategy::random: {
            Rng rng = make_rng(spec.seed, stream::prune);
            std::shuffle(idx.begin(), idx.end(), rng);
            break;
        }
    }
    idx.resize(count);
    return idx;
}

inline ModelParams prune(const ModelParams& params, const PruneSpec& spec) {
    ModelParams out = params;
    for (std::size_t i : select_pruned(neuron_norms(params), spec))
        for (double& w : out.w_o.row(i)) w = 0.0;
    return out;
}

struct PruneCurveRow {
    PruneStrategy strategy = PruneStrategy::smallest;
    double ratio = 0.0;
    double error = 0.0;
    double mean_hinge = 0.0;
    std::size_t n_eval = 0;
    bool in_regime = true;  // pruned count fits inside the large-norm set
};

/// Size of the large-norm set: rows at or above half the median norm.
inline std::size_t large_norm_count(const std::vector<double>& norms) {
    const double med = median(norms);
    return static_cast<std::size_t>(
        std::count_if(norms.begin(), norms.end(), [&](double v) { return v >= 0.5 * med; }));
}

inline std::vector<PruneCurveRow> pruning_curve(const ModelParams& params,
                                                std::span<const Prompt> prompts,
                                                const std::vector<double>& ratios,
                                                const std::vector<PruneStrategy>& strategies,
                                                std::uint64_t seed = 0) {
    if (!std::is_sorted(ratios.begin(), ratios.end()))
        throw InvalidArgument("pruning_curve: ratios must be sorted ascending");
    const std::vector<double> norms = neuron_norms(params);
    const std::size_t large = large_norm_count(norms);
    std::vector<PruneCurveRow> rows;
    for (PruneStrategy s : strategies)
        for (std::size_t k = 0; k < ratios.size(); ++k) {
            const PruneSpec spec{s, ratios[k], derive_seed(seed, stream::prune, k)};
            const MetricsRecord m = evaluate(prune(params, spec), prompts);
            PruneCurveRow r;
            r.strategy = s;
            r.ratio = ratios[k];
            r.error = m.classification_error;
            r.mean_hinge = m.mean_hinge;
            r.n_eval = prompts.size();
            r.in_regime = std::floor(ratios[k] * norms.size() + 1e-9) <= static_cast<double>(large);
            rows.push_back(r);
        }
    return rows;
}

inline std::string prune_curve_csv(const std::vector<PruneCurveRow>& rows) {
    std::ostringstream os;
    os << "strategy,ratio,error,n_eval,mean_hinge,in_regime\n";
    for (const auto& r : rows)
        os << to_string(r.strategy) << "," << fmt_double(r.ratio) << "," << fmt_double(r.error) << ","
           << r.n_eval << "," << fmt_double(r.mean_hinge) << "," << (r.in_regime ? 1 : 0) << "\n";
    return os.str();
}

inline std::string norm_histogram_csv(const ModelParams& params) {
    const std::vector<double> norms = neuron_norms(params);
    std::ostringstream os;
    os << "neuron_idx,row_norm,a_sign\n";
    for (std::size_t i = 0; i < norms.size(); ++i)
        os << i << "," << fmt_double(norms[i]) << "," << (params.a[i] >= 0.0 ? 1 : -1) << "\n";
    return os.str();
}

}  // namespace icl
