#pragma once

// Per-prompt classical learners: each fits the l context pairs (x_i, y_i) of
// a prompt and predicts the query. They never see the query label.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/numerics.hpp"
#include "icl_lab/parallel.hpp"
#include "icl_lab/probes.hpp"

namespace icl {

struct LabeledSet {
    std::vector<Vec> xs;
    std::vector<int> ys;

    std::size_t size() const noexcept { return xs.size(); }
    friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

inline void check_set(const LabeledSet& s) {
    if (s.xs.empty() || s.xs.size() != s.ys.size())
        throw InvalidArgument("baseline: need a nonempty set with one label per input");
}

/// Context inputs x_i (first d_x coordinates) with their labels.
inline LabeledSet context_set(const Prompt& p) {
    LabeledSet s;
    for (int i = 0; i < p.l; ++i) {
        const auto col = p.column(static_cast<std::size_t>(i));
        s.xs.emplace_back(col.begin(), col.begin() + p.d_x);
        s.ys.push_back(p.ctx_label[static_cast<std::size_t>(i)]);
    }
    return s;
}

inline Vec query_x(const Prompt& p) {
    const auto q = p.query();
    return Vec(q.begin(), q.begin() + p.d_x);
}

inline int sign_predict(double v) { return v > 0.0 ? 1 : -1; }

inline int knn_predict(const LabeledSet& set, std::span<const double> xq, int k) {
    check_set(set);
    if (k < 1 || k > static_cast<int>(set.size()))
        throw InvalidArgument("knn_predict: k must lie in [1, l]");
    if (k % 2 == 0) throw InvalidArgument("knn_predict: k must be odd");
    std::vector<double> dist(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        double s = 0.0;
        for (std::size_t r = 0; r < xq.size(); ++r) {
            const double d = set.xs[i][r] - xq[r];
            s += d * d;
        }
        dist[i] = s;
    }
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    int vote = 0;
    for (int i = 0; i < k; ++i) vote += set.ys[idx[static_cast<std::size_t>(i)]];
    return sign_predict(vote);
}

struct LinearFit {
    Vec w;
    double b = 0.0;
    std::vector<double> objective;  // one entry per step, evaluated before the update

    double score(std::span<const double> x) const { return dot(w, x) + b; }
    int predict(std::span<const double> x) const { return sign_predict(score(x)); }
};

struct LinearHyper {
    int steps = 500;
    double lr = 0.1;
    double l2 = 1e-3;

    void validate() const {
        if (steps < 1) throw InvalidArgument("baseline: steps must be >= 1");
        if (!(lr > 0.0)) throw InvalidArgument("baseline: lr must be positive");
        if (!(l2 >= 0.0)) throw InvalidArgument("baseline: l2 must be non-negative");
    }
};

inline double log1pexp(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

/// Full-batch gradient descent on mean logistic loss + (l2/2)||w||^2 from zero;
/// the bias is unregularized.
inline LinearFit logistic_fit(const LabeledSet& set, const LinearHyper& h = {}) {
    check_set(set);
    h.validate();
    const std::size_t d = set.xs.front().size();
    const double n = static_cast<double>(set.size());
    LinearFit f;
    f.w.assign(d, 0.0);
    Vec gw(d);
    for (int step = 0; step < h.steps; ++step) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        double loss = 0.0;
        for (std::size_t i = 0; i < set.size(); ++i) {
            const double m = set.ys[i] * f.score(set.xs[i]);
            loss += log1pexp(-m);
            // d/dm log(1+e^-m) = -1/(1+e^m)
            const double c = -set.ys[i] / (1.0 + std::exp(m));
            axpy(c / n, set.xs[i], gw);
            gb += c / n;
        }
        loss = loss / n + 0.5 * h.l2 * dot(f.w, f.w);
        if (!std::isfinite(loss)) throw Divergence("logistic: non-finite loss", step);
        f.objective.push_back(loss);
        axpy(h.l2, f.w, gw);
        axpy(-h.lr, gw, f.w);
        f.b -= h.lr * gb;
    }
    return f;
}

inline double svm_objective(const LabeledSet& set, const Vec& w, double b, double l2) {
    double s = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i)
        s += std::max(0.0, 1.0 - set.ys[i] * (dot(w, set.xs[i]) + b));
    return s / static_cast<double>(set.size()) + 0.5 * l2 * dot(w, w);
}

/// Subgradient descent on mean hinge + (l2/2)||w||^2 with step lr/sqrt(t).
/// Subgradient iterates are not monotone, so the best iterate seen is kept
/// and `objective` records its value after each step.
inline LinearFit linear_svm_fit(const LabeledSet& set, const LinearHyper& h = {}) {
    check_set(set);
    h.validate();
    const std::size_t d = set.xs.front().size();
    const double n = static_cast<double>(set.size());
    Vec w(d, 0.0);
    double b = 0.0;
    LinearFit best;
    best.w = w;
    double best_obj = svm_objective(set, w, b, h.l2);
    Vec gw(d);
    for (int step = 1; step <= h.steps; ++step) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < set.size(); ++i) {
            if (set.ys[i] * (dot(w, set.xs[i]) + b) < 1.0) {
                axpy(-set.ys[i] / n, set.xs[i], gw);
                gb -= set.ys[i] / n;
            }
        }
        axpy(h.l2, w, gw);
        const double lr = h.lr / std::sqrt(static_cast<double>(step));
        axpy(-lr, gw, w);
        b -= lr * gb;
        const double obj = svm_objective(set, w, b, h.l2);
        if (!std::isfinite(obj)) throw Divergence("svm: non-finite objective", step);
        if (obj < best_obj) {
            best_obj = obj;
            best.w = w;
            best.b = b;
        }
        best.objective.push_back(best_obj);
    }
    return best;
}

inline int logistic_fit_predict(const LabeledSet& set, std::span<const double> xq,
                                const LinearHyper& h = {}) {
    return logistic_fit(set, h).predict(xq);
}

inline int linear_svm_fit_predict(const LabeledSet& set, std::span<const double> xq,
                                  const LinearHyper& h = {}) {
    return linear_svm_fit(set, h).predict(xq);
}

// ---------------------------------------------------------------------------
// Comparison table

struct BaselineRow {
    std::string method;
    int l = 0;
    double alpha_prime = 0.0;
    double error = 0.0;
    std::size_t n_eval = 0;
};

inline const std::vector<std::string>& baseline_methods() {
    static const std::vector<std::string> m{"ICL", "logistic", "svm_linear", "1nn", "3nn"};
    return m;
}

/// Errors of the trained model and each baseline on identical prompts, one
/// prompt set per l. Prompts for l are drawn from derive_seed(seed, eval, l).
inline std::vector<BaselineRow> baseline_compare(const ModelParams* params, const PatternSource& src,
                                                 const TaskSet& tasks, double alpha_prime,
                                                 const std::vector<int>& l_values, int n_eval,
                                                 std::uint64_t seed, const LinearHyper& h = {},
                                                 unsigned threads = 1) {
    if (!params) throw InvalidArgument("baseline_compare: a trained checkpoint is required");
    if (n_eval < 1) throw InvalidArgument("baseline_compare: n_eval must be >= 1");
    for (int l : l_values)
        if (l < 3) throw InvalidArgument("baseline_compare: every l must be >= 3 for 3-NN");
    const auto& methods = baseline_methods();
    std::vector<BaselineRow> rows;
    for (int l : l_values) {
        Rng rng = make_rng(seed, stream::eval, static_cast<std::uint64_t>(l));
        const auto prompts = make_eval_prompts(src, tasks, alpha_prime, l, n_eval, rng);
        std::vector<std::array<char, 5>> wrong(prompts.size());
        parallel_for(prompts.size(), threads, [&](std::size_t i) {
            const Prompt& p = prompts[i];
            const LabeledSet set = context_set(p);
            const Vec xq = query_x(p);
            const double f = forward(*params, p).f;
            const int preds[4] = {logistic_fit_predict(set, xq, h), linear_svm_fit_predict(set, xq, h),
                                  knn_predict(set, xq, 1), knn_predict(set, xq, 3)};
            wrong[i][0] = is_error(f, p.z);
            for (std::size_t k = 0; k < 4; ++k) wrong[i][k + 1] = preds[k] != p.z;
        });
        for (std::size_t k = 0; k < methods.size(); ++k) {
            std::size_t w = 0;
            for (const auto& r : wrong) w += r[k] ? 1 : 0;
            rows.push_back({methods[k], l, alpha_prime,
                            static_cast<double>(w) / static_cast<double>(prompts.size()),
                            prompts.size()});
        }
    }
    return rows;
}

inline std::string baseline_csv(const std::vector<BaselineRow>& rows) {
    std::ostringstream os;
    os << "method,l,alpha_prime,error,n_eval\n";
    for (const auto& r : rows)
        os << r.method << "," << r.l << "," << fmt_double(r.alpha_prime) << "," << fmt_double(r.error)
           << "," << r.n_eval << "\n";
    return os.str();
}

}  // namespace icl
