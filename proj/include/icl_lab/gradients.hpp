#pragma once

// Hand-derived reverse pass of the hinge loss through the fixed architecture,
// a central-difference oracle, and a checker comparing the two.
//
// With g_i = -z a_i 1[pre_i >= 0] in the active hinge region:
//   dW_O    = g s^T
//   dW_V    = (W_O^T g) pbar^T
//   c_s     = (W_O^T g)^T W_V p_s                       per attended column
//   dW_Q    = sum_s c_s attn_s (W_K p_s - sum_r attn_r W_K p_r) p_query^T
//   dW_K    = W_Q p_query (sum_s c_s attn_s (p_s - pbar))^T
// a is frozen and never receives a gradient.

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/numerics.hpp"

namespace icl {

struct GradientSet {
    Mat d_wq;
    Mat d_wk;
    Mat d_wv;
    Mat d_wo;

    static GradientSet zeros_like(const ModelParams& p) {
        return {Mat(p.w_q.rows(), p.w_q.cols()), Mat(p.w_k.rows(), p.w_k.cols()),
                Mat(p.w_v.rows(), p.w_v.cols()), Mat(p.w_o.rows(), p.w_o.cols())};
    }

    static constexpr std::array<std::string_view, 4> names{"W_Q", "W_K", "W_V", "W_O"};

    std::array<Mat*, 4> arrays() noexcept { return {&d_wq, &d_wk, &d_wv, &d_wo}; }
    std::array<const Mat*, 4> arrays() const noexcept { return {&d_wq, &d_wk, &d_wv, &d_wo}; }

    void add_scaled(const GradientSet& o, double scale) {
        auto mine = arrays();
        auto theirs = o.arrays();
        for (std::size_t k = 0; k < 4; ++k) axpy(scale, theirs[k]->data(), mine[k]->data());
    }

    bool all_zero() const {
        for (const Mat* m : arrays())
            for (double x : m->data())
                if (x != 0.0) return false;
        return true;
    }

    bool all_finite() const {
        for (const Mat* m : arrays())
            if (!icl::all_finite(m->data())) return false;
        return true;
    }

    friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

inline std::array<Mat*, 4> trainable(ModelParams& p) noexcept {
    return {&p.w_q, &p.w_k, &p.w_v, &p.w_o};
}
inline std::array<const Mat*, 4> trainable(const ModelParams& p) noexcept {
    return {&p.w_q, &p.w_k, &p.w_v, &p.w_o};
}

enum class CacheCheck { verify, trust };

/// Adds the gradient of this example to `acc` without re-checking the cache.
inline void backward_into(const ModelParams& params, const Prompt& prompt, int z,
                          const ForwardCache& cache, GradientSet& acc) {
    if (z * cache.f >= 1.0) return;
    const std::size_t n = cache.attn.size();
    const std::size_t m = params.neurons();
    Vec gpre(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (cache.act_mask[i]) gpre[i] = -z * params.a[i];

    add_outer(acc.d_wo, 1.0, gpre, cache.s);
    const Vec ds = matTvec(params.w_o, gpre);
    add_outer(acc.d_wv, 1.0, ds, cache.pbar);

    // c_s = ds . (W_V p_s) = (W_V^T ds) . p_s
    const Vec dpbar = matTvec(params.w_v, ds);
    Vec c(n);
    double cbar = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        c[s] = dot(dpbar, prompt.column(s));
        cbar += cache.attn[s] * c[s];
    }
    // sum_s c_s attn_s (p_s - pbar) = sum_s attn_s (c_s - cbar) p_s
    Vec key_dir(params.embed_dim(), 0.0);
    for (std::size_t s = 0; s < n; ++s)
        axpy(cache.attn[s] * (c[s] - cbar), prompt.column(s), key_dir);

    add_outer(acc.d_wk, 1.0, cache.key_query, key_dir);
    const Vec dq = matvec(params.w_k, key_dir);
    add_outer(acc.d_wq, 1.0, dq, prompt.query());
}

inline GradientSet backward(const ModelParams& params, const Prompt& prompt, int z,
                            const ForwardCache& cache, CacheCheck check = CacheCheck::verify) {
    const std::size_t n = attended_count(prompt, params.include_query);
    if (cache.attn.size() != n || cache.pre_act.size() != params.neurons())
        throw InternalConsistency("backward: cache shape does not match params/prompt");
    if (check == CacheCheck::verify) {
        const double f = forward(params, prompt).f;
        if (std::abs(f - cache.f) > 1e-12 * (1.0 + std::abs(f)))
            throw InternalConsistency("backward: stale forward cache (F mismatch)");
    }
    GradientSet g = GradientSet::zeros_like(params);
    backward_into(params, prompt, z, cache, g);
    return g;
}

inline double loss_at(const ModelParams& p, const Prompt& prompt, int z) {
    return hinge_loss(forward(p, prompt).f, z);
}

namespace detail {
// hinge(f1) - hinge(f2) without routing the difference through the constant 1.
inline double hinge_diff(double f_plus, double f_minus, int z) {
    const bool a_plus = z * f_plus < 1.0;
    const bool a_minus = z * f_minus < 1.0;
    if (a_plus && a_minus) return z * (f_minus - f_plus);
    return hinge_loss(f_plus, z) - hinge_loss(f_minus, z);
}
}  // namespace detail

/// Central differences of the hinge loss, one scalar parameter at a time.
inline GradientSet finite_diff_grad(const ModelParams& params, const Prompt& prompt, int z,
                                    double eps = 1e-5) {
    if (!(eps > 0.0)) throw InvalidArgument("finite_diff_grad: eps must be positive");
    ModelParams work = params;
    GradientSet g = GradientSet::zeros_like(params);
    auto targets = trainable(work);
    auto outs = g.arrays();
    for (std::size_t k = 0; k < 4; ++k) {
        auto& data = targets[k]->data();
        auto& out = outs[k]->data();
        for (std::size_t e = 0; e < data.size(); ++e) {
            const double orig = data[e];
            data[e] = orig + eps;
            const double fp = forward(work, prompt).f;
            data[e] = orig - eps;
            const double fm = forward(work, prompt).f;
            data[e] = orig;
            out[e] = detail::hinge_diff(fp, fm, z) / (2.0 * eps);
        }
    }
    return g;
}

/// Directional central difference along d (same layout as the trainable arrays).
inline double directional_fd(const ModelParams& params, const Prompt& prompt, int z,
                             const GradientSet& d, double eps) {
    ModelParams plus = params;
    ModelParams minus = params;
    auto tp = trainable(plus);
    auto tm = trainable(minus);
    auto dd = d.arrays();
    for (std::size_t k = 0; k < 4; ++k) {
        axpy(eps, dd[k]->data(), tp[k]->data());
        axpy(-eps, dd[k]->data(), tm[k]->data());
    }
    return detail::hinge_diff(forward(plus, prompt).f, forward(minus, prompt).f, z) / (2.0 * eps);
}

inline double inner(const GradientSet& a, const GradientSet& b) {
    double s = 0.0;
    auto x = a.arrays();
    auto y = b.arrays();
    for (std::size_t k = 0; k < 4; ++k) s += dot(x[k]->data(), y[k]->data());
    return s;
}

struct GradCheckReport {
    std::uint64_t seed = 0;
    double max_rel_err = 0.0;
    std::string worst_param;  // "W_V[3,17]" style; empty when nothing compared
    bool kink_excluded = false;
    bool pass = true;
    std::size_t compared = 0;
};

// Kink adjacency thresholds: a ReLU pre-activation or the hinge margin this
// close to its breakpoint makes central differences unreliable.
inline constexpr double kKinkPreAct = 1e-6;
inline constexpr double kKinkMargin = 1e-6;
// Central differences carry about eps_mach * |loss| / eps ~ 1e-11 of rounding
// noise, so entries smaller than this are compared against the floor instead
// of their own magnitude.
inline constexpr double kFdFloor = 1e-6;

inline bool kink_adjacent(const ForwardCache& cache, int z) {
    for (double v : cache.pre_act)
        if (std::abs(v) < kKinkPreAct) return true;
    const double margin = z * cache.f;
    return margin > 1.0 - kKinkMargin && margin < 1.0 + kKinkMargin;
}

/// Compares two gradient sets entrywise: |a-f| / max(|a|, |f|, kFdFloor) over
/// every entry where either side is nonzero.
inline GradCheckReport compare_gradients(const GradientSet& analytic, const GradientSet& fd,
                                         double tol) {
    GradCheckReport r;
    auto an = analytic.arrays();
    auto nu = fd.arrays();
    for (std::size_t k = 0; k < 4; ++k) {
        const Mat& a = *an[k];
        const Mat& f = *nu[k];
        for (std::size_t e = 0; e < a.size(); ++e) {
            const double mag = std::max(std::abs(a.data()[e]), std::abs(f.data()[e]));
            if (mag == 0.0) continue;
            const double scale = std::max(mag, kFdFloor);
            ++r.compared;
            const double rel = std::abs(a.data()[e] - f.data()[e]) / scale;
            if (rel > r.max_rel_err) {
                r.max_rel_err = rel;
                std::ostringstream os;
                os << GradientSet::names[k] << "[" << e / a.cols() << "," << e % a.cols() << "]";
                r.worst_param = os.str();
            }
        }
    }
    r.pass = r.max_rel_err <= tol;
    return r;
}

inline GradCheckReport grad_check(const ModelParams& params, const Prompt& prompt, int z,
                                  double eps = 1e-5, double tol = 1e-5) {
    if (!(tol > 0.0)) throw InvalidArgument("grad_check: tol must be positive");
    const ForwardCache cache = forward(params, prompt);
    if (kink_adjacent(cache, z)) {
        GradCheckReport r;
        r.kink_excluded = true;
        return r;
    }
    const GradientSet analytic = backward(params, prompt, z, cache);
    const GradientSet fd = finite_diff_grad(params, prompt, z, eps);
    return compare_gradients(analytic, fd, tol);
}

inline std::string grad_check_csv_header() { return "seed,max_rel_err,worst_param,pass"; }

inline std::string grad_check_csv_row(const GradCheckReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.seed << "," << r.max_rel_err << "," << (r.worst_param.empty() ? "-" : r.worst_param)
       << "," << (r.kink_excluded ? "excluded" : (r.pass ? "true" : "false"));
    return os.str();
}

/// A generic instance for gradient checking: every trainable entry is
/// Gaussian, so attention, value, and MLP paths all carry signal.
struct GradInstance {
    ModelParams params;
    Prompt prompt;
    int z = 1;
};

inline GradInstance random_grad_instance(const DataConfig& data, const ModelConfig& model, int l,
                                         std::uint64_t seed) {
    GradInstance inst;
    Rng rng = make_rng(seed, stream::grad);
    const PatternBasis basis = make_basis(data, derive_seed(seed, stream::basis));
    inst.params = init_params(model, derive_seed(seed, stream::init));
    const double d = model.embed_dim();
    for (double& w : inst.params.w_q.data()) w = gaussian(rng, 0.5 / std::sqrt(d));
    for (double& w : inst.params.w_k.data()) w = gaussian(rng, 0.5 / std::sqrt(d));
    for (double& w : inst.params.w_v.data()) w = gaussian(rng, 1.0 / std::sqrt(d));
    const PatternSource src = in_domain_source(basis, data.k);
    const TaskSet tasks = all_tasks(data.m1);
    const Task& t = tasks.tasks[uniform_index(rng, tasks.size())];
    const double alpha = data.m1 > 2 ? 0.8 : 1.0;
    inst.prompt = build_prompt(src, t, alpha, l, rng);
    inst.z = fair_sign(rng);
    return inst;
}

}  // namespace icl
