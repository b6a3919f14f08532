#pragma once

// Measurements on a (trained or initial) model: classification error,
// attention mass on contexts that share the query's pattern, query/key
// projections onto lifted pattern directions, and per-neuron alignment of
// r_i = (W_O W_V)_i with the mean relevant pattern and the label embedding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/numerics.hpp"

namespace icl {

inline double classification_error(std::span<const double> fs, std::span<const int> zs) {
    if (fs.empty() || fs.size() != zs.size())
        throw InvalidArgument("classification_error: need matching nonempty F and z");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < fs.size(); ++i) wrong += is_error(fs[i], zs[i]) ? 1 : 0;
    return static_cast<double>(wrong) / static_cast<double>(fs.size());
}

inline double classification_error(const ModelParams& params, std::span<const Prompt> prompts) {
    if (prompts.empty()) throw InvalidArgument("classification_error: empty prompt stream");
    std::size_t wrong = 0;
    for (const Prompt& p : prompts) wrong += is_error(forward(params, p).f, p.z) ? 1 : 0;
    return static_cast<double>(wrong) / static_cast<double>(prompts.size());
}

/// Attention mass on context columns whose pattern matches the query's.
inline double attention_concentration(const ForwardCache& cache, const Prompt& prompt) {
    double s = 0.0;
    for (int i = 0; i < prompt.l; ++i)
        if (prompt.ctx_pattern_idx[static_cast<std::size_t>(i)] == prompt.query_pattern_idx)
            s += cache.attn[static_cast<std::size_t>(i)];
    return std::clamp(s, 0.0, 1.0);
}

inline double attention_concentration(const ModelParams& params, const Prompt& prompt) {
    return attention_concentration(forward(params, prompt), prompt);
}

// ---------------------------------------------------------------------------
// Projections

struct ProjectionStats {
    // Query side: W_Q p_query.
    double q_norm = 0.0;
    double q_match = 0.0;      // |<[mu_query/beta; 0], W_Q p_query>|
    double q_other_rel = 0.0;  // max over other relevant patterns
    double q_irrel = 0.0;      // max over irrelevant patterns
    // Key side: W_K p_i, averaged over all context columns.
    double k_norm = 0.0;
    double k_match = 0.0;
    double k_other_rel = 0.0;
    double k_irrel = 0.0;
    // Key side restricted to columns carrying a decisive pattern.
    double k_dec_norm = 0.0;
    double k_dec_match = 0.0;
    double k_dec_other_rel = 0.0;
    double k_dec_irrel = 0.0;
    int n_decisive = 0;
};

namespace detail {

struct Projection {
    double norm = 0.0;
    double match = 0.0;
    double other_rel = 0.0;
    double irrel = 0.0;
};

// <[v/beta; 0], w> where w lives in R^{m_a} and v in R^{d_x}.
inline double lifted(std::span<const double> v, std::span<const double> w, double beta) {
    double s = 0.0;
    for (std::size_t r = 0; r < v.size(); ++r) s += v[r] * w[r];
    return s / beta;
}

inline Projection project(const Vec& w, const PatternSource& src, int match_idx) {
    Projection p;
    p.norm = norm(w);
    for (int j = 0; j < src.num_relevant(); ++j) {
        const double v = std::abs(lifted(src.relevant[static_cast<std::size_t>(j)], w, src.beta));
        if (j == match_idx)
            p.match = v;
        else
            p.other_rel = std::max(p.other_rel, v);
    }
    for (const Vec& nu : src.irrelevant) p.irrel = std::max(p.irrel, std::abs(lifted(nu, w, src.beta)));
    return p;
}

}  // namespace detail

inline ProjectionStats projection_stats(const ModelParams& params, const Prompt& prompt,
                                        const PatternSource& src) {
    if (params.w_q.rows() < static_cast<std::size_t>(src.d_x))
        throw InvalidArgument("projection_stats: m_a < d_x, lifting undefined");
    ProjectionStats st;
    const auto q = detail::project(matvec(params.w_q, prompt.query()), src, prompt.query_pattern_idx);
    st.q_norm = q.norm;
    st.q_match = q.match;
    st.q_other_rel = q.other_rel;
    st.q_irrel = q.irrel;

    for (int i = 0; i < prompt.l; ++i) {
        const int j = prompt.ctx_pattern_idx[static_cast<std::size_t>(i)];
        const auto k = detail::project(matvec(params.w_k, prompt.column(static_cast<std::size_t>(i))),
                                       src, j);
        st.k_norm += k.norm;
        st.k_match += k.match;
        st.k_other_rel += k.other_rel;
        st.k_irrel += k.irrel;
        if (j == prompt.task.pos_idx || j == prompt.task.neg_idx) {
            ++st.n_decisive;
            st.k_dec_norm += k.norm;
            st.k_dec_match += k.match;
            st.k_dec_other_rel += k.other_rel;
            st.k_dec_irrel += k.irrel;
        }
    }
    const double inv = 1.0 / prompt.l;
    st.k_norm *= inv;
    st.k_match *= inv;
    st.k_other_rel *= inv;
    st.k_irrel *= inv;
    if (st.n_decisive > 0) {
        const double invd = 1.0 / st.n_decisive;
        st.k_dec_norm *= invd;
        st.k_dec_match *= invd;
        st.k_dec_other_rel *= invd;
        st.k_dec_irrel *= invd;
    }
    return st;
}

// ---------------------------------------------------------------------------
// Aggregate record

struct MetricsRecord {
    std::size_t n_prompts = 0;
    double classification_error = 0.0;
    double mean_hinge = 0.0;
    double mean_attn_concentration = 0.0;
    ProjectionStats proj;  // means over prompts; decisive-only means over prompts that have any
};

inline MetricsRecord evaluate(const ModelParams& params, std::span<const Prompt> prompts,
                              const PatternSource* src = nullptr) {
    if (prompts.empty()) throw InvalidArgument("evaluate: empty prompt stream");
    MetricsRecord m;
    m.n_prompts = prompts.size();
    std::size_t wrong = 0;
    int with_dec = 0;
    for (const Prompt& p : prompts) {
        const ForwardCache c = forward(params, p);
        wrong += is_error(c.f, p.z) ? 1 : 0;
        m.mean_hinge += hinge_loss(c.f, p.z);
        m.mean_attn_concentration += attention_concentration(c, p);
        if (src) {
            const ProjectionStats s = projection_stats(params, p, *src);
            m.proj.q_norm += s.q_norm;
            m.proj.q_match += s.q_match;
            m.proj.q_other_rel += s.q_other_rel;
            m.proj.q_irrel += s.q_irrel;
            m.proj.k_norm += s.k_norm;
            m.proj.k_match += s.k_match;
            m.proj.k_other_rel += s.k_other_rel;
            m.proj.k_irrel += s.k_irrel;
            if (s.n_decisive > 0) {
                ++with_dec;
                m.proj.k_dec_norm += s.k_dec_norm;
                m.proj.k_dec_match += s.k_dec_match;
                m.proj.k_dec_other_rel += s.k_dec_other_rel;
                m.proj.k_dec_irrel += s.k_dec_irrel;
            }
            m.proj.n_decisive += s.n_decisive;
        }
    }
    const double n = static_cast<double>(prompts.size());
    m.classification_error = static_cast<double>(wrong) / n;
    m.mean_hinge /= n;
    m.mean_attn_concentration /= n;
    if (src) {
        for (double* v : {&m.proj.q_norm, &m.proj.q_match, &m.proj.q_other_rel, &m.proj.q_irrel,
                          &m.proj.k_norm, &m.proj.k_match, &m.proj.k_other_rel, &m.proj.k_irrel})
            *v /= n;
        if (with_dec > 0)
            for (double* v : {&m.proj.k_dec_norm, &m.proj.k_dec_match, &m.proj.k_dec_other_rel,
                              &m.proj.k_dec_irrel})
                *v /= with_dec;
    }
    return m;
}

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

inline std::string metrics_csv_header() {
    return "label,n_prompts,error,mean_hinge,attn_conc,q_norm,q_match,q_other_rel,q_irrel,"
           "k_norm,k_match,k_other_rel,k_irrel,k_dec_norm,k_dec_match,k_dec_other_rel,k_dec_irrel";
}

inline std::string metrics_csv_row(const std::string& label, const MetricsRecord& m) {
    std::ostringstream os;
    const auto& p = m.proj;
    os << label << "," << m.n_prompts;
    for (double v : {m.classification_error, m.mean_hinge, m.mean_attn_concentration, p.q_norm,
                     p.q_match, p.q_other_rel, p.q_irrel, p.k_norm, p.k_match, p.k_other_rel,
                     p.k_irrel, p.k_dec_norm, p.k_dec_match, p.k_dec_other_rel, p.k_dec_irrel})
        os << "," << fmt_double(v);
    return os.str();
}

// ---------------------------------------------------------------------------
// Neurons

struct NeuronStats {
    double row_norm = 0.0;
    double feat_norm = 0.0;   // ||r_{i,X}||
    double label_norm = 0.0;  // ||r_{i,Y}||
    double cos_feat = 0.0;
    double cos_label = 0.0;
    int a_sign = 1;
    bool degenerate = false;
};

/// r = W_O W_V; the first d_x coordinates of r_i are compared with mu_bar, the
/// next d_y with sign(a_i) q.
inline std::vector<NeuronStats> neuron_stats(const ModelParams& params, const Vec& mu_bar,
                                             const Vec& q) {
    const std::size_t dx = mu_bar.size();
    const std::size_t dy = q.size();
    if (params.w_v.rows() < dx + dy)
        throw InvalidArgument("neuron_stats: m_b must be >= d_x + d_y");
    if (params.embed_dim() != dx + dy)
        throw InvalidArgument("neuron_stats: mu_bar/q do not match the embedding width");
    const Mat r = matmul(params.w_o, params.w_v);
    std::vector<NeuronStats> out(params.neurons());
    Vec sq(dy);
    for (std::size_t i = 0; i < out.size(); ++i) {
        NeuronStats& n = out[i];
        const auto row = r.row(i);
        const auto rx = row.subspan(0, dx);
        const auto ry = row.subspan(dx, dy);
        n.a_sign = params.a[i] >= 0.0 ? 1 : -1;
        n.row_norm = norm(row);
        n.feat_norm = norm(rx);
        n.label_norm = norm(ry);
        for (std::size_t k = 0; k < dy; ++k) sq[k] = n.a_sign * q[k];
        if (n.row_norm == 0.0) {
            n.degenerate = true;
            continue;
        }
        if (n.feat_norm > 0.0) n.cos_feat = cosine(rx, mu_bar);
        else n.degenerate = true;
        if (n.label_norm > 0.0) n.cos_label = cosine(ry, sq);
        else n.degenerate = true;
    }
    return out;
}

inline std::vector<NeuronStats> neuron_stats(const ModelParams& params, const PatternBasis& basis) {
    return neuron_stats(params, basis.mu_bar(), basis.q);
}

inline std::string neuron_csv_header() {
    return "neuron_idx,row_norm,feat_norm,label_norm,cos_feat,cos_label,a_sign,degenerate";
}

inline std::string neuron_csv_row(std::size_t i, const NeuronStats& n) {
    std::ostringstream os;
    os << i << "," << fmt_double(n.row_norm) << "," << fmt_double(n.feat_norm) << ","
       << fmt_double(n.label_norm) << "," << fmt_double(n.cos_feat) << ","
       << fmt_double(n.cos_label) << "," << n.a_sign << "," << (n.degenerate ? 1 : 0);
    return os.str();
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Indices of the top `frac` of neurons by row norm (ties by index).
inline std::vector<std::size_t> top_by_norm(const std::vector<NeuronStats>& ns, double frac) {
    std::vector<std::size_t> idx(ns.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return ns[a].row_norm > ns[b].row_norm; });
    idx.resize(static_cast<std::size_t>(std::ceil(frac * static_cast<double>(ns.size()))));
    return idx;
}

struct AlignmentSummary {
    double median_cos_label = 0.0;  // over the top half by norm
    double median_cos_feat = 0.0;
    double low_norm_fraction = 0.0;  // rows below half the median norm
    double median_norm = 0.0;
};

inline AlignmentSummary summarize_alignment(const std::vector<NeuronStats>& ns) {
    AlignmentSummary s;
    std::vector<double> lab, feat, norms;
    for (std::size_t i : top_by_norm(ns, 0.5)) {
        lab.push_back(ns[i].cos_label);
        feat.push_back(ns[i].cos_feat);
    }
    for (const auto& n : ns) norms.push_back(n.row_norm);
    s.median_cos_label = median(lab);
    s.median_cos_feat = median(feat);
    s.median_norm = median(norms);
    std::size_t low = 0;
    for (double v : norms) low += v < 0.5 * s.median_norm ? 1 : 0;
    s.low_norm_fraction = norms.empty() ? 0.0 : static_cast<double>(low) / norms.size();
    return s;
}

}  // namespace icl
