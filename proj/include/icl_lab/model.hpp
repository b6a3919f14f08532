#pragma once

// Single-head, one-layer transformer with a ReLU MLP head:
//
//     F(P) = a^T relu( W_O  sum_i attn_i W_V p_i )
//     attn = softmax_i( (W_K p_i)^T W_Q p_query )
//
// The attended index range is the l context columns, plus the query column
// when include_query_in_attention is set.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/numerics.hpp"
#include "icl_lab/rng.hpp"

namespace icl {

struct ModelConfig {
    int d_x = 30;
    int d_y = 30;
    int m_a = 60;  // query/key width
    int m_b = 60;  // value width
    int m = 200;   // MLP neurons
    double delta = 0.1;
    double xi = 0.0;           // W_O init std; <= 0 means 1/sqrt(m)
    double a_magnitude = 0.0;  // |a_i|; <= 0 means 1/m
    bool include_query_in_attention = false;

    int embed_dim() const noexcept { return d_x + d_y; }
    double effective_xi() const noexcept { return xi > 0.0 ? xi : 1.0 / std::sqrt(double(m)); }
    double effective_a() const noexcept { return a_magnitude > 0.0 ? a_magnitude : 1.0 / m; }

    void validate() const {
        if (d_x < 1 || d_y < 1) throw InvalidArgument("model: d_x and d_y must be positive");
        if (m_a < d_x) throw InvalidArgument("model: m_a must be >= d_x");
        if (m_b < d_x + d_y) throw InvalidArgument("model: m_b must be >= d_x + d_y");
        if (m < 1) throw InvalidArgument("model: m must be positive");
        if (!(delta > 0.0 && delta <= 0.2)) throw InvalidArgument("model: delta must lie in (0, 0.2]");
    }
};

struct ModelParams {
    Mat w_q;  // m_a x D
    Mat w_k;  // m_a x D
    Mat w_v;  // m_b x D
    Mat w_o;  // m x m_b
    Vec a;    // m, frozen
    bool include_query = false;  // attend to the query column as well

    std::size_t embed_dim() const noexcept { return w_q.cols(); }
    std::size_t neurons() const noexcept { return w_o.rows(); }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct ForwardCache {
    Vec logits;      // one per attended column
    Vec attn;        // softmax(logits)
    Vec key_query;   // W_Q p_query
    Vec pbar;        // sum_i attn_i p_i
    Vec s;           // W_V pbar = sum_i attn_i W_V p_i
    Vec pre_act;     // W_O s
    std::vector<char> act_mask;  // pre_act >= 0
    double f = 0.0;
};

/// Diagonal delta init for W_Q, W_K (first d_x entries only) and W_V (all
/// diagonal entries), Gaussian W_O, random-sign a.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.embed_dim());
    ModelParams p;
    p.w_q = Mat(static_cast<std::size_t>(cfg.m_a), d, 0.0);
    p.w_k = Mat(static_cast<std::size_t>(cfg.m_a), d, 0.0);
    p.w_v = Mat(static_cast<std::size_t>(cfg.m_b), d, 0.0);
    p.w_o = Mat(static_cast<std::size_t>(cfg.m), static_cast<std::size_t>(cfg.m_b), 0.0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.d_x); ++i) {
        p.w_q(i, i) = cfg.delta;
        p.w_k(i, i) = cfg.delta;
    }
    for (std::size_t i = 0; i < std::min<std::size_t>(p.w_v.rows(), d); ++i) p.w_v(i, i) = cfg.delta;

    Rng rng = make_rng(seed, stream::init);
    const double xi = cfg.effective_xi();
    for (double& w : p.w_o.data()) w = gaussian(rng, xi);
    const double amag = cfg.effective_a();
    p.a.resize(static_cast<std::size_t>(cfg.m));
    for (double& ai : p.a) ai = fair_sign(rng) * amag;
    p.include_query = cfg.include_query_in_attention;
    return p;
}

inline std::size_t attended_count(const Prompt& prompt, bool include_query) {
    return static_cast<std::size_t>(prompt.l) + (include_query ? 1 : 0);
}

inline ForwardCache forward(const ModelParams& params, const Prompt& prompt) {
    const std::size_t d = params.embed_dim();
    if (prompt.cols.cols() != d || params.w_k.cols() != d || params.w_v.cols() != d ||
        params.w_k.rows() != params.w_q.rows() || params.w_o.cols() != params.w_v.rows() ||
        params.a.size() != params.w_o.rows())
        throw InvalidArgument("forward: parameter and prompt dimensions disagree");

    ForwardCache c;
    const std::size_t n = attended_count(prompt, params.include_query);
    c.key_query = matvec(params.w_q, prompt.query());
    // (W_K p_i)^T W_Q p_q = p_i^T (W_K^T W_Q p_q)
    const Vec u = matTvec(params.w_k, c.key_query);
    c.logits.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.logits[i] = dot(prompt.column(i), u);
    c.attn = softmax(c.logits);

    c.pbar.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) axpy(c.attn[i], prompt.column(i), c.pbar);
    c.s = matvec(params.w_v, c.pbar);
    c.pre_act = matvec(params.w_o, c.s);
    c.act_mask.resize(c.pre_act.size());
    c.f = 0.0;
    for (std::size_t i = 0; i < c.pre_act.size(); ++i) {
        c.act_mask[i] = c.pre_act[i] >= 0.0;
        if (c.pre_act[i] > 0.0) c.f += params.a[i] * c.pre_act[i];
    }
    return c;
}

inline double hinge_loss(double f, int z) { return std::max(0.0, 1.0 - z * f); }

/// Sign prediction; F == 0 maps to -1 and callers score z*F <= 0 as an error.
inline int predict(double f) { return f > 0.0 ? 1 : -1; }

inline bool is_error(double f, int z) { return z * f <= 0.0; }

// ---------------------------------------------------------------------------
// Checkpoints: {config, seed, step, W_Q, W_K, W_V, W_O, a}. Doubles are
// written in shortest round-trip form, so load(save(p)) == p bitwise.

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"d_x", c.d_x},
            {"d_y", c.d_y},
            {"m_a", c.m_a},
            {"m_b", c.m_b},
            {"m", c.m},
            {"delta", c.delta},
            {"xi", c.xi},
            {"a_magnitude", c.a_magnitude},
            {"include_query_in_attention", c.include_query_in_attention}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_x = j.at("d_x").get<int>();
    c.d_y = j.at("d_y").get<int>();
    c.m_a = j.at("m_a").get<int>();
    c.m_b = j.at("m_b").get<int>();
    c.m = j.at("m").get<int>();
    c.delta = j.at("delta").get<double>();
    c.xi = j.at("xi").get<double>();
    c.a_magnitude = j.at("a_magnitude").get<double>();
    c.include_query_in_attention = j.at("include_query_in_attention").get<bool>();
    return c;
}

struct Checkpoint {
    nlohmann::json config;  // free-form echo of whatever produced the params
    std::uint64_t seed = 0;
    long step = 0;
    ModelParams params;
};

inline std::string checkpoint_to_string(const Checkpoint& ck) {
    nlohmann::json j;
    j["config"] = ck.config;
    j["seed"] = ck.seed;
    j["step"] = ck.step;
    j["W_Q"] = mat_to_json(ck.params.w_q);
    j["W_K"] = mat_to_json(ck.params.w_k);
    j["W_V"] = mat_to_json(ck.params.w_v);
    j["W_O"] = mat_to_json(ck.params.w_o);
    j["a"] = ck.params.a;
    j["include_query_in_attention"] = ck.params.include_query;
    return j.dump(1) + "\n";
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    Checkpoint ck;
    try {
        ck.config = j.at("config");
        ck.seed = j.at("seed").get<std::uint64_t>();
        ck.step = j.at("step").get<long>();
        ck.params.w_q = mat_from_json(j.at("W_Q"));
        ck.params.w_k = mat_from_json(j.at("W_K"));
        ck.params.w_v = mat_from_json(j.at("W_V"));
        ck.params.w_o = mat_from_json(j.at("W_O"));
        ck.params.a = j.at("a").get<Vec>();
        ck.params.include_query = j.value("include_query_in_attention", false);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write checkpoint " + path.string());
    out << checkpoint_to_string(ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("checkpoint not found: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return checkpoint_from_string(text);
}

}  // namespace icl
