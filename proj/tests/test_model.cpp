#include <algorithm>
#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "icl_lab/model.hpp"

using namespace icl;

namespace {

// Direct evaluation of F with explicit loops: keys and queries are formed
// as vectors, attention uses its own exponentials, and values are summed
// after projection rather than before.
double straight_line_f(const ModelParams& p, const Prompt& pr) {
    const std::size_t D = pr.cols.cols();
    const std::size_t n = static_cast<std::size_t>(pr.l) + (p.include_query ? 1 : 0);
    const auto& xq = pr.cols;
    std::vector<double> qv(p.w_q.rows(), 0.0);
    for (std::size_t r = 0; r < p.w_q.rows(); ++r)
        for (std::size_t c = 0; c < D; ++c) qv[r] += p.w_q(r, c) * xq(static_cast<std::size_t>(pr.l), c);
    std::vector<double> logit(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < p.w_k.rows(); ++r) {
            double kr = 0.0;
            for (std::size_t c = 0; c < D; ++c) kr += p.w_k(r, c) * xq(i, c);
            logit[i] += kr * qv[r];
        }
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double z = 0.0;
    for (double l : logit) z += std::exp(l - mx);
    std::vector<double> s(p.w_v.rows(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(logit[i] - mx) / z;
        for (std::size_t r = 0; r < p.w_v.rows(); ++r) {
            double v = 0.0;
            for (std::size_t c = 0; c < D; ++c) v += p.w_v(r, c) * xq(i, c);
            s[r] += w * v;
        }
    }
    double f = 0.0;
    for (std::size_t i = 0; i < p.w_o.rows(); ++i) {
        double h = 0.0;
        for (std::size_t r = 0; r < p.w_o.cols(); ++r) h += p.w_o(i, r) * s[r];
        f += p.a[i] * std::max(0.0, h);
    }
    return f;
}

Prompt random_prompt(std::uint64_t seed, int l = 20) {
    const PatternBasis b = make_basis(DataConfig{}, seed);
    Rng rng(seed);
    return build_prompt(in_domain_source(b, 0.5), Task{0, 1}, 0.8, l, rng);
}

ModelParams random_params(std::uint64_t seed, bool include_query = false) {
    ModelConfig c;
    c.include_query_in_attention = include_query;
    ModelParams p = init_params(c, seed);
    Rng rng(seed + 1000);
    for (double& w : p.w_q.data()) w = gaussian(rng, 0.3 / std::sqrt(60.0));
    for (double& w : p.w_k.data()) w = gaussian(rng, 0.3 / std::sqrt(60.0));
    for (double& w : p.w_v.data()) w = gaussian(rng, 1.0 / std::sqrt(60.0));
    for (double& w : p.w_o.data()) w = gaussian(rng, 1.0);
    return p;
}

}  // namespace

TEST(Init, DiagonalLayout) {
    const ModelParams p = init_params(ModelConfig{}, 0);
    EXPECT_EQ(p.w_q(0, 0), 0.1);
    EXPECT_EQ(p.w_q(29, 29), 0.1);
    EXPECT_EQ(p.w_q(30, 30), 0.0);
    EXPECT_EQ(p.w_k(30, 30), 0.0);
    EXPECT_EQ(p.w_v(30, 30), 0.1);
    EXPECT_EQ(p.w_v(59, 59), 0.1);
    double off = 0.0;
    for (std::size_t r = 0; r < 60; ++r)
        for (std::size_t c = 0; c < 60; ++c)
            if (r != c) off += std::abs(p.w_q(r, c)) + std::abs(p.w_k(r, c)) + std::abs(p.w_v(r, c));
    EXPECT_EQ(off, 0.0);
}

TEST(Init, OutputVarianceAndSigns) {
    for (int m : {100, 200, 400}) {
        ModelConfig c;
        c.m = m;
        const ModelParams p = init_params(c, static_cast<std::uint64_t>(m));
        double s = 0.0, s2 = 0.0;
        for (double w : p.w_o.data()) {
            s += w;
            s2 += w * w;
        }
        const double n = static_cast<double>(p.w_o.size());
        const double var = s2 / n - (s / n) * (s / n);
        EXPECT_NEAR(var, 1.0 / m, 0.2 / m);
        int pos = 0;
        for (double ai : p.a) {
            EXPECT_EQ(std::abs(ai), 1.0 / m);
            pos += ai > 0;
        }
        EXPECT_GT(pos, 0);
        EXPECT_LT(pos, m);
    }
}

TEST(Init, ConfigValidation) {
    ModelConfig c;
    c.delta = 0.3;
    EXPECT_THROW(init_params(c, 0), InvalidArgument);
    c = ModelConfig{};
    c.m_b = 59;
    EXPECT_THROW(init_params(c, 0), InvalidArgument);
    c = ModelConfig{};
    c.m_a = 29;
    EXPECT_THROW(init_params(c, 0), InvalidArgument);
    c = ModelConfig{};
    c.a_magnitude = 0.5;
    for (double ai : init_params(c, 0).a) EXPECT_EQ(std::abs(ai), 0.5);
}

TEST(Forward, ZeroOutputLayer) {
    ModelParams p = init_params(ModelConfig{}, 1);
    p.w_o.fill(0.0);
    const ForwardCache c = forward(p, random_prompt(1));
    EXPECT_EQ(c.f, 0.0);
    for (char m : c.act_mask) EXPECT_TRUE(m);
}

TEST(Forward, UniformAttentionOnIdenticalContexts) {
    DataConfig d;
    d.basis_mode = BasisMode::canonical;
    const PatternBasis b = make_basis(d, 0);
    const PatternSource src = in_domain_source(b, 0.5);
    Prompt p;
    p.l = 5;
    p.d_x = 30;
    p.d_y = 30;
    p.cols = Mat(6, 60, 0.0);
    const Vec x = make_x(src, 0, 0, 0.25);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t r = 0; r < 30; ++r) p.cols(i, r) = x[r];
    for (std::size_t i = 0; i < 5; ++i) p.cols(i, 30) = 1.0;
    p.ctx_pattern_idx.assign(5, 0);
    p.ctx_label.assign(5, 1);
    const ModelParams params = init_params(ModelConfig{}, 2);
    const ForwardCache c = forward(params, p);
    for (double l : c.logits) EXPECT_NEAR(l, 0.01 * dot(x, x), 1e-12);
    for (double a : c.attn) EXPECT_NEAR(a, 0.2, 1e-15);
}

TEST(Forward, MatchesStraightLineOracle) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const bool iq = s % 4 == 3;
        const ModelParams p = random_params(s, iq);
        const Prompt pr = random_prompt(s, 1 + static_cast<int>(s % 30));
        const double f = forward(p, pr).f;
        worst = std::max(worst, std::abs(f - straight_line_f(p, pr)));
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(Forward, CacheInvariants) {
    const ModelParams p = random_params(3);
    const Prompt pr = random_prompt(3);
    const ForwardCache c = forward(p, pr);
    double sum = 0.0;
    for (double a : c.attn) sum += a;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    ASSERT_EQ(c.pre_act.size(), 200u);
    double f = 0.0;
    for (std::size_t i = 0; i < 200; ++i) {
        f += p.a[i] * std::max(0.0, c.pre_act[i]);
        EXPECT_EQ(static_cast<bool>(c.act_mask[i]), c.pre_act[i] >= 0.0);
    }
    EXPECT_NEAR(f, c.f, 1e-15);
    EXPECT_EQ(c.attn.size(), 20u);
    ModelParams iq = p;
    iq.include_query = true;
    EXPECT_EQ(forward(iq, pr).attn.size(), 21u);
}

TEST(Forward, DimensionMismatchThrows) {
    ModelParams p = random_params(4);
    Prompt pr = random_prompt(4);
    pr.cols = Mat(21, 59, 0.0);
    EXPECT_THROW(forward(p, pr), InvalidArgument);
    p = random_params(4);
    p.a.pop_back();
    EXPECT_THROW(forward(p, random_prompt(4)), InvalidArgument);
}

TEST(Forward, PermutationInvariance) {
    const ModelParams p = random_params(5);
    const Prompt pr = random_prompt(5);
    Prompt perm = pr;
    Rng rng(5);
    std::vector<std::size_t> idx(20);
    for (std::size_t i = 0; i < 20; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < 20; ++i) {
        for (std::size_t c = 0; c < 60; ++c) perm.cols(i, c) = pr.cols(idx[i], c);
        perm.ctx_pattern_idx[i] = pr.ctx_pattern_idx[idx[i]];
        perm.ctx_label[i] = pr.ctx_label[idx[i]];
    }
    EXPECT_NEAR(forward(p, perm).f, forward(p, pr).f, 1e-12);
}

TEST(Forward, QueryLabelBlockIsIgnored) {
    const ModelParams p = random_params(6);
    const Prompt pr = random_prompt(6);
    Prompt noisy = pr;
    for (std::size_t c = 30; c < 60; ++c) noisy.cols(20, c) = 0.5;
    // The query column is never a key or value with the flag off. Its label
    // block reaches F only through the label columns of W_Q, which start at
    // zero and receive updates proportional to that (zero) block.
    ModelParams q = p;
    for (std::size_t r = 0; r < q.w_q.rows(); ++r)
        for (std::size_t c = 30; c < 60; ++c) q.w_q(r, c) = 0.0;
    EXPECT_EQ(forward(q, noisy).f, forward(q, pr).f);
}

TEST(Forward, LogitShiftLeavesOutputUnchanged) {
    const ModelParams p = random_params(7);
    const Prompt pr = random_prompt(7);
    const ForwardCache c = forward(p, pr);
    Vec shifted = c.logits;
    for (double& l : shifted) l += 123.0;
    const Vec a = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c.attn[i], 1e-12);
}

TEST(Loss, HingeAndPredict) {
    EXPECT_EQ(hinge_loss(2.0, 1), 0.0);
    EXPECT_EQ(hinge_loss(0.0, -1), 1.0);
    EXPECT_EQ(hinge_loss(-0.5, 1), 1.5);
    EXPECT_EQ(predict(0.3), 1);
    EXPECT_EQ(predict(-0.3), -1);
    EXPECT_EQ(predict(0.0), -1);
    EXPECT_TRUE(is_error(0.0, 1));
    EXPECT_TRUE(is_error(0.0, -1));
    EXPECT_FALSE(is_error(-0.1, -1));
}

TEST(Checkpoint, BitExactRoundTrip) {
    const ModelParams p = random_params(8, true);
    Checkpoint ck{nlohmann::json{{"note", "x"}}, 42, 3000, p};
    const std::string s = checkpoint_to_string(ck);
    const Checkpoint back = checkpoint_from_string(s);
    EXPECT_EQ(back.params, p);
    EXPECT_EQ(back.seed, 42u);
    EXPECT_EQ(back.step, 3000);
    EXPECT_EQ(checkpoint_to_string(back), s);
    for (const char* k : {"config", "seed", "step", "W_Q", "W_K", "W_V", "W_O", "a"})
        EXPECT_TRUE(nlohmann::json::parse(s).contains(k)) << k;

    const auto path = std::filesystem::temp_directory_path() / "icl_lab_ck_test.json";
    save_checkpoint(path, ck);
    EXPECT_EQ(load_checkpoint(path).params, p);
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), InvalidArgument);
    EXPECT_THROW(checkpoint_from_string("{"), ParseError);
    EXPECT_THROW(checkpoint_from_string("{}"), ParseError);
}
