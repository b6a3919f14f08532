#pragma once

// Synthetic in-context classification data: orthogonal pattern bases, binary
// tasks over pairs of relevant patterns, and prompt embeddings
//
//     P = [ x_1 ... x_l  x_query ]
//         [ y_1 ... y_l     0    ]
//
// with y_i = +/- q.

#include <algorithm>
#include <compare>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl_lab/errors.hpp"
#include "icl_lab/numerics.hpp"
#include "icl_lab/rng.hpp"

namespace icl {

enum class BasisMode { random_orthonormal, canonical };
enum class Domain { in, out };

inline const char* to_string(Domain d) { return d == Domain::in ? "in" : "out"; }

struct DataConfig {
    int d_x = 30;
    int d_y = 30;
    int m1 = 6;   // in-domain relevant patterns
    int m2 = 24;  // in-domain irrelevant patterns
    double beta = 3.0;
    double k = 0.5;        // in-domain noise half-width
    double k_prime = 5.0;  // out-of-domain noise half-width
    BasisMode basis_mode = BasisMode::random_orthonormal;

    int embed_dim() const noexcept { return d_x + d_y; }

    void validate() const {
        if (d_x < 1 || d_y < 1) throw InvalidArgument("data: d_x and d_y must be positive");
        if (m1 + m2 != d_x) throw InvalidArgument("data: m1 + m2 must equal d_x");
        if (m1 < 2) throw InvalidArgument("data: m1 must be at least 2");
        if (m2 < 1) throw InvalidArgument("data: m2 must be at least 1");
        if (!(beta >= 1.0)) throw InvalidArgument("data: beta must be >= 1");
        if (!(k > 0.0 && k <= 0.5)) throw InvalidArgument("data: k must lie in (0, 1/2]");
        if (!(k_prime > 0.0)) throw InvalidArgument("data: k_prime must be positive");
    }
};

struct PatternBasis {
    int d_x = 0;
    int d_y = 0;
    double beta = 0.0;
    std::uint64_t seed = 0;
    std::vector<Vec> mus;  // relevant, norm beta
    std::vector<Vec> nus;  // irrelevant, norm beta
    Vec q;                 // label embedding, unit norm

    int m1() const noexcept { return static_cast<int>(mus.size()); }
    int m2() const noexcept { return static_cast<int>(nus.size()); }

    /// Mean of the relevant patterns.
    Vec mu_bar() const {
        Vec out(static_cast<std::size_t>(d_x), 0.0);
        for (const Vec& m : mus) axpy(1.0 / static_cast<double>(mus.size()), m, out);
        return out;
    }
};

struct OodBasis {
    Mat coeff;  // M1' x M1, row j expresses mu'_j over the mus
    std::vector<Vec> mu_primes;
    std::vector<Vec> nu_primes;
    Vec s;  // row sums of coeff

    /// Rows whose coefficient sum is below 1. These still build fine (sweeps
    /// need them) but fall outside the sufficient condition for transfer.
    std::vector<std::size_t> flagged_rows() const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < s.size(); ++j)
            if (s[j] < 1.0) out.push_back(j);
        return out;
    }
    bool condition_holds() const { return flagged_rows().empty(); }
};

struct Task {
    int pos_idx = 0;
    int neg_idx = 1;
    friend auto operator<=>(const Task&, const Task&) = default;
};

struct TaskSet {
    std::vector<Task> tasks;
    Domain domain = Domain::in;
    std::size_t size() const noexcept { return tasks.size(); }
};

/// The patterns and noise law a prompt is drawn from; in-domain and
/// out-of-domain prompts differ only in this.
struct PatternSource {
    std::vector<Vec> relevant;
    std::vector<Vec> irrelevant;
    Vec q;
    double noise = 0.0;
    double beta = 0.0;
    Domain domain = Domain::in;
    int d_x = 0;
    int d_y = 0;

    int num_relevant() const noexcept { return static_cast<int>(relevant.size()); }
};

struct Prompt {
    // Row i of `cols` is column i of P; the last row is the query column.
    Mat cols;
    int l = 0;
    int d_x = 0;
    int d_y = 0;
    std::vector<int> ctx_pattern_idx;
    std::vector<int> ctx_label;
    int query_pattern_idx = 0;
    int z = 1;
    Task task;
    Domain domain = Domain::in;

    std::span<const double> column(std::size_t i) const { return cols.row(i); }
    std::span<const double> query() const { return cols.row(static_cast<std::size_t>(l)); }

    /// Context indices sharing the query's relevant pattern.
    std::vector<int> matching() const {
        std::vector<int> out;
        for (int i = 0; i < l; ++i)
            if (ctx_pattern_idx[i] == query_pattern_idx) out.push_back(i);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Bases

inline PatternBasis make_basis(const DataConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    PatternBasis b;
    b.d_x = cfg.d_x;
    b.d_y = cfg.d_y;
    b.beta = cfg.beta;
    b.seed = seed;
    const auto dx = static_cast<std::size_t>(cfg.d_x);

    std::vector<Vec> dirs;
    if (cfg.basis_mode == BasisMode::canonical) {
        for (std::size_t i = 0; i < dx; ++i) {
            Vec e(dx, 0.0);
            e[i] = 1.0;
            dirs.push_back(std::move(e));
        }
    } else {
        Rng rng = make_rng(seed, stream::basis);
        for (int attempt = 0;; ++attempt) {
            std::vector<Vec> draws(dx, Vec(dx));
            for (Vec& v : draws)
                for (double& x : v) x = gaussian(rng, 1.0);
            try {
                dirs = orthonormalize(draws);
                break;
            } catch (const RankDeficiency&) {
                if (attempt >= 2) throw;
            }
        }
    }
    for (std::size_t i = 0; i < dx; ++i) {
        Vec v = dirs[i];
        for (double& x : v) x *= cfg.beta;
        (static_cast<int>(i) < cfg.m1 ? b.mus : b.nus).push_back(std::move(v));
    }
    b.q.assign(static_cast<std::size_t>(cfg.d_y), 0.0);
    b.q[0] = 1.0;
    return b;
}

/// coeff rows must be unit-norm and mutually orthogonal so that the mu'_j
/// inherit norm beta and pairwise orthogonality. nu_coeff (M2' x M2) defaults
/// to the identity, i.e. nu'_k = nu_k.
inline OodBasis make_ood_basis(const PatternBasis& basis, const Mat& coeff,
                               const std::optional<Mat>& nu_coeff = std::nullopt) {
    constexpr double tol = 1e-9;
    if (coeff.cols() != static_cast<std::size_t>(basis.m1()))
        throw InvalidArgument("make_ood_basis: coeff must have M1 columns");
    if (coeff.rows() < 2) throw InvalidArgument("make_ood_basis: need at least two rows");
    for (std::size_t j = 0; j < coeff.rows(); ++j) {
        const double n = norm(coeff.row(j));
        if (std::abs(n - 1.0) > tol)
            throw InvalidArgument("make_ood_basis: coeff row " + std::to_string(j) +
                                  " is not unit norm (norm " + std::to_string(n) + ")");
        for (std::size_t k = 0; k < j; ++k)
            if (std::abs(dot(coeff.row(j), coeff.row(k))) > tol)
                throw InvalidArgument("make_ood_basis: coeff row " + std::to_string(j) +
                                      " is not orthogonal to row " + std::to_string(k));
    }

    OodBasis ood;
    ood.coeff = coeff;
    const auto dx = static_cast<std::size_t>(basis.d_x);
    for (std::size_t j = 0; j < coeff.rows(); ++j) {
        Vec mu(dx, 0.0);
        double s = 0.0;
        for (std::size_t i = 0; i < coeff.cols(); ++i) {
            axpy(coeff(j, i), basis.mus[i], mu);
            s += coeff(j, i);
        }
        ood.mu_primes.push_back(std::move(mu));
        ood.s.push_back(s);
    }

    if (!nu_coeff) {
        ood.nu_primes = basis.nus;
    } else {
        const Mat& nc = *nu_coeff;
        if (nc.cols() != static_cast<std::size_t>(basis.m2()) || nc.rows() < 1)
            throw InvalidArgument("make_ood_basis: nu coefficients must have M2 columns");
        for (std::size_t k = 0; k < nc.rows(); ++k) {
            if (std::abs(norm(nc.row(k)) - 1.0) > tol)
                throw InvalidArgument("make_ood_basis: nu row " + std::to_string(k) +
                                      " is not unit norm");
            Vec nu(dx, 0.0);
            for (std::size_t i = 0; i < nc.cols(); ++i) axpy(nc(k, i), basis.nus[i], nu);
            ood.nu_primes.push_back(std::move(nu));
        }
    }
    return ood;
}

/// The three-row out-of-domain layout used in the experiments:
///   mu'_1 = 0.3 (mu_1 - mu_2) + a mu_5 + b mu_6
///   mu'_2 = (mu_1 + mu_2) / sqrt 2
///   mu'_3 = (mu_3 + mu_4) / sqrt 2
/// Requires M1 >= 6 and a^2 + b^2 = 0.82.
inline Mat experiment_ood_coeff(int m1, double a, double b) {
    if (m1 < 6) throw InvalidArgument("experiment_ood_coeff: needs M1 >= 6");
    Mat c(3, static_cast<std::size_t>(m1), 0.0);
    const double h = std::sqrt(0.5);
    c(0, 0) = 0.3;
    c(0, 1) = -0.3;
    c(0, 4) = a;
    c(0, 5) = b;
    c(1, 0) = h;
    c(1, 1) = h;
    c(2, 2) = h;
    c(2, 3) = h;
    return c;
}

/// (a, b) with a + b = s1 and a^2 + b^2 = 1 - 2*0.3^2, a >= b.
inline std::pair<double, double> s1_coefficients(double s1) {
    constexpr double r2 = 1.0 - 2.0 * 0.09;
    const double disc = 2.0 * r2 - s1 * s1;
    if (disc < -1e-12)
        throw InvalidArgument("s1_coefficients: |S1| exceeds sqrt(2 * 0.82)");
    const double d = std::sqrt(std::max(0.0, disc));
    return {(s1 + d) / 2.0, (s1 - d) / 2.0};
}

/// Largest reachable S1, attained at a = b = sqrt(0.41).
inline double s1_max() { return 2.0 * std::sqrt(0.41); }

inline PatternSource in_domain_source(const PatternBasis& b, double k) {
    PatternSource s;
    s.relevant = b.mus;
    s.irrelevant = b.nus;
    s.q = b.q;
    s.noise = k;
    s.beta = b.beta;
    s.domain = Domain::in;
    s.d_x = b.d_x;
    s.d_y = b.d_y;
    return s;
}

inline PatternSource out_domain_source(const PatternBasis& b, const OodBasis& ood, double k_prime) {
    PatternSource s;
    s.relevant = ood.mu_primes;
    s.irrelevant = ood.nu_primes;
    s.q = b.q;
    s.noise = k_prime;
    s.beta = b.beta;
    s.domain = Domain::out;
    s.d_x = b.d_x;
    s.d_y = b.d_y;
    return s;
}

// ---------------------------------------------------------------------------
// Tasks

/// U*M1 tasks; task (k-1)*M1 + j maps pattern j to +1 and pattern j+k (mod M1)
/// to -1. Indices are zero-based.
inline TaskSet make_training_tasks(int m1, int u) {
    if (m1 < 2) throw InvalidArgument("make_training_tasks: m1 must be >= 2");
    if (u < 1 || u > m1 - 1)
        throw InvalidArgument("make_training_tasks: U must lie in [1, M1-1]");
    TaskSet ts;
    for (int k = 1; k <= u; ++k)
        for (int j = 0; j < m1; ++j) ts.tasks.push_back({j, (j + k) % m1});
    return ts;
}

/// Every ordered pair of distinct patterns: M(M-1) tasks.
inline TaskSet all_tasks(int m, Domain d = Domain::in) {
    TaskSet ts;
    ts.domain = d;
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
            if (a != b) ts.tasks.push_back({a, b});
    return ts;
}

inline TaskSet unseen_tasks(const TaskSet& train, int m1) {
    TaskSet out;
    for (const Task& t : all_tasks(m1).tasks)
        if (std::find(train.tasks.begin(), train.tasks.end(), t) == train.tasks.end())
            out.tasks.push_back(t);
    return out;
}

/// For every pattern and each sign, the number of tasks mapping the pattern to
/// that sign is |tasks| / M1, and that quotient is at least one.
inline bool check_condition(const TaskSet& ts, int m1) {
    if (ts.tasks.empty() || m1 < 1) return false;
    const std::size_t n = ts.tasks.size();
    if (n % static_cast<std::size_t>(m1) != 0) return false;
    const std::size_t per = n / static_cast<std::size_t>(m1);
    if (per < 1) return false;
    std::vector<std::size_t> pos(static_cast<std::size_t>(m1), 0), neg(pos);
    for (const Task& t : ts.tasks) {
        if (t.pos_idx < 0 || t.pos_idx >= m1 || t.neg_idx < 0 || t.neg_idx >= m1) return false;
        ++pos[static_cast<std::size_t>(t.pos_idx)];
        ++neg[static_cast<std::size_t>(t.neg_idx)];
    }
    for (int j = 0; j < m1; ++j)
        if (pos[static_cast<std::size_t>(j)] != per || neg[static_cast<std::size_t>(j)] != per)
            return false;
    return true;
}

// ---------------------------------------------------------------------------
// Sampling

/// x = relevant[j] + kappa * irrelevant[k].
inline Vec make_x(const PatternSource& src, int pattern_idx, int irrelevant_idx, double kappa) {
    Vec x = src.relevant.at(static_cast<std::size_t>(pattern_idx));
    axpy(kappa, src.irrelevant.at(static_cast<std::size_t>(irrelevant_idx)), x);
    return x;
}

inline Vec sample_x(const PatternSource& src, int pattern_idx, Rng& rng) {
    if (pattern_idx < 0 || pattern_idx >= src.num_relevant())
        throw InvalidArgument("sample_x: pattern index out of range");
    const auto k = static_cast<int>(uniform_index(rng, src.irrelevant.size()));
    const double kappa = uniform(rng, -src.noise, src.noise);
    return make_x(src, pattern_idx, k, kappa);
}

inline int task_label(const Task& t, int pattern_idx, Rng& rng) {
    if (pattern_idx == t.pos_idx) return 1;
    if (pattern_idx == t.neg_idx) return -1;
    return fair_sign(rng);
}

/// One prompt: context patterns are categorical with mass alpha/2 on each
/// decisive pattern and (1-alpha)/(M-2) on each other relevant pattern; the
/// query pattern is uniform over the two decisive patterns.
inline Prompt build_prompt(const PatternSource& src, const Task& task, double alpha, int l,
                           Rng& rng) {
    const int m = src.num_relevant();
    if (l < 1) throw InvalidArgument("build_prompt: l must be >= 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("build_prompt: alpha must be in (0,1]");
    if (task.pos_idx == task.neg_idx || task.pos_idx < 0 || task.neg_idx < 0 ||
        task.pos_idx >= m || task.neg_idx >= m)
        throw InvalidArgument("build_prompt: task indices invalid for this pattern set");
    if (m == 2 && alpha < 1.0)
        throw InvalidArgument("build_prompt: alpha < 1 needs at least three relevant patterns");

    std::vector<double> w(static_cast<std::size_t>(m), m > 2 ? (1.0 - alpha) / (m - 2) : 0.0);
    w[static_cast<std::size_t>(task.pos_idx)] = alpha / 2.0;
    w[static_cast<std::size_t>(task.neg_idx)] = alpha / 2.0;
    std::discrete_distribution<int> pick(w.begin(), w.end());

    const auto dx = static_cast<std::size_t>(src.d_x);
    const auto dy = static_cast<std::size_t>(src.d_y);
    Prompt p;
    p.l = l;
    p.d_x = src.d_x;
    p.d_y = src.d_y;
    p.domain = src.domain;
    p.cols = Mat(static_cast<std::size_t>(l) + 1, dx + dy, 0.0);
    p.ctx_pattern_idx.resize(static_cast<std::size_t>(l));
    p.ctx_label.resize(static_cast<std::size_t>(l));

    for (int i = 0; i < l; ++i) {
        const int j = pick(rng);
        const Vec x = sample_x(src, j, rng);
        const int y = task_label(task, j, rng);
        auto col = p.cols.row(static_cast<std::size_t>(i));
        std::copy(x.begin(), x.end(), col.begin());
        for (std::size_t r = 0; r < dy; ++r) col[dx + r] = y * src.q[r];
        p.ctx_pattern_idx[static_cast<std::size_t>(i)] = j;
        p.ctx_label[static_cast<std::size_t>(i)] = y;
    }
    const int qj = std::bernoulli_distribution(0.5)(rng) ? task.pos_idx : task.neg_idx;
    const Vec xq = sample_x(src, qj, rng);
    std::copy(xq.begin(), xq.end(), p.cols.row(static_cast<std::size_t>(l)).begin());
    p.query_pattern_idx = qj;
    p.z = qj == task.pos_idx ? 1 : -1;
    p.task = task;
    return p;
}

/// n prompts with tasks cycling uniformly at random over `tasks`.
inline std::vector<Prompt> make_eval_prompts(const PatternSource& src, const TaskSet& tasks,
                                             double alpha, int l, int n, Rng& rng) {
    if (tasks.tasks.empty()) throw InvalidArgument("make_eval_prompts: empty task set");
    std::vector<Prompt> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Task& t = tasks.tasks[uniform_index(rng, tasks.tasks.size())];
        out.push_back(build_prompt(src, t, alpha, l, rng));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: {dims, beta, mus, nus, q, tasks, coeff, seed}

inline nlohmann::json mat_to_json(const Mat& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
    return Mat(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
               j.at("data").get<std::vector<double>>());
}

inline nlohmann::json basis_to_json(const PatternBasis& b, const TaskSet* tasks = nullptr,
                                    const OodBasis* ood = nullptr) {
    nlohmann::json j;
    j["dims"] = {{"d_x", b.d_x}, {"d_y", b.d_y}, {"m1", b.m1()}, {"m2", b.m2()}};
    j["beta"] = b.beta;
    j["seed"] = b.seed;
    j["mus"] = b.mus;
    j["nus"] = b.nus;
    j["q"] = b.q;
    nlohmann::json tj = nlohmann::json::array();
    if (tasks)
        for (const Task& t : tasks->tasks) tj.push_back({t.pos_idx, t.neg_idx});
    j["tasks"] = tj;
    j["coeff"] = ood ? mat_to_json(ood->coeff) : nlohmann::json(nullptr);
    return j;
}

inline PatternBasis basis_from_json(const nlohmann::json& j) {
    PatternBasis b;
    b.d_x = j.at("dims").at("d_x").get<int>();
    b.d_y = j.at("dims").at("d_y").get<int>();
    b.beta = j.at("beta").get<double>();
    b.seed = j.at("seed").get<std::uint64_t>();
    b.mus = j.at("mus").get<std::vector<Vec>>();
    b.nus = j.at("nus").get<std::vector<Vec>>();
    b.q = j.at("q").get<Vec>();
    if (b.m1() != j.at("dims").at("m1").get<int>() || b.m2() != j.at("dims").at("m2").get<int>())
        throw ParseError("basis: pattern counts disagree with dims");
    return b;
}

inline TaskSet tasks_from_json(const nlohmann::json& j) {
    TaskSet ts;
    for (const auto& t : j.at("tasks")) ts.tasks.push_back({t.at(0).get<int>(), t.at(1).get<int>()});
    return ts;
}

}  // namespace icl
