#pragma once

// Experiment recipes. Each returns its tables as CSV text so the CLI, the
// tests and the acceptance suite share one code path; run_experiment writes
// them next to a manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "icl_lab/baselines.hpp"
#include "icl_lab/config.hpp"
#include "icl_lab/datagen.hpp"
#include "icl_lab/gradients.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/parallel.hpp"
#include "icl_lab/probes.hpp"
#include "icl_lab/pruning.hpp"
#include "icl_lab/trainer.hpp"

namespace icl {

inline constexpr const char* kVersion = "1.0.0";

/// A trained model together with the data it was trained on.
struct Lab {
    ModelParams params;
    PatternBasis basis;
    TaskSet train_tasks;
    TaskSet unseen;
    DataConfig data;
    std::uint64_t seed = 0;
    TrainLog log;  // empty when loaded from a checkpoint

    PatternSource in_source() const { return in_domain_source(basis, data.k); }

    PatternSource out_source(double a, double b) const {
        const OodBasis ood = make_ood_basis(basis, experiment_ood_coeff(data.m1, a, b));
        return out_domain_source(basis, ood, data.k_prime);
    }
};

inline TaskSet ood_tasks() { return all_tasks(3, Domain::out); }

inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, const Lab& lab) {
    Checkpoint ck;
    ck.config = config_to_json(cfg);
    ck.seed = lab.seed;
    ck.step = cfg.train.t;
    ck.params = lab.params;
    return ck;
}

inline Lab train_lab(const ExperimentConfig& cfg, const TrainObserver& observer = {},
                     unsigned threads = 1) {
    TrainResult r = train(cfg.train_config(), observer, threads);
    Lab lab;
    lab.params = std::move(r.params);
    lab.basis = std::move(r.basis);
    lab.train_tasks = std::move(r.train_tasks);
    lab.unseen = std::move(r.unseen);
    lab.data = cfg.data;
    lab.seed = cfg.seed;
    lab.log = std::move(r.log);
    return lab;
}

/// The data configuration and basis are rebuilt from the config echoed in the
/// checkpoint, so a checkpoint carries everything needed to evaluate it.
inline Lab lab_from_checkpoint(const Checkpoint& ck) {
    const ExperimentConfig echo = parse_config(ck.config.dump());
    Lab lab;
    lab.params = ck.params;
    lab.data = echo.data;
    lab.seed = ck.seed;
    lab.basis = make_basis(lab.data, derive_seed(ck.seed, stream::basis));
    lab.train_tasks = make_training_tasks(lab.data.m1, echo.train.task_u);
    lab.unseen = unseen_tasks(lab.train_tasks, lab.data.m1);
    return lab;
}

inline Lab obtain_lab(const ExperimentConfig& cfg, unsigned threads = 1) {
    if (cfg.checkpoint.empty()) return train_lab(cfg, {}, threads);
    return lab_from_checkpoint(load_checkpoint(cfg.checkpoint));
}

using Outputs = std::vector<std::pair<std::string, std::string>>;  // file name, contents

// ---------------------------------------------------------------------------
// eval

struct EvalSets {
    std::vector<Prompt> in_train;
    std::vector<Prompt> in_unseen;
    std::vector<Prompt> out;
};

inline EvalSets make_eval_sets(const Lab& lab, const ExperimentConfig& cfg, double alpha_prime,
                               int l, int n) {
    EvalSets s;
    Rng rng = make_rng(cfg.seed, stream::eval, 2);
    const PatternSource in = lab.in_source();
    s.in_train = make_eval_prompts(in, lab.train_tasks, alpha_prime, l, n, rng);
    if (!lab.unseen.tasks.empty())
        s.in_unseen = make_eval_prompts(in, lab.unseen, alpha_prime, l, n, rng);
    s.out = make_eval_prompts(lab.out_source(cfg.eval.ood_a, cfg.eval.ood_b), ood_tasks(),
                              alpha_prime, l, n, rng);
    return s;
}

inline std::string eval_csv(const Lab& lab, const ExperimentConfig& cfg) {
    const EvalSets s = make_eval_sets(lab, cfg, cfg.eval.alpha_prime, cfg.eval.l_ts, cfg.eval.n_eval);
    const PatternSource in = lab.in_source();
    const PatternSource out = lab.out_source(cfg.eval.ood_a, cfg.eval.ood_b);
    std::ostringstream os;
    os << metrics_csv_header() << "\n";
    os << metrics_csv_row("in_train_tasks", evaluate(lab.params, s.in_train, &in)) << "\n";
    if (!s.in_unseen.empty())
        os << metrics_csv_row("in_unseen_tasks", evaluate(lab.params, s.in_unseen, &in)) << "\n";
    os << metrics_csv_row("out", evaluate(lab.params, s.out, &out)) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckRun {
    std::vector<GradCheckReport> reports;
    bool all_pass = true;
    double max_rel_err = 0.0;
    int excluded = 0;

    std::string csv() const {
        std::ostringstream os;
        os << grad_check_csv_header() << "\n";
        for (const auto& r : reports) os << grad_check_csv_row(r) << "\n";
        return os.str();
    }
};

inline GradcheckRun run_gradcheck(const ExperimentConfig& cfg, unsigned threads = 1) {
    const auto& g = cfg.gradcheck;
    DataConfig d;
    d.d_x = g.d_x;
    d.d_y = g.d_y;
    d.m1 = g.m1;
    d.m2 = g.d_x - g.m1;
    d.beta = cfg.data.beta;
    d.k = cfg.data.k;
    ModelConfig m;
    m.d_x = g.d_x;
    m.d_y = g.d_y;
    m.m_a = g.m_a;
    m.m_b = g.m_b;
    m.m = g.m;
    m.delta = cfg.model.delta;
    m.include_query_in_attention = cfg.model.include_query_in_attention;

    GradcheckRun run;
    run.reports.resize(static_cast<std::size_t>(g.instances));
    parallel_for(run.reports.size(), threads, [&](std::size_t i) {
        const std::uint64_t s = cfg.seed + i;
        const GradInstance inst = random_grad_instance(d, m, g.l, s);
        GradCheckReport r = grad_check(inst.params, inst.prompt, inst.z, g.eps, g.tol);
        r.seed = s;
        run.reports[i] = r;
    });
    for (const auto& r : run.reports) {
        if (r.kink_excluded) {
            ++run.excluded;
            continue;
        }
        run.all_pass &= r.pass;
        run.max_rel_err = std::max(run.max_rel_err, r.max_rel_err);
    }
    return run;
}

// ---------------------------------------------------------------------------
// mechanism: projections, concentration and neuron alignment over training

inline std::string mechanism_header() {
    return "step,attn_conc_in,attn_conc_out,q_norm,q_match,q_other_rel,q_irrel,k_norm,k_match,"
           "k_other_rel,k_irrel,k_dec_match,median_cos_label,median_cos_feat,low_norm_fraction";
}

inline Outputs run_mechanism(const ExperimentConfig& cfg, unsigned threads = 1) {
    // Probe prompts are fixed up front so every step is measured on the same set.
    const TrainConfig tc = cfg.train_config();
    const PatternBasis basis = make_basis(cfg.data, derive_seed(cfg.seed, stream::basis));
    Lab probe_lab;
    probe_lab.basis = basis;
    probe_lab.data = cfg.data;
    probe_lab.train_tasks = make_training_tasks(cfg.data.m1, tc.task_u);
    probe_lab.unseen = unseen_tasks(probe_lab.train_tasks, cfg.data.m1);
    const int n_probe = std::min(cfg.eval.n_eval, 500);
    const EvalSets sets = make_eval_sets(probe_lab, cfg, cfg.eval.alpha_prime, cfg.eval.l_ts, n_probe);
    const PatternSource in = probe_lab.in_source();
    const std::vector<Prompt>& in_prompts = sets.in_unseen.empty() ? sets.in_train : sets.in_unseen;

    std::ostringstream mech;
    mech << mechanism_header() << "\n";
    auto observe = [&](long step, const ModelParams& p) {
        const MetricsRecord mi = evaluate(p, in_prompts, &in);
        const MetricsRecord mo = evaluate(p, sets.out);
        const AlignmentSummary al = summarize_alignment(neuron_stats(p, basis));
        const auto& pr = mi.proj;
        mech << step;
        for (double v : {mi.mean_attn_concentration, mo.mean_attn_concentration, pr.q_norm, pr.q_match,
                         pr.q_other_rel, pr.q_irrel, pr.k_norm, pr.k_match, pr.k_other_rel, pr.k_irrel,
                         pr.k_dec_match, al.median_cos_label, al.median_cos_feat, al.low_norm_fraction})
            mech << "," << fmt_double(v);
        mech << "\n";
    };
    const Lab lab = train_lab(cfg, observe, threads);

    std::ostringstream neurons;
    neurons << neuron_csv_header() << "\n";
    const auto ns = neuron_stats(lab.params, lab.basis);
    for (std::size_t i = 0; i < ns.size(); ++i) neurons << neuron_csv_row(i, ns[i]) << "\n";
    return {{"mechanism.csv", mech.str()},
            {"neurons.csv", neurons.str()},
            {"train_log.csv", lab.log.to_csv()}};
}

// ---------------------------------------------------------------------------
// prune

inline std::vector<Prompt> prune_prompts(const Lab& lab, const ExperimentConfig& cfg) {
    Rng rng = make_rng(cfg.seed, stream::prune, 1);
    if (cfg.prune.domain == "out")
        return make_eval_prompts(lab.out_source(cfg.eval.ood_a, cfg.eval.ood_b), ood_tasks(),
                                 cfg.eval.alpha_prime, cfg.eval.l_ts, cfg.eval.n_eval, rng);
    const TaskSet& ts = lab.unseen.tasks.empty() ? lab.train_tasks : lab.unseen;
    return make_eval_prompts(lab.in_source(), ts, cfg.eval.alpha_prime, cfg.eval.l_ts,
                             cfg.eval.n_eval, rng);
}

inline std::vector<PruneCurveRow> run_prune_curve(const Lab& lab, const ExperimentConfig& cfg) {
    std::vector<PruneStrategy> strategies;
    for (const auto& s : cfg.prune.strategies) strategies.push_back(prune_strategy_from_string(s));
    std::vector<double> ratios = cfg.prune.ratios;
    std::sort(ratios.begin(), ratios.end());
    return pruning_curve(lab.params, prune_prompts(lab, cfg), ratios, strategies, cfg.seed);
}

// ---------------------------------------------------------------------------
// baselines

inline std::vector<BaselineRow> run_baselines(const Lab& lab, const ExperimentConfig& cfg,
                                              unsigned threads = 1) {
    const auto& b = cfg.baselines;
    const bool out = b.domain == "out";
    const PatternSource src = out ? lab.out_source(cfg.eval.ood_a, cfg.eval.ood_b) : lab.in_source();
    const TaskSet tasks = out ? ood_tasks() : (lab.unseen.tasks.empty() ? lab.train_tasks : lab.unseen);
    return baseline_compare(&lab.params, src, tasks, b.alpha_prime, b.l_values, cfg.eval.n_eval,
                            cfg.seed, {b.steps, b.lr, b.l2}, threads);
}

// ---------------------------------------------------------------------------
// sweep-s1

struct S1Row {
    double s1 = 0.0;
    double a = 0.0;
    double b = 0.0;
    bool flagged = false;
    double error = 0.0;
    double attn_conc = 0.0;
    int n_eval = 0;
};

inline std::vector<S1Row> run_sweep_s1(const Lab& lab, const ExperimentConfig& cfg,
                                       unsigned threads = 1) {
    const auto& vals = cfg.sweep.s1_values;
    std::vector<S1Row> rows(vals.size());
    parallel_for(vals.size(), threads, [&](std::size_t i) {
        S1Row& r = rows[i];
        r.s1 = vals[i];
        std::tie(r.a, r.b) = s1_coefficients(vals[i]);
        const OodBasis ood = make_ood_basis(lab.basis, experiment_ood_coeff(lab.data.m1, r.a, r.b));
        r.flagged = !ood.condition_holds();
        const PatternSource src = out_domain_source(lab.basis, ood, lab.data.k_prime);
        Rng rng = make_rng(cfg.seed + i, stream::eval);
        const auto prompts = make_eval_prompts(src, ood_tasks(), cfg.eval.alpha_prime,
                                               cfg.eval.l_ts, cfg.eval.n_eval, rng);
        const MetricsRecord m = evaluate(lab.params, prompts);
        r.error = m.classification_error;
        r.attn_conc = m.mean_attn_concentration;
        r.n_eval = cfg.eval.n_eval;
    });
    return rows;
}

inline std::string s1_csv(const std::vector<S1Row>& rows) {
    std::ostringstream os;
    os << "s1,a,b,below_one,error,attn_conc,n_eval\n";
    for (const auto& r : rows)
        os << fmt_double(r.s1) << "," << fmt_double(r.a) << "," << fmt_double(r.b) << ","
           << (r.flagged ? 1 : 0) << "," << fmt_double(r.error) << "," << fmt_double(r.attn_conc)
           << "," << r.n_eval << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// sweep-alpha-prime and sweep-lts

struct AlphaPrimeRow {
    std::string domain;
    double alpha_prime = 0.0;
    int l_ts = 0;
    double error = 0.0;
    int n_eval = 0;
};

inline std::vector<AlphaPrimeRow> run_sweep_alpha_prime(const Lab& lab, const ExperimentConfig& cfg,
                                                        unsigned threads = 1) {
    const auto& s = cfg.sweep;
    struct Cell {
        bool out;
        double ap;
        int l;
    };
    std::vector<Cell> cells;
    for (bool out : {false, true})
        for (double ap : s.alpha_primes)
            for (int l : s.l_ts_values) cells.push_back({out, ap, l});
    std::vector<AlphaPrimeRow> rows(cells.size());
    const PatternSource in = lab.in_source();
    const PatternSource out = lab.out_source(cfg.eval.ood_a, cfg.eval.ood_b);
    const TaskSet& in_tasks = lab.unseen.tasks.empty() ? lab.train_tasks : lab.unseen;
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        const Cell& c = cells[i];
        Rng rng = make_rng(cfg.seed + i, stream::eval);
        const auto prompts = c.out ? make_eval_prompts(out, ood_tasks(), c.ap, c.l, cfg.eval.n_eval, rng)
                                   : make_eval_prompts(in, in_tasks, c.ap, c.l, cfg.eval.n_eval, rng);
        rows[i] = {c.out ? "out" : "in", c.ap, c.l, classification_error(lab.params, prompts),
                   cfg.eval.n_eval};
    });
    return rows;
}

inline std::string alpha_prime_csv(const std::vector<AlphaPrimeRow>& rows) {
    std::ostringstream os;
    os << "domain,alpha_prime,l_ts,error,n_eval\n";
    for (const auto& r : rows)
        os << r.domain << "," << fmt_double(r.alpha_prime) << "," << r.l_ts << "," << fmt_double(r.error)
           << "," << r.n_eval << "\n";
    return os.str();
}

struct LtsRow {
    std::string domain;
    double alpha_prime = 0.0;
    int min_l_ts = -1;  // -1: no tested length reaches the threshold
};

/// Smallest tested l_ts whose error is at or below the threshold.
inline std::vector<LtsRow> min_lts(const std::vector<AlphaPrimeRow>& grid, double threshold) {
    std::vector<LtsRow> out;
    for (const auto& r : grid) {
        auto it = std::find_if(out.begin(), out.end(), [&](const LtsRow& o) {
            return o.domain == r.domain && o.alpha_prime == r.alpha_prime;
        });
        if (it == out.end()) {
            out.push_back({r.domain, r.alpha_prime, -1});
            it = out.end() - 1;
        }
        if (r.error <= threshold && (it->min_l_ts < 0 || r.l_ts < it->min_l_ts)) it->min_l_ts = r.l_ts;
    }
    return out;
}

inline std::string lts_csv(const std::vector<LtsRow>& rows, double threshold) {
    std::ostringstream os;
    os << "domain,alpha_prime,min_l_ts,threshold\n";
    for (const auto& r : rows)
        os << r.domain << "," << fmt_double(r.alpha_prime) << "," << r.min_l_ts << ","
           << fmt_double(threshold) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// sweep-alpha: training cost against alpha

struct AlphaRow {
    double alpha = 0.0;
    int l_tr = 0;
    std::uint64_t seed = 0;
    long steps_to_threshold = -1;
    double final_unseen_error = 0.0;
};

inline std::vector<AlphaRow> run_sweep_alpha(const ExperimentConfig& cfg, const std::vector<double>& alphas,
                                             const std::vector<int>& l_trs, unsigned threads = 1) {
    struct Cell {
        double alpha;
        int l_tr;
        int rep;
    };
    std::vector<Cell> cells;
    for (double a : alphas)
        for (int l : l_trs)
            for (int r = 0; r < cfg.sweep.seeds; ++r) cells.push_back({a, l, r});
    std::vector<AlphaRow> rows(cells.size());
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        ExperimentConfig c = cfg;
        c.train.alpha = cells[i].alpha;
        c.train.l_tr = cells[i].l_tr;
        // Replicate r uses seed + r for every (alpha, l_tr), so cells differ only in alpha and l_tr.
        c.seed = cfg.seed + static_cast<std::uint64_t>(cells[i].rep);
        const TrainResult tr = train(c.train_config());
        rows[i] = {cells[i].alpha, cells[i].l_tr, c.seed, tr.log.steps_to(cfg.sweep.threshold),
                   tr.log.records.back().err_unseen_tasks};
    });
    return rows;
}

struct AlphaSummary {
    double alpha = 0.0;
    int required_l_tr = -1;   // smallest l_tr where every seed reaches the threshold
    double mean_steps = -1.0;  // at the configured l_tr; -1 if some seed never reaches it
};

inline std::vector<AlphaSummary> summarize_alpha(const std::vector<AlphaRow>& rows, int l_tr_ref) {
    std::map<double, AlphaSummary> by;
    std::map<std::pair<double, int>, bool> all_reach;
    std::map<double, std::vector<long>> steps;
    for (const auto& r : rows) {
        by[r.alpha].alpha = r.alpha;
        auto key = std::make_pair(r.alpha, r.l_tr);
        if (!all_reach.count(key)) all_reach[key] = true;
        all_reach[key] = all_reach[key] && r.steps_to_threshold >= 0;
        if (r.l_tr == l_tr_ref) steps[r.alpha].push_back(r.steps_to_threshold);
    }
    for (const auto& [key, ok] : all_reach) {
        auto& s = by[key.first];
        if (ok && (s.required_l_tr < 0 || key.second < s.required_l_tr)) s.required_l_tr = key.second;
    }
    for (auto& [a, s] : by) {
        const auto& v = steps[a];
        if (!v.empty() && std::none_of(v.begin(), v.end(), [](long x) { return x < 0; })) {
            double t = 0.0;
            for (long x : v) t += static_cast<double>(x);
            s.mean_steps = t / static_cast<double>(v.size());
        }
    }
    std::vector<AlphaSummary> out;
    for (const auto& [a, s] : by) out.push_back(s);
    return out;
}

inline std::string alpha_csv(const std::vector<AlphaRow>& rows) {
    std::ostringstream os;
    os << "alpha,l_tr,seed,steps_to_threshold,final_unseen_error\n";
    for (const auto& r : rows)
        os << fmt_double(r.alpha) << "," << r.l_tr << "," << r.seed << "," << r.steps_to_threshold << ","
           << fmt_double(r.final_unseen_error) << "\n";
    return os.str();
}

inline std::string alpha_summary_csv(const std::vector<AlphaSummary>& rows) {
    std::ostringstream os;
    os << "alpha,required_l_tr,mean_steps_to_threshold\n";
    for (const auto& r : rows)
        os << fmt_double(r.alpha) << "," << r.required_l_tr << "," << fmt_double(r.mean_steps) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// sweep-taskcount

/// Training sets of a given size built around the chain j -> j+1. Up to M1
/// tasks are a random subset of the chain; beyond that the whole chain plus a
/// random subset of the remaining tasks. Kept in canonical (k-major) order.
inline TaskSet sample_task_set(int m1, int size, Rng& rng) {
    if (size < 1 || size > m1 * (m1 - 1))
        throw InvalidArgument("sample_task_set: size must lie in [1, M1(M1-1)]");
    const TaskSet full = make_training_tasks(m1, m1 - 1);
    const auto n_chain = static_cast<std::size_t>(m1);
    const auto pick = [&](std::size_t lo, std::size_t hi, std::size_t count) {
        std::vector<std::size_t> idx(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        for (std::size_t i = 0; i < count; ++i)
            std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
        idx.resize(count);
        return idx;
    };
    std::vector<std::size_t> chosen;
    const auto n = static_cast<std::size_t>(size);
    if (n <= n_chain) {
        chosen = pick(0, n_chain, n);
    } else {
        chosen = pick(n_chain, full.tasks.size(), n - n_chain);
        for (std::size_t i = 0; i < n_chain; ++i) chosen.push_back(i);
    }
    std::sort(chosen.begin(), chosen.end());
    TaskSet ts;
    for (std::size_t i : chosen) ts.tasks.push_back(full.tasks[i]);
    return ts;
}

/// Every pattern is mapped to +1 by some task and to -1 by some task.
inline bool covers_all(const TaskSet& ts, int m1) {
    std::vector<char> pos(static_cast<std::size_t>(m1), 0), neg(pos);
    for (const Task& t : ts.tasks) {
        pos[static_cast<std::size_t>(t.pos_idx)] = 1;
        neg[static_cast<std::size_t>(t.neg_idx)] = 1;
    }
    return std::all_of(pos.begin(), pos.end(), [](char c) { return c; }) &&
           std::all_of(neg.begin(), neg.end(), [](char c) { return c; });
}

struct TaskCountRow {
    int size = 0;
    bool covers = false;    // every pattern seen with both labels
    bool balanced = false;  // every pattern seen equally often with each label
    std::uint64_t seed = 0;
    double err_unseen = 0.0;
    int n_unseen_tasks = 0;
};

inline std::vector<TaskCountRow> run_sweep_taskcount(const ExperimentConfig& cfg,
                                                     const std::vector<int>& sizes,
                                                     unsigned threads = 1) {
    struct Cell {
        int size;
        int rep;
    };
    std::vector<Cell> cells;
    for (int s : sizes)
        for (int r = 0; r < cfg.sweep.seeds; ++r) cells.push_back({s, r});
    std::vector<TaskCountRow> rows(cells.size());
    parallel_for(cells.size(), threads, [&](std::size_t i) {
        ExperimentConfig c = cfg;
        c.seed = cfg.seed + static_cast<std::uint64_t>(cells[i].rep);
        TrainConfig tc = c.train_config();
        Rng task_rng = make_rng(c.seed, stream::tasks, static_cast<std::uint64_t>(cells[i].size));
        tc.train_tasks = sample_task_set(cfg.data.m1, cells[i].size, task_rng);
        const TrainResult tr = train(tc);
        TaskCountRow& r = rows[i];
        r.size = cells[i].size;
        r.covers = covers_all(*tc.train_tasks, cfg.data.m1);
        r.balanced = check_condition(*tc.train_tasks, cfg.data.m1);
        r.seed = c.seed;
        r.n_unseen_tasks = static_cast<int>(tr.unseen.size());
        r.err_unseen = std::numeric_limits<double>::quiet_NaN();
        if (!tr.unseen.tasks.empty()) {
            Rng rng = make_rng(c.seed, stream::eval, 3);
            const auto prompts = make_eval_prompts(in_domain_source(tr.basis, cfg.data.k), tr.unseen,
                                                   cfg.eval.alpha_prime, cfg.eval.l_ts, cfg.eval.n_eval, rng);
            r.err_unseen = classification_error(tr.params, prompts);
        }
    });
    return rows;
}

inline std::string taskcount_csv(const std::vector<TaskCountRow>& rows) {
    std::ostringstream os;
    os << "size,covers,balanced,seed,err_unseen,n_unseen_tasks\n";
    for (const auto& r : rows)
        os << r.size << "," << (r.covers ? 1 : 0) << "," << (r.balanced ? 1 : 0) << "," << r.seed << "," << fmt_double(r.err_unseen)
           << "," << r.n_unseen_tasks << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Dispatcher

inline std::string manifest_text(const ExperimentConfig& cfg, const Outputs& outs) {
    std::ostringstream os;
    os << "icl-lab " << kVersion << "\n";
    os << "experiment: " << cfg.experiment << "\n";
    os << "seed: " << cfg.seed << "\n";
    os << "outputs:";
    for (const auto& [name, body] : outs) os << " " << name;
    os << "\nconfig:\n" << dump_config(cfg);
    return os.str();
}

struct RunResult {
    Outputs outputs;
    int status = 0;  // nonzero when a self-check inside the experiment failed
    std::string summary;
};

inline RunResult compute_experiment(const ExperimentConfig& cfg, unsigned threads = 1) {
    RunResult rr;
    const std::string& e = cfg.experiment;
    std::ostringstream sum;
    if (e == "train") {
        const Lab lab = train_lab(cfg, {}, threads);
        const TaskSet tasks = lab.train_tasks;
        rr.outputs = {{"train_log.csv", lab.log.to_csv()},
                      {"checkpoint.json", checkpoint_to_string(make_checkpoint(cfg, lab))},
                      {"basis.json", basis_to_json(lab.basis, &tasks).dump(1) + "\n"}};
        const auto& last = lab.log.records.back();
        sum << "final unseen-task error " << fmt_double(last.err_unseen_tasks) << ", attention "
            << fmt_double(last.attn_conc);
    } else if (e == "eval") {
        if (cfg.checkpoint.empty()) throw InvalidArgument("eval: a checkpoint path is required");
        const Lab lab = obtain_lab(cfg, threads);
        rr.outputs = {{"metrics.csv", eval_csv(lab, cfg)}};
    } else if (e == "gradcheck") {
        const GradcheckRun run = run_gradcheck(cfg, threads);
        rr.outputs = {{"gradcheck.csv", run.csv()}};
        rr.status = run.all_pass ? 0 : 1;
        sum << (run.all_pass ? "pass" : "FAIL") << ": max relative error " << fmt_double(run.max_rel_err)
            << " over " << run.reports.size() - static_cast<std::size_t>(run.excluded)
            << " instances (" << run.excluded << " kink-adjacent excluded)";
    } else if (e == "mechanism") {
        rr.outputs = run_mechanism(cfg, threads);
    } else if (e == "prune") {
        const Lab lab = obtain_lab(cfg, threads);
        rr.outputs = {{"prune_curve.csv", prune_curve_csv(run_prune_curve(lab, cfg))},
                      {"norm_hist.csv", norm_histogram_csv(lab.params)}};
    } else if (e == "baselines") {
        const Lab lab = obtain_lab(cfg, threads);
        rr.outputs = {{"baselines.csv", baseline_csv(run_baselines(lab, cfg, threads))}};
    } else if (e == "sweep-s1") {
        const Lab lab = obtain_lab(cfg, threads);
        rr.outputs = {{"sweep_s1.csv", s1_csv(run_sweep_s1(lab, cfg, threads))}};
    } else if (e == "sweep-alpha-prime" || e == "sweep-lts") {
        const Lab lab = obtain_lab(cfg, threads);
        const auto grid = run_sweep_alpha_prime(lab, cfg, threads);
        if (e == "sweep-alpha-prime")
            rr.outputs = {{"sweep_alpha_prime.csv", alpha_prime_csv(grid)}};
        else
            rr.outputs = {{"sweep_lts.csv", lts_csv(min_lts(grid, cfg.sweep.threshold), cfg.sweep.threshold)},
                          {"sweep_alpha_prime.csv", alpha_prime_csv(grid)}};
    } else if (e == "sweep-alpha") {
        std::vector<int> l_trs = cfg.sweep.l_tr_values;
        if (std::find(l_trs.begin(), l_trs.end(), cfg.train.l_tr) == l_trs.end())
            l_trs.push_back(cfg.train.l_tr);
        std::sort(l_trs.begin(), l_trs.end());
        const auto rows = run_sweep_alpha(cfg, cfg.sweep.alphas, l_trs, threads);
        rr.outputs = {{"sweep_alpha.csv", alpha_csv(rows)},
                      {"sweep_alpha_summary.csv", alpha_summary_csv(summarize_alpha(rows, cfg.train.l_tr))}};
    } else if (e == "sweep-taskcount") {
        rr.outputs = {{"sweep_taskcount.csv",
                       taskcount_csv(run_sweep_taskcount(cfg, cfg.sweep.taskcount_sizes, threads))}};
    } else {
        throw InvalidArgument("unknown experiment: " + e);
    }
    rr.summary = sum.str();
    return rr;
}

inline void write_text(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + path.string());
    out << body;
}

/// Runs the configured experiment and writes its files plus manifest.txt into
/// cfg.out_dir.
inline RunResult run_experiment(const ExperimentConfig& cfg, unsigned threads = 1) {
    cfg.validate();
    if (!cfg.checkpoint.empty() && !std::filesystem::exists(cfg.checkpoint))
        throw InvalidArgument("checkpoint not found: " + cfg.checkpoint);
    RunResult rr = compute_experiment(cfg, threads);
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    for (const auto& [name, body] : rr.outputs) write_text(dir / name, body);
    write_text(dir / "manifest.txt", manifest_text(cfg, rr.outputs));
    return rr;
}

}  // namespace icl
