#pragma once

// Online mini-batch SGD on the hinge loss: every step draws B fresh prompts
// with tasks taken round-robin from the training set, averages the per-prompt
// gradients in a fixed sequential order, and updates W_Q, W_K, W_V, W_O.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/gradients.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/parallel.hpp"
#include "icl_lab/probes.hpp"
#include "icl_lab/rng.hpp"

namespace icl {

struct TrainConfig {
    int b = 64;
    long t = 3000;
    double eta = 0.2;
    double alpha = 0.8;
    int l_tr = 20;
    int task_u = 1;
    std::uint64_t seed = 0;
    long eval_every = 50;
    int log_eval_prompts = 256;  // per task family at each log point
    bool log_wall_clock = false;  // seconds column; off keeps the log byte-stable
    DataConfig data;
    ModelConfig model;
    std::optional<TaskSet> train_tasks;  // overrides the U-chain construction

    void validate() const {
        if (b < 1) throw InvalidArgument("train: B must be >= 1");
        if (t < 1) throw InvalidArgument("train: T must be >= 1");
        if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("train: eta must lie in (0, 1]");
        if (l_tr < 1) throw InvalidArgument("train: l_tr must be >= 1");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("train: alpha must lie in (0, 1]");
        if (eval_every < 1) throw InvalidArgument("train: eval_every must be >= 1");
        if (log_eval_prompts < 1) throw InvalidArgument("train: log_eval_prompts must be >= 1");
        data.validate();
        model.validate();
        if (model.d_x != data.d_x || model.d_y != data.d_y)
            throw InvalidArgument("train: model and data dimensions disagree");
    }
};

struct TrainRecord {
    long step = 0;
    double loss = 0.0;
    double err_train_tasks = 0.0;
    double err_unseen_tasks = 0.0;  // nan when every task is a training task
    double attn_conc = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    bool wall_clock = false;

    static std::string csv_header() {
        return "step,loss,err_train_tasks,err_unseen_tasks,attn_conc,seconds";
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << csv_header() << "\n";
        for (const auto& r : records)
            os << r.step << "," << fmt_double(r.loss) << "," << fmt_double(r.err_train_tasks) << ","
               << fmt_double(r.err_unseen_tasks) << "," << fmt_double(r.attn_conc) << ","
               << (wall_clock ? fmt_double(r.seconds) : std::string("-")) << "\n";
        return os.str();
    }

    /// First logged step whose unseen-task error is at or below `thr`; -1 if none.
    long steps_to(double thr) const {
        for (const auto& r : records)
            if (r.err_unseen_tasks <= thr) return r.step;
        return -1;
    }
};

struct Example {
    Prompt prompt;
    int z = 1;
};

/// B prompts; tasks taken round-robin from a random offset into the training
/// set, then shuffled, so every task appears floor(B/|T|) or ceil(B/|T|) times.
inline std::vector<Example> sample_batch(const TaskSet& tasks, const PatternSource& src, int b,
                                         double alpha, int l, Rng& rng) {
    if (b < 1) throw InvalidArgument("sample_batch: B must be >= 1");
    if (tasks.tasks.empty()) throw InvalidArgument("sample_batch: empty task set");
    const std::size_t n = tasks.tasks.size();
    const std::size_t offset = uniform_index(rng, n);
    std::vector<std::size_t> order(static_cast<std::size_t>(b));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = (offset + i) % n;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Example> out;
    out.reserve(order.size());
    for (std::size_t ti : order) {
        Prompt p = build_prompt(src, tasks.tasks[ti], alpha, l, rng);
        const int z = p.z;
        out.push_back({std::move(p), z});
    }
    return out;
}

/// Batch-mean hinge loss and gradient. Per-example work may run on several
/// threads; the reduction is a sequential fold in batch order either way, so
/// the result does not depend on the thread count.
inline std::pair<double, GradientSet> batch_gradient(const ModelParams& params,
                                                     const std::vector<Example>& batch,
                                                     unsigned threads = 1) {
    if (batch.empty()) throw InvalidArgument("batch_gradient: empty batch");
    GradientSet sum = GradientSet::zeros_like(params);
    double loss = 0.0;
    if (threads <= 1) {
        for (const Example& ex : batch) {
            const ForwardCache c = forward(params, ex.prompt);
            loss += hinge_loss(c.f, ex.z);
            backward_into(params, ex.prompt, ex.z, c, sum);
        }
    } else {
        std::vector<GradientSet> grads(batch.size());
        std::vector<double> losses(batch.size());
        parallel_for(batch.size(), threads, [&](std::size_t i) {
            const ForwardCache c = forward(params, batch[i].prompt);
            losses[i] = hinge_loss(c.f, batch[i].z);
            grads[i] = backward(params, batch[i].prompt, batch[i].z, c, CacheCheck::trust);
        });
        for (std::size_t i = 0; i < batch.size(); ++i) {
            sum.add_scaled(grads[i], 1.0);
            loss += losses[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (Mat* m : sum.arrays())
        for (double& v : m->data()) v *= inv;
    return {loss * inv, std::move(sum)};
}

/// In-place update; returns the batch-mean loss before the step.
inline double apply_sgd_step(ModelParams& params, const std::vector<Example>& batch, double eta,
                             long step = 0, unsigned threads = 1) {
    auto [loss, g] = batch_gradient(params, batch, threads);
    if (!std::isfinite(loss) || !g.all_finite())
        throw Divergence("non-finite gradient at step " + std::to_string(step), step);
    auto w = trainable(params);
    auto d = g.arrays();
    for (std::size_t k = 0; k < 4; ++k) axpy(-eta, d[k]->data(), w[k]->data());
    return loss;
}

inline ModelParams sgd_step(const ModelParams& params, const std::vector<Example>& batch,
                            double eta) {
    ModelParams out = params;
    apply_sgd_step(out, batch, eta);
    return out;
}

struct TrainResult {
    ModelParams params;
    TrainLog log;
    PatternBasis basis;
    TaskSet train_tasks;
    TaskSet unseen;
    long prompts_consumed = 0;
};

using TrainObserver = std::function<void(long step, const ModelParams&)>;

inline TrainResult train(const TrainConfig& cfg, const TrainObserver& observer = {},
                         unsigned threads = 1) {
    cfg.validate();
    TrainResult res;
    res.basis = make_basis(cfg.data, derive_seed(cfg.seed, stream::basis));
    res.train_tasks = cfg.train_tasks ? *cfg.train_tasks : make_training_tasks(cfg.data.m1, cfg.task_u);
    res.unseen = unseen_tasks(res.train_tasks, cfg.data.m1);
    res.params = init_params(cfg.model, derive_seed(cfg.seed, stream::init));
    res.log.wall_clock = cfg.log_wall_clock;
    const PatternSource src = in_domain_source(res.basis, cfg.data.k);

    Rng eval_rng = make_rng(cfg.seed, stream::eval, 1);
    const auto eval_train =
        make_eval_prompts(src, res.train_tasks, cfg.alpha, cfg.l_tr, cfg.log_eval_prompts, eval_rng);
    std::vector<Prompt> eval_unseen;
    if (!res.unseen.tasks.empty())
        eval_unseen =
            make_eval_prompts(src, res.unseen, cfg.alpha, cfg.l_tr, cfg.log_eval_prompts, eval_rng);

    const auto t0 = std::chrono::steady_clock::now();
    auto log_point = [&](long step) {
        TrainRecord r;
        r.step = step;
        const MetricsRecord mt = evaluate(res.params, eval_train);
        r.loss = mt.mean_hinge;
        r.err_train_tasks = mt.classification_error;
        if (!eval_unseen.empty()) {
            const MetricsRecord mu = evaluate(res.params, eval_unseen);
            r.err_unseen_tasks = mu.classification_error;
            r.attn_conc = mu.mean_attn_concentration;
        } else {
            r.err_unseen_tasks = std::numeric_limits<double>::quiet_NaN();
            r.attn_conc = mt.mean_attn_concentration;
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.records.push_back(r);
        if (observer) observer(step, res.params);
    };

    Rng rng = make_rng(cfg.seed, stream::train);
    log_point(0);
    for (long step = 1; step <= cfg.t; ++step) {
        const auto batch = sample_batch(res.train_tasks, src, cfg.b, cfg.alpha, cfg.l_tr, rng);
        res.prompts_consumed += static_cast<long>(batch.size());
        apply_sgd_step(res.params, batch, cfg.eta, step, threads);
        if (step % cfg.eval_every == 0 || step == cfg.t) log_point(step);
    }
    return res;
}

}  // namespace icl
