#pragma once

// Experiment configuration as a JSON document. Every section and key is
// optional; missing keys take the defaults below and unknown keys are errors.
// dump_config(load_config(x)) is the canonical form of x: every key present,
// keys sorted, two-space indent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icl_lab/datagen.hpp"
#include "icl_lab/errors.hpp"
#include "icl_lab/model.hpp"
#include "icl_lab/pruning.hpp"
#include "icl_lab/trainer.hpp"

namespace icl {

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> n{"train",      "eval",          "gradcheck",
                                            "mechanism",  "prune",         "baselines",
                                            "sweep-s1",   "sweep-alpha-prime", "sweep-lts",
                                            "sweep-alpha", "sweep-taskcount"};
    return n;
}

struct EvalSection {
    double alpha_prime = 0.8;
    int l_ts = 20;
    int n_eval = 2000;
    double ood_a = std::sqrt(0.41);  // mu'_1 = 0.3(mu_1 - mu_2) + a mu_5 + b mu_6
    double ood_b = std::sqrt(0.41);
};

struct GradcheckSection {
    int instances = 50;
    double eps = 1e-5;
    double tol = 1e-5;
    int l = 10;
    int d_x = 10;
    int d_y = 10;
    int m1 = 3;
    int m_a = 20;
    int m_b = 20;
    int m = 50;
};

struct PruneSection {
    std::vector<double> ratios{0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0};
    std::vector<std::string> strategies{"smallest", "largest", "random"};
    std::string domain = "in";
};

struct BaselineSection {
    double alpha_prime = 0.6;
    std::vector<int> l_values{10, 20, 40};
    std::string domain = "out";
    int steps = 500;
    double lr = 0.1;
    double l2 = 1e-3;
};

struct SweepSection {
    std::vector<double> s1_values{0.3, 0.5, 0.69, 0.9, 1.0, 1.1, 1.2, 1.28};
    std::vector<double> alpha_primes{0.4, 0.6, 0.8, 1.0};
    std::vector<int> l_ts_values{1, 2, 3, 4, 6, 8, 10, 15, 20, 30, 40, 60};
    std::vector<double> alphas{0.4, 0.6, 0.8};
    std::vector<int> l_tr_values{5, 10, 20};
    std::vector<int> taskcount_sizes{2, 3, 4, 5, 6, 12, 18, 24};
    double threshold = 0.05;
    int seeds = 3;
};

struct ExperimentConfig {
    std::string experiment = "train";
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::string checkpoint;  // empty: eval-family experiments train their own model
    DataConfig data;
    ModelConfig model;
    TrainConfig train;  // data/model/seed are filled from the fields above
    EvalSection eval;
    GradcheckSection gradcheck;
    PruneSection prune;
    BaselineSection baselines;
    SweepSection sweep;

    /// The trainer's view with data, model and seed stitched in.
    TrainConfig train_config() const {
        TrainConfig t = train;
        t.data = data;
        t.model = model;
        t.model.d_x = data.d_x;
        t.model.d_y = data.d_y;
        t.seed = seed;
        return t;
    }

    void validate() const {
        bool known = false;
        for (const auto& n : experiment_names()) known |= n == experiment;
        if (!known) throw ParseError("config: unknown experiment \"" + experiment + "\"");
        train_config().validate();
        if (eval.n_eval < 1) throw ParseError("config: eval.n_eval must be >= 1");
        if (eval.l_ts < 1) throw ParseError("config: eval.l_ts must be >= 1");
        if (!(eval.alpha_prime > 0.0 && eval.alpha_prime <= 1.0))
            throw ParseError("config: eval.alpha_prime must lie in (0, 1]");
        if (gradcheck.instances < 1) throw ParseError("config: gradcheck.instances must be >= 1");
        for (const auto& s : prune.strategies) prune_strategy_from_string(s);
        for (const auto& d : {prune.domain, baselines.domain})
            if (d != "in" && d != "out") throw ParseError("config: domain must be \"in\" or \"out\"");
        if (sweep.seeds < 1) throw ParseError("config: sweep.seeds must be >= 1");
    }
};

namespace detail {

class Reader {
public:
    Reader(const nlohmann::json& j, std::string path, const std::string& text)
        : j_(j), path_(std::move(path)), text_(text) {
        if (!j_.is_object()) throw ParseError("config: " + where() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config: bad value for " + qualify(key) + line_of(key) + ": " + e.what());
        }
    }

    Reader section(const char* key) {
        seen_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return Reader(j_.contains(key) ? j_.at(key) : empty, qualify(key), text_);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ParseError("config: unknown key " + qualify(k) + line_of(k));
    }

private:
    std::string where() const { return path_.empty() ? "top level" : path_; }
    std::string qualify(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    // Best-effort location: the first line where the quoted key appears.
    std::string line_of(const std::string& key) const {
        const auto pos = text_.find("\"" + key + "\"");
        if (pos == std::string::npos) return "";
        const auto line = 1 + std::count(text_.begin(), text_.begin() + static_cast<long>(pos), '\n');
        return " (line " + std::to_string(line) + ")";
    }

    const nlohmann::json& j_;
    std::string path_;
    const std::string& text_;
    std::set<std::string> seen_;
};

inline std::string basis_mode_name(BasisMode m) {
    return m == BasisMode::canonical ? "canonical" : "random-orthonormal";
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::string trimmed = text;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (trimmed.empty()) return c;

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const auto off = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(off), '\n');
        throw ParseError("config: syntax error at line " + std::to_string(line) + ": " + e.what());
    }

    detail::Reader top(j, "", text);
    top.get("experiment", c.experiment);
    top.get("seed", c.seed);
    top.get("out_dir", c.out_dir);
    top.get("checkpoint", c.checkpoint);
    {
        auto r = top.section("data");
        r.get("d_x", c.data.d_x);
        r.get("d_y", c.data.d_y);
        r.get("m1", c.data.m1);
        r.get("m2", c.data.m2);
        r.get("beta", c.data.beta);
        r.get("k", c.data.k);
        r.get("k_prime", c.data.k_prime);
        std::string mode = detail::basis_mode_name(c.data.basis_mode);
        r.get("basis_mode", mode);
        if (mode == "canonical") c.data.basis_mode = BasisMode::canonical;
        else if (mode == "random-orthonormal") c.data.basis_mode = BasisMode::random_orthonormal;
        else throw ParseError("config: data.basis_mode must be \"random-orthonormal\" or \"canonical\"");
        r.finish();
    }
    {
        auto r = top.section("model");
        r.get("m_a", c.model.m_a);
        r.get("m_b", c.model.m_b);
        r.get("m", c.model.m);
        r.get("delta", c.model.delta);
        r.get("xi", c.model.xi);
        r.get("a_magnitude", c.model.a_magnitude);
        r.get("include_query_in_attention", c.model.include_query_in_attention);
        r.finish();
    }
    {
        auto r = top.section("train");
        r.get("b", c.train.b);
        r.get("t", c.train.t);
        r.get("eta", c.train.eta);
        r.get("alpha", c.train.alpha);
        r.get("l_tr", c.train.l_tr);
        r.get("task_u", c.train.task_u);
        r.get("eval_every", c.train.eval_every);
        r.get("log_eval_prompts", c.train.log_eval_prompts);
        r.get("log_wall_clock", c.train.log_wall_clock);
        r.finish();
    }
    {
        auto r = top.section("eval");
        r.get("alpha_prime", c.eval.alpha_prime);
        r.get("l_ts", c.eval.l_ts);
        r.get("n_eval", c.eval.n_eval);
        r.get("ood_a", c.eval.ood_a);
        r.get("ood_b", c.eval.ood_b);
        r.finish();
    }
    {
        auto r = top.section("gradcheck");
        auto& g = c.gradcheck;
        r.get("instances", g.instances);
        r.get("eps", g.eps);
        r.get("tol", g.tol);
        r.get("l", g.l);
        r.get("d_x", g.d_x);
        r.get("d_y", g.d_y);
        r.get("m1", g.m1);
        r.get("m_a", g.m_a);
        r.get("m_b", g.m_b);
        r.get("m", g.m);
        r.finish();
    }
    {
        auto r = top.section("prune");
        r.get("ratios", c.prune.ratios);
        r.get("strategies", c.prune.strategies);
        r.get("domain", c.prune.domain);
        r.finish();
    }
    {
        auto r = top.section("baselines");
        auto& b = c.baselines;
        r.get("alpha_prime", b.alpha_prime);
        r.get("l_values", b.l_values);
        r.get("domain", b.domain);
        r.get("steps", b.steps);
        r.get("lr", b.lr);
        r.get("l2", b.l2);
        r.finish();
    }
    {
        auto r = top.section("sweep");
        auto& s = c.sweep;
        r.get("s1_values", s.s1_values);
        r.get("alpha_primes", s.alpha_primes);
        r.get("l_ts_values", s.l_ts_values);
        r.get("alphas", s.alphas);
        r.get("l_tr_values", s.l_tr_values);
        r.get("taskcount_sizes", s.taskcount_sizes);
        r.get("threshold", s.threshold);
        r.get("seeds", s.seeds);
        r.finish();
    }
    top.finish();
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("config not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["experiment"] = c.experiment;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["checkpoint"] = c.checkpoint;
    j["data"] = {{"d_x", c.data.d_x},       {"d_y", c.data.d_y},   {"m1", c.data.m1},
                 {"m2", c.data.m2},         {"beta", c.data.beta}, {"k", c.data.k},
                 {"k_prime", c.data.k_prime}, {"basis_mode", detail::basis_mode_name(c.data.basis_mode)}};
    j["model"] = {{"m_a", c.model.m_a},
                  {"m_b", c.model.m_b},
                  {"m", c.model.m},
                  {"delta", c.model.delta},
                  {"xi", c.model.xi},
                  {"a_magnitude", c.model.a_magnitude},
                  {"include_query_in_attention", c.model.include_query_in_attention}};
    j["train"] = {{"b", c.train.b},
                  {"t", c.train.t},
                  {"eta", c.train.eta},
                  {"alpha", c.train.alpha},
                  {"l_tr", c.train.l_tr},
                  {"task_u", c.train.task_u},
                  {"eval_every", c.train.eval_every},
                  {"log_eval_prompts", c.train.log_eval_prompts},
                  {"log_wall_clock", c.train.log_wall_clock}};
    j["eval"] = {{"alpha_prime", c.eval.alpha_prime},
                 {"l_ts", c.eval.l_ts},
                 {"n_eval", c.eval.n_eval},
                 {"ood_a", c.eval.ood_a},
                 {"ood_b", c.eval.ood_b}};
    const auto& g = c.gradcheck;
    j["gradcheck"] = {{"instances", g.instances}, {"eps", g.eps}, {"tol", g.tol}, {"l", g.l},
                      {"d_x", g.d_x},             {"d_y", g.d_y}, {"m1", g.m1},   {"m_a", g.m_a},
                      {"m_b", g.m_b},             {"m", g.m}};
    j["prune"] = {{"ratios", c.prune.ratios},
                  {"strategies", c.prune.strategies},
                  {"domain", c.prune.domain}};
    const auto& b = c.baselines;
    j["baselines"] = {{"alpha_prime", b.alpha_prime}, {"l_values", b.l_values}, {"domain", b.domain},
                      {"steps", b.steps},             {"lr", b.lr},             {"l2", b.l2}};
    const auto& s = c.sweep;
    j["sweep"] = {{"s1_values", s.s1_values},       {"alpha_primes", s.alpha_primes},
                  {"l_ts_values", s.l_ts_values},   {"alphas", s.alphas},
                  {"l_tr_values", s.l_tr_values},   {"taskcount_sizes", s.taskcount_sizes},
                  {"threshold", s.threshold},       {"seeds", s.seeds}};
    return j;
}

inline std::string dump_config(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

}  // namespace icl
