#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "icl_lab/config.hpp"

using namespace icl;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ParseError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
    const std::string def = dump_config(ExperimentConfig{});
    EXPECT_EQ(dump_config(parse_config("")), def);
    EXPECT_EQ(dump_config(parse_config("  \n\t\n")), def);
    EXPECT_EQ(dump_config(parse_config("{}")), def);
}

TEST(Config, DefaultsMatchTheReferenceSetup) {
    const ExperimentConfig c;
    EXPECT_EQ(c.data.d_x, 30);
    EXPECT_EQ(c.data.d_y, 30);
    EXPECT_EQ(c.data.beta, 3.0);
    EXPECT_EQ(c.data.k, 0.5);
    EXPECT_EQ(c.data.k_prime, 5.0);
    EXPECT_EQ(c.data.m1, 6);
    EXPECT_EQ(c.data.m2, 24);
    EXPECT_EQ(c.train.alpha, 0.8);
    EXPECT_EQ(c.train.l_tr, 20);
    EXPECT_EQ(c.train.task_u, 1);
    EXPECT_EQ(c.train.b, 64);
    EXPECT_EQ(c.train.t, 3000);
    EXPECT_EQ(c.model.m_a, 60);
    EXPECT_EQ(c.model.m_b, 60);
    EXPECT_EQ(c.gradcheck.instances, 50);
    EXPECT_EQ(c.gradcheck.tol, 1e-5);
    EXPECT_EQ(c.baselines.alpha_prime, 0.6);
    EXPECT_EQ(c.baselines.l_values, (std::vector<int>{10, 20, 40}));
    EXPECT_EQ(c.sweep.alpha_primes, (std::vector<double>{0.4, 0.6, 0.8, 1.0}));
    EXPECT_EQ(c.sweep.alphas, (std::vector<double>{0.4, 0.6, 0.8}));
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, DefaultOodRowsSatisfyTheNormConstraint) {
    const ExperimentConfig c;
    const double a = c.eval.ood_a;
    const double b = c.eval.ood_b;
    EXPECT_NEAR(a * a + b * b + 2 * 0.3 * 0.3, 1.0, 1e-15);
    for (double s1 : c.sweep.s1_values) {
        const auto [sa, sb] = s1_coefficients(s1);
        EXPECT_NEAR(sa * sa + sb * sb, 0.82, 1e-12) << s1;
        EXPECT_NEAR(sa + sb, s1, 1e-12) << s1;
    }
}

TEST(Config, UnknownKeyIsNamed) {
    const std::string e = error_of("{\n  \"data\": {\n    \"moment\": 3\n  }\n}\n");
    EXPECT_NE(e.find("data.moment"), std::string::npos) << e;
    EXPECT_NE(e.find("line 3"), std::string::npos) << e;
    EXPECT_NE(error_of("{\"moment\": 1}").find("moment"), std::string::npos);
}

TEST(Config, SyntaxErrorReportsLine) {
    const std::string e = error_of("{\n  \"seed\": 1,\n  \"data\": {,}\n}\n");
    EXPECT_NE(e.find("line 3"), std::string::npos) << e;
}

TEST(Config, BadValuesAreParseErrors) {
    EXPECT_NE(error_of("{\"train\": {\"t\": \"many\"}}").find("train.t"), std::string::npos);
    EXPECT_NE(error_of("{\"data\": {\"basis_mode\": \"spiral\"}}").find("basis_mode"), std::string::npos);
    EXPECT_NE(error_of("{\"experiment\": \"fly\"}").find("fly"), std::string::npos);
    EXPECT_FALSE(error_of("{\"train\": {\"eta\": 2.0}}").empty());
    EXPECT_FALSE(error_of("{\"model\": {\"m_a\": 10}}").empty());
    EXPECT_FALSE(error_of("{\"prune\": {\"strategies\": [\"median\"]}}").empty());
    EXPECT_FALSE(error_of("{\"baselines\": {\"domain\": \"both\"}}").empty());
    EXPECT_FALSE(error_of("[1, 2]").empty());
    EXPECT_FALSE(error_of("{\"data\": 3}").empty());
}

TEST(Config, RoundTripIsCanonical) {
    const std::string text = R"({"seed": 7, "experiment": "prune",
        "data": {"m1": 4, "m2": 8, "d_x": 12, "d_y": 12},
        "model": {"m": 80, "m_a": 20, "m_b": 30},
        "prune": {"ratios": [0.0, 0.5]}})";
    const ExperimentConfig c = parse_config(text);
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.experiment, "prune");
    EXPECT_EQ(c.data.m1, 4);
    EXPECT_EQ(c.train_config().model.d_x, 12);
    EXPECT_EQ(c.prune.ratios, (std::vector<double>{0.0, 0.5}));
    const std::string canon = dump_config(c);
    EXPECT_EQ(dump_config(parse_config(canon)), canon);
    EXPECT_EQ(canon.find("\"basis_mode\": \"random-orthonormal\"") != std::string::npos, true);
}

TEST(Config, TrainConfigStitchesSections) {
    ExperimentConfig c;
    c.seed = 11;
    c.data.d_x = 8;
    c.data.d_y = 8;
    c.model.m_b = 16;
    c.model.m_a = 8;
    const TrainConfig t = c.train_config();
    EXPECT_EQ(t.seed, 11u);
    EXPECT_EQ(t.model.d_x, 8);
    EXPECT_EQ(t.model.m_b, 16);
    EXPECT_EQ(t.data.d_y, 8);
}

TEST(Config, LoadFromFile) {
    const auto dir = std::filesystem::temp_directory_path() / "icl_lab_config_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "c.json";
    std::ofstream(path) << "{\"seed\": 3}\n";
    EXPECT_EQ(load_config(path).seed, 3u);
    EXPECT_THROW(load_config(dir / "missing.json"), InvalidArgument);
    std::filesystem::remove_all(dir);
}

TEST(Config, ExperimentNames) {
    EXPECT_EQ(experiment_names().size(), 11u);
    for (const auto& n : experiment_names()) {
        ExperimentConfig c;
        c.experiment = n;
        EXPECT_NO_THROW(c.validate()) << n;
    }
}
