#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "icl_lab/icl_lab.hpp"

int main(int argc, char** argv) {
    CLI::App app{"icl-lab: in-context learning experiments on a one-layer transformer"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string checkpoint;

    for (const std::string& name : icl::experiment_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "JSON config; missing keys take defaults")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out_dir, "override the output directory");
        sub->add_option("--checkpoint", checkpoint, "override the checkpoint path");
    }
    app.add_subcommand("defaults", "print the full default config");

    CLI11_PARSE(app, argc, argv);
    auto* sub = app.get_subcommands().front();

    try {
        if (sub->get_name() == "defaults") {
            std::cout << icl::dump_config(icl::ExperimentConfig{});
            return 0;
        }
        icl::ExperimentConfig cfg = config_path.empty() ? icl::ExperimentConfig{}
                                                        : icl::load_config(config_path);
        cfg.experiment = sub->get_name();
        if (sub->count("--seed")) cfg.seed = seed;
        if (sub->count("--out")) cfg.out_dir = out_dir;
        if (sub->count("--checkpoint")) cfg.checkpoint = checkpoint;

        const unsigned threads = icl::thread_count();
        const icl::RunResult rr = icl::run_experiment(cfg, threads);
        for (const auto& [name, body] : rr.outputs) std::cout << cfg.out_dir << "/" << name << "\n";
        std::cout << cfg.out_dir << "/manifest.txt\n";
        if (!rr.summary.empty()) std::cout << rr.summary << "\n";
        return rr.status;
    } catch (const icl::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
