// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

// lthlab: command-line front end for the lottery-ticket lab.
//
//   lthlab synth  --out DIR [--n N] [--imbalance uniform|isic-like] ...
//   lthlab run    --config FILE [--set key=value]... [--output DIR]
//   lthlab resume --dir DIR | --config FILE
//   lthlab eval   --checkpoint FILE --config FILE [--split test|train]
//   lthlab report --dir DIR
//   lthlab gaps   --table CSV
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric or invariant
// failure, 1 anything else.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lth/config.hpp"
#include "lth/error.hpp"
#include "lth/evaluation.hpp"
#include "lth/experiment.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw lth::IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

lth::ExperimentConfig assemble(const std::string& config_path, const std::vector<std::string>& overrides,
                               const std::string& output) {
    lth::ExperimentConfig config;
    if (!config_path.empty()) config = lth::load_config(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw lth::ConfigError("--set expects key=value, got '" + kv + "'");
        lth::set_key(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!output.empty()) config.output_dir = output;
    config.synth.class_count = config.arch.classes;
    config.synth.seed = config.seed;
    return config;
}

void print_ledger(const lth::RunLedger& ledger) {
    std::printf("status: %s\n", ledger.status.c_str());
    std::printf("level  sparsity  train_acc  test_acc  final_loss\n");
    for (const auto& r : ledger.levels) {
        std::printf("L%-5zu %8.4f  %9s  %8s  %10.4f\n", r.level, r.sparsity,
                    lth::format_percent(r.train_accuracy).c_str(), lth::format_percent(r.test_accuracy).c_str(),
                    r.train_loss.empty() ? 0.0 : r.train_loss.back());
    }
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const lth::ConfigError*>(&e)) return 2;
    if (dynamic_cast<const lth::IngestionError*>(&e) || dynamic_cast<const lth::FormatError*>(&e) ||
        dynamic_cast<const lth::IoError*>(&e) || dynamic_cast<const lth::SamplerError*>(&e) ||
        dynamic_cast<const lth::LoadError*>(&e)) {
        return 3;
    }
    if (dynamic_cast<const lth::InvariantError*>(&e) || dynamic_cast<const lth::MetricError*>(&e)) return 4;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lottery-ticket pruning lab"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic lesion dataset");
    std::string synth_out;
    lth::SynthConfig sc;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", sc.n, "number of images");
    synth->add_option("--classes", sc.class_count, "number of classes");
    synth->add_option("--imbalance", sc.imbalance, "uniform | isic-like");
    synth->add_option("--subgroups", sc.subgroups, "balanced | isic-like");
    synth->add_option("--image-size", sc.image_size, "image side in pixels");
    synth->add_option("--test-fraction", sc.test_fraction, "fraction of each class held out");
    synth->add_option("--seed", sc.seed, "master seed");

    std::string config_path, output, run_dir;
    std::vector<std::string> overrides;
    std::size_t stop_after = 0;

    auto* run = app.add_subcommand("run", "train, prune and rewind through every level");
    run->add_option("--config", config_path, "config file (key = value)");
    run->add_option("--set", overrides, "override one config key (key=value)");
    run->add_option("--output", output, "run directory (overrides output_dir)");
    auto* stop_opt = run->add_option("--stop-after-level", stop_after, "interrupt after this level");

    auto* res = app.add_subcommand("resume", "continue an interrupted run");
    res->add_option("--dir", run_dir, "run directory; its recorded config is used");
    res->add_option("--config", config_path, "config file to check against the recorded run");
    res->add_option("--set", overrides, "override one config key (key=value)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string checkpoint, split_name = "test", eval_out;
    eval->add_option("--checkpoint", checkpoint, "weights checkpoint")->required();
    eval->add_option("--config", config_path, "config describing the model and data");
    eval->add_option("--set", overrides, "override one config key (key=value)");
    eval->add_option("--split", split_name, "test | train")->check(CLI::IsMember({"test", "train"}));
    eval->add_option("--out", eval_out, "write confusion and predictions CSVs here");

    auto* report = app.add_subcommand("report", "rebuild reports of a run from its prediction logs");
    report->add_option("--dir", run_dir, "run directory")->required();

    auto* gaps = app.add_subcommand("gaps", "gap table from a subgroup accuracy CSV");
    std::string table_path;
    gaps->add_option("--table", table_path, "CSV with header subgroup,L0,...")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            const auto manifest = lth::synth_generate(sc, synth_out);
            std::printf("wrote %zu images to %s\n", manifest.records.size(), synth_out.c_str());
            for (std::size_t c = 0; c < manifest.class_counts.size(); ++c) {
                std::printf("  %-4s %zu\n", std::string(lth::kClassCodes[c]).c_str(), manifest.class_counts[c]);
            }
        } else if (*run) {
            const auto config = assemble(config_path, overrides, output);
            lth::RunControl control;
            if (*stop_opt) control.stop_after_level = stop_after;
            lth::RunHooks hooks;
            hooks.on_level_end = [](std::size_t level, const lth::Network&) {
                std::fprintf(stderr, "level L%zu done\n", level);
            };
            print_ledger(lth::run_lth(config, hooks, control));
        } else if (*res) {
            if (run_dir.empty() && config_path.empty()) throw lth::ConfigError("resume needs --dir or --config");
            const auto config = assemble(config_path.empty() ? (fs::path(run_dir) / "config.txt").string() : config_path,
                                         overrides, run_dir);
            print_ledger(lth::resume(config));
        } else if (*eval) {
            const auto config = assemble(config_path, overrides, "");
            lth::validate(config);
            const auto data = lth::load_dataset(config);
            lth::Rng init(0);
            auto net = lth::build_network(config.arch, init);
            lth::load_weights(net, checkpoint);
            const auto split = split_name == "train" ? lth::Split::Train : lth::Split::Test;
            const auto result = lth::evaluate_split(net, data, split);
            std::printf("accuracy %s over %llu samples\n", lth::format_percent(lth::accuracy(result.confusion)).c_str(),
                        static_cast<unsigned long long>(result.confusion.total));
            const auto recall = lth::recall_per_class(result.confusion);
            for (std::size_t c = 0; c < recall.size(); ++c) {
                std::printf("  %-4s recall %s\n", std::string(lth::kClassCodes[c]).c_str(),
                            recall[c] ? lth::format_percent(*recall[c]).c_str() : "-");
            }
            if (!eval_out.empty()) {
                fs::create_directories(eval_out);
                std::ofstream(fs::path(eval_out) / "confusion.csv") << lth::confusion_csv(result.confusion);
                const auto meta = lth::sample_metadata(data);
                std::ofstream(fs::path(eval_out) / "predictions.csv") << lth::predictions_csv(result.predictions, meta);
            }
        } else if (*report) {
            const auto config = lth::load_config(fs::path(run_dir) / "config.txt");
            const auto ledger = lth::read_ledger(run_dir);
            if (ledger.levels.empty()) throw lth::MetricError("run has no completed levels");
            lth::write_reports(run_dir, ledger.levels.size(), config.arch.classes);
            std::fputs(slurp(fs::path(run_dir) / "subgroups.csv").c_str(), stdout);
            std::fputs(slurp(fs::path(run_dir) / "tp_table.csv").c_str(), stdout);
        } else if (*gaps) {
            const auto table = lth::parse_subgroup_csv(slurp(table_path));
            std::fputs(lth::gap_table_csv(lth::gap_analysis(table)).c_str(), stdout);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "lthlab: %s\n", e.what());
        return exit_code(e);
    }
    return 0;
}
