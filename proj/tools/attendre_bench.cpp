#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attendre/attendre.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    bool dump_config = false;
    std::vector<std::string> policy;
    std::vector<std::string> m;
    std::vector<std::string> n;
    std::string k, chunk, task, len, trials, seed, out;
};

void add_common_options(CLI::App& cmd, CommonArgs& args) {
    cmd.add_option("--config", args.config_path, "flat key=value config file")->required();
    cmd.add_flag("--dump-config", args.dump_config,
                 "print the effective configuration and exit without running");
    cmd.add_option("--policy", args.policy, "policy tokens, e.g. fifo lra_sum lfa:0.001");
    cmd.add_option("--m", args.m, "K/V memory sizes");
    cmd.add_option("--n", args.n, "Q memory sizes (paired with --m; omit for N=M/2)");
    cmd.add_option("--k", args.k, "retrieval width");
    cmd.add_option("--chunk", args.chunk, "chunk length S");
    cmd.add_option("--task", args.task, "needle or question_first");
    cmd.add_option("--len", args.len, "sequence length");
    cmd.add_option("--trials", args.trials, "trials per cell");
    cmd.add_option("--seed", args.seed, "base seed");
    cmd.add_option("--out", args.out, "CSV output path");
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const std::string& p : parts) {
        if (!out.empty()) out += ',';
        out += p;
    }
    return out;
}

// Flags win over the file, the file wins over defaults.
std::map<std::string, std::string> effective_config(const CommonArgs& args) {
    auto merged = attendre::merge_config_strings(attendre::default_config_strings(),
                                                 attendre::parse_config_file(args.config_path));
    std::map<std::string, std::string> flags;
    if (!args.policy.empty()) flags["policy"] = join(args.policy);
    if (!args.m.empty()) flags["m"] = join(args.m);
    if (!args.n.empty()) flags["n"] = join(args.n);
    if (!args.k.empty()) flags["k"] = args.k;
    if (!args.chunk.empty()) flags["chunk"] = args.chunk;
    if (!args.task.empty()) flags["task"] = args.task;
    if (!args.len.empty()) flags["len"] = args.len;
    if (!args.trials.empty()) flags["trials"] = args.trials;
    if (!args.seed.empty()) flags["seed"] = args.seed;
    if (!args.out.empty()) flags["out"] = args.out;
    return attendre::merge_config_strings(merged, flags);
}

int run_sweep_command(const CommonArgs& args) {
    const auto kv = effective_config(args);
    if (args.dump_config) {
        for (const auto& [key, value] : kv) std::cout << key << "=" << value << "\n";
        return EXIT_SUCCESS;
    }
    const attendre::SweepConfig cfg = attendre::sweep_config_from_strings(kv);
    const attendre::RunReport report = attendre::run_sweep(cfg);
    const std::string& csv_path = kv.at("out");
    const std::string json_path = attendre::summary_path_for(csv_path);
    attendre::write_csv(report, csv_path);
    attendre::write_summary_json(report, json_path);
    std::cout << "wrote " << report.cells.size() << " cells to " << csv_path << " and " << json_path
              << "\n";
    return EXIT_SUCCESS;
}

int run_trace_command(const CommonArgs& args) {
    const auto kv = effective_config(args);
    if (args.dump_config) {
        for (const auto& [key, value] : kv) std::cout << key << "=" << value << "\n";
        return EXIT_SUCCESS;
    }
    const attendre::SweepConfig cfg = attendre::sweep_config_from_strings(kv);
    const attendre::CellReport cell =
        attendre::run_trace(cfg, [](const std::string& line) { std::cout << line << "\n"; });
    std::cout << "trace: policy=" << cell.policy << " m=" << cell.m << " n=" << cell.n
              << " retention=" << attendre::detail::format_double(cell.retention_rate)
              << " final_attention_mass="
              << attendre::detail::format_double(cell.final_attention_mass) << "\n";
    return EXIT_SUCCESS;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"policy x memory-size sweeps for the attendre streaming attention engine"};
    app.require_subcommand(1);

    CommonArgs sweep_args;
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "run the configured sweep, write CSV and JSON summary");
    add_common_options(*sweep_cmd, sweep_args);

    CommonArgs trace_args;
    CLI::App* trace_cmd =
        app.add_subcommand("trace", "run one configured cell with the memory event log on stdout");
    add_common_options(*trace_cmd, trace_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sweep_cmd->parsed()) return run_sweep_command(sweep_args);
        if (trace_cmd->parsed()) return run_trace_command(trace_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return EXIT_FAILURE;
    }
    return EXIT_FAILURE;
}
