// ripple-lab: deterministic pipelines for knowledge-editing ripple analysis.
//
// Subcommands: gen-data, train, edit, gradsim, eval, ntk-scan.
// Exit codes: 0 success, 1 validation error, 2 runtime/numeric error.

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ripple/commands.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string seed;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", args.seed, "override the top-level seed");
    cmd->add_option("--set", args.sets, "config override key=value (dotted keys)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ripple-lab: knowledge-editing ripple-effect laboratory"};
    app.require_subcommand(1);

    struct Entry {
        const char* name;
        const char* help;
        std::function<void(const ripple::cli::Config&, const std::string&)> run;
    };
    const std::vector<Entry> entries = {
        {"gen-data", "generate a synthetic world, fact corpus and edit cases", ripple::cli::cmd_gen_data},
        {"train", "pretrain the toy language model on a world's corpus", ripple::cli::cmd_train},
        {"edit", "apply one knowledge edit and save the edited checkpoint", ripple::cli::cmd_edit},
        {"gradsim", "compute GradSim records for edit cases", ripple::cli::cmd_gradsim},
        {"eval", "run edits and collect ripple metrics, GradSim and the correlation report",
         ripple::cli::cmd_eval},
        {"ntk-scan", "width scan verifying the ripple-difference scaling", ripple::cli::cmd_ntk_scan},
    };

    std::vector<CommonArgs> args(entries.size());
    for (size_t i = 0; i < entries.size(); ++i)
        add_common(app.add_subcommand(entries[i].name, entries[i].help), args[i]);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // bad flags are validation errors
    }

    for (size_t i = 0; i < entries.size(); ++i) {
        const CLI::App* sub = app.get_subcommand(entries[i].name);
        if (!sub->parsed()) continue;
        try {
            const ripple::cli::Config config =
                ripple::cli::resolve_config(args[i].config_path, args[i].sets, args[i].seed);
            entries[i].run(config, args[i].out_dir);
            return 0;
        } catch (const std::invalid_argument& e) {
            std::cerr << "validation error: " << e.what() << "\n";
            return 1;
        } catch (const std::domain_error& e) {
            std::cerr << "validation error: " << e.what() << "\n";
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
    }
    return 1;
}
